//! Planar kinematic car on a closed track with rangefinder observations,
//! the evaluation reward, and scripted controllers of graded quality.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::demo::{DemoSet, Label, StateActionPair, Trajectory};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid track: {0}")]
    Track(String),
    #[error("track file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown track {0:?}")]
    UnknownTrack(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("action has {got} components, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("non-finite action")]
    NonFiniteAction,
    #[error("episode already finished")]
    Finished,
    #[error(transparent)]
    Demo(#[from] crate::demo::DemoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Declarative track description: a closed centerline and its half-width.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackSpec {
    pub centerline: Vec<[f64; 2]>,
    pub half_width: f64,
    pub laps: u32,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug)]
enum Piece {
    Straight(f64),
    /// Radius and signed turn angle (positive turns left).
    Arc(f64, f64),
}

fn trace_pieces(pieces: &[Piece], spacing: f64) -> Vec<[f64; 2]> {
    let (mut x, mut y, mut h) = (0.0f64, 0.0f64, 0.0f64);
    let mut pts = vec![[x, y]];
    for piece in pieces {
        match *piece {
            Piece::Straight(len) => {
                let n = (len / spacing).ceil().max(1.0) as usize;
                let (x0, y0) = (x, y);
                for i in 1..=n {
                    let t = len * i as f64 / n as f64;
                    pts.push([x0 + t * h.cos(), y0 + t * h.sin()]);
                }
                x = x0 + len * h.cos();
                y = y0 + len * h.sin();
            }
            Piece::Arc(r, turn) => {
                let n = (r * turn.abs() / spacing).ceil().max(1.0) as usize;
                let side = turn.signum();
                let cx = x - side * r * h.sin();
                let cy = y + side * r * h.cos();
                let h0 = h;
                for i in 1..=n {
                    let hh = h0 + turn * i as f64 / n as f64;
                    pts.push([cx + side * r * hh.sin(), cy - side * r * hh.cos()]);
                }
                h = h0 + turn;
                x = cx + side * r * h.sin();
                y = cy - side * r * h.cos();
            }
        }
    }
    // the last point repeats the first on a closed layout
    let last = pts[pts.len() - 1];
    if (last[0] - pts[0][0]).hypot(last[1] - pts[0][1]) < 1e-6 {
        pts.pop();
    }
    pts
}

impl TrackSpec {
    /// Stadium loop used to collect data and train by default.
    pub fn oval() -> Self {
        let r = 12.0;
        TrackSpec {
            centerline: trace_pieces(&[Piece::Straight(30.0), Piece::Arc(r, PI), Piece::Straight(30.0), Piece::Arc(r, PI)], 0.5),
            half_width: 3.0,
            laps: 5,
            max_steps: 300,
        }
    }

    /// Rounded rectangle with tighter corners than the oval.
    pub fn rounded() -> Self {
        let q = PI / 2.0;
        TrackSpec {
            centerline: trace_pieces(
                &[
                    Piece::Straight(30.0),
                    Piece::Arc(9.0, q),
                    Piece::Straight(14.0),
                    Piece::Arc(9.0, q),
                    Piece::Straight(30.0),
                    Piece::Arc(9.0, q),
                    Piece::Straight(14.0),
                    Piece::Arc(9.0, q),
                ],
                0.5,
            ),
            half_width: 3.0,
            laps: 5,
            max_steps: 300,
        }
    }

    /// Loop with a 200 m straight starting at the origin along +x.
    pub fn long_straight() -> Self {
        TrackSpec {
            centerline: trace_pieces(&[Piece::Straight(200.0), Piece::Arc(15.0, PI), Piece::Straight(200.0), Piece::Arc(15.0, PI)], 0.5),
            half_width: 3.0,
            laps: 1,
            max_steps: 2000,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "oval" => Some(Self::oval()),
            "rounded" => Some(Self::rounded()),
            "straight" => Some(Self::long_straight()),
            _ => None,
        }
    }

    /// A builtin name or a path to a track file.
    pub fn resolve(name: &str) -> Result<Self> {
        if let Some(t) = Self::builtin(name) {
            return Ok(t);
        }
        let p = Path::new(name);
        if p.exists() {
            return Self::load(p);
        }
        Err(SimError::UnknownTrack(name.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(SimError::Track(format!("half-width {} must be positive", self.half_width)));
        }
        let n = self.centerline.len();
        if n < 3 {
            return Err(SimError::Track("need at least 3 centerline points".into()));
        }
        if self.centerline.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::Track("non-finite centerline point".into()));
        }
        if self.max_steps == 0 || self.laps == 0 {
            return Err(SimError::Track("max_steps and laps must be positive".into()));
        }
        for i in 0..n {
            let a = self.centerline[i];
            let b = self.centerline[(i + 1) % n];
            if a == b {
                return Err(SimError::Track(format!("repeated point at index {i}")));
            }
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let c = self.centerline[j];
                let d = self.centerline[(j + 1) % n];
                if segments_cross(a, b, c, d) {
                    return Err(SimError::Track(format!("centerline segments {i} and {j} intersect")));
                }
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("#ssil-track v1\n");
        out.push_str(&format!("half_width {}\nlaps {}\nmax_steps {}\n", self.half_width, self.laps, self.max_steps));
        for p in &self.centerline {
            out.push_str(&format!("point {} {}\n", p[0], p[1]));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "#ssil-track v1" => {}
            _ => return Err(SimError::Parse { line: 1, msg: "missing #ssil-track v1 header".into() }),
        }
        let mut spec = TrackSpec {
            centerline: Vec::new(),
            half_width: 0.0,
            laps: 1,
            max_steps: 500,
        };
        for (i, raw) in lines {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SimError::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |k: usize| -> Result<f64> {
                fields
                    .get(k)
                    .ok_or_else(|| err("missing value".into()))?
                    .parse::<f64>()
                    .map_err(|e| err(e.to_string()))
            };
            match fields[0] {
                "half_width" => spec.half_width = num(1)?,
                "laps" => spec.laps = fields.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| err("bad laps".into()))?,
                "max_steps" => spec.max_steps = fields.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| err("bad max_steps".into()))?,
                "point" => {
                    if fields.len() != 3 {
                        return Err(err("point needs x and y".into()));
                    }
                    spec.centerline.push([num(1)?, num(2)?]);
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn segments_cross(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = cross(sub(b, a), sub(c, a));
    let d2 = cross(sub(b, a), sub(d, a));
    let d3 = cross(sub(d, c), sub(a, c));
    let d4 = cross(sub(d, c), sub(b, c));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Distance along the unit direction `dir` from `origin` to segment `ab`.
pub fn ray_segment(origin: [f64; 2], dir: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let e = sub(b, a);
    let denom = cross(dir, e);
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = sub(a, origin);
    let t = cross(w, e) / denom;
    let u = cross(w, dir) / denom;
    (t >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(t)
}

/// Centerline-relative pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    /// Arc length of the closest centerline point.
    pub arc: f64,
    /// Signed lateral offset in meters, positive to the left of travel.
    pub offset: f64,
    /// Direction of travel at the closest point.
    pub tangent: f64,
}

/// A validated track with precomputed walls.
#[derive(Clone, Debug)]
pub struct Track {
    spec: TrackSpec,
    cum: Vec<f64>,
    length: f64,
    left: Vec<[f64; 2]>,
    right: Vec<[f64; 2]>,
}

impl Track {
    pub fn new(spec: TrackSpec) -> Result<Self> {
        spec.validate()?;
        let pts = &spec.centerline;
        let n = pts.len();
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let d = sub(pts[(i + 1) % n], pts[i]);
            cum.push(cum[i] + d[0].hypot(d[1]));
        }
        let length = cum[n];
        let seg_normal = |i: usize| {
            let d = sub(pts[(i + 1) % n], pts[i]);
            let l = d[0].hypot(d[1]);
            [-d[1] / l, d[0] / l]
        };
        let mut left = Vec::with_capacity(n);
        let mut right = Vec::with_capacity(n);
        for i in 0..n {
            let a = seg_normal((i + n - 1) % n);
            let b = seg_normal(i);
            let m = [a[0] + b[0], a[1] + b[1]];
            let ml = m[0].hypot(m[1]);
            let (nx, ny, scale) = if ml < 1e-12 {
                (b[0], b[1], 1.0)
            } else {
                let u = [m[0] / ml, m[1] / ml];
                (u[0], u[1], 1.0 / (u[0] * b[0] + u[1] * b[1]))
            };
            let w = spec.half_width * scale;
            left.push([pts[i][0] + w * nx, pts[i][1] + w * ny]);
            right.push([pts[i][0] - w * nx, pts[i][1] - w * ny]);
        }
        Ok(Track {
            spec,
            cum,
            length,
            left,
            right,
        })
    }

    pub fn spec(&self) -> &TrackSpec {
        &self.spec
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn left_wall(&self) -> &[[f64; 2]] {
        &self.left
    }

    pub fn right_wall(&self) -> &[[f64; 2]] {
        &self.right
    }

    pub fn project(&self, p: [f64; 2]) -> Projection {
        let pts = &self.spec.centerline;
        let n = pts.len();
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in 0..n {
            let a = pts[i];
            let e = sub(pts[(i + 1) % n], a);
            let ee = e[0] * e[0] + e[1] * e[1];
            let w = sub(p, a);
            let u = ((w[0] * e[0] + w[1] * e[1]) / ee).clamp(0.0, 1.0);
            let q = [a[0] + u * e[0] - p[0], a[1] + u * e[1] - p[1]];
            let d2 = q[0] * q[0] + q[1] * q[1];
            if d2 < best.0 {
                best = (d2, i, u);
            }
        }
        let (_, i, u) = best;
        let a = pts[i];
        let e = sub(pts[(i + 1) % n], a);
        let el = e[0].hypot(e[1]);
        let w = sub(p, a);
        Projection {
            arc: self.cum[i] + u * el,
            offset: cross(e, w) / el,
            tangent: e[1].atan2(e[0]),
        }
    }

    /// Point and heading on the centerline at arc length `s`.
    pub fn point_at(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.rem_euclid(self.length);
        let pts = &self.spec.centerline;
        let n = pts.len();
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(n - 1),
            Err(i) => i - 1,
        };
        let a = pts[i];
        let e = sub(pts[(i + 1) % n], a);
        let el = self.cum[i + 1] - self.cum[i];
        let u = (s - self.cum[i]) / el;
        ([a[0] + u * e[0], a[1] + u * e[1]], e[1].atan2(e[0]))
    }

    /// Distance to the nearest wall along `heading` from `p`, or `None`.
    pub fn cast(&self, p: [f64; 2], heading: f64) -> Option<f64> {
        let dir = [heading.cos(), heading.sin()];
        let mut best: Option<f64> = None;
        for wall in [&self.left, &self.right] {
            let n = wall.len();
            for i in 0..n {
                if let Some(t) = ray_segment(p, dir, wall[i], wall[(i + 1) % n]) {
                    best = Some(best.map_or(t, |b| b.min(t)));
                }
            }
        }
        best
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// Body-frame longitudinal speed.
    pub v_x: f64,
    /// Body-frame lateral speed.
    pub v_y: f64,
}

impl CarState {
    pub fn speed(&self) -> f64 {
        self.v_x.hypot(self.v_y)
    }
}

/// Ray-cast readings at `n` bearings spread over the forward half plane,
/// clipped to `max_range` and divided by it. The flag is false, and the
/// readings all zero, when the car is off the track.
pub fn rangefinder(car: &CarState, track: &Track, n: usize, max_range: f64) -> (Vec<f64>, bool) {
    let p = [car.x, car.y];
    if track.project(p).offset.abs() > track.half_width() {
        return (vec![0.0; n], false);
    }
    let readings = (0..n)
        .map(|k| {
            let bearing = if n == 1 { 0.0 } else { -PI / 2.0 + PI * k as f64 / (n - 1) as f64 };
            let d = track.cast(p, car.heading + bearing).unwrap_or(max_range);
            d.min(max_range) / max_range
        })
        .collect();
    (readings, true)
}

/// Reward used only to score driving: forward progress minus sliding and
/// off-center penalties.
pub fn evaluation_reward(v_x: f64, v_y: f64, theta: f64, d: f64) -> f64 {
    v_x * theta.cos() - (v_y * theta.sin()).abs() - 2.0 * v_x * (d * theta.sin()).abs() - v_y * theta.cos()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Steering and throttle; observation carries ranges, pose, speeds.
    TorcsLike,
    /// Steering only at constant speed; ranges plus previous steering.
    RcLike,
}

impl Preset {
    pub fn action_dim(self) -> usize {
        match self {
            Preset::TorcsLike => 2,
            Preset::RcLike => 1,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::TorcsLike => "torcs-like",
            Preset::RcLike => "rc-like",
        })
    }
}

impl FromStr for Preset {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "torcs-like" => Ok(Preset::TorcsLike),
            "rc-like" => Ok(Preset::RcLike),
            other => Err(SimError::UnknownPreset(other.to_string())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EnvConfig {
    pub preset: Preset,
    pub dt: f64,
    pub front_axle: f64,
    pub rear_axle: f64,
    pub max_steer: f64,
    /// Constant speed for rc-like, starting speed for torcs-like.
    pub speed: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub accel: f64,
    pub rays: usize,
    pub max_range: f64,
    /// Start offsets are drawn uniformly within this fraction of the half-width.
    pub start_offset: f64,
    pub start_heading: f64,
}

impl EnvConfig {
    pub fn new(preset: Preset) -> Self {
        EnvConfig {
            preset,
            dt: 0.05,
            front_axle: 1.25,
            rear_axle: 1.25,
            max_steer: 0.5,
            speed: 8.0,
            min_speed: 2.0,
            max_speed: 12.0,
            accel: 6.0,
            rays: 19,
            max_range: 30.0,
            start_offset: 0.3,
            start_heading: 0.1,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self.preset {
            Preset::TorcsLike => self.rays + 4 + 2,
            Preset::RcLike => self.rays + 1,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.preset.action_dim()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub ranges: Vec<f64>,
    /// Heading relative to the track direction, radians.
    pub theta: f64,
    /// Lateral offset divided by the half-width.
    pub d: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub prev_action: Vec<f64>,
    pub on_track: bool,
}

impl Observation {
    /// Flat feature vector for the given preset; speeds scaled by `max_speed`.
    pub fn features(&self, preset: Preset, max_speed: f64) -> Vec<f64> {
        let mut f = self.ranges.clone();
        if preset == Preset::TorcsLike {
            f.extend_from_slice(&[self.theta, self.d, self.v_x / max_speed, self.v_y / max_speed]);
        }
        f.extend_from_slice(&self.prev_action);
        f
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub clamped: bool,
    pub collision: bool,
    pub lap_complete: bool,
    pub truncated: bool,
    pub reward: f64,
}

#[derive(Clone, Debug)]
pub struct Env {
    cfg: EnvConfig,
    track: Track,
    car: CarState,
    prev_action: Vec<f64>,
    steps: usize,
    progress: f64,
    last_arc: f64,
    done: bool,
}

impl Env {
    pub fn new(cfg: EnvConfig, track: Track) -> Self {
        let prev_action = vec![0.0; cfg.action_dim()];
        let mut env = Env {
            cfg,
            track,
            car: CarState {
                x: 0.0,
                y: 0.0,
                heading: 0.0,
                v_x: 0.0,
                v_y: 0.0,
            },
            prev_action,
            steps: 0,
            progress: 0.0,
            last_arc: 0.0,
            done: false,
        };
        env.reset_at(0.0, 0.0, 0.0);
        env
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn car(&self) -> &CarState {
        &self.car
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Places the car at arc length `arc`, lateral `offset` (meters) and a
    /// heading offset from the track direction.
    pub fn reset_at(&mut self, arc: f64, offset: f64, heading_offset: f64) -> Observation {
        let (p, tangent) = self.track.point_at(arc);
        let heading = tangent + heading_offset;
        self.car = CarState {
            x: p[0] - offset * tangent.sin(),
            y: p[1] + offset * tangent.cos(),
            heading,
            v_x: self.cfg.speed,
            v_y: 0.0,
        };
        self.prev_action = vec![0.0; self.cfg.action_dim()];
        self.steps = 0;
        self.progress = 0.0;
        self.last_arc = self.track.project([self.car.x, self.car.y]).arc;
        self.done = false;
        self.observe()
    }

    /// Random start pose.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let arc = rng.random_range(0.0..self.track.length());
        let w = self.cfg.start_offset * self.track.half_width();
        let offset = if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
        let h = self.cfg.start_heading;
        let heading = if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
        self.reset_at(arc, offset, heading)
    }

    pub fn observe(&self) -> Observation {
        let proj = self.track.project([self.car.x, self.car.y]);
        let (ranges, on_track) = rangefinder(&self.car, &self.track, self.cfg.rays, self.cfg.max_range);
        Observation {
            ranges,
            theta: wrap_angle(self.car.heading - proj.tangent),
            d: proj.offset / self.track.half_width(),
            v_x: self.car.v_x,
            v_y: self.car.v_y,
            prev_action: self.prev_action.clone(),
            on_track,
        }
    }

    pub fn features(&self) -> Vec<f64> {
        self.observe().features(self.cfg.preset, self.cfg.max_speed)
    }

    /// Advances one time step. Out-of-range actions are clamped to `[-1, 1]`.
    pub fn step(&mut self, action: &[f64]) -> Result<(Observation, bool, StepInfo)> {
        if self.done {
            return Err(SimError::Finished);
        }
        if action.len() != self.cfg.action_dim() {
            return Err(SimError::ActionDim {
                expected: self.cfg.action_dim(),
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(SimError::NonFiniteAction);
        }
        let mut info = StepInfo::default();
        let act: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        info.clamped = act != action;
        let c = &self.cfg;
        let mut speed = self.car.speed();
        if c.preset == Preset::TorcsLike {
            speed = (speed + act[1] * c.accel * c.dt).clamp(c.min_speed, c.max_speed);
        }
        let delta = act[0] * c.max_steer;
        let beta = (c.rear_axle / (c.front_axle + c.rear_axle) * delta.tan()).atan();
        let h = self.car.heading;
        self.car.x += speed * (h + beta).cos() * c.dt;
        self.car.y += speed * (h + beta).sin() * c.dt;
        self.car.heading = wrap_angle(h + speed / c.rear_axle * beta.sin() * c.dt);
        self.car.v_x = speed * beta.cos();
        self.car.v_y = speed * beta.sin();
        self.prev_action = act;
        self.steps += 1;

        let proj = self.track.project([self.car.x, self.car.y]);
        let len = self.track.length();
        let mut ds = proj.arc - self.last_arc;
        if ds > len / 2.0 {
            ds -= len;
        } else if ds < -len / 2.0 {
            ds += len;
        }
        self.progress += ds;
        self.last_arc = proj.arc;

        let obs = self.observe();
        info.reward = evaluation_reward(obs.v_x, obs.v_y, obs.theta, obs.d);
        info.collision = proj.offset.abs() > self.track.half_width();
        info.lap_complete = self.progress >= self.track.spec().laps as f64 * len;
        info.truncated = self.steps >= self.track.spec().max_steps;
        self.done = info.collision || info.lap_complete || info.truncated;
        Ok((obs, self.done, info))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Quality {
    Expert,
    /// Expert corrupted by noise of scale `p` and sign flips with probability `p / 4`.
    Tier(f64),
}

impl Quality {
    pub fn tag(&self) -> String {
        match self {
            Quality::Expert => "expert".to_string(),
            Quality::Tier(p) => format!("tier{p:.2}"),
        }
    }
}

pub const LOOKAHEAD: f64 = 6.0;

/// Pure-pursuit centerline follower. Reads the car pose from the simulator.
pub fn expert_action(env: &Env) -> Vec<f64> {
    let car = env.car();
    let track = env.track();
    let proj = track.project([car.x, car.y]);
    let (target, _) = track.point_at(proj.arc + LOOKAHEAD);
    let dx = target[0] - car.x;
    let dy = target[1] - car.y;
    let alpha = wrap_angle(dy.atan2(dx) - car.heading);
    let ld = dx.hypot(dy).max(1e-6);
    let c = env.config();
    let wheelbase = c.front_axle + c.rear_axle;
    let delta = (2.0 * wheelbase * alpha.sin() / ld).atan();
    let steer = (delta / c.max_steer).clamp(-1.0, 1.0);
    match c.preset {
        Preset::RcLike => vec![steer],
        Preset::TorcsLike => vec![steer, (0.5 * (c.max_speed - car.speed())).clamp(-1.0, 1.0)],
    }
}

/// Correlation of successive tier noise draws.
pub const NOISE_CORRELATION: f64 = 0.8;

/// Scripted driver. Tier noise is temporally correlated so that degraded
/// drivers wander off the racing line instead of jittering around it.
#[derive(Clone, Debug)]
pub struct ScriptedController {
    pub quality: Quality,
    noise: Vec<f64>,
}

impl ScriptedController {
    pub fn new(quality: Quality, action_dim: usize) -> Self {
        ScriptedController {
            quality,
            noise: vec![0.0; action_dim],
        }
    }

    pub fn act<R: Rng + ?Sized>(&mut self, env: &Env, rng: &mut R) -> Vec<f64> {
        let mut a = expert_action(env);
        if let Quality::Tier(p) = self.quality {
            let rho = NOISE_CORRELATION;
            let innovation = (1.0 - rho * rho).sqrt();
            for (v, n) in a.iter_mut().zip(self.noise.iter_mut()) {
                let z: f64 = StandardNormal.sample(rng);
                *n = rho * *n + innovation * z;
                *v += p * *n;
            }
            if rng.random::<f64>() < p / 4.0 {
                a[0] = -a[0];
            }
            for v in a.iter_mut() {
                *v = v.clamp(-1.0, 1.0);
            }
        }
        a
    }
}

/// Per-episode RNG: one ChaCha stream per episode index.
pub fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub pairs: Vec<StateActionPair>,
    pub eval_return: f64,
    pub steps: usize,
    pub collided: bool,
}

/// Runs one scripted episode from a seeded random start.
pub fn run_scripted(env: &mut Env, quality: Quality, rng: &mut ChaCha8Rng) -> Result<EpisodeRecord> {
    env.reset(rng);
    let mut controller = ScriptedController::new(quality, env.config().action_dim());
    let mut pairs = Vec::new();
    let mut ret = 0.0;
    let collided = loop {
        let state = env.features();
        let action = controller.act(env, rng);
        let (_, done, info) = env.step(&action)?;
        pairs.push(StateActionPair { state, action });
        ret += info.reward;
        if done {
            break info.collision;
        }
    };
    Ok(EpisodeRecord {
        steps: pairs.len(),
        pairs,
        eval_return: ret,
        collided,
    })
}

/// Runs `episodes` scripted episodes in parallel. Episode `i` uses stream `i` of `seed`.
pub fn scripted_episodes(cfg: &EnvConfig, track: &Track, quality: Quality, episodes: usize, seed: u64) -> Result<Vec<EpisodeRecord>> {
    (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut env = Env::new(cfg.clone(), track.clone());
            run_scripted(&mut env, quality, &mut episode_rng(seed, i as u64))
        })
        .collect()
}

/// Scripted demonstrations as a demo set; each trajectory's source is the quality tag.
pub fn record_demos(cfg: &EnvConfig, track: &Track, quality: Quality, episodes: usize, seed: u64, label: Label) -> Result<DemoSet> {
    let mut set = DemoSet::empty(cfg.obs_dim(), cfg.action_dim());
    for ep in scripted_episodes(cfg, track, quality, episodes, seed)? {
        set.push(Trajectory {
            pairs: ep.pairs,
            label,
            source: quality.tag(),
            terminated: ep.collided,
        })?;
    }
    Ok(set)
}

/// Collects scripted trajectories until exactly `pairs` pairs are gathered;
/// the final trajectory is cut short.
pub fn record_pairs(cfg: &EnvConfig, track: &Track, quality: Quality, pairs: usize, seed: u64, label: Label) -> Result<DemoSet> {
    let mut set = DemoSet::empty(cfg.obs_dim(), cfg.action_dim());
    let mut remaining = pairs;
    let mut episode = 0u64;
    while remaining > 0 {
        let mut env = Env::new(cfg.clone(), track.clone());
        let mut ep = run_scripted(&mut env, quality, &mut episode_rng(seed, episode))?;
        episode += 1;
        let mut terminated = ep.collided;
        if ep.pairs.len() > remaining {
            ep.pairs.truncate(remaining);
            terminated = false;
        }
        remaining -= ep.pairs.len();
        set.push(Trajectory {
            pairs: ep.pairs,
            label,
            source: quality.tag(),
            terminated,
        })?;
    }
    Ok(set)
}

/// Mean episode score of a scripted controller: summed evaluation reward
/// for torcs-like, steps survived for rc-like.
pub fn controller_score(cfg: &EnvConfig, track: &Track, quality: Quality, episodes: usize, seed: u64) -> Result<f64> {
    let eps = scripted_episodes(cfg, track, quality, episodes, seed)?;
    Ok(eps.iter().map(|e| episode_score(cfg.preset, e.eval_return, e.steps)).sum::<f64>() / episodes.max(1) as f64)
}

pub fn episode_score(preset: Preset, eval_return: f64, steps: usize) -> f64 {
    match preset {
        Preset::TorcsLike => eval_return,
        Preset::RcLike => steps as f64,
    }
}
