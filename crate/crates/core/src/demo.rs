//! Demonstration data: trajectories of state-action pairs, state pooling and
//! windowing, and the `.traj` / `.lev` text formats.
//!
//! `.traj` layout:
//!
//! ```text
//! #ssil-traj v1 state_dim=2 action_dim=1
//! @traj label=expert terminated=false source=expert
//! 0.1 0.2 | -0.5
//! 0.15 0.25 | -0.4
//! @traj label=unlabeled terminated=true source=tier0.60
//! ...
//! ```
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact. `.lev` files hold one
//! `<set> <trajectory> <time> <leverage>` record per line, where `<set>` is
//! `labeled` or `unlabeled`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("demonstration file is empty")]
    Empty,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("line {line}: non-finite value in row")]
    NonFinite { line: usize },
    #[error("trajectory of length {len} is shorter than window {window}")]
    InsufficientLength { len: usize, window: usize },
    #[error("invalid demonstration data: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DemoError>;

#[derive(Clone, Debug, PartialEq)]
pub struct StateActionPair {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Expert,
    Unlabeled,
}

impl Label {
    fn as_str(self) -> &'static str {
        match self {
            Label::Expert => "expert",
            Label::Unlabeled => "unlabeled",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelFilter {
    All,
    Expert,
    Unlabeled,
}

impl LabelFilter {
    fn accepts(self, label: Label) -> bool {
        match self {
            LabelFilter::All => true,
            LabelFilter::Expert => label == Label::Expert,
            LabelFilter::Unlabeled => label == Label::Unlabeled,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub pairs: Vec<StateActionPair>,
    pub label: Label,
    /// Free-text origin, e.g. the controller that produced it.
    pub source: String,
    pub terminated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.pairs.iter().map(|p| p.state.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    trajectories: Vec<Trajectory>,
    state_dim: usize,
    action_dim: usize,
}

/// A state together with where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledState {
    pub trajectory: usize,
    pub time: usize,
    pub state: Vec<f64>,
}

impl DemoSet {
    pub fn empty(state_dim: usize, action_dim: usize) -> Self {
        DemoSet {
            trajectories: Vec::new(),
            state_dim,
            action_dim,
        }
    }

    pub fn new(state_dim: usize, action_dim: usize, trajectories: Vec<Trajectory>) -> Result<Self> {
        let mut set = DemoSet::empty(state_dim, action_dim);
        for t in trajectories {
            set.push(t)?;
        }
        Ok(set)
    }

    /// Appends a trajectory after checking it against the declared dims.
    pub fn push(&mut self, traj: Trajectory) -> Result<()> {
        if traj.pairs.is_empty() {
            return Err(DemoError::Invalid("trajectory has no pairs".into()));
        }
        if traj.source.contains('\n') {
            return Err(DemoError::Invalid("source tag may not contain newlines".into()));
        }
        for (t, p) in traj.pairs.iter().enumerate() {
            if p.state.len() != self.state_dim || p.action.len() != self.action_dim {
                return Err(DemoError::Dimension(format!(
                    "pair {t} has dims ({}, {}), set declares ({}, {})",
                    p.state.len(),
                    p.action.len(),
                    self.state_dim,
                    self.action_dim
                )));
            }
            if p.state.iter().chain(&p.action).any(|v| !v.is_finite()) {
                return Err(DemoError::Invalid(format!("pair {t} has a non-finite entry")));
            }
        }
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn num_pairs(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn pairs(&self, filter: LabelFilter) -> impl Iterator<Item = &StateActionPair> {
        self.trajectories
            .iter()
            .filter(move |t| filter.accepts(t.label))
            .flat_map(|t| t.pairs.iter())
    }

    /// Concatenates another set with the same dims.
    pub fn extend(&mut self, other: &DemoSet) -> Result<()> {
        if other.state_dim != self.state_dim || other.action_dim != self.action_dim {
            return Err(DemoError::Dimension("cannot merge sets with different dims".into()));
        }
        self.trajectories.extend(other.trajectories.iter().cloned());
        Ok(())
    }

    /// Copy of this set with every trajectory relabeled.
    pub fn relabeled(&self, label: Label) -> DemoSet {
        let mut out = self.clone();
        out.trajectories.iter_mut().for_each(|t| t.label = label);
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#ssil-traj v1 state_dim={} action_dim={}\n", self.state_dim, self.action_dim);
        for t in &self.trajectories {
            let _ = writeln!(
                out,
                "@traj label={} terminated={} source={}",
                t.label.as_str(),
                t.terminated,
                t.source
            );
            for p in &t.pairs {
                write_row(&mut out, &p.state);
                out.push_str(" |");
                if !p.action.is_empty() {
                    out.push(' ');
                }
                write_row(&mut out, &p.action);
                out.push('\n');
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        DemoSet::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DemoError::Empty)?;
        let (state_dim, action_dim) = parse_schema(header)?;
        let mut set = DemoSet::empty(state_dim, action_dim);
        let mut current: Option<(usize, Trajectory)> = None;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if let Some(rest) = line.strip_prefix("@traj") {
                if let Some((start, t)) = current.take() {
                    finish(&mut set, t, start)?;
                }
                current = Some((lineno, parse_traj_header(rest, lineno)?));
                continue;
            }
            let (_, traj) = current.as_mut().ok_or_else(|| DemoError::Parse {
                line: lineno,
                msg: "data row before any @traj header".into(),
            })?;
            let (s, a) = line.split_once('|').ok_or_else(|| DemoError::Parse {
                line: lineno,
                msg: "row is missing the `|` separator".into(),
            })?;
            let state = parse_numbers(s, lineno)?;
            let action = parse_numbers(a, lineno)?;
            if state.len() != state_dim || action.len() != action_dim {
                return Err(DemoError::Dimension(format!(
                    "line {lineno}: row has dims ({}, {}), schema declares ({state_dim}, {action_dim})",
                    state.len(),
                    action.len()
                )));
            }
            if state.iter().chain(&action).any(|v| !v.is_finite()) {
                return Err(DemoError::NonFinite { line: lineno });
            }
            traj.pairs.push(StateActionPair { state, action });
        }
        if let Some((start, t)) = current.take() {
            finish(&mut set, t, start)?;
        }
        Ok(set)
    }
}

fn finish(set: &mut DemoSet, traj: Trajectory, header_line: usize) -> Result<()> {
    if traj.pairs.is_empty() {
        return Err(DemoError::Parse {
            line: header_line,
            msg: "trajectory has no rows".into(),
        });
    }
    set.push(traj)
}

fn write_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v}");
    }
}

fn parse_numbers(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|_| DemoError::Parse {
                line,
                msg: format!("`{tok}` is not a number"),
            })
        })
        .collect()
}

fn parse_schema(header: &str) -> Result<(usize, usize)> {
    let mut toks = header.split_whitespace();
    if toks.next() != Some("#ssil-traj") || toks.next() != Some("v1") {
        return Err(DemoError::Parse {
            line: 1,
            msg: "expected `#ssil-traj v1` schema line".into(),
        });
    }
    let mut state_dim = None;
    let mut action_dim = None;
    for tok in toks {
        let bad = || DemoError::Parse {
            line: 1,
            msg: format!("bad schema field `{tok}`"),
        };
        let (k, v) = tok.split_once('=').ok_or_else(bad)?;
        let v: usize = v.parse().map_err(|_| bad())?;
        match k {
            "state_dim" => state_dim = Some(v),
            "action_dim" => action_dim = Some(v),
            _ => return Err(bad()),
        }
    }
    match (state_dim, action_dim) {
        (Some(s), Some(a)) if s > 0 => Ok((s, a)),
        _ => Err(DemoError::Parse {
            line: 1,
            msg: "schema must declare state_dim > 0 and action_dim".into(),
        }),
    }
}

fn parse_traj_header(rest: &str, line: usize) -> Result<Trajectory> {
    let err = |msg: &str| DemoError::Parse { line, msg: msg.to_string() };
    let rest = rest.trim_start();
    let (fields, source) = rest.split_once("source=").ok_or_else(|| err("missing source="))?;
    let mut label = None;
    let mut terminated = None;
    for tok in fields.split_whitespace() {
        match tok.split_once('=') {
            Some(("label", "expert")) => label = Some(Label::Expert),
            Some(("label", "unlabeled")) => label = Some(Label::Unlabeled),
            Some(("terminated", "true")) => terminated = Some(true),
            Some(("terminated", "false")) => terminated = Some(false),
            _ => return Err(err(&format!("bad trajectory field `{tok}`"))),
        }
    }
    Ok(Trajectory {
        pairs: Vec::new(),
        label: label.ok_or_else(|| err("missing label"))?,
        source: source.to_string(),
        terminated: terminated.ok_or_else(|| err("missing terminated flag"))?,
    })
}

/// Concatenations of `window` consecutive states, in time order.
pub fn window_states(traj: &Trajectory, window: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 {
        return Err(DemoError::Invalid("window length must be at least 1".into()));
    }
    if traj.len() < window {
        return Err(DemoError::InsufficientLength {
            len: traj.len(),
            window,
        });
    }
    Ok(traj
        .pairs
        .windows(window)
        .map(|w| w.iter().flat_map(|p| p.state.iter().copied()).collect())
        .collect())
}

/// Flattens the states of every trajectory accepted by `filter`.
pub fn pool_states(set: &DemoSet, filter: LabelFilter) -> Vec<PooledState> {
    set.trajectories
        .iter()
        .enumerate()
        .filter(|(_, t)| filter.accepts(t.label))
        .flat_map(|(ti, t)| {
            t.pairs.iter().enumerate().map(move |(time, p)| PooledState {
                trajectory: ti,
                time,
                state: p.state.clone(),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeverageSet {
    Labeled,
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeverageRecord {
    pub set: LeverageSet,
    pub trajectory: usize,
    pub time: usize,
    pub leverage: f64,
}

pub fn save_leverages(path: &Path, records: &[LeverageRecord]) -> Result<()> {
    fs::write(path, leverages_to_text(records))?;
    Ok(())
}

pub fn leverages_to_text(records: &[LeverageRecord]) -> String {
    let mut out = String::from("#ssil-lev v1\n");
    for r in records {
        let set = match r.set {
            LeverageSet::Labeled => "labeled",
            LeverageSet::Unlabeled => "unlabeled",
        };
        let _ = writeln!(out, "{set} {} {} {}", r.trajectory, r.time, r.leverage);
    }
    out
}

pub fn load_leverages(path: &Path) -> Result<Vec<LeverageRecord>> {
    parse_leverages(&fs::read_to_string(path)?)
}

pub fn parse_leverages(text: &str) -> Result<Vec<LeverageRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        None => return Err(DemoError::Empty),
        Some((_, h)) if h.trim() == "#ssil-lev v1" => {}
        Some(_) => {
            return Err(DemoError::Parse {
                line: 1,
                msg: "expected `#ssil-lev v1` header".into(),
            })
        }
    }
    lines
        .map(|(idx, line)| {
            let lineno = idx + 1;
            let err = |msg: String| DemoError::Parse { line: lineno, msg };
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 4 {
                return Err(err(format!("expected 4 fields, found {}", toks.len())));
            }
            let set = match toks[0] {
                "labeled" => LeverageSet::Labeled,
                "unlabeled" => LeverageSet::Unlabeled,
                other => return Err(err(format!("unknown set `{other}`"))),
            };
            let trajectory = toks[1].parse().map_err(|_| err("bad trajectory index".into()))?;
            let time = toks[2].parse().map_err(|_| err("bad time index".into()))?;
            let leverage: f64 = toks[3].parse().map_err(|_| err("bad leverage".into()))?;
            if !(0.0..=1.0).contains(&leverage) {
                return Err(err(format!("leverage {leverage} outside [0, 1]")));
            }
            Ok(LeverageRecord {
                set,
                trajectory,
                time,
                leverage,
            })
        })
        .collect()
}
