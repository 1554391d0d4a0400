use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ssil::experiment::{self, ExperimentConfig, Method};
use ssil::leverage::LeverageMethod;
use ssil::sim::Preset;

#[derive(Parser)]
#[command(name = "ssil")]
#[command(about = "Imitation learning from labeled and unlabeled demonstrations of mixed quality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record the labeled expert set and the unlabeled pool
    Generate(ConfigArgs),
    /// Score the unlabeled pool and write the leverage file and tier report
    Leverage(ConfigArgs),
    /// Train every configured seed and write metrics, checkpoints and a run report
    Train(ConfigArgs),
    /// Build the method-by-budget comparison table from run reports
    Compare {
        /// Run directories or report.json files
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Output CSV path
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
    /// Rebuild the tier report from an existing leverage file
    Report(ConfigArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML config; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    leverage_method: Option<LeverageMethod>,
    #[arg(long)]
    labeled_budget: Option<usize>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    pool_expert_fraction: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pool_tiers: Option<Vec<f64>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta0: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    max_kl: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    episodes_per_iteration: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    demo_track: Option<String>,
    #[arg(long)]
    train_track: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

macro_rules! override_fields {
    ($cfg:ident, $args:ident, $($f:ident),*) => {
        $(if let Some(v) = $args.$f.clone() { $cfg.$f = v; })*
    };
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        let a = self;
        override_fields!(
            cfg,
            a,
            method,
            leverage_method,
            labeled_budget,
            pool_size,
            pool_expert_fraction,
            pool_tiers,
            alpha,
            eta0,
            epsilon,
            gamma,
            lambda,
            max_kl,
            iterations,
            episodes_per_iteration,
            eval_episodes,
            seeds,
            data_seed,
            preset,
            demo_track,
            train_track,
            out
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(a) => {
            let cfg = a.resolve()?;
            let data = experiment::cmd_generate(&cfg)?;
            println!(
                "labeled: {} pairs in {} trajectories -> {}",
                data.labeled.num_pairs(),
                data.labeled.trajectories().len(),
                cfg.labeled_path().display()
            );
            println!(
                "pool: {} pairs in {} trajectories -> {}",
                data.pool.num_pairs(),
                data.pool.trajectories().len(),
                cfg.pool_path().display()
            );
        }
        Command::Leverage(a) => {
            let cfg = a.resolve()?;
            let rows = experiment::cmd_leverage(&cfg)?;
            print_tiers(&rows);
            println!("leverage -> {}", cfg.leverage_path().display());
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            let report = experiment::cmd_train(&cfg)?;
            for (seed, (raw, scaled)) in report.seeds.iter().zip(report.final_scores.iter().zip(&report.scaled_scores)) {
                println!("seed {seed}: score {raw:.2} scaled {scaled:.4}");
            }
            println!(
                "{} budget {}: scaled {:.4} +- {:.4} over {} seeds (expert {:.2})",
                report.label(),
                report.labeled_budget,
                report.scaled_mean,
                report.scaled_std,
                report.seeds.len(),
                report.expert_score
            );
            if report.seeds.len() != cfg.seeds.len() {
                bail!("only {} of {} seeds completed", report.seeds.len(), cfg.seeds.len());
            }
        }
        Command::Compare { runs, out } => {
            let rows = experiment::cmd_compare(&runs, &out)?;
            println!("{:<20} {:>7} {:>6} {:>8} {:>8}", "method", "budget", "seeds", "scaled", "std");
            for r in &rows {
                println!(
                    "{:<20} {:>7} {:>6} {:>8.4} {:>8.4}",
                    r.method, r.labeled_budget, r.seeds, r.scaled_mean, r.scaled_std
                );
            }
            println!("table -> {}", out.display());
        }
        Command::Report(a) => {
            let cfg = a.resolve()?;
            let rows = experiment::cmd_report(&cfg)?;
            print_tiers(&rows);
            println!("report -> {}", cfg.tier_report_path().display());
        }
    }
    Ok(())
}

fn print_tiers(rows: &[experiment::TierRow]) {
    println!("{:<12} {:>7} {:>8} {:>8}", "tier", "count", "mean", "std");
    for r in rows {
        println!("{:<12} {:>7} {:>8.4} {:>8.4}", r.tier, r.count, r.mean, r.std);
    }
}
