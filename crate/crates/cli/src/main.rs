use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nncon_cli::config::{self, BoundSuite, GenDataConfig, LinearizationSuite, RegretSuite, TrainRunConfig};
use nncon_cli::verify::Verdict;
use nncon_cli::{evaluate, gendata, shrink, train, verify, CliError, CliResult};

#[derive(Parser)]
#[command(name = "nncon", version, about = "Constrained training of wide two-layer ReLU classifiers")]
struct Cli {
    /// JSON config for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also render SVG plots from the emitted CSVs.
    #[arg(long, global = true)]
    plots: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a randomized classifier; needs --config.
    Train,
    /// Accuracy and recall of every classifier in a run directory.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Minimum number of sampled predictions per randomized classifier.
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
    },
    /// Compress a run's T-Stoch bundle with the shrink LP.
    Shrink {
        #[arg(long)]
        run: PathBuf,
        /// Constraint slack; defaults to the slack of the uniform mixture.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Width scaling of the linearization error and output boundedness.
    VerifyLinearization,
    /// Regret of online mirror descent on a quadratic family.
    VerifyRegret,
    /// Feasibility gap of trained classifiers across κ.
    VerifyBound,
    /// Write the biased synthetic dataset as CSV.
    GenData {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        bias_gap: Option<f64>,
        #[arg(long)]
        train_fraction: Option<f64>,
    },
}

fn suite_config<T: Default + serde::de::DeserializeOwned>(path: &Option<PathBuf>) -> CliResult<T> {
    match path {
        Some(p) => config::read_json(p),
        None => Ok(T::default()),
    }
}

fn report_verdict(v: &Verdict, out: &Path) -> CliResult<()> {
    for c in &v.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("verdict written to {}", out.join(verify::VERDICT_FILE).display());
    if v.pass {
        Ok(())
    } else {
        let failed: Vec<&str> = v.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        Err(CliError::Verify(format!("{} suite: {}", v.suite, failed.join(", "))))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let out = |default: &str| cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    match &cli.command {
        Command::Train => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| CliError::config("train needs --config <path>"))?;
            let cfg = TrainRunConfig::from_file(path, cli.seed)?;
            let dir = out("run");
            let r = train::train(&cfg, &dir, cli.plots)?;
            let s = r.t_stoch_summary()?;
            println!(
                "trained {} snapshots; T-Stoch objective {:.5}, constraints {:?}",
                r.classifier.len(),
                s.objective,
                s.constraints
            );
            println!("run written to {}", dir.display());
        }
        Command::Evaluate { run, draws } => {
            let dir = cli.out.clone().unwrap_or_else(|| run.clone());
            let rows = evaluate::evaluate(run, &dir, *draws, cli.seed.unwrap_or(0))?;
            println!(
                "{:<14} {:<6} {:<13} {:>8} {:>8} {:>8} {:>8} {:>8}",
                "classifier", "split", "mode", "acc", "acc_A", "acc_Ac", "rec_A", "rec_Ac"
            );
            for r in &rows {
                let m = &r.metrics;
                println!(
                    "{:<14} {:<6} {:<13} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                    r.classifier, r.split, r.mode, m.accuracy, m.accuracy_a, m.accuracy_ac, m.recall_a, m.recall_ac
                );
            }
        }
        Command::Shrink { run, epsilon } => {
            let r = shrink::shrink(run, *epsilon)?;
            println!(
                "nnz {} of {}; objective {:.5} -> {:.5}; constraints {:?} -> {:?} (epsilon {:.4e})",
                r.nnz,
                r.snapshots,
                r.objective_before,
                r.objective_after,
                r.constraints_before,
                r.constraints_after,
                r.epsilon
            );
        }
        Command::VerifyLinearization => {
            let mut suite: LinearizationSuite = suite_config(&cli.config)?;
            if let Some(s) = cli.seed {
                suite.width_sweep.seed = s;
                if let Some(r) = &mut suite.radius_sweep {
                    r.seed = s;
                }
                suite.output_bound.seed = s;
                suite.bootstrap_seed = s;
            }
            let dir = out("verify-linearization");
            let v = verify::verify_linearization(&suite, &dir, cli.plots)?;
            report_verdict(&v, &dir)?;
        }
        Command::VerifyRegret => {
            let mut suite: RegretSuite = suite_config(&cli.config)?;
            if let Some(s) = cli.seed {
                let n = suite.seeds.len() as u64;
                suite.seeds = (s..s + n).collect();
            }
            let dir = out("verify-regret");
            let v = verify::verify_regret(&suite, &dir, cli.plots)?;
            report_verdict(&v, &dir)?;
        }
        Command::VerifyBound => {
            let mut suite: BoundSuite = suite_config(&cli.config)?;
            if let Some(p) = &cli.config {
                suite.base.data.anchor(p.parent().unwrap_or(Path::new(".")));
            }
            if let Some(s) = cli.seed {
                let n = suite.seeds.len() as u64;
                suite.seeds = (s..s + n).collect();
            }
            let dir = out("verify-bound");
            let v = verify::verify_bound(&suite, &dir, cli.plots)?;
            report_verdict(&v, &dir)?;
        }
        Command::GenData {
            n,
            d,
            bias_gap,
            train_fraction,
        } => {
            let mut cfg: GenDataConfig = suite_config(&cli.config)?;
            cfg.n = n.unwrap_or(cfg.n);
            cfg.d = d.unwrap_or(cfg.d);
            cfg.bias_gap = bias_gap.unwrap_or(cfg.bias_gap);
            cfg.train_fraction = train_fraction.or(cfg.train_fraction);
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            let dir = out("data");
            let s = gendata::gen_data(&cfg, &dir)?;
            println!(
                "wrote {} rows ({} features) to {}; fingerprint {}",
                s.rows,
                s.dim,
                dir.join(gendata::DATA_FILE).display(),
                s.fingerprint
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
