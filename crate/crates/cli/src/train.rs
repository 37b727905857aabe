//! `train`: runs the Lagrangian game and writes a replayable run directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nncon::lagrangian::{self, MetricsTrace, StepSizes, TrainOutput};
use nncon::problem::{ConstraintProblem, ProblemConfig};
use nncon::stochastic::Bundle;
use nncon::{StochasticClassifier, TwoLayerNet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{self, LoadedData, TrainRunConfig};
use crate::error::{CliError, CliResult};
use crate::plot;

pub const CONFIG_FILE: &str = "config.json";
pub const META_FILE: &str = "meta.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const T_STOCH_FILE: &str = "t_stoch.json";
pub const J_STOCH_FILE: &str = "j_stoch.json";
pub const LAST_FILE: &str = "last.json";
pub const BEST_FILE: &str = "best.json";
pub const BASELINE_FILE: &str = "unconstrained.json";
pub const BASELINE_TRACE_FILE: &str = "unconstrained_trace.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSummary {
    pub objective: f64,
    pub rates: Vec<f64>,
    pub constraints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMeta {
    pub steps: StepSizes,
    pub objective: f64,
}

/// Everything besides the config needed to audit or replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub config_sha256: String,
    pub train_fingerprint: String,
    pub test_fingerprint: Option<String>,
    pub train_rows: usize,
    pub test_rows: Option<usize>,
    pub dropped_rows: usize,
    /// Features were divided by this to bring every row into the unit ball.
    pub norm_scale: f64,
    pub input_dim: usize,
    pub model_seed: u64,
    pub optimizer_seed: u64,
    pub steps: StepSizes,
    pub lipschitz: f64,
    pub bound: f64,
    pub kappa: f64,
    pub log_every: usize,
    pub snapshot_iterations: Vec<usize>,
    pub best_iteration: usize,
    pub last_iteration: usize,
    pub t_stoch: MixtureSummary,
    pub baseline: Option<BaselineMeta>,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub net: TwoLayerNet,
    pub trace: MetricsTrace,
    pub steps: StepSizes,
}

/// In-memory result of a training run.
#[derive(Debug, Clone)]
pub struct FittedRun {
    /// The config with every seed written out.
    pub config: TrainRunConfig,
    pub data: LoadedData,
    pub problem: ConstraintProblem,
    pub steps: StepSizes,
    pub output: TrainOutput,
    pub classifier: StochasticClassifier,
    pub iterations: Vec<usize>,
    /// Exact training objective of every snapshot.
    pub snapshot_objectives: Vec<f64>,
    pub best_index: usize,
    pub baseline: Option<BaselineRun>,
}

impl FittedRun {
    pub fn last(&self) -> &TwoLayerNet {
        &self.output.final_state.net
    }

    pub fn best(&self) -> CliResult<TwoLayerNet> {
        Ok(self.classifier.net(self.best_index))
    }

    pub fn t_stoch_summary(&self) -> CliResult<MixtureSummary> {
        let rates = self.classifier.mixture_rates(&self.problem)?;
        Ok(MixtureSummary {
            objective: self.classifier.mixture_objective(&self.problem)?,
            constraints: self.problem.constraint_values(&rates),
            rates,
        })
    }
}

pub fn build_problem(config: &ProblemConfig, train: &nncon::Dataset, radius: f64) -> CliResult<ConstraintProblem> {
    Ok(ConstraintProblem::build(config, Arc::new(train.clone()), radius)?)
}

/// Trains without touching the disk.
pub fn fit(cfg: &TrainRunConfig) -> CliResult<FittedRun> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let data = cfg.data.load()?;
    let problem_config = cfg.problem_config()?;
    let problem = build_problem(&problem_config, &data.train, cfg.model.radius)?;
    let init = TwoLayerNet::init(cfg.model.width, data.train.dim(), cfg.model.radius, cfg.model_seed())?;
    let tc = cfg.optimizer.train_config(&problem, cfg.optimizer_seed());
    let steps = cfg.optimizer.step_sizes(&problem);
    let output = lagrangian::run(&problem, init.clone(), &tc)?;

    let iterations: Vec<usize> = output.snapshots.iter().map(|s| s.t).collect();
    let thetas: Vec<Vec<f64>> = output.snapshots.iter().map(|s| s.theta.clone()).collect();
    let classifier = StochasticClassifier::uniform(init.clone(), thetas)?;
    let snapshot_objectives: Vec<f64> = (0..classifier.len())
        .map(|t| problem.objective_from_outputs(&problem.outputs(&classifier.net(t))))
        .collect();
    let best_index = snapshot_objectives
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < snapshot_objectives[best] { i } else { best });

    let baseline = if cfg.baseline {
        let unconstrained = ProblemConfig::unconstrained(problem_config.objective);
        let bp = build_problem(&unconstrained, &data.train, cfg.model.radius)?;
        let mut btc = tc.clone();
        btc.step_overrides.theta = Some(steps.theta);
        let b_steps = StepSizes::theorem_defaults(&bp, btc.horizon).with_overrides(&btc.step_overrides);
        let out = lagrangian::run(&bp, init, &btc)?;
        Some(BaselineRun {
            net: out.final_state.net,
            trace: out.trace,
            steps: b_steps,
        })
    } else {
        None
    };

    Ok(FittedRun {
        config: cfg,
        data,
        problem,
        steps,
        output,
        classifier,
        iterations,
        snapshot_objectives,
        best_index,
        baseline,
    })
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn config_text(cfg: &TrainRunConfig) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(cfg)? + "\n")
}

/// Trains and writes the run directory: `config.json`, `meta.json`,
/// `trace.csv`, the T-Stoch bundle, the Last and Best networks and, when
/// requested, the unconstrained baseline.
pub fn train(cfg: &TrainRunConfig, out: &Path, plots: bool) -> CliResult<FittedRun> {
    cfg.validate()?;
    let resolved = cfg.resolved();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let text = config_text(&resolved)?;
    let config_path = out.join(CONFIG_FILE);
    std::fs::write(&config_path, &text).map_err(|e| CliError::io(&config_path, e))?;

    let run = match fit(&resolved) {
        Ok(r) => r,
        Err(CliError::Core(nncon::Error::Diverged { what, iteration, trace })) => {
            trace.write_csv(out.join(TRACE_FILE))?;
            return Err(CliError::Core(nncon::Error::Diverged { what, iteration, trace }));
        }
        Err(e) => return Err(e),
    };

    run.output.trace.write_csv(out.join(TRACE_FILE))?;
    let config_sha256 = sha256_hex(text.as_bytes());
    let train_fingerprint = run.data.train.fingerprint();
    let mut bundle = Bundle::new(run.classifier.clone(), run.iterations.clone());
    bundle.provenance.insert("kind".into(), "t-stoch".into());
    bundle.provenance.insert("config_sha256".into(), config_sha256.clone());
    bundle.provenance.insert("train_fingerprint".into(), train_fingerprint.clone());
    bundle.save(out.join(T_STOCH_FILE))?;
    run.last().save(out.join(LAST_FILE))?;
    run.best()?.save(out.join(BEST_FILE))?;

    let baseline = match &run.baseline {
        Some(b) => {
            b.net.save(out.join(BASELINE_FILE))?;
            b.trace.write_csv(out.join(BASELINE_TRACE_FILE))?;
            let bp = build_problem(
                &ProblemConfig::unconstrained(run.problem.config.objective),
                &run.data.train,
                run.config.model.radius,
            )?;
            Some(BaselineMeta {
                steps: b.steps,
                objective: bp.exact_objective(&b.net)?,
            })
        }
        None => None,
    };

    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256,
        train_fingerprint,
        test_fingerprint: run.data.test.as_ref().map(|d| d.fingerprint()),
        train_rows: run.data.train.len(),
        test_rows: run.data.test.as_ref().map(|d| d.len()),
        dropped_rows: run.data.dropped_rows,
        norm_scale: run.data.train.norm_scale(),
        input_dim: run.data.train.dim(),
        model_seed: run.config.model_seed(),
        optimizer_seed: run.config.optimizer_seed(),
        steps: run.steps,
        lipschitz: run.problem.lipschitz(),
        bound: run.problem.bound(),
        kappa: run.problem.kappa,
        log_every: run.output.log_every,
        snapshot_iterations: run.iterations.clone(),
        best_iteration: run.iterations[run.best_index],
        last_iteration: run.output.final_state.t,
        t_stoch: run.t_stoch_summary()?,
        baseline,
    };
    config::write_json(&out.join(META_FILE), &meta)?;

    if plots {
        plot_trace(out)?;
    }
    Ok(run)
}

fn plot_trace(out: &Path) -> CliResult<()> {
    let trace = out.join(TRACE_FILE);
    plot::plot_csv(
        &trace,
        "t",
        &["objective_estimate", "objective_exact"],
        &out.join("objective.svg"),
        plot::Chart {
            title: "Training objective".into(),
            x_label: "iteration".into(),
            y_label: "objective".into(),
            log_x: false,
            log_y: false,
            series: vec![],
        },
    )?;
    let g = plot::columns_with_prefix(&trace, "g_rate_")?;
    if !g.is_empty() {
        let cols: Vec<&str> = g.iter().map(String::as_str).collect();
        plot::plot_csv(
            &trace,
            "t",
            &cols,
            &out.join("constraints.svg"),
            plot::Chart {
                title: "Constraint values at the iterate".into(),
                x_label: "iteration".into(),
                y_label: "g_j(r(θ))".into(),
                log_x: false,
                log_y: false,
                series: vec![],
            },
        )?;
    }
    Ok(())
}

/// A finished run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
    pub config: TrainRunConfig,
    pub meta: RunMeta,
}

impl RunDir {
    pub fn open(path: &Path) -> CliResult<Self> {
        if !path.is_dir() {
            return Err(CliError::config(format!("run directory {} does not exist", path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
            config: config::read_json(&path.join(CONFIG_FILE))?,
            meta: config::read_json(&path.join(META_FILE))?,
        })
    }

    /// Reloads the data and checks it against the recorded fingerprints.
    pub fn load_data(&self) -> CliResult<LoadedData> {
        self.config.data.validate()?;
        let data = self.config.data.load()?;
        if data.train.fingerprint() != self.meta.train_fingerprint {
            return Err(CliError::config(format!(
                "{}: training data no longer matches the recorded fingerprint",
                self.path.display()
            )));
        }
        Ok(data)
    }

    pub fn problem(&self, data: &LoadedData) -> CliResult<ConstraintProblem> {
        build_problem(&self.config.problem_config()?, &data.train, self.config.model.radius)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }
}
