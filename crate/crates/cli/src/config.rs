//! JSON run configurations. Every subcommand reads one of these records;
//! `train` persists its resolved form so a run can be replayed verbatim.

use std::path::{Path, PathBuf};

use nncon::data::{self, CsvSchema, Dataset};
use nncon::lagrangian::{StepOverrides, StepSizes, TrainConfig, DEFAULT_BURN_IN};
use nncon::linearization::{InputDistribution, ScalingExperiment};
use nncon::online::QuadraticFamily;
use nncon::problem::{ConstraintProblem, ProblemConfig, ProblemSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Parses JSON, reporting the failing field as a dotted path.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.inner().to_string()
        } else {
            format!("at `{path}`: {}", e.inner())
        }
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text).map_err(|m| CliError::config(format!("{}: {m}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        n: usize,
        d: usize,
        bias_gap: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Fraction of rows used for training; the rest form the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(default)]
    pub split_seed: u64,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub dropped_rows: usize,
}

impl DataConfig {
    pub fn synthetic(n: usize, d: usize, bias_gap: f64, seed: u64) -> Self {
        Self {
            source: DataSource::Synthetic { n, d, bias_gap, seed },
            train_fraction: None,
            split_seed: 0,
        }
    }

    /// Makes a relative CSV path absolute against `base`.
    pub fn anchor(&mut self, base: &Path) {
        if let DataSource::Csv { path, .. } = &mut self.source {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        match &self.source {
            DataSource::Synthetic { n, d, bias_gap, .. } => {
                if *n < 40 {
                    return Err(CliError::config(format!("data.source.synthetic.n: need n >= 40, got {n}")));
                }
                if *d < 3 {
                    return Err(CliError::config(format!("data.source.synthetic.d: need d >= 3, got {d}")));
                }
                if !(0.0..1.0).contains(bias_gap) {
                    return Err(CliError::config(format!(
                        "data.source.synthetic.bias_gap: must lie in [0, 1), got {bias_gap}"
                    )));
                }
            }
            DataSource::Csv { path, .. } => {
                if !path.is_file() {
                    return Err(CliError::config(format!(
                        "data.source.csv.path: dataset {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::config(format!("data.train_fraction: must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }

    pub fn load(&self) -> CliResult<LoadedData> {
        let (full, dropped_rows) = match &self.source {
            DataSource::Synthetic { n, d, bias_gap, seed } => {
                (data::generate_biased_synthetic(*n, *d, *bias_gap, *seed)?, 0)
            }
            DataSource::Csv { path, schema } => {
                let r = data::load_csv(path, schema)?;
                (r.dataset, r.dropped_rows)
            }
        };
        let (train, test) = match self.train_fraction {
            Some(f) => {
                let (a, b) = full.split(f, self.split_seed)?;
                (a, Some(b))
            }
            None => (full, None),
        };
        Ok(LoadedData {
            train,
            test,
            dropped_rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width `m`.
    pub width: usize,
    /// Radius `D` of the parameter ball around the initialization.
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Multipliers applied to the theorem step sizes before explicit overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepScale {
    #[serde(default = "one")]
    pub theta: f64,
    #[serde(default = "one")]
    pub xi: f64,
    #[serde(default = "one")]
    pub lambda: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for StepScale {
    fn default() -> Self {
        Self {
            theta: 1.0,
            xi: 1.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_every: Option<usize>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub step_scale: StepScale,
    #[serde(default)]
    pub steps: StepOverrides,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_batch() -> usize {
    1
}

impl OptimizerConfig {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            seed: None,
            log_every: None,
            burn_in: DEFAULT_BURN_IN,
            batch_size: 1,
            step_scale: StepScale::default(),
            steps: StepOverrides::default(),
        }
    }

    /// Step sizes actually used on `problem`.
    pub fn step_sizes(&self, problem: &ConstraintProblem) -> StepSizes {
        let base = StepSizes::theorem_defaults(problem, self.horizon);
        StepSizes {
            theta: base.theta * self.step_scale.theta,
            xi: base.xi * self.step_scale.xi,
            lambda: base.lambda * self.step_scale.lambda,
        }
        .with_overrides(&self.steps)
    }

    pub fn train_config(&self, problem: &ConstraintProblem, seed: u64) -> TrainConfig {
        let s = self.step_sizes(problem);
        TrainConfig {
            horizon: self.horizon,
            seed,
            log_every: self.log_every,
            burn_in: self.burn_in,
            batch_size: self.batch_size,
            step_overrides: StepOverrides {
                theta: Some(s.theta),
                xi: Some(s.xi),
                lambda: Some(s.lambda),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    pub problem: ProblemSpec,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    /// Also train an unconstrained network with the same `m`, `D`, `T` and θ step.
    #[serde(default)]
    pub baseline: bool,
}

impl TrainRunConfig {
    /// Equal-opportunity training on the biased synthetic set: n = 2000,
    /// d = 8, gap 0.8, m = 256, D = 10, T = 20000, θ step at 4× the theorem
    /// value, with an unconstrained baseline.
    pub fn fairness_reference() -> Self {
        let mut optimizer = OptimizerConfig::new(20_000);
        optimizer.step_scale.theta = 4.0;
        Self {
            seed: 0,
            data: DataConfig::synthetic(2000, 8, 0.8, 0),
            problem: ProblemSpec::preset("equal-opportunity"),
            model: ModelConfig {
                width: 256,
                radius: 10.0,
                seed: None,
            },
            optimizer,
            baseline: true,
        }
    }

    /// Reads a config file, anchors relative paths at its directory, applies a
    /// seed override and validates.
    pub fn from_file(path: &Path, seed: Option<u64>) -> CliResult<Self> {
        let mut cfg: Self = read_json(path)?;
        cfg.data.anchor(path.parent().unwrap_or(Path::new(".")));
        cfg.override_seed(seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces every seed derived from the top-level one.
    pub fn override_seed(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
            self.model.seed = None;
            self.optimizer.seed = None;
        }
    }

    pub fn model_seed(&self) -> u64 {
        self.model.seed.unwrap_or(self.seed)
    }

    pub fn optimizer_seed(&self) -> u64 {
        self.optimizer.seed.unwrap_or(self.seed)
    }

    /// Copy with every seed written out explicitly.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.model.seed = Some(self.model_seed());
        c.optimizer.seed = Some(self.optimizer_seed());
        c
    }

    pub fn problem_config(&self) -> CliResult<ProblemConfig> {
        self.problem
            .resolve()
            .map_err(|e| CliError::config(format!("problem: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.data.validate()?;
        let p = self.problem_config()?;
        if !(p.kappa > 0.0 && p.kappa.is_finite()) {
            return Err(CliError::config(format!("problem.kappa: must be positive, got {}", p.kappa)));
        }
        if self.model.width == 0 {
            return Err(CliError::config("model.width: must be positive"));
        }
        if !(self.model.radius > 0.0 && self.model.radius.is_finite()) {
            return Err(CliError::config(format!(
                "model.radius: must be positive and finite, got {}",
                self.model.radius
            )));
        }
        let o = &self.optimizer;
        if o.horizon == 0 {
            return Err(CliError::config("optimizer.T: must be positive"));
        }
        if o.batch_size == 0 {
            return Err(CliError::config("optimizer.batch_size: must be positive"));
        }
        if o.log_every == Some(0) {
            return Err(CliError::config("optimizer.log_every: must be positive"));
        }
        for (name, v) in [
            ("theta", o.step_scale.theta),
            ("xi", o.step_scale.xi),
            ("lambda", o.step_scale.lambda),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::config(format!("optimizer.step_scale.{name}: got {v}")));
            }
        }
        for (name, v) in [("theta", o.steps.theta), ("xi", o.steps.xi), ("lambda", o.steps.lambda)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(CliError::config(format!("optimizer.steps.{name}: got {v}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBoundSuite {
    pub widths: Vec<usize>,
    pub input_dim: usize,
    pub replicates: usize,
    pub threshold: f64,
    /// Largest allowed `max E|y| / min E|y|` across widths.
    pub max_ratio: f64,
    #[serde(default)]
    pub inputs: InputDistribution,
    #[serde(default)]
    pub seed: u64,
}

impl Default for OutputBoundSuite {
    fn default() -> Self {
        Self {
            widths: vec![1 << 6, 1 << 10, 1 << 14],
            input_dim: 16,
            replicates: 2_000,
            threshold: 10.0,
            max_ratio: 2.0,
            inputs: InputDistribution::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearizationSuite {
    pub width_sweep: ScalingExperiment,
    /// Optional `D` sweep at fixed width, reported without a verdict.
    pub radius_sweep: Option<ScalingExperiment>,
    pub output_bound: OutputBoundSuite,
    /// Accepted range for both fitted width exponents.
    pub slope_band: [f64; 2],
    pub bootstrap_seed: u64,
}

impl Default for LinearizationSuite {
    fn default() -> Self {
        Self {
            width_sweep: ScalingExperiment::width_sweep(),
            radius_sweep: Some(ScalingExperiment::radius_sweep()),
            output_bound: OutputBoundSuite::default(),
            slope_band: [-0.8, -0.2],
            bootstrap_seed: 0,
        }
    }
}

impl LinearizationSuite {
    pub fn validate(&self) -> CliResult<()> {
        self.width_sweep
            .validate()
            .map_err(|e| CliError::config(format!("width_sweep: {e}")))?;
        if self.width_sweep.widths.len() < 3 {
            return Err(CliError::config("width_sweep.widths: need at least 3 widths for a fit"));
        }
        if let Some(r) = &self.radius_sweep {
            r.validate().map_err(|e| CliError::config(format!("radius_sweep: {e}")))?;
        }
        let b = &self.output_bound;
        if b.widths.is_empty() || b.widths.contains(&0) {
            return Err(CliError::config("output_bound.widths: need positive widths"));
        }
        if b.replicates < 2 {
            return Err(CliError::config("output_bound.replicates: need at least 2"));
        }
        if !(b.threshold > 0.0) {
            return Err(CliError::config("output_bound.threshold: must be positive"));
        }
        check_band("slope_band", self.slope_band)
    }
}

fn check_band(name: &str, band: [f64; 2]) -> CliResult<()> {
    if band[0] <= band[1] {
        Ok(())
    } else {
        Err(CliError::config(format!("{name}: lower end exceeds upper end")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretSuite {
    pub family: QuadraticFamily,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub slope_band: [f64; 2],
    /// Gradient bias for the plateau check.
    pub bias: f64,
    /// The biased curve must keep `regret(late) > ratio · regret(early)`.
    pub plateau_horizons: [usize; 2],
    pub plateau_ratio: f64,
}

impl Default for RegretSuite {
    fn default() -> Self {
        Self {
            family: QuadraticFamily::default(),
            horizons: (6..=13).map(|k| 1usize << k).collect(),
            seeds: (0..10).collect(),
            slope_band: [-0.65, -0.35],
            bias: 0.1,
            plateau_horizons: [1 << 9, 1 << 13],
            plateau_ratio: 0.5,
        }
    }
}

impl RegretSuite {
    pub fn validate(&self) -> CliResult<()> {
        if self.horizons.len() < 3 || self.horizons.contains(&0) {
            return Err(CliError::config("horizons: need at least 3 positive horizons"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds: need at least one seed"));
        }
        if self.family.dim == 0 || !(self.family.domain_radius > 0.0) || self.family.center_radius < 0.0 {
            return Err(CliError::config("family: need dim > 0, domain_radius > 0, center_radius >= 0"));
        }
        if self.plateau_horizons.contains(&0) || self.plateau_horizons[0] >= self.plateau_horizons[1] {
            return Err(CliError::config("plateau_horizons: need 0 < early < late"));
        }
        check_band("slope_band", self.slope_band)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSuite {
    /// Training setup shared by every κ; `problem.kappa` is replaced per run.
    #[serde(default = "bound_base")]
    pub base: TrainRunConfig,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<f64>,
    /// Replicate seeds; each drives the initialization and sampling of every κ.
    #[serde(default = "default_replicates")]
    pub seeds: Vec<u64>,
    /// Inversions of the trend tolerated when within one standard error.
    #[serde(default = "default_inversions")]
    pub tolerated_inversions: usize,
}

fn bound_base() -> TrainRunConfig {
    TrainRunConfig {
        baseline: false,
        ..TrainRunConfig::fairness_reference()
    }
}

impl Default for BoundSuite {
    fn default() -> Self {
        Self {
            base: bound_base(),
            kappas: default_kappas(),
            seeds: default_replicates(),
            tolerated_inversions: default_inversions(),
        }
    }
}

fn default_kappas() -> Vec<f64> {
    vec![0.5, 1.0, 2.0, 4.0]
}

fn default_replicates() -> Vec<u64> {
    (0..5).collect()
}

fn default_inversions() -> usize {
    1
}

impl BoundSuite {
    pub fn validate(&self) -> CliResult<()> {
        self.base.validate()?;
        if self.kappas.len() < 2 || self.kappas.iter().any(|k| !(*k > 0.0)) {
            return Err(CliError::config("kappas: need at least two positive values"));
        }
        if !self.kappas.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::config("kappas: must be strictly increasing"));
        }
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds: need at least one seed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub n: usize,
    pub d: usize,
    pub bias_gap: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            d: 8,
            bias_gap: 0.8,
            seed: 0,
            train_fraction: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
            "data": {"source": {"synthetic": {"n": 100, "d": 4, "bias_gap": 0.5}}},
            "problem": {"preset": "equal-opportunity"},
            "model": {"width": 16, "radius": 2.0},
            "optimizer": {"T": 50}
        }"#
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let c: TrainRunConfig = parse_json(minimal()).unwrap();
        c.validate().unwrap();
        assert_eq!(c.optimizer.burn_in, DEFAULT_BURN_IN);
        assert_eq!(c.optimizer.step_scale, StepScale::default());
        assert_eq!(c.model_seed(), 0);
        let r = c.resolved();
        assert_eq!(r.model.seed, Some(0));
        let back: TrainRunConfig = parse_json(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn error_names_the_field() {
        let bad = minimal().replace("\"width\": 16", "\"width\": \"wide\"");
        let msg = parse_json::<TrainRunConfig>(&bad).unwrap_err();
        assert!(msg.contains("model.width"), "{msg}");
        let unknown = minimal().replace("\"T\": 50", "\"T\": 50, \"epochs\": 3");
        let msg = parse_json::<TrainRunConfig>(&unknown).unwrap_err();
        assert!(msg.contains("optimizer") && msg.contains("epochs"), "{msg}");
    }

    #[test]
    fn seed_override_reaches_every_stream() {
        let mut c: TrainRunConfig = parse_json(minimal()).unwrap();
        c.model.seed = Some(3);
        c.override_seed(Some(9));
        assert_eq!((c.model_seed(), c.optimizer_seed()), (9, 9));
    }

    #[test]
    fn missing_csv_is_a_config_error() {
        let mut c: TrainRunConfig = parse_json(minimal()).unwrap();
        c.data.source = DataSource::Csv {
            path: "/nonexistent/data.csv".into(),
            schema: CsvSchema::default(),
        };
        let e = c.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("does not exist"));
    }

    #[test]
    fn bad_values_rejected() {
        let mut c: TrainRunConfig = parse_json(minimal()).unwrap();
        c.optimizer.horizon = 0;
        assert!(c.validate().is_err());
        let mut c: TrainRunConfig = parse_json(minimal()).unwrap();
        c.problem = ProblemSpec::preset("demographic-parity");
        assert!(c.validate().unwrap_err().to_string().contains("problem"));
        let mut c: TrainRunConfig = parse_json(minimal()).unwrap();
        c.data.train_fraction = Some(1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn suite_defaults_validate() {
        LinearizationSuite::default().validate().unwrap();
        RegretSuite::default().validate().unwrap();
        BoundSuite::default().validate().unwrap();
        let b: BoundSuite = parse_json("{}").unwrap();
        assert_eq!(b, BoundSuite::default());
        let s: RegretSuite = parse_json("{}").unwrap();
        assert_eq!(s.horizons.len(), 8);
    }
}
