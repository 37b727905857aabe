//! Verification suites: width scaling of the linearization error, output
//! boundedness at initialization, online regret, and the κ trend of the
//! feasibility gap. Each writes CSV tables, `verdict.json` and optional plots.

use std::path::Path;

use nncon::fit;
use nncon::linearization::{self, Axis, CellResult, OutputBoundRow, Quantity, ScalingExperiment, ScalingFit};
use nncon::online::{self, QuadraticFamily, RegretSlopeReport};
use nncon::problem::ProblemSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{self, BoundSuite, LinearizationSuite, RegretSuite, TrainRunConfig};
use crate::error::{CliError, CliResult};
use crate::plot::{self, Chart};
use crate::report;
use crate::train;

pub const VERDICT_FILE: &str = "verdict.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub suite: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Verdict {
    pub fn new(suite: &str, checks: Vec<Check>) -> Self {
        Self {
            suite: suite.to_string(),
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn write(&self, out: &Path) -> CliResult<()> {
        config::write_json(&out.join(VERDICT_FILE), self)
    }
}

fn in_band(v: f64, band: [f64; 2]) -> bool {
    v >= band[0] && v <= band[1]
}

fn make_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

#[derive(Debug, Clone)]
pub struct WidthScaling {
    pub cells: Vec<CellResult>,
    pub squared_output: ScalingFit,
    pub gradient: ScalingFit,
    pub checks: Vec<Check>,
}

/// Errors at `θ⁰` for every width of `exp`: zero output and gradient gap.
fn zero_at_init(exp: &ScalingExperiment) -> CliResult<Check> {
    let probe = ScalingExperiment {
        samples: 200,
        nets_per_cell: 4,
        perturbation_scale: 0.0,
        radii: vec![exp.radii[0]],
        ..exp.clone()
    };
    let cells = linearization::estimate_linearization_errors(&probe)?;
    let worst = cells
        .iter()
        .map(|c| c.mean_sq_err.max(c.max_grad_err))
        .fold(0.0, f64::max);
    Ok(Check::new(
        "errors vanish at initialization",
        worst == 0.0,
        format!("largest error at θ = θ⁰ over {} widths: {worst:e}", cells.len()),
    ))
}

pub fn width_scaling(suite: &LinearizationSuite) -> CliResult<WidthScaling> {
    suite.validate()?;
    let exp = &suite.width_sweep;
    let cells = linearization::estimate_linearization_errors(exp)?;
    let squared_output =
        linearization::fit_scaling_exponent(&cells, Axis::Width, Quantity::SquaredOutputError, suite.bootstrap_seed)?;
    let gradient =
        linearization::fit_scaling_exponent(&cells, Axis::Width, Quantity::GradientError, suite.bootstrap_seed)?;
    let band = suite.slope_band;
    let slope_check = |name: &str, f: &ScalingFit| {
        Check::new(
            name,
            in_band(f.fit.slope, band),
            format!(
                "slope {:.4} (bootstrap s.e. {:.4}, OLS s.e. {:.4}), band [{}, {}]",
                f.fit.slope, f.bootstrap_stderr, f.fit.stderr, band[0], band[1]
            ),
        )
    };
    let violations: usize = cells.iter().map(|c| c.flip_bound_violations).sum();
    let checks = vec![
        slope_check("squared output error slope in band", &squared_output),
        slope_check("gradient error slope in band", &gradient),
        zero_at_init(exp)?,
        Check::new(
            "per-sample flip bound holds",
            violations == 0,
            format!("{violations} samples exceed the activation-flip bound"),
        ),
    ];
    Ok(WidthScaling {
        cells,
        squared_output,
        gradient,
        checks,
    })
}

#[derive(Debug, Clone)]
pub struct OutputBound {
    pub rows: Vec<OutputBoundRow>,
    pub ratio: f64,
    pub checks: Vec<Check>,
}

pub fn output_bound(suite: &LinearizationSuite) -> CliResult<OutputBound> {
    suite.validate()?;
    let b = &suite.output_bound;
    let rows =
        linearization::estimate_output_bound(&b.widths, b.input_dim, b.replicates, b.threshold, b.inputs, b.seed)?;
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.mean_abs), hi.max(r.mean_abs)));
    let ratio = hi / lo;
    let tail_ok = rows.iter().all(|r| r.tail_prob <= r.markov_bound);
    let tails: Vec<String> = rows
        .iter()
        .map(|r| format!("m={}: {:.2e} <= {:.2e}", r.width, r.tail_prob, r.markov_bound))
        .collect();
    let checks = vec![
        Check::new(
            "mean output is width independent",
            ratio <= b.max_ratio,
            format!("max/min E|y| = {ratio:.4} (limit {})", b.max_ratio),
        ),
        Check::new(
            "tail probability within Markov bound",
            tail_ok,
            format!("P(|y| > {}): {}", b.threshold, tails.join(", ")),
        ),
    ];
    Ok(OutputBound { rows, ratio, checks })
}

fn write_cells(cells: &[CellResult], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_serialized<T: Serialize>(rows: &[T], path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn chart(title: &str, x: &str, y: &str, log: bool) -> Chart {
    Chart {
        title: title.into(),
        x_label: x.into(),
        y_label: y.into(),
        log_x: log,
        log_y: log,
        series: vec![],
    }
}

pub fn verify_linearization(suite: &LinearizationSuite, out: &Path, plots: bool) -> CliResult<Verdict> {
    suite.validate()?;
    make_dir(out)?;
    config::write_json(&out.join("config.json"), suite)?;
    let ws = width_scaling(suite)?;
    write_cells(&ws.cells, &out.join("width_sweep.csv"))?;
    let ob = output_bound(suite)?;
    write_serialized(&ob.rows, &out.join("output_bound.csv"))?;
    let mut checks = ws.checks.clone();
    checks.extend(ob.checks.clone());
    if let Some(r) = &suite.radius_sweep {
        let cells = linearization::estimate_linearization_errors(r)?;
        write_cells(&cells, &out.join("radius_sweep.csv"))?;
        let f = linearization::fit_scaling_exponent(&cells, Axis::Radius, Quantity::SquaredOutputError, suite.bootstrap_seed)?;
        config::write_json(&out.join("radius_fit.json"), &f)?;
    }
    config::write_json(
        &out.join("width_fits.json"),
        &serde_json::json!({
            "squared_output_error": ws.squared_output,
            "gradient_error": ws.gradient,
        }),
    )?;
    let verdict = Verdict::new("linearization", checks);
    verdict.write(out)?;
    if plots {
        plot::plot_csv(
            &out.join("width_sweep.csv"),
            "width",
            &["mean_sq_err", "mean_grad_err"],
            &out.join("width_sweep.svg"),
            chart("Linearization error against width", "m", "error", true),
        )?;
        plot::plot_csv(
            &out.join("output_bound.csv"),
            "width",
            &["mean_abs", "markov_bound", "tail_prob"],
            &out.join("output_bound.svg"),
            Chart {
                log_y: false,
                ..chart("Output magnitude at initialization", "m", "value", true)
            },
        )?;
        if suite.radius_sweep.is_some() {
            plot::plot_csv(
                &out.join("radius_sweep.csv"),
                "radius",
                &["mean_sq_err", "mean_grad_err"],
                &out.join("radius_sweep.svg"),
                chart("Linearization error against D", "D", "error", true),
            )?;
        }
    }
    Ok(verdict)
}

#[derive(Debug, Clone)]
pub struct RegretOutcome {
    pub unbiased: RegretSlopeReport,
    pub biased: RegretSlopeReport,
    pub checks: Vec<Check>,
}

pub fn regret_checks(suite: &RegretSuite) -> CliResult<RegretOutcome> {
    suite.validate()?;
    let unbiased = online::regret_slope_experiment(&suite.family, &suite.horizons, &suite.seeds)?;
    let biased_family = QuadraticFamily {
        bias: suite.bias,
        ..suite.family
    };
    let mut horizons = suite.horizons.clone();
    horizons.extend(suite.plateau_horizons);
    horizons.sort_unstable();
    horizons.dedup();
    let biased = online::regret_slope_experiment(&biased_family, &horizons, &suite.seeds)?;

    let worst = unbiased
        .points
        .iter()
        .map(|p| p.mean_regret / p.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let at = |t: usize| {
        biased
            .points
            .iter()
            .find(|p| p.horizon == t)
            .map(|p| p.mean_regret)
            .unwrap_or(f64::NAN)
    };
    let [early, late] = suite.plateau_horizons;
    let (r_early, r_late) = (at(early), at(late));
    let band = suite.slope_band;
    let checks = vec![
        Check::new(
            "regret within the lemma bound",
            worst <= 1.0,
            format!("largest mean regret / bound over T: {worst:.4}"),
        ),
        Check::new(
            "regret slope in band",
            in_band(unbiased.fit.slope, band),
            format!(
                "slope {:.4} (OLS s.e. {:.4}), band [{}, {}]",
                unbiased.fit.slope, unbiased.fit.stderr, band[0], band[1]
            ),
        ),
        Check::new(
            "biased gradients plateau",
            r_late > suite.plateau_ratio * r_early,
            format!(
                "bias {}: regret {r_late:.4e} at T={late} vs {r_early:.4e} at T={early} (ratio {:.3}, need > {})",
                suite.bias,
                r_late / r_early,
                suite.plateau_ratio
            ),
        ),
    ];
    Ok(RegretOutcome {
        unbiased,
        biased,
        checks,
    })
}

#[derive(Debug, Clone, Serialize)]
struct RegretRow {
    horizon: usize,
    mean_regret: f64,
    std_regret: f64,
    bound: f64,
    biased_mean_regret: f64,
    biased_std_regret: f64,
}

pub fn verify_regret(suite: &RegretSuite, out: &Path, plots: bool) -> CliResult<Verdict> {
    suite.validate()?;
    make_dir(out)?;
    config::write_json(&out.join("config.json"), suite)?;
    let o = regret_checks(suite)?;
    let rows: Vec<RegretRow> = o
        .unbiased
        .points
        .iter()
        .map(|p| {
            let b = o.biased.points.iter().find(|q| q.horizon == p.horizon);
            RegretRow {
                horizon: p.horizon,
                mean_regret: p.mean_regret,
                std_regret: p.std_regret,
                bound: p.bound,
                biased_mean_regret: b.map_or(f64::NAN, |q| q.mean_regret),
                biased_std_regret: b.map_or(f64::NAN, |q| q.std_regret),
            }
        })
        .collect();
    write_serialized(&rows, &out.join("regret.csv"))?;
    config::write_json(
        &out.join("regret_fits.json"),
        &serde_json::json!({ "unbiased": o.unbiased, "biased": o.biased }),
    )?;
    let verdict = Verdict::new("regret", o.checks);
    verdict.write(out)?;
    if plots {
        plot::plot_csv(
            &out.join("regret.csv"),
            "horizon",
            &["mean_regret", "bound", "biased_mean_regret"],
            &out.join("regret.svg"),
            chart("Average regret of online mirror descent", "T", "average regret", true),
        )?;
    }
    Ok(verdict)
}

/// Replaces the multiplier box bound `κ` of a problem spec.
pub fn set_kappa(spec: &mut ProblemSpec, value: f64) {
    match spec {
        ProblemSpec::Preset { kappa, .. } => *kappa = Some(value),
        ProblemSpec::Full(c) => c.kappa = value,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRun {
    pub kappa: f64,
    pub seed: u64,
    /// `max_j g_j` of the rates averaged over logged iterates after burn-in.
    pub max_violation: f64,
    pub t_stoch_recall_gap: f64,
    pub t_stoch_accuracy: f64,
    pub t_stoch_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub kappa: f64,
    pub mean_violation: f64,
    pub se_violation: f64,
    pub runs: usize,
}

fn bound_run(base: &TrainRunConfig, kappa: f64, seed: u64) -> CliResult<BoundRun> {
    let mut cfg = base.clone();
    set_kappa(&mut cfg.problem, kappa);
    cfg.override_seed(Some(seed));
    cfg.baseline = false;
    let run = train::fit(&cfg)?;
    let rates = run
        .output
        .trace
        .average_rates(run.config.optimizer.burn_in)
        .or_else(|| run.output.trace.average_rates(0))
        .ok_or_else(|| CliError::config("optimizer: no trace records; lower log_every or raise T"))?;
    let max_violation = run
        .problem
        .constraint_values(&rates)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let m = report::expected_metrics(&run.classifier, &run.data.train)?;
    Ok(BoundRun {
        kappa,
        seed,
        max_violation,
        t_stoch_recall_gap: m.recall_gap,
        t_stoch_accuracy: m.accuracy,
        t_stoch_objective: run.classifier.mixture_objective(&run.problem)?,
    })
}

/// Trains every `(κ, seed)` pair in parallel.
pub fn kappa_sweep(suite: &BoundSuite) -> CliResult<(Vec<BoundRun>, Vec<BoundRow>)> {
    suite.validate()?;
    let pairs: Vec<(f64, u64)> = suite
        .kappas
        .iter()
        .flat_map(|&k| suite.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let runs = pairs
        .par_iter()
        .map(|&(k, s)| bound_run(&suite.base, k, s))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = suite
        .kappas
        .iter()
        .map(|&k| {
            let v: Vec<f64> = runs.iter().filter(|r| r.kappa == k).map(|r| r.max_violation).collect();
            BoundRow {
                kappa: k,
                mean_violation: fit::mean(&v),
                se_violation: fit::std_err(&v),
                runs: v.len(),
            }
        })
        .collect();
    Ok((runs, rows))
}

/// Non-increasing in κ, allowing `tolerated` upward steps no larger than
/// the standard error of their difference.
pub fn trend_check(rows: &[BoundRow], tolerated: usize) -> Check {
    let mut inversions = 0;
    let mut large = Vec::new();
    for w in rows.windows(2) {
        let rise = w[1].mean_violation - w[0].mean_violation;
        if rise > 0.0 {
            inversions += 1;
            let se = w[0].se_violation.hypot(w[1].se_violation);
            if rise > se {
                large.push(format!("κ {} → {}: +{rise:.4} > s.e. {se:.4}", w[0].kappa, w[1].kappa));
            }
        }
    }
    let means: Vec<String> = rows
        .iter()
        .map(|r| format!("κ={}: {:.4} ± {:.4}", r.kappa, r.mean_violation, r.se_violation))
        .collect();
    let mut detail = format!("{}; {inversions} inversion(s), {} tolerated", means.join(", "), tolerated);
    if !large.is_empty() {
        detail.push_str(&format!("; beyond one s.e.: {}", large.join(", ")));
    }
    Check::new(
        "feasibility gap non-increasing in kappa",
        inversions <= tolerated && large.is_empty(),
        detail,
    )
}

pub fn verify_bound(suite: &BoundSuite, out: &Path, plots: bool) -> CliResult<Verdict> {
    suite.validate()?;
    make_dir(out)?;
    config::write_json(&out.join("config.json"), suite)?;
    let (runs, rows) = kappa_sweep(suite)?;
    write_serialized(&runs, &out.join("bound_runs.csv"))?;
    write_serialized(&rows, &out.join("bound.csv"))?;
    let verdict = Verdict::new("bound", vec![trend_check(&rows, suite.tolerated_inversions)]);
    verdict.write(out)?;
    if plots {
        plot::plot_csv(
            &out.join("bound.csv"),
            "kappa",
            &["mean_violation"],
            &out.join("bound.svg"),
            Chart {
                log_y: false,
                ..chart("Constraint violation of averaged rates", "κ", "max_j g_j", true)
            },
        )?;
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(kappa: f64, mean: f64, se: f64) -> BoundRow {
        BoundRow {
            kappa,
            mean_violation: mean,
            se_violation: se,
            runs: 5,
        }
    }

    #[test]
    fn trend_tolerates_one_small_inversion() {
        let mono = [row(0.5, 0.05, 0.002), row(1.0, 0.04, 0.002), row(2.0, 0.02, 0.002)];
        assert!(trend_check(&mono, 1).pass);
        let one = [row(0.5, 0.05, 0.002), row(1.0, 0.051, 0.002), row(2.0, 0.02, 0.002)];
        assert!(trend_check(&one, 1).pass);
        assert!(!trend_check(&one, 0).pass);
        let big = [row(0.5, 0.05, 0.002), row(1.0, 0.06, 0.002), row(2.0, 0.02, 0.002)];
        assert!(!trend_check(&big, 1).pass);
        let two = [
            row(0.5, 0.05, 0.01),
            row(1.0, 0.051, 0.01),
            row(2.0, 0.04, 0.01),
            row(4.0, 0.041, 0.01),
        ];
        assert!(!trend_check(&two, 1).pass);
    }

    #[test]
    fn kappa_replacement_reaches_both_spec_forms() {
        let mut p = ProblemSpec::preset("equal-opportunity");
        set_kappa(&mut p, 2.5);
        assert_eq!(p.resolve().unwrap().kappa, 2.5);
        let mut f = ProblemSpec::Full(p.resolve().unwrap());
        set_kappa(&mut f, 0.5);
        assert_eq!(f.resolve().unwrap().kappa, 0.5);
    }

    #[test]
    fn verdict_passes_only_when_all_checks_pass() {
        let v = Verdict::new(
            "x",
            vec![Check::new("a", true, String::new()), Check::new("b", false, String::new())],
        );
        assert!(!v.pass);
        assert!(v.check("b").is_some_and(|c| !c.pass));
        assert!(Verdict::new("x", vec![Check::new("a", true, String::new())]).pass);
    }
}
