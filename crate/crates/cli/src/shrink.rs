//! `shrink`: compresses the T-Stoch bundle of a run to a sparse mixture.

use std::path::Path;

use nncon::stochastic::{self, Bundle};
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::CliResult;
use crate::train::{RunDir, J_STOCH_FILE, T_STOCH_FILE};

pub const SHRINK_REPORT_FILE: &str = "shrink_report.json";
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkReport {
    pub epsilon: f64,
    /// `uniform` when ε is the slack of the uniform mixture, else `override`.
    pub epsilon_source: String,
    pub snapshots: usize,
    pub nnz: usize,
    pub support_iterations: Vec<usize>,
    pub support_weights: Vec<f64>,
    pub objective_before: f64,
    pub objective_after: f64,
    pub constraints_before: Vec<f64>,
    pub constraints_after: Vec<f64>,
    pub feasible_before: bool,
    pub feasible_after: bool,
    /// Snapshot with the smallest exact training objective.
    pub best_iteration: usize,
}

/// Solves the shrink LP for the run's T-Stoch bundle and writes
/// `j_stoch.json` (support only) and `shrink_report.json`.
pub fn shrink(run_path: &Path, epsilon: Option<f64>) -> CliResult<ShrinkReport> {
    let run = RunDir::open(run_path)?;
    let data = run.load_data()?;
    let problem = run.problem(&data)?;
    let bundle = Bundle::load(run.file(T_STOCH_FILE))?;
    let clf = &bundle.classifier;
    let instance = stochastic::build_shrink_instance(clf, &problem, epsilon)?;
    let result = stochastic::shrink(&instance)?;

    let before = clf.probs().to_vec();
    let constraints_before = instance.constraint_values(&before);
    let constraints_after = instance.constraint_values(&result.p);
    let feasible = |g: &[f64]| g.iter().all(|v| *v <= instance.epsilon + FEASIBILITY_TOL);
    let support: Vec<usize> = (0..result.p.len()).filter(|&t| result.p[t] > 0.0).collect();
    let best = (0..instance.len()).fold(0, |b, t| if instance.c0[t] < instance.c0[b] { t } else { b });

    let shrunk = clf.with_probs(result.p.clone())?.compressed();
    let mut out = Bundle::new(shrunk, support.iter().map(|&t| bundle.iterations[t]).collect());
    out.provenance = bundle.provenance.clone();
    out.provenance.insert("kind".into(), "j-stoch".into());
    out.provenance.insert("epsilon".into(), instance.epsilon.to_string());
    out.save(run.file(J_STOCH_FILE))?;

    let report = ShrinkReport {
        epsilon: instance.epsilon,
        epsilon_source: if epsilon.is_some() { "override" } else { "uniform" }.into(),
        snapshots: instance.len(),
        nnz: support.len(),
        support_iterations: support.iter().map(|&t| bundle.iterations[t]).collect(),
        support_weights: support.iter().map(|&t| result.p[t]).collect(),
        objective_before: instance.value(&before),
        objective_after: result.objective,
        feasible_before: feasible(&constraints_before),
        feasible_after: feasible(&constraints_after),
        constraints_before,
        constraints_after,
        best_iteration: bundle.iterations[best],
    };
    config::write_json(&run.file(SHRINK_REPORT_FILE), &report)?;
    Ok(report)
}
