//! `evaluate`: accuracy and recall tables for every classifier in a run.

use std::path::Path;

use nncon::stochastic::Bundle;
use nncon::{Dataset, StochasticClassifier, TwoLayerNet};

use crate::config;
use crate::error::CliResult;
use crate::report::{self, EvalRow};
use crate::train::{RunDir, BASELINE_FILE, BEST_FILE, J_STOCH_FILE, LAST_FILE, T_STOCH_FILE};

pub const EVAL_CSV: &str = "evaluation.csv";
pub const EVAL_JSON: &str = "evaluation.json";

/// Rows for one classifier on one split. Randomized classifiers get an
/// exact `expected` row and a `sampled` row; single networks get one
/// `deterministic` row.
pub fn evaluate_classifier(
    name: &str,
    clf: &StochasticClassifier,
    split: &str,
    ds: &Dataset,
    draws: usize,
    seed: u64,
) -> CliResult<Vec<EvalRow>> {
    let row = |mode: &str, metrics, draws, se| EvalRow {
        classifier: name.to_string(),
        split: split.to_string(),
        mode: mode.to_string(),
        rows: ds.len(),
        metrics,
        draws,
        accuracy_se: se,
    };
    let expected = report::expected_metrics(clf, ds)?;
    if clf.nnz() == 1 && clf.len() == 1 {
        return Ok(vec![row("deterministic", expected, None, None)]);
    }
    let s = report::sampled_metrics(clf, ds, draws, seed)?;
    Ok(vec![
        row("expected", expected, None, None),
        row("sampled", s.metrics, Some(s.draws), Some(s.accuracy_se)),
    ])
}

/// Classifiers present in a run directory, in table order.
pub fn run_classifiers(run: &RunDir) -> CliResult<Vec<(String, StochasticClassifier)>> {
    let mut out = vec![(
        "t-stoch".to_string(),
        Bundle::load(run.file(T_STOCH_FILE))?.classifier,
    )];
    if run.file(J_STOCH_FILE).is_file() {
        out.push(("j-stoch".into(), Bundle::load(run.file(J_STOCH_FILE))?.classifier));
    }
    for (name, file) in [("last", LAST_FILE), ("best", BEST_FILE), ("unconstrained", BASELINE_FILE)] {
        if run.file(file).is_file() {
            out.push((name.into(), StochasticClassifier::single(&TwoLayerNet::load(run.file(file))?)));
        }
    }
    Ok(out)
}

/// Evaluates a run on its training split and, if present, its test split.
/// Writes `evaluation.csv` and `evaluation.json` into `out`.
pub fn evaluate(run_path: &Path, out: &Path, draws: usize, seed: u64) -> CliResult<Vec<EvalRow>> {
    let run = RunDir::open(run_path)?;
    let data = run.load_data()?;
    let draws = draws.max(report::MIN_SAMPLED_DRAWS);
    let mut rows = Vec::new();
    for (name, clf) in run_classifiers(&run)? {
        rows.extend(evaluate_classifier(&name, &clf, "train", &data.train, draws, seed)?);
        if let Some(test) = &data.test {
            rows.extend(evaluate_classifier(&name, &clf, "test", test, draws, seed)?);
        }
    }
    std::fs::create_dir_all(out).map_err(|e| crate::error::CliError::io(out, e))?;
    report::write_rows_csv(&rows, &out.join(EVAL_CSV))?;
    config::write_json(&out.join(EVAL_JSON), &rows)?;
    Ok(rows)
}

/// Finds the row for `classifier`, `split` and `mode`.
pub fn find_row<'a>(rows: &'a [EvalRow], classifier: &str, split: &str, mode: &str) -> Option<&'a EvalRow> {
    rows.iter()
        .find(|r| r.classifier == classifier && r.split == split && r.mode == mode)
}
