//! Accuracy and recall tables: overall accuracy, accuracy per group and
//! recall per group, for deterministic and randomized classifiers.

use nncon::data::{Dataset, Group, Label};
use nncon::{rng, StochasticClassifier};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Minimum number of sampled predictions behind a sampled evaluation.
pub const MIN_SAMPLED_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub accuracy: f64,
    pub accuracy_a: f64,
    pub accuracy_ac: f64,
    pub recall_a: f64,
    pub recall_ac: f64,
    /// `|R(A) − R(Aᶜ)|`.
    pub recall_gap: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    correct: [f64; 3],
    total: [f64; 3],
    hits: [f64; 3],
    positives: [f64; 3],
}

fn slot(g: Option<Group>) -> usize {
    match g {
        Some(Group::A) => 0,
        Some(Group::Ac) => 1,
        None => 2,
    }
}

impl Tally {
    /// Adds one row with weight `w` on a `+1` prediction.
    fn add(&mut self, z: Label, g: Option<Group>, w: f64) {
        let s = slot(g);
        let correct = if z == Label::Pos { w } else { 1.0 - w };
        self.correct[s] += correct;
        self.total[s] += 1.0;
        if z == Label::Pos {
            self.hits[s] += w;
            self.positives[s] += 1.0;
        }
    }

    fn finish(&self) -> GroupMetrics {
        let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::NAN };
        let recall_a = ratio(self.hits[0], self.positives[0]);
        let recall_ac = ratio(self.hits[1], self.positives[1]);
        GroupMetrics {
            accuracy: ratio(self.correct.iter().sum(), self.total.iter().sum()),
            accuracy_a: ratio(self.correct[0], self.total[0]),
            accuracy_ac: ratio(self.correct[1], self.total[1]),
            recall_a,
            recall_ac,
            recall_gap: (recall_a - recall_ac).abs(),
        }
    }
}

fn check_dims(clf: &StochasticClassifier, ds: &Dataset) -> CliResult<()> {
    if clf.skeleton().input_dim() == ds.dim() {
        Ok(())
    } else {
        Err(CliError::Core(nncon::Error::Dimension {
            expected: clf.skeleton().input_dim(),
            got: ds.dim(),
        }))
    }
}

/// Predicted labels of every snapshot with positive weight, with its weight.
fn snapshot_predictions(clf: &StochasticClassifier, ds: &Dataset) -> CliResult<Vec<(f64, Vec<bool>)>> {
    check_dims(clf, ds)?;
    let skeleton = clf.skeleton();
    clf.snapshots()
        .iter()
        .zip(clf.probs())
        .filter(|(_, p)| **p > 0.0)
        .map(|(theta, p)| {
            let preds = ds
                .rows()
                .map(|x| Ok(Label::from_score(skeleton.forward_at(theta, x)?) == Label::Pos))
                .collect::<nncon::Result<Vec<bool>>>()?;
            Ok((*p, preds))
        })
        .collect()
}

/// `P(ŷ_i = +1)` under the classifier's snapshot distribution.
pub fn positive_probabilities(clf: &StochasticClassifier, ds: &Dataset) -> CliResult<Vec<f64>> {
    let mut q = vec![0.0; ds.len()];
    for (p, preds) in snapshot_predictions(clf, ds)? {
        for (qi, &pos) in q.iter_mut().zip(&preds) {
            if pos {
                *qi += p;
            }
        }
    }
    Ok(q)
}

/// Exact expected metrics of the randomized classifier.
pub fn expected_metrics(clf: &StochasticClassifier, ds: &Dataset) -> CliResult<GroupMetrics> {
    let q = positive_probabilities(clf, ds)?;
    let mut t = Tally::default();
    for (i, qi) in q.iter().enumerate() {
        t.add(ds.label(i), ds.group(i), *qi);
    }
    Ok(t.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledMetrics {
    pub metrics: GroupMetrics,
    pub draws: usize,
    /// Binomial standard error of the sampled accuracy.
    pub accuracy_se: f64,
}

/// Metrics of independent per-prediction draws, cycling over the rows until
/// at least `min_draws` predictions have been made.
pub fn sampled_metrics(
    clf: &StochasticClassifier,
    ds: &Dataset,
    min_draws: usize,
    seed: u64,
) -> CliResult<SampledMetrics> {
    let preds = snapshot_predictions(clf, ds)?;
    let support = clf.compressed();
    let mut r = rng::substream(seed, 0xe7a1);
    let passes = min_draws.div_ceil(ds.len()).max(1);
    let mut t = Tally::default();
    for _ in 0..passes {
        for i in 0..ds.len() {
            let k = support.draw_index(&mut r);
            let w = if preds[k].1[i] { 1.0 } else { 0.0 };
            t.add(ds.label(i), ds.group(i), w);
        }
    }
    let metrics = t.finish();
    let draws = passes * ds.len();
    Ok(SampledMetrics {
        metrics,
        draws,
        accuracy_se: (metrics.accuracy * (1.0 - metrics.accuracy) / draws as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub classifier: String,
    pub split: String,
    /// `expected` (exact mixture average), `sampled` or `deterministic`.
    pub mode: String,
    pub rows: usize,
    #[serde(flatten)]
    pub metrics: GroupMetrics,
    pub draws: Option<usize>,
    pub accuracy_se: Option<f64>,
}

pub fn write_rows_csv(rows: &[EvalRow], path: &std::path::Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "classifier",
        "split",
        "mode",
        "rows",
        "accuracy",
        "accuracy_a",
        "accuracy_ac",
        "recall_a",
        "recall_ac",
        "recall_gap",
        "draws",
        "accuracy_se",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.classifier.clone(),
            r.split.clone(),
            r.mode.clone(),
            r.rows.to_string(),
            m.accuracy.to_string(),
            m.accuracy_a.to_string(),
            m.accuracy_ac.to_string(),
            m.recall_a.to_string(),
            m.recall_ac.to_string(),
            m.recall_gap.to_string(),
            opt(r.draws.map(|d| d.to_string())),
            opt(r.accuracy_se.map(|d| d.to_string())),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
