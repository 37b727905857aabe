//! Randomized classifiers over parameter snapshots and the LP that shrinks
//! their support.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::TwoLayerNet;
use crate::problem::ConstraintProblem;
use crate::simplex::{self, LpOutcome};

pub const BUNDLE_VERSION: u32 = 1;

/// A mixture `Σ_t p_t δ_{θᵗ}` sharing one network skeleton (`m`, `d`, `b`, `θ⁰`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticClassifier {
    skeleton: TwoLayerNet,
    snapshots: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl StochasticClassifier {
    pub fn new(skeleton: TwoLayerNet, snapshots: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::NoSnapshots);
        }
        check_dim(snapshots.len(), probs.len())?;
        let tol = 1e-9 * (1.0 + skeleton.radius());
        for s in &snapshots {
            check_dim(skeleton.num_params(), s.len())?;
            if crate::rng::dist(s, skeleton.theta0()) > skeleton.radius() + tol {
                return Err(Error::InvalidArgument("snapshot lies outside the ball around θ⁰".into()));
            }
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidArgument("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        let probs = probs.iter().map(|p| p / total).collect();
        Ok(Self {
            skeleton,
            snapshots,
            probs,
        })
    }

    pub fn uniform(skeleton: TwoLayerNet, snapshots: Vec<Vec<f64>>) -> Result<Self> {
        let n = snapshots.len();
        Self::new(skeleton, snapshots, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn single(net: &TwoLayerNet) -> Self {
        Self {
            skeleton: net.clone(),
            snapshots: vec![net.theta().to_vec()],
            probs: vec![1.0],
        }
    }

    pub fn skeleton(&self) -> &TwoLayerNet {
        &self.skeleton
    }

    pub fn snapshots(&self) -> &[Vec<f64>] {
        &self.snapshots
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.probs.iter().filter(|p| **p > 0.0).count()
    }

    pub fn net(&self, t: usize) -> TwoLayerNet {
        self.skeleton
            .with_theta(self.snapshots[t].clone())
            .expect("snapshot dimensions checked at construction")
    }

    /// Same snapshots with new weights.
    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(self.skeleton.clone(), self.snapshots.clone(), probs)
    }

    /// Drops zero-probability snapshots.
    pub fn compressed(&self) -> Self {
        let (snapshots, probs) = self
            .snapshots
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(s, p)| (s.clone(), *p))
            .unzip();
        Self {
            skeleton: self.skeleton.clone(),
            snapshots,
            probs,
        }
    }

    /// Draws `i ∼ categorical(p)` and returns `y(θⁱ; x)`.
    pub fn predict(&self, x: &[f64], rng: &mut impl Rng) -> Result<f64> {
        check_dim(self.skeleton.input_dim(), x.len())?;
        let i = self.draw_index(rng);
        self.skeleton.forward_at(&self.snapshots[i], x)
    }

    pub fn draw_index(&self, rng: &mut impl Rng) -> usize {
        if self.snapshots.len() == 1 {
            return 0;
        }
        WeightedIndex::new(&self.probs)
            .expect("probabilities validated at construction")
            .sample(rng)
    }

    /// `Σ_t p_t y(θᵗ; x)`.
    pub fn predict_expected(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.skeleton.input_dim(), x.len())?;
        Ok(self
            .snapshots
            .iter()
            .zip(&self.probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(s, p)| p * self.skeleton.forward_unchecked(s, x))
            .sum())
    }

    /// Per-snapshot exact rates `r(θᵗ)` on the problem's data.
    pub fn snapshot_rates(&self, problem: &ConstraintProblem) -> Result<Vec<Vec<f64>>> {
        problem.check_net(&self.skeleton)?;
        Ok((0..self.len())
            .map(|t| problem.rates_from_outputs(&problem.outputs(&self.net(t))))
            .collect())
    }

    /// `Σ_t p_t r(θᵗ)`: the rates of the randomized classifier.
    pub fn mixture_rates(&self, problem: &ConstraintProblem) -> Result<Vec<f64>> {
        let mut out = vec![0.0; problem.num_metrics()];
        for (t, p) in self.probs.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            let r = problem.rates_from_outputs(&problem.outputs(&self.net(t)));
            for (o, v) in out.iter_mut().zip(r) {
                *o += p * v;
            }
        }
        Ok(out)
    }

    pub fn mixture_objective(&self, problem: &ConstraintProblem) -> Result<f64> {
        problem.check_net(&self.skeleton)?;
        Ok(self
            .probs
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(t, p)| p * problem.objective_from_outputs(&problem.outputs(&self.net(t))))
            .sum())
    }
}

/// `min c₀ᵀp  s.t.  p ∈ Δ_T,  c_jᵀp ≤ ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkInstance {
    pub c0: Vec<f64>,
    pub cj: Vec<Vec<f64>>,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkResult {
    pub p: Vec<f64>,
    pub objective: f64,
}

impl ShrinkInstance {
    pub fn new(c0: Vec<f64>, cj: Vec<Vec<f64>>, epsilon: f64) -> Result<Self> {
        if c0.is_empty() {
            return Err(Error::NoSnapshots);
        }
        for row in &cj {
            check_dim(c0.len(), row.len())?;
        }
        if c0.iter().chain(cj.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("shrink instance"));
        }
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!("epsilon must be nonnegative, got {epsilon}")));
        }
        Ok(Self { c0, cj, epsilon })
    }

    pub fn len(&self) -> usize {
        self.c0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c0.is_empty()
    }

    /// `max(0, max_j c_jᵀu)` for the uniform mixture `u`, the smallest slack
    /// that keeps the uniform point feasible.
    pub fn uniform_epsilon(cj: &[Vec<f64>]) -> f64 {
        cj.iter()
            .map(|row| row.iter().sum::<f64>() / row.len() as f64)
            .fold(0.0, f64::max)
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        crate::rng::dot(&self.c0, p)
    }

    pub fn constraint_values(&self, p: &[f64]) -> Vec<f64> {
        self.cj.iter().map(|row| crate::rng::dot(row, p)).collect()
    }
}

/// Assembles `c₀ = (r₀(θ¹), …)` and `c_j = (g_j(r(θ¹)), …)` from exact
/// dataset averages. `epsilon = None` uses [`ShrinkInstance::uniform_epsilon`].
pub fn build_shrink_instance(
    clf: &StochasticClassifier,
    problem: &ConstraintProblem,
    epsilon: Option<f64>,
) -> Result<ShrinkInstance> {
    problem.check_net(clf.skeleton())?;
    let mut c0 = Vec::with_capacity(clf.len());
    let mut cj = vec![Vec::with_capacity(clf.len()); problem.num_constraints()];
    for t in 0..clf.len() {
        let outputs = problem.outputs(&clf.net(t));
        c0.push(problem.objective_from_outputs(&outputs));
        let g = problem.constraint_values(&problem.rates_from_outputs(&outputs));
        for (row, v) in cj.iter_mut().zip(g) {
            row.push(v);
        }
    }
    let eps = epsilon.unwrap_or_else(|| ShrinkInstance::uniform_epsilon(&cj));
    ShrinkInstance::new(c0, cj, eps)
}

/// Solves the shrink LP with the simplex method. The optimum is a vertex, so
/// at most `J + 1` entries of `p` are nonzero.
pub fn shrink(instance: &ShrinkInstance) -> Result<ShrinkResult> {
    let t = instance.len();
    let active: Vec<&Vec<f64>> = if instance.epsilon.is_finite() {
        instance.cj.iter().collect()
    } else {
        Vec::new()
    };
    let j = active.len();
    let n = t + j;
    let mut a = Vec::with_capacity(j + 1);
    let mut simplex_row = vec![1.0; t];
    simplex_row.resize(n, 0.0);
    a.push(simplex_row);
    let mut b = vec![1.0];
    for (k, row) in active.iter().enumerate() {
        let mut r = row.to_vec();
        r.resize(n, 0.0);
        r[t + k] = 1.0;
        a.push(r);
        b.push(instance.epsilon);
    }
    let mut c = instance.c0.clone();
    c.resize(n, 0.0);
    match simplex::minimize(&a, &b, &c)? {
        LpOutcome::Optimal(sol) => {
            let mut p: Vec<f64> = sol.x[..t].to_vec();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            let objective = instance.value(&p);
            Ok(ShrinkResult { p, objective })
        }
        LpOutcome::Infeasible { .. } => {
            let (constraint, violation) = active
                .iter()
                .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min) - instance.epsilon)
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
            Err(Error::Infeasible {
                constraint,
                violation,
            })
        }
        LpOutcome::Unbounded => unreachable!("the simplex is bounded"),
    }
}

/// On-disk form of a trained randomized classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub format_version: u32,
    pub classifier: StochasticClassifier,
    /// Training iteration of each snapshot.
    pub iterations: Vec<usize>,
    #[serde(default)]
    pub provenance: BTreeMap<String, String>,
}

impl Bundle {
    pub fn new(classifier: StochasticClassifier, iterations: Vec<usize>) -> Self {
        Self {
            format_version: BUNDLE_VERSION,
            classifier,
            iterations,
            provenance: BTreeMap::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let b: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        if b.format_version != BUNDLE_VERSION {
            return Err(Error::FormatVersion(b.format_version));
        }
        let c = b.classifier;
        let classifier = StochasticClassifier::new(c.skeleton, c.snapshots, c.probs)?;
        check_dim(classifier.len(), b.iterations.len())?;
        Ok(Self { classifier, ..b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn two_point() -> StochasticClassifier {
        // m = 1, b = +1: θ = (1,0,0) gives y = x₁; θ = (−1,0,0) gives y = −x₁ via b = −1 pair
        let skel = TwoLayerNet::from_parts(3, 5.0, vec![1.0, -1.0], vec![0.0; 6], vec![0.0; 6]).unwrap();
        let pos = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let neg = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        StochasticClassifier::new(skel, vec![pos, neg], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn single_snapshot_is_deterministic() {
        let net = TwoLayerNet::init(8, 4, 1.0, 3).unwrap();
        let clf = StochasticClassifier::single(&net);
        let x = [0.1, 0.2, -0.3, 0.4];
        let mut r = rng::stream(0);
        for _ in 0..10 {
            assert_eq!(clf.predict(&x, &mut r).unwrap(), net.forward(&x).unwrap());
        }
        assert_eq!(clf.predict_expected(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn two_point_mixture_mean() {
        let clf = two_point();
        let x = [1.0, 0.0, 0.0];
        let y = 1.0 / 2f64.sqrt();
        assert_eq!(clf.net(0).forward(&x).unwrap(), y);
        assert_eq!(clf.net(1).forward(&x).unwrap(), -y);
        let mut r = rng::stream(1);
        let mean: f64 = (0..10_000).map(|_| clf.predict(&x, &mut r).unwrap() / y).sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.05, "{mean}");
        assert!(clf.predict_expected(&x).unwrap().abs() < 1e-15);
    }

    #[test]
    fn degenerate_categorical() {
        let clf = two_point().with_probs(vec![1.0, 0.0]).unwrap();
        let mut r = rng::stream(2);
        assert!((0..1000).all(|_| clf.draw_index(&mut r) == 0));
        assert_eq!(clf.compressed().len(), 1);
    }

    #[test]
    fn validation() {
        let skel = TwoLayerNet::init(2, 3, 1.0, 0).unwrap();
        assert!(matches!(
            StochasticClassifier::new(skel.clone(), vec![], vec![]),
            Err(Error::NoSnapshots)
        ));
        let t0 = skel.theta0().to_vec();
        assert!(StochasticClassifier::new(skel.clone(), vec![t0.clone()], vec![0.9]).is_err());
        assert!(StochasticClassifier::new(skel.clone(), vec![t0.clone(), t0.clone()], vec![1.5, -0.5]).is_err());
        let mut far = t0.clone();
        far[0] += 2.0;
        assert!(StochasticClassifier::new(skel, vec![far], vec![1.0]).is_err());
    }

    #[test]
    fn shrink_examples() {
        let i = ShrinkInstance::new(vec![1.0, 2.0], vec![vec![-1.0, -1.0]], 0.0).unwrap();
        let s = shrink(&i).unwrap();
        assert_eq!(s.p, vec![1.0, 0.0]);
        assert_eq!(s.objective, 1.0);

        let i = ShrinkInstance::new(vec![3.0], vec![vec![-1.0]], 0.0).unwrap();
        assert_eq!(shrink(&i).unwrap().p, vec![1.0]);

        let i = ShrinkInstance::new(vec![0.0, 0.0], vec![vec![1.0, 1.0]], 0.0).unwrap();
        match shrink(&i) {
            Err(Error::Infeasible {
                constraint,
                violation,
            }) => {
                assert_eq!(constraint, 0);
                assert_eq!(violation, 1.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shrink_mixes_opposite_violators() {
        // snapshots 1, 2 violate opposite constraints; 3 is feasible but costly
        let i = ShrinkInstance::new(
            vec![0.1, 0.2, 1.0],
            vec![vec![0.2, -0.2, -0.05], vec![-0.2, 0.2, -0.05]],
            0.0,
        )
        .unwrap();
        let s = shrink(&i).unwrap();
        assert!((s.p[0] - 0.5).abs() < 1e-12 && (s.p[1] - 0.5).abs() < 1e-12);
        assert_eq!(s.p[2], 0.0);
        assert!((s.objective - 0.15).abs() < 1e-12);
    }

    #[test]
    fn infinite_epsilon_is_argmin() {
        let i = ShrinkInstance::new(vec![0.4, 0.1, 0.3], vec![vec![5.0, 5.0, 5.0]], f64::INFINITY).unwrap();
        assert_eq!(shrink(&i).unwrap().p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn identical_snapshots_give_point_mass() {
        let p = ConstraintProblem::build_fairness_problem(
            crate::problem::tests::toy(),
            crate::losses::LossKind::CrossEntropyOnScore,
            1.0,
        )
        .unwrap();
        let net = TwoLayerNet::init(8, 3, 1.0, 5).unwrap();
        let clf = StochasticClassifier::uniform(net.clone(), vec![net.theta().to_vec(); 4]).unwrap();
        let inst = build_shrink_instance(&clf, &p, None).unwrap();
        assert!(inst.c0.windows(2).all(|w| w[0] == w[1]));
        let s = shrink(&inst).unwrap();
        assert_eq!(s.p.iter().filter(|v| **v > 0.0).count(), 1);
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        let mut b = Bundle::new(two_point(), vec![10, 20]);
        b.provenance.insert("seed".into(), "1".into());
        b.save(&path).unwrap();
        assert_eq!(Bundle::load(&path).unwrap(), b);
    }
}
