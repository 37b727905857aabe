//! Constrained problem definition: objective `h₀`, metrics `h_k` with convex
//! surrogates `h̃_k`, outer constraints `g_j`, and the conditional sampling
//! distributions `D₀ … D_K`, each uniform over a filtered subset of a finite
//! dataset.
//!
//! Search domains: `Ξ = {|ξ_k| ≤ sup_{|y|≤2D, z} |h̃_k(y, z)|}` (a box) and
//! `Λ = [0, κ]^{J+K}`.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Group, Label, RowFilter};
use crate::error::{Error, Result};
use crate::losses::{LossKind, OuterConstraint, ScalarLoss};
use crate::model::TwoLayerNet;

pub const DEFAULT_KAPPA: f64 = 1.0;
/// Default `g(ξ) ≤ threshold` level for the G-mean / H-mean presets.
pub const DEFAULT_MEAN_THRESHOLD: f64 = 0.3;

/// Serializable problem description. `samplers[0]` is the objective
/// distribution, `samplers[k]` feeds metric `k − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub objective: ScalarLoss,
    #[serde(default)]
    pub metrics: Vec<ScalarLoss>,
    #[serde(default)]
    pub surrogates: Vec<ScalarLoss>,
    #[serde(default)]
    pub outers: Vec<OuterConstraint>,
    pub samplers: Vec<RowFilter>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

/// Either a full config or a named preset expanded by [`ProblemSpec::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Preset {
        preset: String,
        #[serde(default)]
        objective: Option<ScalarLoss>,
        #[serde(default)]
        kappa: Option<f64>,
        #[serde(default)]
        threshold: Option<f64>,
    },
    Full(ProblemConfig),
}

impl ProblemSpec {
    pub fn preset(name: &str) -> Self {
        ProblemSpec::Preset {
            preset: name.to_string(),
            objective: None,
            kappa: None,
            threshold: None,
        }
    }

    pub fn resolve(&self) -> Result<ProblemConfig> {
        match self {
            ProblemSpec::Full(c) => Ok(c.clone()),
            ProblemSpec::Preset {
                preset,
                objective,
                kappa,
                threshold,
            } => {
                let objective = objective.unwrap_or(ScalarLoss::new(LossKind::CrossEntropyOnScore));
                let mut cfg = match preset.as_str() {
                    "equal-opportunity" => ProblemConfig::equal_opportunity(objective),
                    "g-mean" => ProblemConfig::class_balanced(
                        objective,
                        OuterConstraint::g_mean(0, 1, threshold.unwrap_or(DEFAULT_MEAN_THRESHOLD)),
                    ),
                    "h-mean" => ProblemConfig::class_balanced(
                        objective,
                        OuterConstraint::h_mean(0, 1, threshold.unwrap_or(DEFAULT_MEAN_THRESHOLD)),
                    ),
                    "unconstrained" => ProblemConfig::unconstrained(objective),
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown problem preset `{other}` (expected equal-opportunity, g-mean, h-mean or unconstrained)"
                        )))
                    }
                };
                if let Some(k) = kappa {
                    cfg.kappa = *k;
                }
                Ok(cfg)
            }
        }
    }
}

impl ProblemConfig {
    pub fn unconstrained(objective: ScalarLoss) -> Self {
        Self {
            objective,
            metrics: vec![],
            surrogates: vec![],
            outers: vec![],
            samplers: vec![RowFilter::ALL],
            kappa: DEFAULT_KAPPA,
        }
    }

    /// Equal opportunity: recall on `A` equals recall on `Aᶜ`, written as two
    /// inequalities over four auxiliary rates
    /// `ξ₁ ≥ R(A), ξ₂ ≥ −R(A), ξ₃ ≥ R(Aᶜ), ξ₄ ≥ −R(Aᶜ)` with
    /// `g₁ = ξ₁ + ξ₄ ≤ 0` and `g₂ = ξ₂ + ξ₃ ≤ 0`.
    pub fn equal_opportunity(objective: ScalarLoss) -> Self {
        let a_pos = RowFilter::new(Some(Group::A), Some(Label::Pos));
        let ac_pos = RowFilter::new(Some(Group::Ac), Some(Label::Pos));
        let matched = ScalarLoss::new(LossKind::ZeroOneMatch);
        let neg_matched = ScalarLoss::new(LossKind::NegZeroOneMatch);
        let up = ScalarLoss::new(LossKind::SmoothedReverseHinge);
        let down = ScalarLoss::new(LossKind::SmoothedShiftedHinge);
        Self {
            objective,
            metrics: vec![matched, neg_matched, matched, neg_matched],
            surrogates: vec![up, down, up, down],
            outers: vec![
                OuterConstraint::linear(vec![1.0, 0.0, 0.0, 1.0]),
                OuterConstraint::linear(vec![0.0, 1.0, 1.0, 0.0]),
            ],
            samplers: vec![RowFilter::ALL, a_pos, a_pos, ac_pos, ac_pos],
            kappa: DEFAULT_KAPPA,
        }
    }

    /// Two negated rates, TPR on `z = +1` rows and TNR on `z = −1` rows, fed to
    /// a mean-type outer constraint.
    pub fn class_balanced(objective: ScalarLoss, outer: OuterConstraint) -> Self {
        let neg_matched = ScalarLoss::new(LossKind::NegZeroOneMatch);
        let down = ScalarLoss::new(LossKind::SmoothedShiftedHinge);
        Self {
            objective,
            metrics: vec![neg_matched, neg_matched],
            surrogates: vec![down, down],
            outers: vec![outer],
            samplers: vec![
                RowFilter::ALL,
                RowFilter::new(None, Some(Label::Pos)),
                RowFilter::new(None, Some(Label::Neg)),
            ],
            kappa: DEFAULT_KAPPA,
        }
    }
}

/// Uniform distribution over the dataset rows matching a filter.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    pub filter: RowFilter,
    rows: Vec<usize>,
}

impl Sampler {
    pub fn new(dataset: &Dataset, filter: RowFilter) -> Result<Self> {
        let rows = dataset.rows_where(&filter);
        if rows.is_empty() {
            return Err(Error::EmptyConditional(filter.to_string()));
        }
        Ok(Self { filter, rows })
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        self.rows[rng.random_range(0..self.rows.len())]
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintProblem {
    pub objective: ScalarLoss,
    pub metrics: Vec<ScalarLoss>,
    pub surrogates: Vec<ScalarLoss>,
    pub outers: Vec<OuterConstraint>,
    pub samplers: Vec<Sampler>,
    pub kappa: f64,
    pub radius: f64,
    pub xi_bound: Vec<f64>,
    pub dataset: Arc<Dataset>,
    pub config: ProblemConfig,
}

impl ConstraintProblem {
    pub fn build(config: &ProblemConfig, dataset: Arc<Dataset>, radius: f64) -> Result<Self> {
        let k = config.metrics.len();
        if config.surrogates.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{} metrics but {} surrogates",
                k,
                config.surrogates.len()
            )));
        }
        if config.samplers.len() != k + 1 {
            return Err(Error::InvalidArgument(format!(
                "need K + 1 = {} samplers, got {}",
                k + 1,
                config.samplers.len()
            )));
        }
        if !(config.kappa > 0.0 && config.kappa.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kappa must be positive, got {}",
                config.kappa
            )));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("radius D must be positive".into()));
        }
        if config.objective.kind.is_indicator() {
            return Err(Error::NonDifferentiable(config.objective.kind.name()));
        }
        for s in &config.surrogates {
            if s.kind.is_indicator() {
                return Err(Error::NonDifferentiable(s.kind.name()));
            }
        }
        for (i, (h, s)) in config.metrics.iter().zip(&config.surrogates).enumerate() {
            check_domination(h, s, radius).map_err(|y| {
                Error::InvalidArgument(format!(
                    "surrogate {} ({}) does not dominate metric {} ({}) at y = {y}",
                    i + 1,
                    s.kind.name(),
                    i + 1,
                    h.kind.name()
                ))
            })?;
        }
        for g in &config.outers {
            g.validate(k)?;
        }
        let samplers = config
            .samplers
            .iter()
            .map(|f| Sampler::new(&dataset, *f))
            .collect::<Result<Vec<_>>>()?;
        let xi_bound = compute_xi_domain(&config.surrogates, radius);
        Ok(Self {
            objective: config.objective,
            metrics: config.metrics.clone(),
            surrogates: config.surrogates.clone(),
            outers: config.outers.clone(),
            samplers,
            kappa: config.kappa,
            radius,
            xi_bound,
            dataset,
            config: config.clone(),
        })
    }

    /// Equal-opportunity problem over the dataset's group column.
    pub fn build_fairness_problem(
        dataset: Arc<Dataset>,
        objective: LossKind,
        radius: f64,
    ) -> Result<Self> {
        if dataset.groups().is_none() {
            return Err(Error::InvalidArgument(
                "fairness problem needs a group column".into(),
            ));
        }
        Self::build(
            &ProblemConfig::equal_opportunity(ScalarLoss::new(objective)),
            dataset,
            radius,
        )
    }

    /// Number of auxiliary variables `K`.
    pub fn num_metrics(&self) -> usize {
        self.metrics.len()
    }

    /// Number of outer constraints `J`.
    pub fn num_constraints(&self) -> usize {
        self.outers.len()
    }

    pub fn num_multipliers(&self) -> usize {
        self.num_metrics() + self.num_constraints()
    }

    /// Largest registered Lipschitz constant among `h₀`, `h̃_k` and `g_j`.
    pub fn lipschitz(&self) -> f64 {
        std::iter::once(&self.objective)
            .chain(&self.surrogates)
            .filter_map(|l| l.lipschitz())
            .chain(self.outers.iter().map(|g| g.lipschitz()))
            .fold(0.0, f64::max)
    }

    /// Common bound `C` on `|h_k|, |h̃_k|` over the output range and `|g_j|` on Ξ.
    pub fn bound(&self) -> f64 {
        self.metrics
            .iter()
            .chain(&self.surrogates)
            .map(|l| l.bound(self.radius))
            .chain(self.outers.iter().map(|g| g.bound(&self.xi_bound)))
            .fold(0.0, f64::max)
    }

    pub fn project_xi(&self, xi: &mut [f64]) {
        for (x, b) in xi.iter_mut().zip(&self.xi_bound) {
            *x = x.clamp(-b, *b);
        }
    }

    pub fn project_lambda(&self, lambda: &mut [f64]) {
        for l in lambda.iter_mut() {
            *l = l.clamp(0.0, self.kappa);
        }
    }

    /// Network outputs on every dataset row.
    pub fn outputs(&self, net: &TwoLayerNet) -> Vec<f64> {
        self.dataset
            .rows()
            .map(|x| net.forward_unchecked(net.theta(), x))
            .collect()
    }

    fn mean_over(&self, sampler: usize, loss: &ScalarLoss, outputs: &[f64]) -> f64 {
        let s = &self.samplers[sampler];
        s.rows()
            .iter()
            .map(|&i| loss.eval(outputs[i], self.dataset.label(i)))
            .sum::<f64>()
            / s.len() as f64
    }

    /// `r₀ = E_{D₀} h₀`.
    pub fn objective_from_outputs(&self, outputs: &[f64]) -> f64 {
        self.mean_over(0, &self.objective, outputs)
    }

    /// `r_k = E_{D_k} h_k` for every metric.
    pub fn rates_from_outputs(&self, outputs: &[f64]) -> Vec<f64> {
        self.metrics
            .iter()
            .enumerate()
            .map(|(k, h)| self.mean_over(k + 1, h, outputs))
            .collect()
    }

    /// `r̃_k = E_{D_k} h̃_k`.
    pub fn surrogate_rates_from_outputs(&self, outputs: &[f64]) -> Vec<f64> {
        self.surrogates
            .iter()
            .enumerate()
            .map(|(k, h)| self.mean_over(k + 1, h, outputs))
            .collect()
    }

    /// Exact rate of metric `k` (0-based) over its sampler's rows.
    pub fn exact_rate(&self, k: usize, net: &TwoLayerNet) -> Result<f64> {
        if k >= self.num_metrics() {
            return Err(Error::InvalidArgument(format!(
                "metric index {k} out of range for K = {}",
                self.num_metrics()
            )));
        }
        self.check_net(net)?;
        let outputs = self.outputs(net);
        Ok(self.mean_over(k + 1, &self.metrics[k], &outputs))
    }

    pub fn exact_rates(&self, net: &TwoLayerNet) -> Result<Vec<f64>> {
        self.check_net(net)?;
        Ok(self.rates_from_outputs(&self.outputs(net)))
    }

    pub fn exact_objective(&self, net: &TwoLayerNet) -> Result<f64> {
        self.check_net(net)?;
        Ok(self.objective_from_outputs(&self.outputs(net)))
    }

    /// `g_j(r)` for each outer constraint at a rate vector.
    pub fn constraint_values(&self, rates: &[f64]) -> Vec<f64> {
        self.outers.iter().map(|g| g.eval(rates)).collect()
    }

    /// `L(θ, ξ, λ)` with exact expectations.
    pub fn lagrangian(&self, outputs: &[f64], xi: &[f64], lambda: &[f64]) -> f64 {
        let j = self.num_constraints();
        let rates = self.rates_from_outputs(outputs);
        let mut value = self.objective_from_outputs(outputs);
        for (g, l) in self.outers.iter().zip(lambda) {
            value += l * g.eval(xi);
        }
        for (k, r) in rates.iter().enumerate() {
            value += lambda[j + k] * (r - xi[k]);
        }
        value
    }

    pub fn check_net(&self, net: &TwoLayerNet) -> Result<()> {
        crate::error::check_dim(self.dataset.dim(), net.input_dim())
    }
}

/// Per-coordinate bound of `Ξ`: the closed-form sup of `|h̃_k|` on `|y| ≤ 2D`.
pub fn compute_xi_domain(surrogates: &[ScalarLoss], radius: f64) -> Vec<f64> {
    surrogates.iter().map(|s| s.bound(radius)).collect()
}

/// Checks `h̃ ≥ h` on a grid over `[−3D, 3D]` for both labels; returns the
/// first violating `y`.
fn check_domination(metric: &ScalarLoss, surrogate: &ScalarLoss, radius: f64) -> Result<(), f64> {
    let n = 6000;
    for i in 0..=n {
        let y = -3.0 * radius + 6.0 * radius * i as f64 / n as f64;
        for y in [y, 0.0] {
            for z in [Label::Pos, Label::Neg] {
                if surrogate.eval(y, z) < metric.eval(y, z) {
                    return Err(y);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng;

    /// Six rows, both (group, z = 1) cells populated, groups mirror each other.
    pub(crate) fn toy() -> Arc<Dataset> {
        let rows = vec![
            vec![0.5, 0.1, 0.0],
            vec![-0.4, 0.2, 0.1],
            vec![0.3, -0.3, 0.2],
            vec![0.5, 0.1, 0.0],
            vec![-0.4, 0.2, 0.1],
            vec![0.3, -0.3, 0.2],
        ];
        let labels = vec![Label::Pos, Label::Pos, Label::Neg, Label::Pos, Label::Pos, Label::Neg];
        let groups = vec![Group::A, Group::A, Group::A, Group::Ac, Group::Ac, Group::Ac];
        Arc::new(Dataset::from_raw(rows, labels, Some(groups), vec![]).unwrap())
    }

    #[test]
    fn fairness_problem_bookkeeping() {
        let ds = toy();
        let p = ConstraintProblem::build_fairness_problem(ds, LossKind::CrossEntropyOnScore, 1.0).unwrap();
        assert_eq!(p.num_metrics(), 4);
        assert_eq!(p.num_constraints(), 2);
        let sizes: Vec<usize> = p.samplers.iter().map(Sampler::len).collect();
        assert_eq!(sizes, vec![6, 2, 2, 2, 2]);
        assert_eq!(p.samplers[1].rows(), &[0, 1]);
        assert_eq!(p.samplers[3].rows(), &[3, 4]);
    }

    #[test]
    fn empty_cell_is_reported() {
        let rows = vec![vec![0.1, 0.2, 0.3]; 4];
        let labels = vec![Label::Neg, Label::Pos, Label::Neg, Label::Pos];
        let groups = vec![Group::A, Group::Ac, Group::A, Group::Ac];
        let ds = Arc::new(Dataset::from_raw(rows, labels, Some(groups), vec![]).unwrap());
        let err = ConstraintProblem::build_fairness_problem(ds, LossKind::Hinge, 1.0).unwrap_err();
        assert!(matches!(&err, Error::EmptyConditional(c) if c.contains("group = A")));
        assert!(err.to_string().contains("empty conditional distribution"));
    }

    #[test]
    fn symmetric_toy_satisfies_equal_opportunity() {
        let ds = toy();
        let p = ConstraintProblem::build_fairness_problem(ds.clone(), LossKind::Hinge, 1.0).unwrap();
        for seed in 0..5 {
            let net = TwoLayerNet::init(8, 3, 1.0, seed).unwrap();
            let rates = p.exact_rates(&net).unwrap();
            // enumerate recalls directly
            let recall = |g: Group| {
                let cell: Vec<usize> = (0..6)
                    .filter(|&i| ds.group(i) == Some(g) && ds.label(i) == Label::Pos)
                    .collect();
                cell.iter().filter(|&&i| net.forward(ds.row(i)).unwrap() > 0.0).count() as f64
                    / cell.len() as f64
            };
            assert_eq!(rates, vec![recall(Group::A), -recall(Group::A), recall(Group::Ac), -recall(Group::Ac)]);
            for g in p.constraint_values(&rates) {
                assert!(g <= 0.0);
            }
        }
    }

    #[test]
    fn exact_rate_examples() {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0]];
        let ds = Arc::new(
            Dataset::from_raw(rows, vec![Label::Pos, Label::Pos], Some(vec![Group::A, Group::Ac]), vec![])
                .unwrap(),
        );
        let cfg = ProblemConfig {
            objective: ScalarLoss::new(LossKind::Hinge),
            metrics: vec![
                ScalarLoss::new(LossKind::ZeroOneMatch),
                ScalarLoss::new(LossKind::NegZeroOneMatch),
            ],
            surrogates: vec![
                ScalarLoss::new(LossKind::ReverseHinge),
                ScalarLoss::new(LossKind::ShiftedHinge),
            ],
            outers: vec![],
            samplers: vec![RowFilter::ALL; 3],
            kappa: 1.0,
        };
        let p = ConstraintProblem::build(&cfg, ds, 1.0).unwrap();
        // y = x₀ exactly: output +1 on the first row (match), −1 on the second
        let net = TwoLayerNet::from_parts(3, 1.0, vec![1.0, -1.0], vec![0.0; 6], vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(p.exact_rate(0, &net).unwrap(), 0.5);
        assert_eq!(p.exact_rate(1, &net).unwrap(), -0.5);

        let zero = TwoLayerNet::from_parts(3, 1.0, vec![1.0], vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(p.exact_rate(0, &zero).unwrap(), 0.0);
        assert!(p.exact_rate(2, &net).is_err());
    }

    #[test]
    fn xi_domain_examples() {
        let b = compute_xi_domain(
            &[
                ScalarLoss::new(LossKind::Hinge),
                ScalarLoss::new(LossKind::Zero),
                ScalarLoss::new(LossKind::CrossEntropyOnScore),
            ],
            1.0,
        );
        assert_eq!(b[0], 3.0);
        assert_eq!(b[1], 0.0);
        assert!((b[2] - 2.1269).abs() < 1e-4);
    }

    #[test]
    fn non_dominating_pair_is_rejected() {
        let ds = toy();
        let mut cfg = ProblemConfig::equal_opportunity(ScalarLoss::new(LossKind::Hinge));
        // plain hinge under-estimates the match indicator for confident positives
        cfg.surrogates[0] = ScalarLoss::new(LossKind::Hinge);
        assert!(ConstraintProblem::build(&cfg, ds, 1.0).is_err());
    }

    #[test]
    fn presets_resolve() {
        for name in ["equal-opportunity", "g-mean", "h-mean", "unconstrained"] {
            let cfg = ProblemSpec::preset(name).resolve().unwrap();
            assert_eq!(cfg.samplers.len(), cfg.metrics.len() + 1);
        }
        assert!(ProblemSpec::preset("f-score").resolve().is_err());
        let spec: ProblemSpec = serde_json::from_str(r#"{"preset":"equal-opportunity","kappa":2.0}"#).unwrap();
        assert_eq!(spec.resolve().unwrap().kappa, 2.0);
        let full = serde_json::to_string(&ProblemConfig::equal_opportunity(ScalarLoss::new(LossKind::Hinge))).unwrap();
        let spec: ProblemSpec = serde_json::from_str(&full).unwrap();
        assert!(matches!(spec, ProblemSpec::Full(_)));
    }

    #[test]
    fn group_swap_swaps_constraints() {
        let ds = Arc::new(crate::data::generate_biased_synthetic(200, 4, 0.5, 3).unwrap());
        let swapped = Arc::new(ds.with_groups_swapped());
        let p = ConstraintProblem::build_fairness_problem(ds, LossKind::Hinge, 1.0).unwrap();
        let q = ConstraintProblem::build_fairness_problem(swapped, LossKind::Hinge, 1.0).unwrap();
        let net = TwoLayerNet::init(16, 4, 1.0, 2).unwrap();
        let gp = p.constraint_values(&p.exact_rates(&net).unwrap());
        let gq = q.constraint_values(&q.exact_rates(&net).unwrap());
        assert_eq!(gp[0], gq[1]);
        assert_eq!(gp[1], gq[0]);
        assert!(gp[0] != 0.0);
    }

    #[test]
    fn sampler_law_is_uniform() {
        let ds = toy();
        let s = Sampler::new(&ds, RowFilter::ALL).unwrap();
        let mut r = rng::stream(1);
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            counts[s.sample(&mut r)] += 1;
        }
        let p = 1.0 / 6.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 4.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn rates_within_bound() {
        let ds = Arc::new(crate::data::generate_biased_synthetic(300, 5, 0.5, 1).unwrap());
        let p = ConstraintProblem::build(&ProblemConfig::equal_opportunity(ScalarLoss::new(LossKind::Hinge)), ds, 2.0)
            .unwrap();
        let c = p.bound();
        for seed in 0..5 {
            let net = TwoLayerNet::init(16, 5, 2.0, seed).unwrap();
            for r in p.exact_rates(&net).unwrap() {
                assert!(r.abs() <= c);
            }
        }
    }
}
