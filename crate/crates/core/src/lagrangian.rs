//! Three-player projected stochastic gradient play on the split Lagrangian
//!
//! ```text
//! L₁(ξ, λ)  = Σ_j λ_j g_j(ξ) − Σ_k λ_{J+k} ξ_k
//! L̃₂(θ, λ) = r₀(θ) + Σ_k λ_{J+k} r̃_k(θ)
//! L(θ, ξ, λ) = r₀(θ) + Σ_j λ_j g_j(ξ) + Σ_k λ_{J+k} (r_k(θ) − ξ_k)
//! ```
//!
//! θ descends on `L̃₂` (surrogates only), ξ descends on `L₁` (exact gradient),
//! λ ascends on `L` (true metrics only). All three gradients are taken at the
//! current iterate before any player moves, and each update is followed by
//! its projection onto Θ, Ξ or Λ.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::TwoLayerNet;
use crate::problem::ConstraintProblem;
use crate::rng;

pub const DEFAULT_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub theta: f64,
    pub xi: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl StepSizes {
    /// ```text
    /// η_θ = √(D² / (4κKLT))
    /// η_ξ = √(C / (2TκJL√K))
    /// η_λ = √(κ / (2LC√K√J T))
    /// ```
    /// with `L` and `C` taken from the problem's registered constants. `K` and
    /// `J` are floored at 1 so unconstrained problems get finite steps.
    pub fn theorem_defaults(problem: &ConstraintProblem, horizon: usize) -> Self {
        let t = horizon.max(1) as f64;
        let k = problem.num_metrics().max(1) as f64;
        let j = problem.num_constraints().max(1) as f64;
        let kappa = problem.kappa;
        let d = problem.radius;
        let l = problem.lipschitz().max(f64::MIN_POSITIVE);
        let c = problem.bound().max(1.0);
        Self {
            theta: (d * d / (4.0 * kappa * k * l * t)).sqrt(),
            xi: (c / (2.0 * t * kappa * j * l * k.sqrt())).sqrt(),
            lambda: (kappa / (2.0 * l * c * k.sqrt() * j.sqrt() * t)).sqrt(),
        }
    }

    pub fn with_overrides(mut self, o: &StepOverrides) -> Self {
        if let Some(v) = o.theta {
            self.theta = v;
        }
        if let Some(v) = o.xi {
            self.xi = v;
        }
        if let Some(v) = o.lambda {
            self.lambda = v;
        }
        self
    }
}

/// Row indices drawn for one iteration: a batch from `D₀` plus separate
/// batches from each `D_k` for the θ-player and for the λ-player.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleDraw {
    pub objective: Vec<usize>,
    pub theta: Vec<Vec<usize>>,
    pub lambda: Vec<Vec<usize>>,
}

impl SampleDraw {
    pub fn draw(problem: &ConstraintProblem, rng: &mut rng::Stream, batch: usize) -> Self {
        let batch = batch.max(1);
        let mut take = |k: usize| -> Vec<usize> {
            (0..batch).map(|_| problem.samplers[k].sample(rng)).collect()
        };
        let objective = take(0);
        let k = problem.num_metrics();
        let theta = (1..=k).map(&mut take).collect();
        let lambda = (1..=k).map(&mut take).collect();
        Self {
            objective,
            theta,
            lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub net: TwoLayerNet,
    pub xi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: usize,
    pub steps: StepSizes,
}

impl GameState {
    /// Starts from the network as given, `ξ = 0` and `λ = 0`.
    pub fn new(problem: &ConstraintProblem, net: TwoLayerNet, steps: StepSizes) -> Result<Self> {
        problem.check_net(&net)?;
        let mut xi = vec![0.0; problem.num_metrics()];
        problem.project_xi(&mut xi);
        Ok(Self {
            net,
            xi,
            lambda: vec![0.0; problem.num_multipliers()],
            t: 0,
            steps,
        })
    }
}

/// Stochastic estimate of `∇_θ L̃₂` plus the mean sampled objective value.
pub fn grad_theta_lagrangian(
    problem: &ConstraintProblem,
    net: &TwoLayerNet,
    lambda: &[f64],
    draw: &SampleDraw,
) -> Result<(Vec<f64>, f64)> {
    check_dim(problem.num_multipliers(), lambda.len())?;
    let ds = &problem.dataset;
    let j = problem.num_constraints();
    let mut grad = vec![0.0; net.num_params()];
    let mut objective = 0.0;
    let b0 = draw.objective.len() as f64;
    for &i in &draw.objective {
        let x = ds.row(i);
        let z = ds.label(i);
        let y = net.forward_unchecked(net.theta(), x);
        objective += problem.objective.eval(y, z) / b0;
        let c = problem.objective.grad(y, z)? / b0;
        net.accumulate_grad(x, c, &mut grad);
    }
    for (k, rows) in draw.theta.iter().enumerate() {
        let weight = lambda[j + k];
        if weight == 0.0 {
            continue;
        }
        let bk = rows.len() as f64;
        for &i in rows {
            let x = ds.row(i);
            let y = net.forward_unchecked(net.theta(), x);
            let c = weight * problem.surrogates[k].grad(y, ds.label(i))? / bk;
            net.accumulate_grad(x, c, &mut grad);
        }
    }
    Ok((grad, objective))
}

/// Exact `∇_ξ L₁(ξ, λ)`.
pub fn grad_xi(problem: &ConstraintProblem, xi: &[f64], lambda: &[f64]) -> Result<Vec<f64>> {
    check_dim(problem.num_metrics(), xi.len())?;
    check_dim(problem.num_multipliers(), lambda.len())?;
    let j = problem.num_constraints();
    let mut g: Vec<f64> = lambda[j..].iter().map(|l| -l).collect();
    for (outer, &l) in problem.outers.iter().zip(lambda) {
        if l == 0.0 {
            continue;
        }
        for (gk, dk) in g.iter_mut().zip(outer.grad(xi)) {
            *gk += l * dk;
        }
    }
    Ok(g)
}

/// Stochastic estimate of `∇_λ L`: `(g(ξ), ĥ_k − ξ_k)` using the true metrics.
pub fn grad_lambda(
    problem: &ConstraintProblem,
    net: &TwoLayerNet,
    xi: &[f64],
    draw: &SampleDraw,
) -> Result<Vec<f64>> {
    check_dim(problem.num_metrics(), xi.len())?;
    let ds = &problem.dataset;
    let mut g = problem.constraint_values(xi);
    for (k, rows) in draw.lambda.iter().enumerate() {
        let h = rows
            .iter()
            .map(|&i| {
                let y = net.forward_unchecked(net.theta(), ds.row(i));
                problem.metrics[k].eval(y, ds.label(i))
            })
            .sum::<f64>()
            / rows.len() as f64;
        g.push(h - xi[k]);
    }
    Ok(g)
}

/// Full-batch `∇_θ L̃₂(θ, λ)`.
pub fn full_grad_theta(
    problem: &ConstraintProblem,
    net: &TwoLayerNet,
    lambda: &[f64],
) -> Result<Vec<f64>> {
    check_dim(problem.num_multipliers(), lambda.len())?;
    problem.check_net(net)?;
    let draw = SampleDraw {
        objective: problem.samplers[0].rows().to_vec(),
        theta: problem.samplers[1..].iter().map(|s| s.rows().to_vec()).collect(),
        lambda: vec![],
    };
    Ok(grad_theta_lagrangian(problem, net, lambda, &draw)?.0)
}

/// Full-batch `∇_λ L(θ, ξ, λ) = (g(ξ), r(θ) − ξ)`.
pub fn full_grad_lambda(problem: &ConstraintProblem, net: &TwoLayerNet, xi: &[f64]) -> Result<Vec<f64>> {
    check_dim(problem.num_metrics(), xi.len())?;
    problem.check_net(net)?;
    let mut g = problem.constraint_values(xi);
    let rates = problem.exact_rates(net)?;
    g.extend(rates.iter().zip(xi).map(|(r, x)| r - x));
    Ok(g)
}

/// Gradients of all three players at one iterate.
#[derive(Debug, Clone)]
pub struct PlayerGradients {
    pub theta: Vec<f64>,
    pub xi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub objective_sample: f64,
}

pub fn player_gradients(
    problem: &ConstraintProblem,
    state: &GameState,
    draw: &SampleDraw,
) -> Result<PlayerGradients> {
    let (theta, objective_sample) = grad_theta_lagrangian(problem, &state.net, &state.lambda, draw)?;
    Ok(PlayerGradients {
        theta,
        xi: grad_xi(problem, &state.xi, &state.lambda)?,
        lambda: grad_lambda(problem, &state.net, &state.xi, draw)?,
        objective_sample,
    })
}

pub fn update_theta(state: &mut GameState, grad: &[f64]) {
    let eta = state.steps.theta;
    for (t, g) in state.net.theta_mut().iter_mut().zip(grad) {
        *t -= eta * g;
    }
    state.net.project();
}

pub fn update_xi(problem: &ConstraintProblem, state: &mut GameState, grad: &[f64]) {
    let eta = state.steps.xi;
    for (x, g) in state.xi.iter_mut().zip(grad) {
        *x -= eta * g;
    }
    problem.project_xi(&mut state.xi);
}

pub fn update_lambda(problem: &ConstraintProblem, state: &mut GameState, grad: &[f64]) {
    let eta = state.steps.lambda;
    for (l, g) in state.lambda.iter_mut().zip(grad) {
        *l += eta * g;
    }
    problem.project_lambda(&mut state.lambda);
}

/// One iteration: all gradients at `(θᵗ, ξᵗ, λᵗ)`, then the three projected
/// updates. Returns the sampled objective value.
pub fn step(problem: &ConstraintProblem, state: &mut GameState, draw: &SampleDraw) -> Result<f64> {
    let g = player_gradients(problem, state, draw)?;
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(&g.theta) {
        return Err(Error::NonFinite("theta gradient"));
    }
    if !finite(&g.xi) {
        return Err(Error::NonFinite("xi gradient"));
    }
    if !finite(&g.lambda) {
        return Err(Error::NonFinite("lambda gradient"));
    }
    update_theta(state, &g.theta);
    update_xi(problem, state, &g.xi);
    update_lambda(problem, state, &g.lambda);
    state.t += 1;
    Ok(g.objective_sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    /// Logging and snapshot period; defaults to the dataset size (one epoch).
    #[serde(default)]
    pub log_every: Option<usize>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub step_overrides: StepOverrides,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_batch() -> usize {
    1
}

impl TrainConfig {
    pub fn new(horizon: usize, seed: u64) -> Self {
        Self {
            horizon,
            seed,
            log_every: None,
            burn_in: DEFAULT_BURN_IN,
            batch_size: 1,
            step_overrides: StepOverrides::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    /// Mean sampled `h₀` since the previous record.
    pub objective_estimate: f64,
    pub objective_exact: f64,
    pub rates: Vec<f64>,
    /// `g_j(ξᵗ)`.
    pub constraint_at_xi: Vec<f64>,
    /// `g_j(r(θᵗ))`.
    pub constraint_at_rates: Vec<f64>,
    pub xi: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub records: Vec<TraceRecord>,
}

impl MetricsTrace {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    fn since(&self, from_t: usize) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.t >= from_t)
    }

    /// Mean of the logged exact rates over records with `t ≥ from_t`.
    pub fn average_rates(&self, from_t: usize) -> Option<Vec<f64>> {
        let recs: Vec<&TraceRecord> = self.since(from_t).collect();
        let first = recs.first()?;
        let mut avg = vec![0.0; first.rates.len()];
        for r in &recs {
            for (a, v) in avg.iter_mut().zip(&r.rates) {
                *a += v;
            }
        }
        let n = recs.len() as f64;
        avg.iter_mut().for_each(|a| *a /= n);
        Some(avg)
    }

    pub fn average_objective(&self, from_t: usize) -> Option<f64> {
        let (sum, n) = self
            .since(from_t)
            .fold((0.0, 0usize), |(s, n), r| (s + r.objective_exact, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let Some(first) = self.records.first() else {
            w.write_record(["t"])?;
            w.flush().map_err(|e| Error::io(path, e))?;
            return Ok(());
        };
        let mut header = vec![
            "t".to_string(),
            "objective_estimate".into(),
            "objective_exact".into(),
        ];
        let k = first.rates.len();
        let j = first.constraint_at_xi.len();
        header.extend((1..=k).map(|i| format!("rate_{i}")));
        header.extend((1..=j).map(|i| format!("g_xi_{i}")));
        header.extend((1..=j).map(|i| format!("g_rate_{i}")));
        header.extend((1..=k).map(|i| format!("xi_{i}")));
        header.extend((1..=j + k).map(|i| format!("lambda_{i}")));
        header.push("theta_distance".into());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.t.to_string(),
                r.objective_estimate.to_string(),
                r.objective_exact.to_string(),
            ];
            for v in r
                .rates
                .iter()
                .chain(&r.constraint_at_xi)
                .chain(&r.constraint_at_rates)
                .chain(&r.xi)
                .chain(&r.lambda)
            {
                row.push(v.to_string());
            }
            row.push(r.theta_distance.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn write_json(&self, mut out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: usize,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// θ every `log_every` iterations once `t ≥ burn_in`; holds the final
    /// iterate when that leaves nothing.
    pub snapshots: Vec<Snapshot>,
    pub trace: MetricsTrace,
    pub final_state: GameState,
    pub log_every: usize,
}

fn record(
    problem: &ConstraintProblem,
    state: &GameState,
    objective_estimate: f64,
) -> TraceRecord {
    let outputs = problem.outputs(&state.net);
    let rates = problem.rates_from_outputs(&outputs);
    TraceRecord {
        t: state.t,
        objective_estimate,
        objective_exact: problem.objective_from_outputs(&outputs),
        constraint_at_xi: problem.constraint_values(&state.xi),
        constraint_at_rates: problem.constraint_values(&rates),
        rates,
        xi: state.xi.clone(),
        lambda: state.lambda.clone(),
        theta_distance: state.net.distance_from_init(),
    }
}

/// Runs `T` iterations from `net`, `ξ = 0`, `λ = 0`. Deterministic in
/// `config.seed`.
pub fn run(problem: &ConstraintProblem, net: TwoLayerNet, config: &TrainConfig) -> Result<TrainOutput> {
    let steps = StepSizes::theorem_defaults(problem, config.horizon).with_overrides(&config.step_overrides);
    for (name, v) in [("theta", steps.theta), ("xi", steps.xi), ("lambda", steps.lambda)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size {name} = {v}")));
        }
    }
    let mut state = GameState::new(problem, net, steps)?;
    let log_every = config.log_every.unwrap_or(problem.dataset.len()).max(1);
    let mut rng = rng::substream(config.seed, 0x5eed);
    let mut trace = MetricsTrace::default();
    let mut snapshots = Vec::new();
    let mut window = (0.0, 0usize);
    while state.t < config.horizon {
        let draw = SampleDraw::draw(problem, &mut rng, config.batch_size);
        let iteration = state.t;
        let obj = step(problem, &mut state, &draw).map_err(|e| match e {
            Error::NonFinite(what) => Error::Diverged {
                what,
                iteration,
                trace: Box::new(trace.clone()),
            },
            other => other,
        })?;
        window = (window.0 + obj, window.1 + 1);
        if state.t % log_every == 0 {
            trace.records.push(record(problem, &state, window.0 / window.1 as f64));
            window = (0.0, 0);
            if state.t >= config.burn_in {
                snapshots.push(Snapshot {
                    t: state.t,
                    theta: state.net.theta().to_vec(),
                });
            }
        }
    }
    if snapshots.is_empty() && config.horizon > 0 {
        snapshots.push(Snapshot {
            t: state.t,
            theta: state.net.theta().to_vec(),
        });
    }
    Ok(TrainOutput {
        snapshots,
        trace,
        final_state: state,
        log_every,
    })
}
