//! Online mirror descent with (possibly biased) gradient estimates and
//! regret bookkeeping.
//!
//! ```text
//! ζ_{t+1} = ∇h*(∇h(θᵗ) − η μᵗ)
//! θ_{t+1} = argmin_{θ∈Θ} B_h(θ, ζ_{t+1})
//! ```
//!
//! With `h(θ) = ½‖θ − θ⁰‖²` the first line is `θᵗ − ημᵗ` and the second is the
//! Euclidean projection, so one step is plain projected gradient descent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fit::{self, PowerLawFit};
use crate::model::project_ball;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Ball { center, .. } => center.len(),
            Domain::Box { lo, .. } => lo.len(),
        }
    }

    pub fn project(&self, v: &mut [f64]) {
        match self {
            Domain::Ball { center, radius } => project_ball(v, center, *radius),
            Domain::Box { lo, hi } => {
                for ((x, l), h) in v.iter_mut().zip(lo).zip(hi) {
                    *x = x.clamp(*l, *h);
                }
            }
        }
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        match self {
            Domain::Ball { center, radius } => rng::dist(v, center) <= radius + tol,
            Domain::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol),
        }
    }
}

/// A 1-strongly convex mirror map with its conjugate gradient and Bregman
/// projection.
pub trait MirrorMap {
    fn grad(&self, theta: &[f64]) -> Vec<f64>;
    fn grad_conjugate(&self, zeta: &[f64]) -> Vec<f64>;
    fn value(&self, theta: &[f64]) -> f64;
    fn bregman(&self, a: &[f64], b: &[f64]) -> f64;
    /// `argmin_{θ∈Θ} B_h(θ, ζ)`.
    fn bregman_project(&self, domain: &Domain, zeta: Vec<f64>) -> Vec<f64>;
}

/// `h(θ) = ½‖θ − θ⁰‖²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EuclideanMap {
    pub anchor: Vec<f64>,
}

impl MirrorMap for EuclideanMap {
    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.anchor).map(|(t, a)| t - a).collect()
    }

    fn grad_conjugate(&self, zeta: &[f64]) -> Vec<f64> {
        zeta.iter().zip(&self.anchor).map(|(z, a)| z + a).collect()
    }

    fn value(&self, theta: &[f64]) -> f64 {
        0.5 * rng::dist(theta, &self.anchor).powi(2)
    }

    fn bregman(&self, a: &[f64], b: &[f64]) -> f64 {
        0.5 * rng::dist(a, b).powi(2)
    }

    fn bregman_project(&self, domain: &Domain, mut zeta: Vec<f64>) -> Vec<f64> {
        domain.project(&mut zeta);
        zeta
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MirrorDescentConfig<H: MirrorMap = EuclideanMap> {
    pub map: H,
    pub eta: f64,
    pub domain: Domain,
}

impl<H: MirrorMap> MirrorDescentConfig<H> {
    pub fn new(map: H, eta: f64, domain: Domain) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
        }
        Ok(Self { map, eta, domain })
    }
}

/// One mirror descent step with gradient estimate `mu`.
pub fn omd_step<H: MirrorMap>(config: &MirrorDescentConfig<H>, theta: &[f64], mu: &[f64]) -> Result<Vec<f64>> {
    check_dim(config.domain.dim(), theta.len())?;
    check_dim(theta.len(), mu.len())?;
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("gradient estimate"));
    }
    let dual: Vec<f64> = config
        .map
        .grad(theta)
        .iter()
        .zip(mu)
        .map(|(g, m)| g - config.eta * m)
        .collect();
    Ok(config.map.bregman_project(&config.domain, config.map.grad_conjugate(&dual)))
}

pub trait OnlineLoss {
    fn value(&self, theta: &[f64]) -> f64;
    fn grad(&self, theta: &[f64]) -> Vec<f64>;
}

/// `f(θ) = ½‖θ − c‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub center: Vec<f64>,
}

impl OnlineLoss for Quadratic {
    fn value(&self, theta: &[f64]) -> f64 {
        0.5 * rng::dist(theta, &self.center).powi(2)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta.iter().zip(&self.center).map(|(t, c)| t - c).collect()
    }
}

/// `f(θ) = ⟨u, θ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub u: Vec<f64>,
}

impl OnlineLoss for Linear {
    fn value(&self, theta: &[f64]) -> f64 {
        rng::dot(&self.u, theta)
    }

    fn grad(&self, _theta: &[f64]) -> Vec<f64> {
        self.u.clone()
    }
}

/// Realized losses `f_t(θᵗ)` together with the losses themselves, so the
/// average loss of any fixed comparator can be evaluated afterwards.
#[derive(Debug, Clone)]
pub struct RegretLedger<L> {
    losses: Vec<L>,
    realized: Vec<f64>,
    trajectory: Vec<Vec<f64>>,
}

impl<L> Default for RegretLedger<L> {
    fn default() -> Self {
        Self {
            losses: Vec::new(),
            realized: Vec::new(),
            trajectory: Vec::new(),
        }
    }
}

impl<L: OnlineLoss> RegretLedger<L> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records round `t`: the point played and the loss revealed afterwards.
    pub fn record(&mut self, theta: &[f64], loss: L) -> f64 {
        let v = loss.value(theta);
        self.realized.push(v);
        self.trajectory.push(theta.to_vec());
        self.losses.push(loss);
        v
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn losses(&self) -> &[L] {
        &self.losses
    }

    pub fn trajectory(&self) -> &[Vec<f64>] {
        &self.trajectory
    }

    pub fn mean_realized(&self) -> f64 {
        fit::mean(&self.realized)
    }

    /// `(1/T) Σ_t f_t(θ)`.
    pub fn mean_at(&self, theta: &[f64]) -> f64 {
        self.losses.iter().map(|l| l.value(theta)).sum::<f64>() / self.len() as f64
    }

    pub fn regret_against(&self, theta: &[f64]) -> f64 {
        self.mean_realized() - self.mean_at(theta)
    }
}

/// Average regret against the comparator returned by `solver`, which must
/// minimize the averaged loss over the domain.
pub fn measure_regret<L: OnlineLoss>(
    ledger: &RegretLedger<L>,
    solver: impl FnOnce(&[L]) -> Vec<f64>,
) -> (f64, Vec<f64>) {
    let comparator = solver(ledger.losses());
    (ledger.regret_against(&comparator), comparator)
}

/// Minimizer of `(1/T) Σ ½‖θ − c_t‖²` over a ball: the projected mean center.
pub fn quadratic_comparator(losses: &[Quadratic], domain: &Domain) -> Vec<f64> {
    let dim = domain.dim();
    let mut mean = vec![0.0; dim];
    for l in losses {
        for (m, c) in mean.iter_mut().zip(&l.center) {
            *m += c / losses.len() as f64;
        }
    }
    domain.project(&mut mean);
    mean
}

/// Minimizer of `(1/T) Σ ⟨u_t, θ⟩` over a ball.
pub fn linear_comparator(losses: &[Linear], center: &[f64], radius: f64) -> Vec<f64> {
    let mut u = vec![0.0; center.len()];
    for l in losses {
        for (a, b) in u.iter_mut().zip(&l.u) {
            *a += b;
        }
    }
    let n = rng::norm(&u);
    if n == 0.0 {
        return center.to_vec();
    }
    center.iter().zip(&u).map(|(c, v)| c - radius * v / n).collect()
}

/// Online quadratic losses `½‖θ − c_t‖²` with `c_t` uniform in a ball,
/// played on a ball around the origin. `bias` adds the constant vector
/// `bias·e₁` to every gradient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFamily {
    pub dim: usize,
    pub center_radius: f64,
    pub domain_radius: f64,
    pub bias: f64,
}

impl Default for QuadraticFamily {
    fn default() -> Self {
        Self {
            dim: 5,
            center_radius: 0.5,
            domain_radius: 1.0,
            bias: 0.0,
        }
    }
}

impl QuadraticFamily {
    pub fn domain(&self) -> Domain {
        Domain::Ball {
            center: vec![0.0; self.dim],
            radius: self.domain_radius,
        }
    }

    /// `M = sup_Θ h = D²/2`.
    pub fn m(&self) -> f64 {
        0.5 * self.domain_radius * self.domain_radius
    }

    /// `W`: bound on the squared dual norm of every gradient estimate.
    pub fn w(&self) -> f64 {
        (self.domain_radius + self.center_radius + self.bias.abs()).powi(2)
    }

    /// `(3/2)√(MW/T)`.
    pub fn lemma_bound(&self, horizon: usize) -> f64 {
        1.5 * (self.m() * self.w() / horizon as f64).sqrt()
    }

    pub fn step_size(&self, horizon: usize) -> f64 {
        (self.m() / (self.w() * horizon as f64)).sqrt()
    }

    fn draw_center(&self, r: &mut rng::Stream) -> Vec<f64> {
        let u = rng::unit_direction(r, self.dim);
        let rad = self.center_radius * r.random::<f64>().powf(1.0 / self.dim as f64);
        u.iter().map(|v| v * rad).collect()
    }

    /// Plays `T` rounds from the origin and returns the ledger.
    pub fn play(&self, horizon: usize, seed: u64) -> Result<RegretLedger<Quadratic>> {
        let domain = self.domain();
        let cfg = MirrorDescentConfig::new(
            EuclideanMap {
                anchor: vec![0.0; self.dim],
            },
            self.step_size(horizon),
            domain,
        )?;
        let mut r = rng::stream(seed);
        let mut theta = vec![0.0; self.dim];
        let mut ledger = RegretLedger::new();
        for _ in 0..horizon {
            let loss = Quadratic {
                center: self.draw_center(&mut r),
            };
            let mut mu = loss.grad(&theta);
            mu[0] += self.bias;
            ledger.record(&theta, loss);
            theta = omd_step(&cfg, &theta, &mu)?;
        }
        Ok(ledger)
    }

    pub fn average_regret(&self, horizon: usize, seed: u64) -> Result<f64> {
        let ledger = self.play(horizon, seed)?;
        let domain = self.domain();
        Ok(measure_regret(&ledger, |l| quadratic_comparator(l, &domain)).0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretPoint {
    pub horizon: usize,
    pub mean_regret: f64,
    pub std_regret: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSlopeReport {
    pub family: QuadraticFamily,
    pub points: Vec<RegretPoint>,
    pub fit: PowerLawFit,
}

/// Mean average regret over `seeds` at every horizon and the log-log slope of
/// the means against `T`.
pub fn regret_slope_experiment(family: &QuadraticFamily, horizons: &[usize], seeds: &[u64]) -> Result<RegretSlopeReport> {
    if horizons.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            got: horizons.len(),
        });
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    let mut points = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let vals = seeds
            .iter()
            .map(|&s| family.average_regret(t, s ^ (t as u64).rotate_left(32)))
            .collect::<Result<Vec<f64>>>()?;
        points.push(RegretPoint {
            horizon: t,
            mean_regret: fit::mean(&vals),
            std_regret: fit::std_dev(&vals),
            bound: family.lemma_bound(t),
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.horizon as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean_regret).collect();
    let fit = fit::fit_power_law(&x, &y)?;
    Ok(RegretSlopeReport {
        family: *family,
        points,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(dim: usize, radius: f64) -> Domain {
        Domain::Ball {
            center: vec![0.0; dim],
            radius,
        }
    }

    fn cfg(eta: f64, domain: Domain) -> MirrorDescentConfig {
        let anchor = vec![0.0; domain.dim()];
        MirrorDescentConfig::new(EuclideanMap { anchor }, eta, domain).unwrap()
    }

    #[test]
    fn step_examples() {
        let c = cfg(0.1, ball(3, 1.0));
        let theta = vec![0.1, -0.2, 0.3];
        assert_eq!(omd_step(&c, &theta, &[0.0; 3]).unwrap(), theta);
        let next = omd_step(&c, &theta, &[1.0, 1.0, -1.0]).unwrap();
        assert_eq!(next, vec![0.1 - 0.1, -0.2 - 0.1, 0.3 + 0.1]);
        let out = omd_step(&c, &[0.9, 0.0, 0.0], &[-10.0, 0.0, 0.0]).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1] == 0.0 && out[2] == 0.0);
        assert!(omd_step(&c, &theta, &[f64::NAN, 0.0, 0.0]).is_err());
        assert!(MirrorDescentConfig::new(EuclideanMap { anchor: vec![0.0] }, 0.0, ball(1, 1.0)).is_err());
    }

    #[test]
    fn euclidean_reduction_with_anchor() {
        let mut r = rng::stream(3);
        for _ in 0..200 {
            let anchor = rng::normal_vec(&mut r, 4);
            let domain = Domain::Ball {
                center: anchor.clone(),
                radius: 0.7,
            };
            let c = MirrorDescentConfig::new(EuclideanMap { anchor: anchor.clone() }, 0.3, domain.clone()).unwrap();
            let mut theta: Vec<f64> = anchor.iter().map(|a| a + 0.2 * rng::normal(&mut r)).collect();
            domain.project(&mut theta);
            let mu = rng::normal_vec(&mut r, 4);
            let got = omd_step(&c, &theta, &mu).unwrap();
            let mut want: Vec<f64> = theta.iter().zip(&mu).map(|(t, m)| t - 0.3 * m).collect();
            domain.project(&mut want);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn box_domain() {
        let d = Domain::Box {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 2.0],
        };
        let mut v = vec![3.0, -1.0];
        d.project(&mut v);
        assert_eq!(v, vec![1.0, 0.0]);
        assert!(d.contains(&v, 0.0));
    }

    #[test]
    fn identical_losses_at_argmin_have_zero_regret() {
        let mut ledger = RegretLedger::new();
        let c = vec![0.2, -0.1];
        for _ in 0..10 {
            ledger.record(&c, Quadratic { center: c.clone() });
        }
        let (reg, comp) = measure_regret(&ledger, |l| quadratic_comparator(l, &ball(2, 1.0)));
        assert!(reg.abs() < 1e-15);
        assert!(rng::dist(&comp, &c) < 1e-15);
    }

    #[test]
    fn quadratic_comparator_is_mean_center() {
        let losses = vec![
            Quadratic { center: vec![0.2, 0.0] },
            Quadratic { center: vec![0.0, 0.4] },
            Quadratic { center: vec![0.1, -0.1] },
        ];
        let c = quadratic_comparator(&losses, &ball(2, 1.0));
        assert!((c[0] - 0.1).abs() < 1e-15 && (c[1] - 0.1).abs() < 1e-15);
        // brute force: the mean beats nearby points
        let avg = |t: &[f64]| losses.iter().map(|l| l.value(t)).sum::<f64>();
        for dx in [-1e-3, 1e-3] {
            assert!(avg(&[c[0] + dx, c[1]]) > avg(&c));
        }
    }

    #[test]
    fn lazy_play_on_alternating_linear_losses() {
        let u = vec![0.3, -0.4];
        let mut ledger = RegretLedger::new();
        for t in 0..11 {
            let s = if t % 2 == 0 { 1.0 } else { -1.0 };
            ledger.record(&[0.0, 0.0], Linear { u: vec![s * u[0], s * u[1]] });
        }
        let (reg, comp) = measure_regret(&ledger, |l| linear_comparator(l, &[0.0, 0.0], 1.0));
        assert!(reg >= 0.0);
        assert!((rng::norm(&comp) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn trajectory_stays_in_domain() {
        let fam = QuadraticFamily {
            bias: 0.3,
            ..Default::default()
        };
        let ledger = fam.play(500, 4).unwrap();
        let domain = fam.domain();
        let diam = 2.0 * (2.0 * fam.m()).sqrt();
        for (i, a) in ledger.trajectory().iter().enumerate() {
            assert!(domain.contains(a, 1e-12));
            for b in ledger.trajectory().iter().skip(i).step_by(37) {
                assert!(rng::dist(a, b) <= diam + 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_fixed_loss_regret_decreases() {
        let c = vec![0.6, -0.3, 0.2];
        let domain = ball(3, 1.0);
        let mut prev = f64::INFINITY;
        for t in [16, 64, 256, 1024] {
            let eta = (0.5 / (2.25 * t as f64)).sqrt();
            let conf = cfg(eta, domain.clone());
            let mut theta = vec![0.0; 3];
            let mut ledger = RegretLedger::new();
            for _ in 0..t {
                let loss = Quadratic { center: c.clone() };
                let g = loss.grad(&theta);
                ledger.record(&theta, loss);
                theta = omd_step(&conf, &theta, &g).unwrap();
            }
            let (reg, _) = measure_regret(&ledger, |l| quadratic_comparator(l, &domain));
            assert!(reg < prev);
            prev = reg;
        }
    }

    #[test]
    fn slope_experiment_guards() {
        let fam = QuadraticFamily::default();
        assert!(regret_slope_experiment(&fam, &[64, 128], &[1]).is_err());
        assert!(regret_slope_experiment(&fam, &[64, 128, 256], &[]).is_err());
        let rep = regret_slope_experiment(&fam, &[64, 128, 256], &[1, 2]).unwrap();
        assert_eq!(rep.points.len(), 3);
        for p in &rep.points {
            assert!(p.mean_regret <= p.bound);
        }
    }
}
