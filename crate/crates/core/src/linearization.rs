//! Monte Carlo experiments on how far a wide network strays from its
//! linearization at initialization, and on the size of its initial outputs.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{self, PowerLawFit};
use crate::model::TwoLayerNet;
use crate::rng;

/// Input law for the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputDistribution {
    /// Uniform direction, radius uniform in `[min_radius, max_radius]`.
    Shell { min_radius: f64, max_radius: f64 },
    Zero,
}

impl Default for InputDistribution {
    fn default() -> Self {
        InputDistribution::Shell {
            min_radius: 0.5,
            max_radius: 1.0,
        }
    }
}

impl InputDistribution {
    pub fn sample(&self, r: &mut rng::Stream, dim: usize) -> Vec<f64> {
        match *self {
            InputDistribution::Zero => vec![0.0; dim],
            InputDistribution::Shell { min_radius, max_radius } => {
                let rad = min_radius + (max_radius - min_radius) * r.random::<f64>();
                rng::unit_direction(r, dim).iter().map(|v| v * rad).collect()
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InputDistribution::Zero => Ok(()),
            InputDistribution::Shell { min_radius, max_radius } => {
                if 0.0 <= min_radius && min_radius <= max_radius && max_radius <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "input radii must satisfy 0 <= {min_radius} <= {max_radius} <= 1"
                    )))
                }
            }
        }
    }
}

/// Errors of the linearization at one `(θ, x)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleErrors {
    /// `y(θ;x) − y⁰(θ;x)`.
    pub diff: f64,
    /// `‖∇y(θ;x) − ∇y⁰(θ;x)‖`.
    pub grad_err: f64,
    /// `(2/√m) Σ_i 1{|(a_i⁰)ᵀx| ≤ ‖a_i − a_i⁰‖} ‖a_i − a_i⁰‖`.
    pub flip_bound: f64,
}

/// Per-unit `‖a_i − a_i⁰‖`.
pub fn unit_displacements(net: &TwoLayerNet) -> Vec<f64> {
    let d = net.input_dim();
    net.theta()
        .chunks_exact(d)
        .zip(net.theta0().chunks_exact(d))
        .map(|(a, a0)| rng::dist(a, a0))
        .collect()
}

/// One fused pass over the units. `displacements` comes from
/// [`unit_displacements`].
pub fn sample_errors(net: &TwoLayerNet, displacements: &[f64], x: &[f64]) -> SampleErrors {
    let d = net.input_dim();
    let scale = 1.0 / (net.width() as f64).sqrt();
    let mut diff = 0.0;
    let mut flips = 0usize;
    let mut bound = 0.0;
    for (((a, a0), b), delta) in net
        .theta()
        .chunks_exact(d)
        .zip(net.theta0().chunks_exact(d))
        .zip(net.signs())
        .zip(displacements)
    {
        let u = rng::dot(a, x);
        let u0 = rng::dot(a0, x);
        let (on, on0) = (u > 0.0, u0 > 0.0);
        if on != on0 {
            flips += 1;
            // relu(u) − 1{u⁰>0}·u is nonzero only on a mask flip
            diff += b * if on { u } else { -u };
        }
        if u0.abs() <= *delta {
            bound += delta;
        }
    }
    SampleErrors {
        diff: scale * diff,
        grad_err: rng::norm(x) * (flips as f64 * scale * scale).sqrt(),
        flip_bound: 2.0 * scale * bound,
    }
}

/// Draws θ on the sphere `‖θ − θ⁰‖ = radius` in a uniform direction.
pub fn perturb(net: &mut TwoLayerNet, radius: f64, r: &mut rng::Stream) {
    if radius == 0.0 {
        return;
    }
    let dir = rng::unit_direction(r, net.num_params());
    let theta: Vec<f64> = net.theta0().iter().zip(&dir).map(|(t, u)| t + radius * u).collect();
    net.theta_mut().copy_from_slice(&theta);
    net.project();
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingExperiment {
    pub widths: Vec<usize>,
    pub radii: Vec<f64>,
    pub input_dim: usize,
    /// Monte Carlo samples per cell.
    pub samples: usize,
    /// Independent `(θ⁰, θ)` draws per cell; samples are split evenly among them.
    pub nets_per_cell: usize,
    /// Fraction of `D` at which θ is placed (1 is the boundary of Θ).
    #[serde(default = "one")]
    pub perturbation_scale: f64,
    #[serde(default)]
    pub inputs: InputDistribution,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl ScalingExperiment {
    pub fn width_sweep() -> Self {
        Self {
            widths: (0..5).map(|k| 1usize << (6 + 2 * k)).collect(),
            radii: vec![1.0],
            input_dim: 16,
            samples: 2000,
            nets_per_cell: 20,
            perturbation_scale: 1.0,
            inputs: InputDistribution::default(),
            seed: 0,
        }
    }

    pub fn radius_sweep() -> Self {
        Self {
            widths: vec![1 << 10],
            radii: vec![0.5, 1.0, 2.0, 4.0],
            ..Self::width_sweep()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        let widths: Vec<f64> = self.widths.iter().map(|&m| m as f64).collect();
        if self.widths.is_empty() || self.widths[0] == 0 || !increasing(&widths) {
            return Err(Error::InvalidArgument("widths must be positive and strictly increasing".into()));
        }
        if self.radii.is_empty() || self.radii[0] <= 0.0 || !increasing(&self.radii) {
            return Err(Error::InvalidArgument("radii must be positive and strictly increasing".into()));
        }
        if self.samples < 5 {
            return Err(Error::InvalidArgument("need at least 5 samples per cell".into()));
        }
        if self.nets_per_cell == 0 || self.nets_per_cell > self.samples {
            return Err(Error::InvalidArgument("nets_per_cell must be in 1..=samples".into()));
        }
        if !(0.0..=1.0).contains(&self.perturbation_scale) {
            return Err(Error::InvalidArgument("perturbation_scale must be in [0, 1]".into()));
        }
        if self.input_dim < 3 {
            return Err(Error::InputDimTooSmall(self.input_dim));
        }
        self.inputs.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub width: usize,
    pub radius: f64,
    pub mean_sq_err: f64,
    pub se_sq_err: f64,
    pub mean_grad_err: f64,
    pub se_grad_err: f64,
    pub max_grad_err: f64,
    /// Samples where `|y − y⁰|` exceeded the per-sample flip bound.
    pub flip_bound_violations: usize,
    #[serde(skip)]
    pub sq_errs: Vec<f64>,
    #[serde(skip)]
    pub grad_errs: Vec<f64>,
}

fn cell_seed(seed: u64, a: u64, b: u64) -> u64 {
    seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)
}

fn run_cell(exp: &ScalingExperiment, width: usize, radius: f64, cell: u64) -> Result<CellResult> {
    let per_net = exp.samples / exp.nets_per_cell;
    let extra = exp.samples % exp.nets_per_cell;
    let chunks = (0..exp.nets_per_cell)
        .into_par_iter()
        .map(|k| -> Result<Vec<SampleErrors>> {
            let s = cell_seed(exp.seed, cell, k as u64);
            let mut net = TwoLayerNet::init(width, exp.input_dim, radius, s)?;
            let mut r = rng::substream(s, 1);
            perturb(&mut net, radius * exp.perturbation_scale, &mut r);
            let disp = unit_displacements(&net);
            let n = per_net + usize::from(k < extra);
            Ok((0..n)
                .map(|_| {
                    let x = exp.inputs.sample(&mut r, exp.input_dim);
                    sample_errors(&net, &disp, &x)
                })
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<SampleErrors> = chunks.into_iter().flatten().collect();
    let sq_errs: Vec<f64> = all.iter().map(|s| s.diff * s.diff).collect();
    let grad_errs: Vec<f64> = all.iter().map(|s| s.grad_err).collect();
    let flip_bound_violations = all
        .iter()
        .filter(|s| s.diff.abs() > s.flip_bound * (1.0 + 1e-12) + 1e-15)
        .count();
    Ok(CellResult {
        width,
        radius,
        mean_sq_err: fit::mean(&sq_errs),
        se_sq_err: fit::std_err(&sq_errs),
        mean_grad_err: fit::mean(&grad_errs),
        se_grad_err: fit::std_err(&grad_errs),
        max_grad_err: grad_errs.iter().copied().fold(0.0, f64::max),
        flip_bound_violations,
        sq_errs,
        grad_errs,
    })
}

/// One row per `(m, D)` cell, widths varying fastest.
pub fn estimate_linearization_errors(exp: &ScalingExperiment) -> Result<Vec<CellResult>> {
    exp.validate()?;
    let mut out = Vec::new();
    for (j, &radius) in exp.radii.iter().enumerate() {
        for (i, &width) in exp.widths.iter().enumerate() {
            out.push(run_cell(exp, width, radius, (j * exp.widths.len() + i) as u64)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    Width,
    Radius,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    SquaredOutputError,
    GradientError,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub fit: PowerLawFit,
    /// Slope standard error from resampling each cell's samples.
    pub bootstrap_stderr: f64,
}

/// Log-log OLS of the chosen cell means against the chosen grid axis. The
/// cells must vary along that axis only.
pub fn fit_scaling_exponent(table: &[CellResult], axis: Axis, quantity: Quantity, seed: u64) -> Result<ScalingFit> {
    let x: Vec<f64> = table
        .iter()
        .map(|c| match axis {
            Axis::Width => c.width as f64,
            Axis::Radius => c.radius,
        })
        .collect();
    let samples: Vec<Vec<f64>> = table
        .iter()
        .map(|c| match quantity {
            Quantity::SquaredOutputError => c.sq_errs.clone(),
            Quantity::GradientError => c.grad_errs.clone(),
        })
        .collect();
    let means: Vec<f64> = table
        .iter()
        .map(|c| match quantity {
            Quantity::SquaredOutputError => c.mean_sq_err,
            Quantity::GradientError => c.mean_grad_err,
        })
        .collect();
    let fit = fit::fit_power_law(&x, &means)?;
    let bootstrap_stderr = if samples.iter().all(|s| !s.is_empty()) {
        fit::bootstrap_slope_stderr(&x, &samples, 200, seed)?
    } else {
        fit.stderr
    };
    Ok(ScalingFit {
        fit,
        bootstrap_stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputBoundRow {
    pub width: usize,
    pub mean_abs: f64,
    pub se_abs: f64,
    /// Empirical `P(|y(θ⁰;x)| > threshold)`.
    pub tail_prob: f64,
    pub threshold: f64,
    /// `E|y| / threshold + 3·s.e.`, the Markov bound on the same sample.
    pub markov_bound: f64,
}

/// Monte Carlo `E|y(θ⁰;x)|` per width, with a fresh network for every
/// replicate.
pub fn estimate_output_bound(
    widths: &[usize],
    input_dim: usize,
    replicates: usize,
    threshold: f64,
    inputs: InputDistribution,
    seed: u64,
) -> Result<Vec<OutputBoundRow>> {
    inputs.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be positive".into()));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument("threshold must be positive".into()));
    }
    widths
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let ys = (0..replicates)
                .into_par_iter()
                .map(|k| -> Result<f64> {
                    let s = cell_seed(seed, i as u64 + 1000, k as u64);
                    let net = TwoLayerNet::init(m, input_dim, 1.0, s)?;
                    let x = inputs.sample(&mut rng::substream(s, 2), input_dim);
                    Ok(net.forward(&x)?.abs())
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean_abs = fit::mean(&ys);
            let se_abs = fit::std_err(&ys);
            let tail_prob = ys.iter().filter(|y| **y > threshold).count() as f64 / ys.len() as f64;
            Ok(OutputBoundRow {
                width: m,
                mean_abs,
                se_abs,
                tail_prob,
                threshold,
                markov_bound: mean_abs / threshold + 3.0 * se_abs / threshold,
            })
        })
        .collect()
}
