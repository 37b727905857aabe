//! Two-layer ReLU network `y(θ; x) = m^{-1/2} Σ_i b_i max(0, a_iᵀx)` with a
//! frozen output layer, its linearization around the initial weights, and
//! projection onto the ball `‖θ − θ⁰‖ ≤ D`.
//!
//! The hidden weights are stored as one flat `m·d` vector; unit `i` owns the
//! slice `[i·d, (i+1)·d)`. The ReLU derivative at zero is taken as 0, both for
//! activation masks and for gradients.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{self, dot};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerNet {
    width: usize,
    input_dim: usize,
    radius: f64,
    seed: u64,
    signs: Vec<f64>,
    theta: Vec<f64>,
    theta0: Vec<f64>,
}

#[inline]
fn active(u: f64) -> bool {
    u > 0.0
}

impl TwoLayerNet {
    /// Draws `a_i⁰ ~ N(0, I_d / d)` and `b_i ~ Uniform{−1, +1}` from a ChaCha8
    /// stream seeded with `seed`.
    pub fn init(width: usize, input_dim: usize, radius: f64, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("width m must be positive".into()));
        }
        if input_dim < 3 {
            return Err(Error::InputDimTooSmall(input_dim));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "radius D must be positive and finite, got {radius}"
            )));
        }
        let mut rng = rng::stream(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let theta0: Vec<f64> = (0..width * input_dim)
            .map(|_| rng::normal(&mut rng) * scale)
            .collect();
        let signs = (0..width)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Ok(Self {
            width,
            input_dim,
            radius,
            seed,
            signs,
            theta: theta0.clone(),
            theta0,
        })
    }

    /// Builds a net from explicit parts. `theta0` becomes the expansion point
    /// and `theta` the current weights (no projection is applied).
    pub fn from_parts(
        input_dim: usize,
        radius: f64,
        signs: Vec<f64>,
        theta0: Vec<f64>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let width = signs.len();
        if width == 0 || input_dim == 0 {
            return Err(Error::InvalidArgument("empty network".into()));
        }
        if signs.iter().any(|&b| b != 1.0 && b != -1.0) {
            return Err(Error::InvalidArgument("output signs must be ±1".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidArgument("radius D must be positive".into()));
        }
        check_dim(width * input_dim, theta0.len())?;
        check_dim(width * input_dim, theta.len())?;
        Ok(Self {
            width,
            input_dim,
            radius,
            seed: 0,
            signs,
            theta,
            theta0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta0(&self) -> &[f64] {
        &self.theta0
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        check_dim(self.theta.len(), theta.len())?;
        self.theta = theta;
        Ok(())
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Same skeleton (signs, θ⁰, D) with different current weights.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        let mut net = self.clone();
        net.set_theta(theta)?;
        Ok(net)
    }

    pub fn distance_from_init(&self) -> f64 {
        rng::dist(&self.theta, &self.theta0)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        check_dim(self.input_dim, x.len())
    }

    fn unit<'a>(&self, theta: &'a [f64], i: usize) -> &'a [f64] {
        &theta[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.forward_at(&self.theta, x)
    }

    /// Output with the hidden weights replaced by `theta` (same signs).
    pub fn forward_at(&self, theta: &[f64], x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        check_dim(self.theta.len(), theta.len())?;
        Ok(self.forward_unchecked(theta, x))
    }

    pub(crate) fn forward_unchecked(&self, theta: &[f64], x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (i, b) in self.signs.iter().enumerate() {
            let u = dot(self.unit(theta, i), x);
            if active(u) {
                acc += b * u;
            }
        }
        acc / (self.width as f64).sqrt()
    }

    /// `∇_θ y(θ; x)`: block `i` is `b_i 1{a_iᵀx > 0} x / √m`.
    pub fn grad_theta(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut g = vec![0.0; self.theta.len()];
        self.accumulate_grad(x, 1.0, &mut g);
        Ok(g)
    }

    /// `out += scale · ∇_θ y(θ; x)`; returns `y(θ; x)` computed on the way.
    pub(crate) fn accumulate_grad(&self, x: &[f64], scale: f64, out: &mut [f64]) -> f64 {
        let inv_sqrt_m = 1.0 / (self.width as f64).sqrt();
        let d = self.input_dim;
        let mut y = 0.0;
        for (i, b) in self.signs.iter().enumerate() {
            let u = dot(self.unit(&self.theta, i), x);
            if active(u) {
                y += b * u;
                let c = scale * b * inv_sqrt_m;
                if c != 0.0 {
                    for (o, xi) in out[i * d..(i + 1) * d].iter_mut().zip(x) {
                        *o += c * xi;
                    }
                }
            }
        }
        y * inv_sqrt_m
    }

    /// Output and gradient in a single pass.
    pub fn forward_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let mut g = vec![0.0; self.theta.len()];
        let y = self.accumulate_grad(x, 1.0, &mut g);
        Ok((y, g))
    }

    /// `y⁰(θ; x) = m^{-1/2} Σ_i b_i 1{(a_i⁰)ᵀx > 0} a_iᵀx`, linear in θ with
    /// activation masks frozen at initialization.
    pub fn forward_linear(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        let mut acc = 0.0;
        for (i, b) in self.signs.iter().enumerate() {
            if active(dot(self.unit(&self.theta0, i), x)) {
                acc += b * dot(self.unit(&self.theta, i), x);
            }
        }
        Ok(acc / (self.width as f64).sqrt())
    }

    /// Feature map `f⁰(x) = ∇_θ y⁰`, depending on θ⁰ and x only.
    pub fn feature_map0(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let d = self.input_dim;
        let inv_sqrt_m = 1.0 / (self.width as f64).sqrt();
        let mut f = vec![0.0; self.theta.len()];
        for (i, b) in self.signs.iter().enumerate() {
            if active(dot(self.unit(&self.theta0, i), x)) {
                for (o, xi) in f[i * d..(i + 1) * d].iter_mut().zip(x) {
                    *o = b * xi * inv_sqrt_m;
                }
            }
        }
        Ok(f)
    }

    /// Projects the current weights onto `{θ : ‖θ − θ⁰‖₂ ≤ D}`.
    pub fn project(&mut self) {
        project_ball(&mut self.theta, &self.theta0, self.radius);
    }

    pub fn projected(mut self) -> Self {
        self.project();
        self
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            net: self.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.into_net()
    }
}

/// Radial projection onto the ball of radius `radius` around `center`.
///
/// Points within one part in 10¹² of the sphere are left alone so that a
/// second projection is a no-op despite rounding in the first.
pub fn project_ball(v: &mut [f64], center: &[f64], radius: f64) {
    let r = rng::dist(v, center);
    if r > radius * (1.0 + 1e-12) {
        let s = radius / r;
        for (vi, ci) in v.iter_mut().zip(center) {
            *vi = ci + s * (*vi - ci);
        }
    }
}

/// Versioned JSON container for a network. Floats are written in shortest
/// round-trip form, so θ survives a save/load cycle bit for bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(flatten)]
    pub net: TwoLayerNet,
}

impl Checkpoint {
    pub fn into_net(self) -> Result<TwoLayerNet> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::FormatVersion(self.format_version));
        }
        let n = self.net;
        if n.signs.len() != n.width
            || n.theta.len() != n.width * n.input_dim
            || n.theta0.len() != n.theta.len()
        {
            return Err(Error::InvalidArgument(
                "checkpoint arrays disagree with m and d".into(),
            ));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_net(a: Vec<f64>, a0: Vec<f64>) -> TwoLayerNet {
        TwoLayerNet::from_parts(a.len(), 1.0, vec![1.0], a0, a).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = TwoLayerNet::init(4, 8, 1.0, 7).unwrap();
        let b = TwoLayerNet::init(4, 8, 1.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.theta(), a.theta0());
        let c = TwoLayerNet::init(4, 8, 1.0, 8).unwrap();
        assert_ne!(a.theta0(), c.theta0());
    }

    #[test]
    fn init_rejects_small_input_dim() {
        assert!(matches!(
            TwoLayerNet::init(4, 2, 1.0, 0),
            Err(Error::InputDimTooSmall(2))
        ));
        assert!(TwoLayerNet::init(0, 8, 1.0, 0).is_err());
        assert!(TwoLayerNet::init(4, 8, 0.0, 0).is_err());
    }

    #[test]
    fn init_row_norms_have_unit_mean() {
        let net = TwoLayerNet::init(4096, 16, 1.0, 0).unwrap();
        let mean = net
            .theta0()
            .chunks(16)
            .map(|a| a.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 4096.0;
        assert!((0.9..=1.1).contains(&mean), "mean ‖a_i‖² = {mean}");
    }

    #[test]
    fn init_signs_are_balanced() {
        let net = TwoLayerNet::init(64, 8, 1.0, 0).unwrap();
        assert!(net.signs().iter().all(|&b| b == 1.0 || b == -1.0));
        let frac = net.signs().iter().filter(|&&b| b > 0.0).count() as f64 / 64.0;
        assert!((frac - 0.5).abs() <= 4.0 / 8.0);
    }

    #[test]
    fn forward_hand_values() {
        let net = TwoLayerNet::init(8, 5, 1.0, 3).unwrap();
        assert_eq!(net.forward(&[0.0; 5]).unwrap(), 0.0);

        let net = unit_net(vec![1.0, 0.0], vec![1.0, 0.0]);
        assert_eq!(net.forward(&[0.5, 0.0]).unwrap(), 0.5);

        let a = vec![0.3, -0.2, 0.7];
        let theta = [a.clone(), a].concat();
        let net =
            TwoLayerNet::from_parts(3, 1.0, vec![1.0, -1.0], theta.clone(), theta).unwrap();
        assert_eq!(net.forward(&[0.4, 0.1, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let net = TwoLayerNet::init(4, 8, 1.0, 0).unwrap();
        assert!(matches!(
            net.forward(&[0.0; 3]),
            Err(Error::Dimension { expected: 8, got: 3 })
        ));
    }

    #[test]
    fn grad_hand_values() {
        let net = unit_net(vec![1.0, 0.0], vec![1.0, 0.0]);
        assert_eq!(net.grad_theta(&[0.5, 0.2]).unwrap(), vec![0.5, 0.2]);
        assert_eq!(net.grad_theta(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        // all units inactive
        assert_eq!(net.grad_theta(&[-0.5, 0.2]).unwrap(), vec![0.0, 0.0]);
        // kink: aᵀx = 0 counts as inactive
        assert_eq!(net.grad_theta(&[0.0, 0.7]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linearization_hand_values() {
        let net = unit_net(vec![-1.0, 0.0], vec![1.0, 0.0]);
        assert_eq!(net.forward_linear(&[1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(net.forward_linear(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn projection_cases() {
        let mut net = TwoLayerNet::init(3, 4, 2.0, 1).unwrap();
        let u = rng::unit_direction(&mut rng::stream(9), 12);
        let inside: Vec<f64> = net.theta0().iter().zip(&u).map(|(a, b)| a + 1.0 * b).collect();
        net.set_theta(inside.clone()).unwrap();
        net.project();
        assert_eq!(net.theta(), &inside[..]);

        let outside: Vec<f64> = net.theta0().iter().zip(&u).map(|(a, b)| a + 4.0 * b).collect();
        net.set_theta(outside).unwrap();
        net.project();
        for ((t, t0), ui) in net.theta().iter().zip(net.theta0()).zip(&u) {
            assert!((t - (t0 + 2.0 * ui)).abs() < 1e-12);
        }
        let once = net.theta().to_vec();
        net.project();
        assert_eq!(net.theta(), &once[..]);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let mut net = TwoLayerNet::init(16, 5, 1.5, 11).unwrap();
        let mut r = rng::stream(2);
        let noisy: Vec<f64> = net.theta().iter().map(|t| t + 0.1 * rng::normal(&mut r)).collect();
        net.set_theta(noisy).unwrap();
        net.save(&path).unwrap();
        let back = TwoLayerNet::load(&path).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(back.theta()), bits(net.theta()));
        assert_eq!(back, net);
    }

    fn random_net_and_input(seed: u64, m: usize, d: usize) -> (TwoLayerNet, Vec<f64>) {
        let mut net = TwoLayerNet::init(m, d, 1.0, seed).unwrap();
        let mut r = rng::substream(seed, 1);
        let delta = rng::unit_direction(&mut r, m * d);
        let theta: Vec<f64> = net.theta0().iter().zip(&delta).map(|(a, b)| a + 0.8 * b).collect();
        net.set_theta(theta).unwrap();
        let mut x = rng::unit_direction(&mut r, d);
        let s: f64 = r.random_range(0.0..=1.0);
        x.iter_mut().for_each(|v| *v *= s);
        (net, x)
    }

    proptest! {
        #[test]
        fn grad_norm_bounded_by_input_norm(seed in 0u64..10_000, m in 1usize..40, d in 3usize..10) {
            let (net, x) = random_net_and_input(seed, m, d);
            let g = net.grad_theta(&x).unwrap();
            prop_assert!(rng::norm(&g) <= rng::norm(&x) + 1e-12);
            prop_assert!(rng::norm(&g) <= 1.0 + 1e-12);
        }

        #[test]
        fn feature_map_norm_bounded(seed in 0u64..10_000, m in 1usize..40, d in 3usize..10) {
            let (net, x) = random_net_and_input(seed, m, d);
            let f = net.feature_map0(&x).unwrap();
            prop_assert!(rng::norm(&f) <= rng::norm(&x) + 1e-12);
        }

        #[test]
        fn linearization_is_linear(seed in 0u64..10_000, m in 1usize..30, d in 3usize..8) {
            let (net, x) = random_net_and_input(seed, m, d);
            let mut r = rng::substream(seed, 2);
            let other: Vec<f64> = net.theta().iter().map(|t| t + rng::normal(&mut r)).collect();
            let net2 = net.with_theta(other.clone()).unwrap();
            let f0 = net.feature_map0(&x).unwrap();
            let diff: Vec<f64> = net.theta().iter().zip(&other).map(|(a, b)| a - b).collect();
            let lhs = net.forward_linear(&x).unwrap() - net2.forward_linear(&x).unwrap();
            prop_assert!((lhs - dot(&f0, &diff)).abs() < 1e-10);
        }

        #[test]
        fn linearization_exact_at_init(seed in 0u64..10_000, m in 1usize..40, d in 3usize..10) {
            let (net, x) = random_net_and_input(seed, m, d);
            let at_init = net.with_theta(net.theta0().to_vec()).unwrap();
            prop_assert_eq!(at_init.forward(&x).unwrap(), at_init.forward_linear(&x).unwrap());
        }

        #[test]
        fn projection_idempotent_and_nonexpansive(seed in 0u64..10_000, scale in 0.1f64..5.0) {
            let mut r = rng::stream(seed);
            let center = rng::normal_vec(&mut r, 6);
            let mut u: Vec<f64> = rng::normal_vec(&mut r, 6).iter().map(|v| v * scale).collect();
            let mut v: Vec<f64> = rng::normal_vec(&mut r, 6).iter().map(|v| v * scale).collect();
            let before = rng::dist(&u, &v);
            project_ball(&mut u, &center, 1.0);
            project_ball(&mut v, &center, 1.0);
            prop_assert!(rng::dist(&u, &v) <= before + 1e-12);
            prop_assert!(rng::dist(&u, &center) <= 1.0 + 1e-12);
            let once = u.clone();
            project_ball(&mut u, &center, 1.0);
            prop_assert_eq!(u, once);
        }
    }
}
