//! Per-example losses `h(y, z)` and outer constraint functions `g(ξ)`.
//!
//! Indicator metrics (`zero-one-match`, `neg-zero-one-match`,
//! `misclassification`) are only ever evaluated; their convex surrogates are
//! what the weight player differentiates. Each surrogate dominates its metric
//! pointwise:
//!
//! | metric               | surrogate                          |
//! |----------------------|------------------------------------|
//! | `misclassification`  | `hinge`: max(0, 1 − zy)            |
//! | `zero-one-match`     | `reverse-hinge`: max(0, 1 + zy)    |
//! | `neg-zero-one-match` | `shifted-hinge`: max(0, 1 − zy) − 1 |
//!
//! `sgn(0)` is −1, so `z = sgn(y)` is a total predicate.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{check_dim, Error, Result};

pub const DEFAULT_SMOOTHING: f64 = 0.1;
pub const RATE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Hinge,
    SmoothedHinge,
    ReverseHinge,
    SmoothedReverseHinge,
    ShiftedHinge,
    SmoothedShiftedHinge,
    ZeroOneMatch,
    NegZeroOneMatch,
    Misclassification,
    CrossEntropyOnScore,
    Zero,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::SmoothedHinge => "smoothed-hinge",
            LossKind::ReverseHinge => "reverse-hinge",
            LossKind::SmoothedReverseHinge => "smoothed-reverse-hinge",
            LossKind::ShiftedHinge => "shifted-hinge",
            LossKind::SmoothedShiftedHinge => "smoothed-shifted-hinge",
            LossKind::ZeroOneMatch => "zero-one-match",
            LossKind::NegZeroOneMatch => "neg-zero-one-match",
            LossKind::Misclassification => "misclassification",
            LossKind::CrossEntropyOnScore => "cross-entropy-on-score",
            LossKind::Zero => "zero",
        }
    }

    pub fn is_indicator(self) -> bool {
        matches!(
            self,
            LossKind::ZeroOneMatch | LossKind::NegZeroOneMatch | LossKind::Misclassification
        )
    }

    pub fn is_smoothed(self) -> bool {
        matches!(
            self,
            LossKind::SmoothedHinge | LossKind::SmoothedReverseHinge | LossKind::SmoothedShiftedHinge
        )
    }
}

/// `max(0, u)`, or its Huber-style smoothing with half-width `s` when `s > 0`.
/// The smoothed version is ≥ the plain max everywhere.
fn relu_s(u: f64, s: f64) -> f64 {
    if s <= 0.0 {
        u.max(0.0)
    } else if u <= -s {
        0.0
    } else if u >= s {
        u
    } else {
        (u + s) * (u + s) / (4.0 * s)
    }
}

/// Derivative of [`relu_s`]; 0 at the kink when unsmoothed.
fn relu_s_grad(u: f64, s: f64) -> f64 {
    if s <= 0.0 {
        if u > 0.0 {
            1.0
        } else {
            0.0
        }
    } else if u <= -s {
        0.0
    } else if u >= s {
        1.0
    } else {
        (u + s) / (2.0 * s)
    }
}

fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `z == sgn(y)` with `sgn(0) = −1`.
fn matches_sign(y: f64, z: Label) -> bool {
    Label::from_score(y) == z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarLoss {
    pub kind: LossKind,
    /// Half-width of the quadratic smoothing; only read by smoothed kinds.
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

impl ScalarLoss {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            smoothing: DEFAULT_SMOOTHING,
        }
    }

    pub fn with_smoothing(kind: LossKind, smoothing: f64) -> Self {
        Self { kind, smoothing }
    }

    fn s(&self) -> f64 {
        if self.kind.is_smoothed() {
            self.smoothing
        } else {
            0.0
        }
    }

    pub fn eval(&self, y: f64, z: Label) -> f64 {
        let zy = z.sign() * y;
        let s = self.s();
        match self.kind {
            LossKind::Hinge | LossKind::SmoothedHinge => relu_s(1.0 - zy, s),
            LossKind::ReverseHinge | LossKind::SmoothedReverseHinge => relu_s(1.0 + zy, s),
            LossKind::ShiftedHinge | LossKind::SmoothedShiftedHinge => relu_s(1.0 - zy, s) - 1.0,
            LossKind::ZeroOneMatch => f64::from(u8::from(matches_sign(y, z))),
            LossKind::NegZeroOneMatch => -f64::from(u8::from(matches_sign(y, z))),
            LossKind::Misclassification => f64::from(u8::from(!matches_sign(y, z))),
            LossKind::CrossEntropyOnScore => softplus(-zy),
            LossKind::Zero => 0.0,
        }
    }

    /// Derivative with respect to the score `y`.
    pub fn grad(&self, y: f64, z: Label) -> Result<f64> {
        let zs = z.sign();
        let zy = zs * y;
        let s = self.s();
        Ok(match self.kind {
            LossKind::Hinge
            | LossKind::SmoothedHinge
            | LossKind::ShiftedHinge
            | LossKind::SmoothedShiftedHinge => -zs * relu_s_grad(1.0 - zy, s),
            LossKind::ReverseHinge | LossKind::SmoothedReverseHinge => zs * relu_s_grad(1.0 + zy, s),
            LossKind::CrossEntropyOnScore => -zs * sigmoid(-zy),
            LossKind::Zero => 0.0,
            k @ (LossKind::ZeroOneMatch
            | LossKind::NegZeroOneMatch
            | LossKind::Misclassification) => return Err(Error::NonDifferentiable(k.name())),
        })
    }

    /// Lipschitz constant in `y`; `None` for indicators.
    pub fn lipschitz(&self) -> Option<f64> {
        match self.kind {
            k if k.is_indicator() => None,
            LossKind::Zero => Some(0.0),
            _ => Some(1.0),
        }
    }

    /// Lipschitz constant of the derivative in `y`, for the kinds that have one.
    pub fn smoothness(&self) -> Option<f64> {
        match self.kind {
            LossKind::CrossEntropyOnScore => Some(0.25),
            LossKind::Zero => Some(0.0),
            k if k.is_smoothed() && self.smoothing > 0.0 => Some(1.0 / (2.0 * self.smoothing)),
            _ => None,
        }
    }

    /// `sup |h(y, z)|` over `|y| ≤ 2·radius` and both labels, in closed form.
    pub fn bound(&self, radius: f64) -> f64 {
        let r = 2.0 * radius;
        let s = self.s();
        match self.kind {
            LossKind::Hinge
            | LossKind::SmoothedHinge
            | LossKind::ReverseHinge
            | LossKind::SmoothedReverseHinge => relu_s(1.0 + r, s),
            LossKind::ShiftedHinge | LossKind::SmoothedShiftedHinge => {
                (relu_s(1.0 + r, s) - 1.0).max(1.0 - relu_s(1.0 - r, s))
            }
            LossKind::ZeroOneMatch | LossKind::NegZeroOneMatch | LossKind::Misclassification => 1.0,
            LossKind::CrossEntropyOnScore => softplus(r),
            LossKind::Zero => 0.0,
        }
    }

    /// The indicator metric this surrogate upper-bounds, if any.
    pub fn dominated_metric(&self) -> Option<LossKind> {
        match self.kind {
            LossKind::Hinge | LossKind::SmoothedHinge => Some(LossKind::Misclassification),
            LossKind::ReverseHinge | LossKind::SmoothedReverseHinge => Some(LossKind::ZeroOneMatch),
            LossKind::ShiftedHinge | LossKind::SmoothedShiftedHinge => {
                Some(LossKind::NegZeroOneMatch)
            }
            _ => None,
        }
    }
}

/// Shape of an outer constraint function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OuterKind {
    /// `cᵀξ`.
    LinearCombination { coefficients: Vec<f64> },
    /// `1 − √(τ_a τ_b)` with `τ = −ξ` the (negated) rates at `indices`.
    GMean { indices: [usize; 2] },
    /// `1 − 2 / (1/τ_a + 1/τ_b)`.
    HMean { indices: [usize; 2] },
}

/// `g(ξ) − threshold`, required to be `≤ 0`.
///
/// Mean-type kinds read rates stored as negated values (`ξ_k ≥ −rate_k`) so
/// that `g` increases in every coordinate. Their value uses rates clamped to
/// `[0, 1]` (a zero rate gives 1), while the gradient is evaluated at rates
/// clamped to `[RATE_FLOOR, 1]` and is zero for coordinates beyond rate 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterConstraint {
    #[serde(flatten)]
    pub kind: OuterKind,
    #[serde(default)]
    pub threshold: f64,
}

impl OuterConstraint {
    pub fn linear(coefficients: Vec<f64>) -> Self {
        Self {
            kind: OuterKind::LinearCombination { coefficients },
            threshold: 0.0,
        }
    }

    pub fn g_mean(a: usize, b: usize, threshold: f64) -> Self {
        Self {
            kind: OuterKind::GMean { indices: [a, b] },
            threshold,
        }
    }

    pub fn h_mean(a: usize, b: usize, threshold: f64) -> Self {
        Self {
            kind: OuterKind::HMean { indices: [a, b] },
            threshold,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            OuterKind::LinearCombination { .. } => "linear-combination",
            OuterKind::GMean { .. } => "g-mean",
            OuterKind::HMean { .. } => "h-mean",
        }
    }

    /// Checks arity against `k` auxiliary variables and monotonicity.
    pub fn validate(&self, k: usize) -> Result<()> {
        match &self.kind {
            OuterKind::LinearCombination { coefficients } => {
                check_dim(k, coefficients.len())?;
                if coefficients.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    return Err(Error::InvalidArgument(
                        "linear outer coefficients must be finite and non-negative (g must be increasing)"
                            .into(),
                    ));
                }
            }
            OuterKind::GMean { indices } | OuterKind::HMean { indices } => {
                if indices.iter().any(|&i| i >= k) || indices[0] == indices[1] {
                    return Err(Error::InvalidArgument(format!(
                        "{} indices {indices:?} invalid for K = {k}",
                        self.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        let base = match &self.kind {
            OuterKind::LinearCombination { coefficients } => {
                coefficients.iter().zip(xi).map(|(c, x)| c * x).sum()
            }
            OuterKind::GMean { indices } => {
                let (a, b) = (value_rate(xi[indices[0]]), value_rate(xi[indices[1]]));
                1.0 - (a * b).sqrt()
            }
            OuterKind::HMean { indices } => {
                let (a, b) = (value_rate(xi[indices[0]]), value_rate(xi[indices[1]]));
                if a + b == 0.0 {
                    1.0
                } else {
                    1.0 - 2.0 * a * b / (a + b)
                }
            }
        };
        base - self.threshold
    }

    pub fn grad(&self, xi: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; xi.len()];
        match &self.kind {
            OuterKind::LinearCombination { coefficients } => g.copy_from_slice(coefficients),
            OuterKind::GMean { indices } => {
                let [i, j] = *indices;
                let (a, b) = (grad_rate(xi[i]), grad_rate(xi[j]));
                // ∂g/∂ξ_i = −∂g/∂τ_i = ½ √(τ_j / τ_i)
                if -xi[i] <= 1.0 {
                    g[i] = 0.5 * (b / a).sqrt();
                }
                if -xi[j] <= 1.0 {
                    g[j] = 0.5 * (a / b).sqrt();
                }
            }
            OuterKind::HMean { indices } => {
                let [i, j] = *indices;
                let (a, b) = (grad_rate(xi[i]), grad_rate(xi[j]));
                let den = (a + b) * (a + b);
                if -xi[i] <= 1.0 {
                    g[i] = 2.0 * b * b / den;
                }
                if -xi[j] <= 1.0 {
                    g[j] = 2.0 * a * a / den;
                }
            }
        }
        g
    }

    /// Lipschitz constant with respect to `‖·‖∞` on the rate box.
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            OuterKind::LinearCombination { coefficients } => {
                coefficients.iter().map(|c| c.abs()).sum()
            }
            OuterKind::GMean { .. } => 0.5 * ((1.0 / RATE_FLOOR).sqrt() + RATE_FLOOR.sqrt()),
            OuterKind::HMean { .. } => 2.0,
        }
    }

    /// `sup |g|` over the box `|ξ_k| ≤ bounds[k]`.
    pub fn bound(&self, bounds: &[f64]) -> f64 {
        match &self.kind {
            OuterKind::LinearCombination { coefficients } => {
                coefficients
                    .iter()
                    .zip(bounds)
                    .map(|(c, b)| c.abs() * b)
                    .sum::<f64>()
                    + self.threshold.abs()
            }
            _ => 1.0 + self.threshold.abs(),
        }
    }
}

fn value_rate(xi: f64) -> f64 {
    (-xi).clamp(0.0, 1.0)
}

fn grad_rate(xi: f64) -> f64 {
    (-xi).clamp(RATE_FLOOR, 1.0)
}
