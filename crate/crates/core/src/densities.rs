//! Input uncertainty densities and target densities.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{DensityVector, QuadratureGrid};

/// Tolerance on the standardized variable when inverting the beta cdf.
const INVERSE_CDF_TOL: f64 = 1e-12;

/// Beta distribution rescaled from `[0, 1]` onto `[lower, upper]`.
///
/// Shapes below one give densities that are unbounded at the support
/// endpoints, which neither the trapezoid rule nor the derived-pdf
/// sensitivities can handle, so both shapes are required to be at least one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScaledBetaParams", into = "ScaledBetaParams")]
pub struct ScaledBeta {
    alpha: f64,
    beta_shape: f64,
    lower: f64,
    upper: f64,
    ln_norm: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledBetaParams {
    pub alpha: f64,
    pub beta: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TryFrom<ScaledBetaParams> for ScaledBeta {
    type Error = Error;

    fn try_from(p: ScaledBetaParams) -> Result<Self> {
        ScaledBeta::new(p.alpha, p.beta, p.lower, p.upper)
    }
}

impl From<ScaledBeta> for ScaledBetaParams {
    fn from(d: ScaledBeta) -> Self {
        ScaledBetaParams {
            alpha: d.alpha,
            beta: d.beta_shape,
            lower: d.lower,
            upper: d.upper,
        }
    }
}

/// Mean and variance of a distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl Moments {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

impl ScaledBeta {
    pub fn new(alpha: f64, beta_shape: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(alpha >= 1.0 && alpha.is_finite()) {
            return Err(invalid("alpha", format!("must be finite and >= 1, got {alpha}")));
        }
        if !(beta_shape >= 1.0 && beta_shape.is_finite()) {
            return Err(invalid("beta", format!("must be finite and >= 1, got {beta_shape}")));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(invalid(
                "upper",
                format!("support [{lower}, {upper}] must be finite with upper > lower"),
            ));
        }
        let ln_norm = -ln_beta(alpha, beta_shape) - (upper - lower).ln();
        Ok(ScaledBeta {
            alpha,
            beta_shape,
            lower,
            upper,
            ln_norm,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta_shape(&self) -> f64 {
        self.beta_shape
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    fn standardize(&self, u: f64) -> f64 {
        (u - self.lower) / self.width()
    }

    /// Density at `u`; zero outside `[lower, upper]`.
    pub fn pdf(&self, u: f64) -> f64 {
        if !(u >= self.lower && u <= self.upper) {
            return 0.0;
        }
        let z = self.standardize(u).clamp(0.0, 1.0);
        let ln_kernel = xlogy(self.alpha - 1.0, z) + xlogy(self.beta_shape - 1.0, 1.0 - z);
        (self.ln_norm + ln_kernel).exp()
    }

    /// Derivative of the density with respect to `u`.
    ///
    /// Only defined strictly inside the support: for shapes in `[1, 2)` the
    /// derivative diverges at the corresponding endpoint.
    pub fn pdf_derivative(&self, u: f64) -> Result<f64> {
        if !(u > self.lower && u < self.upper) {
            return Err(Error::Domain {
                value: u,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let z = self.standardize(u);
        let log_slope = (self.alpha - 1.0) / z - (self.beta_shape - 1.0) / (1.0 - z);
        Ok(self.pdf(u) * log_slope / self.width())
    }

    /// Location of the density maximum. For `alpha = beta = 1` the density is
    /// flat and the midpoint is returned.
    pub fn mode(&self) -> f64 {
        let denom = self.alpha + self.beta_shape - 2.0;
        if denom <= 0.0 {
            return 0.5 * (self.lower + self.upper);
        }
        self.lower + self.width() * (self.alpha - 1.0) / denom
    }

    pub fn moments(&self) -> Moments {
        let (a, b) = (self.alpha, self.beta_shape);
        let s = a + b;
        let w = self.width();
        Moments {
            mean: self.lower + w * a / s,
            variance: w * w * a * b / (s * s * (s + 1.0)),
        }
    }

    pub fn cdf(&self, u: f64) -> f64 {
        if u <= self.lower {
            0.0
        } else if u >= self.upper {
            1.0
        } else {
            beta_reg(self.alpha, self.beta_shape, self.standardize(u))
        }
    }

    /// Inverse cdf by safeguarded Newton iteration on the regularized
    /// incomplete beta function.
    pub fn inverse_cdf(&self, prob: f64) -> f64 {
        let prob = prob.clamp(0.0, 1.0);
        if prob == 0.0 {
            return self.lower;
        }
        if prob == 1.0 {
            return self.upper;
        }
        let (a, b) = (self.alpha, self.beta_shape);
        let ln_norm01 = -ln_beta(a, b);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        // Start from the mean of the standardized variable.
        let mut z = a / (a + b);
        for _ in 0..200 {
            let resid = beta_reg(a, b, z) - prob;
            if resid > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let dens = (ln_norm01 + xlogy(a - 1.0, z) + xlogy(b - 1.0, 1.0 - z)).exp();
            let mut next = if dens > 0.0 { z - resid / dens } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - z).abs() < INVERSE_CDF_TOL || hi - lo < INVERSE_CDF_TOL;
            z = next;
            if done {
                break;
            }
        }
        self.lower + self.width() * z
    }

    /// Draws `n` i.i.d. values by inverse-cdf transform of a ChaCha8 stream.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    /// Draws `n` values from a caller-owned generator. The uniforms are drawn
    /// sequentially, so results depend only on the generator state.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let uniforms: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        uniforms.par_iter().map(|&p| self.inverse_cdf(p)).collect()
    }
}

/// `x * ln(y)` with the convention `0 * ln(0) = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Designer-supplied target density for the qoi.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum TargetDensity {
    Gaussian { mean: f64, std_dev: f64 },
    Beta(ScaledBeta),
}

impl TargetDensity {
    pub fn gaussian(mean: f64, std_dev: f64) -> Result<Self> {
        if !(std_dev > 0.0 && std_dev.is_finite() && mean.is_finite()) {
            return Err(invalid("std_dev", format!("must be finite and > 0, got {std_dev}")));
        }
        Ok(TargetDensity::Gaussian { mean, std_dev })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            TargetDensity::Gaussian { mean, std_dev } => {
                let z = (x - mean) / std_dev;
                (-0.5 * z * z).exp() / (std_dev * (2.0 * PI).sqrt())
            }
            TargetDensity::Beta(d) => d.pdf(x),
        }
    }

    pub fn moments(&self) -> Moments {
        match self {
            TargetDensity::Gaussian { mean, std_dev } => Moments {
                mean: *mean,
                variance: std_dev * std_dev,
            },
            TargetDensity::Beta(d) => d.moments(),
        }
    }

    /// Interval holding essentially all of the mass: mean ± 6σ for a
    /// Gaussian, the exact support for a beta.
    pub fn effective_support(&self) -> (f64, f64) {
        match self {
            TargetDensity::Gaussian { mean, std_dev } => (mean - 6.0 * std_dev, mean + 6.0 * std_dev),
            TargetDensity::Beta(d) => (d.lower(), d.upper()),
        }
    }

    /// Target values at the grid nodes, rescaled to unit quadrature mass.
    pub fn on_grid(&self, grid: &QuadratureGrid) -> Result<DensityVector> {
        let raw = self.on_grid_raw(grid);
        let mass = raw.integral();
        if !(mass > 0.0) {
            return Err(invalid(
                "target",
                format!("target has no mass on the grid [{}, {}]", grid.lower(), grid.upper()),
            ));
        }
        Ok(raw.scaled(1.0 / mass))
    }

    /// Target values at the grid nodes without renormalization.
    pub fn on_grid_raw(&self, grid: &QuadratureGrid) -> DensityVector {
        DensityVector::from_fn(grid, |x| self.pdf(x))
    }
}
