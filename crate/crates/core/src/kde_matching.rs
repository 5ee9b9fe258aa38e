//! Kernel density estimate formulation of density matching.
//!
//! With `M` uncertainty samples frozen, the design pdf on the grid is
//! `q = K e` where `K_ij = K_h(f̄_i − f_j(s)) / M`, and the gradient of
//! `d = (t − q)ᵀ W (t − q)` is `2 (t − K e)ᵀ W K′ F′`, with
//! `K′_ij = K′_h(f̄_i − f_j(s)) / M` and `F′_jk = ∂f_j/∂s_k`.
//!
//! The kernel matrices are never materialized; both products are accumulated
//! row by row (over nodes for `K e`, over samples for `(t − K e)ᵀ W K′`),
//! each with a fixed summation order so results do not depend on thread
//! scheduling.

use std::f64::consts::PI;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{distance, DensityVector, QuadratureGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kernel {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Bandwidth {
    Fixed(f64),
    #[default]
    #[serde(with = "silverman_tag")]
    Silverman,
}

mod silverman_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("silverman")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "silverman" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("unknown bandwidth rule `{s}`")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KdeConfig {
    pub bandwidth: Bandwidth,
    pub kernel: Kernel,
}

impl KdeConfig {
    pub fn fixed(h: f64) -> Self {
        KdeConfig {
            bandwidth: Bandwidth::Fixed(h),
            kernel: Kernel::Gaussian,
        }
    }

    pub fn silverman() -> Self {
        KdeConfig::default()
    }

    /// Bandwidth to use for `values`.
    pub fn resolve_bandwidth(&self, values: &[f64]) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
            Bandwidth::Fixed(h) => Err(invalid("bandwidth", format!("must be > 0, got {h}"))),
            Bandwidth::Silverman => silverman_bandwidth(values),
        }
    }
}

/// Qoi values `f_j(s)` at `M` frozen uncertainty samples, optionally with
/// their `M × n` design jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResponses {
    values: Vec<f64>,
    jacobian: Option<Array2<f64>>,
}

impl SampleResponses {
    pub fn new(values: Vec<f64>) -> Self {
        SampleResponses { values, jacobian: None }
    }

    pub fn with_jacobian(values: Vec<f64>, jacobian: Array2<f64>) -> Result<Self> {
        if jacobian.nrows() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: values.len(),
                found: jacobian.nrows(),
            });
        }
        Ok(SampleResponses {
            values,
            jacobian: Some(jacobian),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn jacobian(&self) -> Option<&Array2<f64>> {
        self.jacobian.as_ref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Bandwidth-scaled kernel `K_h(x)` and its derivative in `x`.
pub fn kernel_and_derivative(kernel: Kernel, h: f64, x: f64) -> (f64, f64) {
    match kernel {
        Kernel::Gaussian => {
            let z = x / h;
            let k = (-0.5 * z * z).exp() / (h * (2.0 * PI).sqrt());
            (k, -z / h * k)
        }
    }
}

/// Silverman's rule `0.9 · min(σ̂, IQR / 1.34) · M^(−1/5)`.
///
/// Quartiles are taken from the inverse empirical cdf. When the IQR vanishes
/// but the standard deviation does not (heavily tied samples) the standard
/// deviation alone is used.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let m = values.len();
    if m < 2 {
        return Err(invalid(
            "samples",
            format!("silverman rule needs at least 2 samples, got {m}"),
        ));
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::ZeroSpread);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| {
        let rank = ((m as f64 * p).ceil() as usize).clamp(1, m);
        sorted[rank - 1]
    };
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    Ok(0.9 * spread * (m as f64).powf(-0.2))
}

fn check_samples(samples: &SampleResponses) -> Result<()> {
    if samples.is_empty() {
        return Err(invalid("samples", "need at least one sample"));
    }
    Ok(())
}

/// `q̃(f̄_i) = (1/M) Σ_j K_h(f̄_i − f_j)` at every grid node.
pub fn kde_estimate(samples: &SampleResponses, grid: &QuadratureGrid, cfg: &KdeConfig) -> Result<DensityVector> {
    check_samples(samples)?;
    let h = cfg.resolve_bandwidth(samples.values())?;
    Ok(kde_with_bandwidth(samples.values(), grid, cfg.kernel, h))
}

fn kde_with_bandwidth(values: &[f64], grid: &QuadratureGrid, kernel: Kernel, h: f64) -> DensityVector {
    let inv_m = 1.0 / values.len() as f64;
    let q: Vec<f64> = grid
        .nodes()
        .par_iter()
        .map(|&x| {
            values
                .iter()
                .map(|&f| kernel_and_derivative(kernel, h, x - f).0)
                .sum::<f64>()
                * inv_m
        })
        .collect();
    DensityVector::from_values_unchecked(grid, q)
}

/// Gradient of the KDE distance to `target` with respect to the design
/// variables; the samples' uncertainty values are held fixed.
pub fn kde_gradient(
    samples: &SampleResponses,
    grid: &QuadratureGrid,
    cfg: &KdeConfig,
    target: &DensityVector,
) -> Result<Vec<f64>> {
    kde_distance_and_gradient(samples, grid, cfg, target).map(|(_, g)| g)
}

/// Distance and gradient in one pass over the kernel sums.
pub fn kde_distance_and_gradient(
    samples: &SampleResponses,
    grid: &QuadratureGrid,
    cfg: &KdeConfig,
    target: &DensityVector,
) -> Result<(f64, Vec<f64>)> {
    check_samples(samples)?;
    let jac = samples.jacobian().ok_or(Error::MissingJacobian)?;
    if target.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let h = cfg.resolve_bandwidth(samples.values())?;
    let q = kde_with_bandwidth(samples.values(), grid, cfg.kernel, h);
    let d = distance(target, &q)?;

    // ρ_i = (t_i − q_i) w_i
    let rho: Vec<f64> = target
        .values()
        .iter()
        .zip(q.values())
        .zip(grid.weights())
        .map(|((t, q), w)| (t - q) * w)
        .collect();
    let inv_m = 1.0 / samples.len() as f64;
    let nodes = grid.nodes();
    // c_j = Σ_i ρ_i K′_ij
    let coeff: Vec<f64> = samples
        .values()
        .par_iter()
        .map(|&f| {
            nodes
                .iter()
                .zip(&rho)
                .map(|(&x, r)| r * kernel_and_derivative(cfg.kernel, h, x - f).1)
                .sum::<f64>()
                * inv_m
        })
        .collect();
    let mut grad = vec![0.0; jac.ncols()];
    for (c, row) in coeff.iter().zip(jac.rows()) {
        for (g, dfds) in grad.iter_mut().zip(row) {
            *g += c * dfds;
        }
    }
    grad.iter_mut().for_each(|g| *g *= 2.0);
    Ok((d, grad))
}
