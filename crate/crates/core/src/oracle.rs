//! Independent verification machinery: Monte-Carlo propagation, histogram
//! densities and central finite differences.
//!
//! Nothing here calls into the analytic gradient code it is used to check.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::densities::ScaledBeta;
use crate::error::{invalid, Error, Result};
use crate::models::UncertainModel;
use crate::output::fmt_f64;
use crate::quadrature::DensityVector;

/// Qoi at `n` uncertainty draws from `p`, deterministic per seed.
pub fn mc_propagate<M: UncertainModel + ?Sized>(
    model: &M,
    s: &[f64],
    p: &ScaledBeta,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(invalid("n_samples", "need at least one sample"));
    }
    model.check_design(s)?;
    p.sample(n, seed)
        .par_iter()
        .map(|&u| model.evaluate(s, u).map(|e| e.q))
        .collect()
}

/// Sample mean and unbiased variance.
pub fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Equal-width histogram normalized to unit mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub densities: Vec<f64>,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.densities.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn mass(&self) -> f64 {
        (0..self.n_bins()).map(|i| self.densities[i] * self.width(i)).sum()
    }

    /// Writes `edge_lo,edge_hi,density` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "edge_lo,edge_hi,density")?;
        for (w, d) in self.edges.windows(2).zip(&self.densities) {
            writeln!(out, "{},{},{}", fmt_f64(w[0]), fmt_f64(w[1]), fmt_f64(*d))?;
        }
        Ok(())
    }
}

/// Histogram with `n_bins` equal bins spanning the sample range.
pub fn histogram_density(samples: &[f64], n_bins: usize) -> Result<Histogram> {
    if samples.len() < 2 {
        return Err(invalid("samples", "need at least 2 samples"));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::ZeroSpread);
    }
    histogram_on_range(samples, lo, hi, n_bins)
}

/// Histogram on fixed bins over `[lo, hi]`; samples outside are dropped
/// before normalizing.
pub fn histogram_on_range(samples: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(invalid("n_bins", "need at least one bin"));
    }
    if !(hi > lo) {
        return Err(invalid("range", format!("empty histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / n_bins as f64;
    let mut edges: Vec<f64> = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    edges[n_bins] = hi;
    let mut counts = vec![0usize; n_bins];
    for &x in samples {
        if !(x >= lo && x <= hi) {
            continue;
        }
        let i = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[i] += 1;
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(invalid("samples", "no samples inside the histogram range"));
    }
    let densities = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| c as f64 / (total as f64 * (edges[i + 1] - edges[i])))
        .collect();
    Ok(Histogram { edges, densities })
}

/// `Σ_b (h_b − g_b)² · width_b` between a histogram and per-bin values.
pub fn histogram_l2(h: &Histogram, other: &[f64]) -> f64 {
    (0..h.n_bins())
        .map(|i| {
            let d = h.densities[i] - other[i];
            d * d * h.width(i)
        })
        .sum()
}

/// Central-difference gradient with per-coordinate step `step·max(1, |s_k|)`.
pub fn finite_diff_gradient<F>(objective: F, s: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(invalid("step", format!("must be > 0, got {step}")));
    }
    let mut probe = s.to_vec();
    let mut grad = Vec::with_capacity(s.len());
    for k in 0..s.len() {
        let h = step * s[k].abs().max(1.0);
        probe[k] = s[k] + h;
        let plus = objective(&probe)?;
        probe[k] = s[k] - h;
        let minus = objective(&probe)?;
        probe[k] = s[k];
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Components whose analytic magnitude is below this are not compared.
pub const MASK_BELOW: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Componentwise relative error of `numeric` against `analytic`.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tolerance: f64) -> GradientCheck {
    let mut max_relative_error = analytic
        .iter()
        .zip(numeric)
        .filter(|(a, _)| a.abs() >= MASK_BELOW)
        .map(|(a, n)| ((a - n) / a).abs())
        .fold(0.0, f64::max);
    // A masked analytic component must still be matched in absolute terms.
    let masked_ok = analytic
        .iter()
        .zip(numeric)
        .filter(|(a, _)| a.abs() < MASK_BELOW)
        .all(|(_, n)| n.abs() < 1e-8);
    if !masked_ok {
        max_relative_error = f64::INFINITY;
    }
    let passed = analytic.len() == numeric.len()
        && masked_ok
        && max_relative_error.is_finite()
        && max_relative_error <= tolerance;
    GradientCheck {
        analytic: analytic.to_vec(),
        numeric: numeric.to_vec(),
        max_relative_error,
        tolerance,
        passed,
    }
}

/// Slope and intercept of the line through `(u1, q1)` and `(u2, q2)`.
pub fn line_through(u1: f64, q1: f64, u2: f64, q2: f64) -> (f64, f64) {
    let a = (q2 - q1) / (u2 - u1);
    (a, q1 - a * u1)
}

/// Monotonic distance at `s`, recomputed from raw model outputs with an
/// independent line fit and change of variables.
pub fn monotonic_distance<M: UncertainModel + ?Sized>(
    model: &M,
    s: &[f64],
    p: &ScaledBeta,
    target: &DensityVector,
) -> Result<f64> {
    let (u1, u2) = model.uncertainty_bounds();
    let q1 = model.evaluate(s, u1)?.q;
    let q2 = model.evaluate(s, u2)?.q;
    let (a, b) = line_through(u1, q1, u2, q2);
    let grid = target.grid();
    Ok(grid
        .nodes()
        .iter()
        .zip(grid.weights())
        .zip(target.values())
        .map(|((&f, &w), &t)| {
            let r = p.pdf((f - b) / a) / a.abs();
            (t - r) * (t - r) * w
        })
        .sum())
}
