//! Monotonic density matching through a two-point linear surrogate.
//!
//! Two model evaluations at uncertainty states `u1 < u2` fix the surrogate
//! `Q ≈ a·U + b`. Because the surrogate is invertible, the qoi density is
//! available exactly from the input density by change of variables,
//!
//! ```text
//! r(f) = p((f − b) / a) / |a|     for (f − b) / a inside the support of p,
//! ```
//!
//! and zero otherwise. Its design sensitivities follow from the adjoint
//! sensitivities of the two states through `∂a/∂s` and `∂b/∂s`, with no
//! sampling and no kernel.

use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::densities::ScaledBeta;
use crate::error::{invalid, Error, Result};
use crate::output::fmt_f64;
use crate::quadrature::{distance, DensityVector, QuadratureGrid};

/// Qoi values and design sensitivities at two uncertainty states.
///
/// No ordering between `q1` and `q2` is imposed: increasing and decreasing
/// responses are both supported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStates {
    pub u1: f64,
    pub u2: f64,
    pub q1: f64,
    pub q2: f64,
    pub dq1_ds: Vec<f64>,
    pub dq2_ds: Vec<f64>,
}

/// Closed form used for the surrogate shift and its sensitivities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftFormula {
    /// `b = q2 − a·u2`, so the line passes through both states.
    #[default]
    Interpolating,
    /// `b = (u1·q2 − u2·q1) / (u2 − u1)`, the sign-flipped variant of the
    /// shift. Kept only to demonstrate that it fails the gradient checks.
    SignFlipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSurrogate {
    pub a: f64,
    pub b: f64,
    pub da_ds: Vec<f64>,
    pub db_ds: Vec<f64>,
}

impl LinearSurrogate {
    pub fn eval(&self, u: f64) -> f64 {
        self.a * u + self.b
    }

    /// Standardized variable `v = (f − b) / a`.
    pub fn inverse(&self, f: f64) -> f64 {
        (f - self.b) / self.a
    }

    /// Image of `[u_lo, u_hi]` as an ordered interval.
    pub fn image(&self, u_lo: f64, u_hi: f64) -> (f64, f64) {
        let (x, y) = (self.eval(u_lo), self.eval(u_hi));
        (x.min(y), x.max(y))
    }

    pub fn design_dim(&self) -> usize {
        self.da_ds.len()
    }
}

pub fn fit_surrogate(states: &SurrogateStates) -> Result<LinearSurrogate> {
    fit_surrogate_with(states, ShiftFormula::Interpolating)
}

pub fn fit_surrogate_with(states: &SurrogateStates, shift: ShiftFormula) -> Result<LinearSurrogate> {
    let SurrogateStates {
        u1,
        u2,
        q1,
        q2,
        ref dq1_ds,
        ref dq2_ds,
    } = *states;
    if !(u2 > u1) {
        return Err(invalid("u2", format!("states need u1 < u2, got u1={u1}, u2={u2}")));
    }
    if dq1_ds.len() != dq2_ds.len() {
        return Err(Error::DimensionMismatch {
            expected: dq1_ds.len(),
            found: dq2_ds.len(),
        });
    }
    let du = u2 - u1;
    let a = (q2 - q1) / du;
    let threshold = 1e-12 * q1.abs().max(q2.abs()).max(1.0) / du;
    if !(a.abs() > threshold) {
        return Err(Error::DegenerateSurrogate { slope: a, threshold });
    }
    let da_ds: Vec<f64> = dq1_ds.iter().zip(dq2_ds).map(|(d1, d2)| (d2 - d1) / du).collect();
    let (b, db_ds) = match shift {
        ShiftFormula::Interpolating => (
            q2 - a * u2,
            dq1_ds
                .iter()
                .zip(dq2_ds)
                .map(|(d1, d2)| (u2 * d1 - u1 * d2) / du)
                .collect(),
        ),
        ShiftFormula::SignFlipped => (
            (u1 * q2 - u2 * q1) / du,
            dq1_ds
                .iter()
                .zip(dq2_ds)
                .map(|(d1, d2)| (u1 * d2 - u2 * d1) / du)
                .collect(),
        ),
    };
    Ok(LinearSurrogate { a, b, da_ds, db_ds })
}

/// Exact qoi density on the grid: `r_i = p((f̄_i − b)/a) / |a|`.
pub fn derived_pdf(sur: &LinearSurrogate, p: &ScaledBeta, grid: &QuadratureGrid) -> DensityVector {
    let inv_abs_a = 1.0 / sur.a.abs();
    DensityVector::from_values_unchecked(
        grid,
        grid.nodes()
            .iter()
            .map(|&f| p.pdf(sur.inverse(f)) * inv_abs_a)
            .collect(),
    )
}

/// `N × n` matrix of derived-pdf design sensitivities `∂r_i/∂s_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    grid: QuadratureGrid,
    entries: Array2<f64>,
}

impl SensitivityMatrix {
    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.entries.column(k).to_vec()
    }

    /// Writes `node,ds_1,...,ds_n` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.entries.ncols()).map(|k| format!("ds_{k}")).collect();
        writeln!(out, "node,{}", header.join(","))?;
        for (x, row) in self.grid.nodes().iter().zip(self.entries.rows()) {
            let cols: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(out, "{},{}", fmt_f64(*x), cols.join(","))?;
        }
        Ok(())
    }
}

/// Derived-pdf design sensitivities at every grid node.
///
/// Rows for nodes outside the open image of the support are zero. Inside, the
/// entries are exact even where the input density derivative grows without
/// bound towards an endpoint (shapes in `(1, 2)`): near the endpoint `r → 0`
/// as fast as `D` grows, so the rows stay integrable and dropping them would
/// bias the gradient.
pub fn pdf_sensitivity(sur: &LinearSurrogate, p: &ScaledBeta, grid: &QuadratureGrid) -> SensitivityMatrix {
    let n = sur.design_dim();
    let a = sur.a;
    let a2 = a * a;
    let abs_a = a.abs();
    let mut entries = Array2::zeros((grid.len(), n));
    for (i, &f) in grid.nodes().iter().enumerate() {
        let v = sur.inverse(f);
        let Ok(dp) = p.pdf_derivative(v) else {
            continue;
        };
        let pv = p.pdf(v);
        for k in 0..n {
            let (da, db) = (sur.da_ds[k], sur.db_ds[k]);
            let dv = (-db * a - (f - sur.b) * da) / a2;
            entries[[i, k]] = -a.signum() / a2 * da * pv + dp * dv / abs_a;
        }
    }
    SensitivityMatrix {
        grid: grid.clone(),
        entries,
    }
}

/// Distance `d = (t − r)ᵀ W (t − r)` and its gradient `∇_s d`.
///
/// Since `D = ∂r/∂s`, the gradient is `−2 (t − r)ᵀ W D`.
pub fn distance_and_gradient(
    sur: &LinearSurrogate,
    p: &ScaledBeta,
    grid: &QuadratureGrid,
    target: &DensityVector,
) -> Result<(f64, Vec<f64>)> {
    if target.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let r = derived_pdf(sur, p, grid);
    let d = distance(target, &r)?;
    let sens = pdf_sensitivity(sur, p, grid);
    let mut grad = vec![0.0; sur.design_dim()];
    for (((t, r), w), row) in target
        .values()
        .iter()
        .zip(r.values())
        .zip(grid.weights())
        .zip(sens.entries.rows())
    {
        let c = 2.0 * (r - t) * w;
        if c == 0.0 {
            continue;
        }
        for (g, drds) in grad.iter_mut().zip(row) {
            *g += c * drds;
        }
    }
    Ok((d, grad))
}
