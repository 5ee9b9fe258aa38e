//! Equispaced trapezoid grids and the discretized L2 distance.

use std::io::Write;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::output::fmt_f64;

#[derive(Debug, PartialEq)]
struct GridData {
    lower: f64,
    upper: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// `N` equispaced nodes on `[lower, upper]` with composite trapezoid weights.
///
/// Cloning is cheap; clones compare equal and are recognized as the same grid
/// by [`DensityVector`] operations.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    data: Arc<GridData>,
}

impl PartialEq for QuadratureGrid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.data, &other.data) || self.data == other.data
    }
}

impl QuadratureGrid {
    pub fn new(lower: f64, upper: f64, n_points: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return Err(invalid(
                "bounds",
                format!("grid bounds [{lower}, {upper}] must be finite with upper > lower"),
            ));
        }
        if n_points < 2 {
            return Err(invalid("n_points", format!("need at least 2 points, got {n_points}")));
        }
        let spacing = (upper - lower) / (n_points - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_points).map(|i| lower + spacing * i as f64).collect();
        nodes[n_points - 1] = upper;
        let mut weights = vec![spacing; n_points];
        weights[0] = 0.5 * spacing;
        weights[n_points - 1] = 0.5 * spacing;
        Ok(QuadratureGrid {
            data: Arc::new(GridData {
                lower,
                upper,
                nodes,
                weights,
            }),
        })
    }

    pub fn lower(&self) -> f64 {
        self.data.lower
    }

    pub fn upper(&self) -> f64 {
        self.data.upper
    }

    pub fn len(&self) -> usize {
        self.data.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nodes.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        (self.data.upper - self.data.lower) / (self.len() - 1) as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.data.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.data.weights
    }

    /// Trapezoid integral of values given at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values.iter().zip(self.weights()).map(|(v, w)| v * w).sum()
    }
}

/// Density values at the nodes of a [`QuadratureGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DensityVector {
    grid: QuadratureGrid,
    values: Vec<f64>,
}

impl DensityVector {
    pub fn new(grid: &QuadratureGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(invalid("density", format!("values must be nonnegative, found {v}")));
        }
        Ok(DensityVector {
            grid: grid.clone(),
            values,
        })
    }

    pub fn from_fn(grid: &QuadratureGrid, f: impl Fn(f64) -> f64) -> Self {
        DensityVector {
            grid: grid.clone(),
            values: grid.nodes().iter().map(|&x| f(x)).collect(),
        }
    }

    pub(crate) fn from_values_unchecked(grid: &QuadratureGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        DensityVector {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= factor);
        self
    }

    /// Quadrature mean and variance, normalized by the quadrature mass.
    pub fn moments(&self) -> crate::densities::Moments {
        let mass = self.integral();
        let nodes = self.grid.nodes();
        let weights = self.grid.weights();
        let mean = nodes
            .iter()
            .zip(weights)
            .zip(&self.values)
            .map(|((x, w), v)| x * w * v)
            .sum::<f64>()
            / mass;
        let variance = nodes
            .iter()
            .zip(weights)
            .zip(&self.values)
            .map(|((x, w), v)| (x - mean) * (x - mean) * w * v)
            .sum::<f64>()
            / mass;
        crate::densities::Moments { mean, variance }
    }

    /// Square root of the quadrature integral of the squared density.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.weights())
            .map(|(v, w)| v * v * w)
            .sum::<f64>()
            .sqrt()
    }

    /// Writes `node,value` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node,value")?;
        for (x, v) in self.grid.nodes().iter().zip(&self.values) {
            writeln!(out, "{},{}", fmt_f64(*x), fmt_f64(*v))?;
        }
        Ok(())
    }
}

/// Discretized squared L2 distance `Σ_i (t_i − r_i)² w_i`.
pub fn distance(target: &DensityVector, design: &DensityVector) -> Result<f64> {
    if target.grid != design.grid {
        return Err(Error::GridMismatch);
    }
    Ok(target
        .values
        .iter()
        .zip(&design.values)
        .zip(target.grid.weights())
        .map(|((t, r), w)| (t - r) * (t - r) * w)
        .sum())
}
