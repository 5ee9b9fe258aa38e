//! Gradient-based minimization of the density-matching distance.
//!
//! One *function call* is one objective evaluation. For the monotonic
//! formulation that is two model evaluations (with their adjoints) at the
//! bounding uncertainty states, which may run concurrently. Line-search
//! probes are function calls too and count against the budget.

use std::io::Write;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::densities::ScaledBeta;
use crate::error::{Error, Result};
use crate::kde_matching::{kde_distance_and_gradient, KdeConfig, Kernel, SampleResponses};
use crate::models::{DesignBounds, UncertainModel};
use crate::monotonic_matching::{
    distance_and_gradient, fit_surrogate_with, LinearSurrogate, ShiftFormula, SurrogateStates,
};
use crate::output::fmt_f64;
use crate::quadrature::{DensityVector, QuadratureGrid};

/// Everything produced by one function call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationRecord {
    pub s: Vec<f64>,
    pub distance: f64,
    pub gradient: Vec<f64>,
    /// States and fitted surrogate; absent for the kernel formulation.
    pub states: Option<SurrogateStates>,
    pub surrogate: Option<LinearSurrogate>,
}

/// A differentiable distance over the design space.
pub trait DesignObjective: Sync {
    fn design_dim(&self) -> usize;

    fn bounds(&self) -> Option<&DesignBounds>;

    fn evaluate(&self, s: &[f64]) -> Result<EvaluationRecord>;
}

/// Monotonic formulation: surrogate through the model at `U_L` and `U_U`.
pub struct MonotonicObjective<'a, M: UncertainModel + ?Sized> {
    pub model: &'a M,
    pub input: ScaledBeta,
    pub grid: QuadratureGrid,
    pub target: DensityVector,
    pub shift: ShiftFormula,
}

impl<'a, M: UncertainModel + ?Sized> MonotonicObjective<'a, M> {
    pub fn new(model: &'a M, input: ScaledBeta, target: DensityVector) -> Self {
        MonotonicObjective {
            model,
            input,
            grid: target.grid().clone(),
            target,
            shift: ShiftFormula::Interpolating,
        }
    }

    pub fn with_shift(mut self, shift: ShiftFormula) -> Self {
        self.shift = shift;
        self
    }

    /// Evaluates the model at both bounding states, concurrently.
    pub fn states(&self, s: &[f64]) -> Result<SurrogateStates> {
        let (u1, u2) = self.model.uncertainty_bounds();
        let (e1, e2) = rayon::join(|| self.model.evaluate(s, u1), || self.model.evaluate(s, u2));
        let (e1, e2) = (e1?, e2?);
        Ok(SurrogateStates {
            u1,
            u2,
            q1: e1.q,
            q2: e2.q,
            dq1_ds: e1.dq_ds,
            dq2_ds: e2.dq_ds,
        })
    }

    pub fn surrogate(&self, s: &[f64]) -> Result<LinearSurrogate> {
        fit_surrogate_with(&self.states(s)?, self.shift)
    }
}

impl<M: UncertainModel + ?Sized> DesignObjective for MonotonicObjective<'_, M> {
    fn design_dim(&self) -> usize {
        self.model.design_dim()
    }

    fn bounds(&self) -> Option<&DesignBounds> {
        self.model.design_bounds()
    }

    fn evaluate(&self, s: &[f64]) -> Result<EvaluationRecord> {
        let states = self.states(s)?;
        let sur = fit_surrogate_with(&states, self.shift)?;
        let (distance, gradient) = distance_and_gradient(&sur, &self.input, &self.grid, &self.target)?;
        Ok(EvaluationRecord {
            s: s.to_vec(),
            distance,
            gradient,
            states: Some(states),
            surrogate: Some(sur),
        })
    }
}

/// Kernel formulation over frozen uncertainty samples with a fixed bandwidth.
pub struct KdeObjective<'a, M: UncertainModel + ?Sized> {
    pub model: &'a M,
    pub uncertainty_samples: Vec<f64>,
    pub bandwidth: f64,
    pub grid: QuadratureGrid,
    pub target: DensityVector,
}

impl<M: UncertainModel + ?Sized> KdeObjective<'_, M> {
    /// Qoi values and design jacobian at the frozen samples.
    pub fn responses(&self, s: &[f64]) -> Result<SampleResponses> {
        self.model.check_design(s)?;
        let n = self.model.design_dim();
        let mut values = Vec::with_capacity(self.uncertainty_samples.len());
        let mut jac = Array2::zeros((self.uncertainty_samples.len(), n));
        for (j, &u) in self.uncertainty_samples.iter().enumerate() {
            let e = self.model.evaluate(s, u)?;
            values.push(e.q);
            jac.row_mut(j).assign(&Array1::from(e.dq_ds));
        }
        SampleResponses::with_jacobian(values, jac)
    }
}

impl<M: UncertainModel + ?Sized> DesignObjective for KdeObjective<'_, M> {
    fn design_dim(&self) -> usize {
        self.model.design_dim()
    }

    fn bounds(&self) -> Option<&DesignBounds> {
        self.model.design_bounds()
    }

    fn evaluate(&self, s: &[f64]) -> Result<EvaluationRecord> {
        let responses = self.responses(s)?;
        let cfg = KdeConfig {
            bandwidth: crate::kde_matching::Bandwidth::Fixed(self.bandwidth),
            kernel: Kernel::Gaussian,
        };
        let (distance, gradient) = kde_distance_and_gradient(&responses, &self.grid, &cfg, &self.target)?;
        Ok(EvaluationRecord {
            s: s.to_vec(),
            distance,
            gradient,
            states: None,
            surrogate: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    QuasiNewtonBfgs,
    /// Projected gradient steps with Barzilai-Borwein scaling.
    SteepestDescent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_function_calls: usize,
    /// Terminate once an accepted (or attempted) step is shorter than this.
    pub design_tolerance: f64,
    pub gradient_tolerance: f64,
    /// Backtracking factor applied to the step after a failed probe.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    /// Cap on the length of steps taken before curvature is known.
    pub max_initial_step: f64,
    pub method: Method,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_function_calls: 40,
            design_tolerance: 1e-5,
            gradient_tolerance: 1e-10,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_initial_step: 1.0,
            method: Method::QuasiNewtonBfgs,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::invalid;
        if self.max_function_calls < 1 {
            return Err(invalid("max_function_calls", "must be at least 1"));
        }
        if !(self.design_tolerance > 0.0) {
            return Err(invalid("design_tolerance", "must be > 0"));
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err(invalid("gradient_tolerance", "must be >= 0"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("shrink", "must lie in (0, 1)"));
        }
        if !(self.sufficient_decrease > 0.0 && self.sufficient_decrease < 1.0) {
            return Err(invalid("sufficient_decrease", "must lie in (0, 1)"));
        }
        if !(self.max_initial_step > 0.0) {
            return Err(invalid("max_initial_step", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub call: usize,
    pub s: Vec<f64>,
    pub distance: f64,
    pub normalized_distance: f64,
    /// Norm of the gradient with components pushing into an active bound removed.
    pub gradient_norm: f64,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "reason", content = "detail")]
pub enum Termination {
    BudgetExhausted,
    StepTolerance,
    GradientTolerance,
    ObjectiveError(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub records: Vec<CallRecord>,
    pub termination: Termination,
    /// Best accepted design and its raw distance.
    pub best_s: Vec<f64>,
    pub best_distance: f64,
}

impl RunTrace {
    pub fn function_calls(&self) -> usize {
        self.records.len()
    }

    pub fn final_normalized_distance(&self) -> f64 {
        self.records
            .iter()
            .rfind(|r| r.accepted)
            .map_or(f64::NAN, |r| r.normalized_distance)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace is serializable")
    }

    /// Writes `call,normalized_distance,gradient_norm` rows with a header line.
    pub fn write_convergence_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "call,normalized_distance,gradient_norm")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{}",
                r.call,
                fmt_f64(r.normalized_distance),
                fmt_f64(r.gradient_norm)
            )?;
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zeroes gradient components that point out of the box at active bounds.
fn projected_gradient(bounds: Option<&DesignBounds>, s: &[f64], g: &[f64]) -> Vec<f64> {
    let Some(b) = bounds else {
        return g.to_vec();
    };
    s.iter()
        .zip(g)
        .zip(b.lower().iter().zip(b.upper()))
        .map(|((&x, &gk), (&lo, &hi))| {
            if (x <= lo && gk > 0.0) || (x >= hi && gk < 0.0) {
                0.0
            } else {
                gk
            }
        })
        .collect()
}

struct Recorder {
    records: Vec<CallRecord>,
    first_distance: Option<f64>,
    budget: usize,
}

impl Recorder {
    fn exhausted(&self) -> bool {
        self.records.len() >= self.budget
    }

    fn push(&mut self, rec: &EvaluationRecord, projected: &[f64], accepted: bool) {
        let raw0 = *self.first_distance.get_or_insert(rec.distance);
        let normalized = if self.records.is_empty() || !(raw0 > 0.0) {
            if self.records.is_empty() {
                1.0
            } else {
                rec.distance
            }
        } else {
            rec.distance / raw0
        };
        self.records.push(CallRecord {
            call: self.records.len() + 1,
            s: rec.s.clone(),
            distance: rec.distance,
            normalized_distance: normalized,
            gradient_norm: norm(projected),
            a: rec.surrogate.as_ref().map(|s| s.a),
            b: rec.surrogate.as_ref().map(|s| s.b),
            accepted,
        });
    }

    fn finish(self, termination: Termination, best: Option<(Vec<f64>, f64)>) -> RunTrace {
        let (best_s, best_distance) = best.unwrap_or((Vec::new(), f64::NAN));
        RunTrace {
            records: self.records,
            termination,
            best_s,
            best_distance,
        }
    }
}

/// Projected quasi-Newton (or scaled steepest-descent) minimization with an
/// Armijo backtracking line search. The raw distance is minimized; the
/// normalized values in the trace are for presentation.
pub fn minimize(objective: &dyn DesignObjective, s0: &[f64], cfg: &OptimizerConfig) -> Result<RunTrace> {
    cfg.validate()?;
    let n = objective.design_dim();
    if s0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: s0.len(),
        });
    }
    let bounds = objective.bounds();
    let mut x = s0.to_vec();
    if let Some(b) = bounds {
        b.project(&mut x);
    }
    let mut rec = Recorder {
        records: Vec::new(),
        first_distance: None,
        budget: cfg.max_function_calls,
    };

    let current = match objective.evaluate(&x) {
        Ok(r) => r,
        Err(e) => return Ok(rec.finish(Termination::ObjectiveError(e.to_string()), None)),
    };
    let mut f = current.distance;
    let mut g = current.gradient.clone();
    let mut gp = projected_gradient(bounds, &x, &g);
    rec.push(&current, &gp, true);

    // Inverse Hessian approximation; `None` until the first curvature pair.
    let mut inv_hess: Option<Array2<f64>> = None;

    let termination = loop {
        if norm(&gp) < cfg.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if rec.exhausted() {
            break Termination::BudgetExhausted;
        }

        let mut dir: Vec<f64> = match &inv_hess {
            Some(h) => h.dot(&Array1::from(gp.clone())).iter().map(|v| -v).collect(),
            None => {
                let scale = (cfg.max_initial_step / norm(&gp)).min(1.0);
                gp.iter().map(|v| -v * scale).collect()
            }
        };
        // Freeze variables held at a bound.
        for (d, gk) in dir.iter_mut().zip(&gp) {
            if *gk == 0.0 {
                *d = 0.0;
            }
        }
        if dot(&dir, &gp) >= 0.0 {
            inv_hess = None;
            let scale = (cfg.max_initial_step / norm(&gp)).min(1.0);
            dir = gp.iter().map(|v| -v * scale).collect();
        }

        let mut step_len = 1.0;
        let accepted = loop {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step_len * di).collect();
            if let Some(b) = bounds {
                b.project(&mut trial);
            }
            let step: Vec<f64> = trial.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            if norm(&step) < cfg.design_tolerance {
                break None;
            }
            if rec.exhausted() {
                break None;
            }
            let probe = match objective.evaluate(&trial) {
                Ok(r) => r,
                Err(e) => {
                    let best = Some((x.clone(), f));
                    return Ok(rec.finish(Termination::ObjectiveError(e.to_string()), best));
                }
            };
            let ok = probe.distance <= f + cfg.sufficient_decrease * dot(&g, &step);
            let probe_gp = projected_gradient(bounds, &trial, &probe.gradient);
            rec.push(&probe, &probe_gp, ok);
            if ok {
                break Some((probe, probe_gp, step));
            }
            step_len *= cfg.shrink;
        };

        let Some((probe, probe_gp, step)) = accepted else {
            break if rec.exhausted() {
                Termination::BudgetExhausted
            } else {
                Termination::StepTolerance
            };
        };

        let y: Vec<f64> = probe.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-12 * norm(&step) * norm(&y) && sy > 0.0 {
            let rho = 1.0 / sy;
            let scale = sy / dot(&y, &y);
            match cfg.method {
                Method::SteepestDescent => {
                    inv_hess = Some(Array2::eye(n) * scale);
                }
                Method::QuasiNewtonBfgs => {
                    let h = inv_hess.take().unwrap_or_else(|| Array2::eye(n) * scale);
                    let s_vec = Array1::from(step.clone());
                    let y_vec = Array1::from(y);
                    let hy = h.dot(&y_vec);
                    let yhy = y_vec.dot(&hy);
                    // H⁺ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
                    let mut next = h.clone();
                    for i in 0..n {
                        for j in 0..n {
                            next[[i, j]] += -rho * (hy[i] * s_vec[j] + s_vec[i] * hy[j])
                                + (rho * rho * yhy + rho) * s_vec[i] * s_vec[j];
                        }
                    }
                    inv_hess = Some(next);
                }
            }
        }

        x = probe.s.clone();
        f = probe.distance;
        g = probe.gradient;
        gp = probe_gp;

        if norm(&step) < cfg.design_tolerance {
            break Termination::StepTolerance;
        }
    };

    Ok(rec.finish(termination, Some((x, f))))
}

/// Monotonic run of the workflow: model, input density, grid-resident target.
pub fn minimize_monotonic<M: UncertainModel + ?Sized>(
    model: &M,
    s0: &[f64],
    input: ScaledBeta,
    target: &DensityVector,
    cfg: &OptimizerConfig,
) -> Result<RunTrace> {
    let objective = MonotonicObjective::new(model, input, target.clone());
    minimize(&objective, s0, cfg)
}
