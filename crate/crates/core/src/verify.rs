//! Oracle suite: every analytic quantity of the monotonic and kernel
//! formulations checked against an independent route.

use serde::Serialize;

use crate::densities::ScaledBeta;
use crate::error::Result;
use crate::kde_matching::{kde_distance_and_gradient, kde_estimate, silverman_bandwidth, KdeConfig};
use crate::models::UncertainModel;
use crate::monotonic_matching::{derived_pdf, distance_and_gradient, pdf_sensitivity, LinearSurrogate, ShiftFormula};
use crate::optimizer::{KdeObjective, MonotonicObjective};
use crate::oracle::{
    compare_gradients, finite_diff_gradient, histogram_l2, histogram_on_range, line_through, mc_propagate,
    monotonic_distance, sample_moments, Histogram, MASK_BELOW,
};
use crate::quadrature::{distance, DensityVector, QuadratureGrid};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured quantity (an error, ratio or deviation, per check).
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &str, value: f64, threshold: f64, detail: String) -> Self {
        CheckResult {
            name: name.to_string(),
            passed: value.is_finite() && value <= threshold,
            value,
            threshold,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
    /// Monte-Carlo histogram behind the density comparison.
    #[serde(skip)]
    pub histogram: Option<Histogram>,
}

impl VerifyReport {
    pub fn new(checks: Vec<CheckResult>) -> Self {
        let all_passed = checks.iter().all(|c| c.passed);
        VerifyReport {
            checks,
            all_passed,
            histogram: None,
        }
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifySettings {
    pub fd_step: f64,
    /// Replaces the tolerance of every finite-difference check when set.
    pub fd_tolerance_override: Option<f64>,
    pub sensitivity_tolerance: f64,
    pub sensitivity_norm: SensitivityNorm,
    pub gradient_tolerance: f64,
    pub kde_gradient_tolerance: f64,
    pub kde_samples: usize,
    pub mc_samples: usize,
    pub histogram_bins: usize,
    pub normalization_tolerance: f64,
    pub quadrature_moment_tolerance: f64,
    /// Allowed number of standard errors for Monte-Carlo moment identities.
    pub standard_errors: f64,
    /// Allowed multiple of the histogram self-noise.
    pub noise_multiple: f64,
    pub seed: u64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            fd_step: 1e-5,
            fd_tolerance_override: None,
            sensitivity_tolerance: 1e-5,
            sensitivity_norm: SensitivityNorm::Columnwise,
            gradient_tolerance: 1e-5,
            kde_gradient_tolerance: 1e-4,
            kde_samples: 10_000,
            mc_samples: 1_000_000,
            histogram_bins: 200,
            normalization_tolerance: 1e-3,
            quadrature_moment_tolerance: 1e-3,
            standard_errors: 3.0,
            noise_multiple: 3.0,
            seed: 0,
        }
    }
}

impl VerifySettings {
    fn fd_tol(&self, default: f64) -> f64 {
        self.fd_tolerance_override.unwrap_or(default)
    }
}

/// A monotonic matching problem at a fixed design.
pub struct Problem<'a> {
    pub model: &'a dyn UncertainModel,
    pub design: Vec<f64>,
    pub input: ScaledBeta,
    pub target: DensityVector,
    pub shift: ShiftFormula,
}

impl Problem<'_> {
    pub fn grid(&self) -> &QuadratureGrid {
        self.target.grid()
    }

    fn objective(&self) -> MonotonicObjective<'_, dyn UncertainModel + '_> {
        MonotonicObjective::new(self.model, self.input, self.target.clone()).with_shift(self.shift)
    }

    pub fn surrogate(&self) -> Result<LinearSurrogate> {
        self.objective().surrogate(&self.design)
    }
}

/// How sensitivity errors are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityNorm {
    /// Each entry relative to itself; entries below [`MASK_BELOW`] must be
    /// matched in absolute terms.
    Pointwise,
    /// Each entry relative to the largest entry of its column. Difference
    /// noise is set by the scale of the pdf, so pointwise errors of small
    /// entries (sign changes, weakly coupled design variables) mostly
    /// measure that noise.
    Columnwise,
}

/// Maximum relative error between the analytic sensitivity columns and
/// central differences of the derived pdf through the model, over nodes at
/// least two spacings inside the image.
pub fn sensitivity_fd_error(problem: &Problem, step: f64, norm: SensitivityNorm) -> Result<(f64, usize)> {
    let sur = problem.surrogate()?;
    let grid = problem.grid();
    let sens = pdf_sensitivity(&sur, &problem.input, grid);
    let (u1, u2) = problem.model.uncertainty_bounds();
    let (lo, hi) = {
        let (u_lo, u_hi) = (problem.input.lower(), problem.input.upper());
        // The true line through the states, not the (possibly flipped) fit.
        let e1 = problem.model.evaluate(&problem.design, u1)?.q;
        let e2 = problem.model.evaluate(&problem.design, u2)?.q;
        let (a, b) = line_through(u1, e1, u2, e2);
        let (x, y) = (a * u_lo + b, a * u_hi + b);
        (x.min(y), x.max(y))
    };
    let margin = 2.0 * grid.spacing();
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&i| grid.nodes()[i] - margin > lo && grid.nodes()[i] + margin < hi)
        .collect();
    let pdf_at = |s: &[f64]| -> Result<Vec<f64>> {
        let q1 = problem.model.evaluate(s, u1)?.q;
        let q2 = problem.model.evaluate(s, u2)?.q;
        let (a, b) = line_through(u1, q1, u2, q2);
        Ok(nodes
            .iter()
            .map(|&i| problem.input.pdf((grid.nodes()[i] - b) / a) / a.abs())
            .collect())
    };
    let mut worst = 0.0_f64;
    for k in 0..problem.design.len() {
        let h = step * problem.design[k].abs().max(1.0);
        let mut plus = problem.design.clone();
        plus[k] += h;
        let mut minus = problem.design.clone();
        minus[k] -= h;
        let (rp, rm) = (pdf_at(&plus)?, pdf_at(&minus)?);
        let scale = match norm {
            SensitivityNorm::Pointwise => 0.0,
            SensitivityNorm::Columnwise => sens.column(k).iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        };
        for (j, &i) in nodes.iter().enumerate() {
            let fd = (rp[j] - rm[j]) / (2.0 * h);
            let an = sens.entries()[[i, k]];
            let denom = an.abs().max(scale);
            if denom < MASK_BELOW {
                if fd.abs() >= 1e-8 {
                    worst = f64::INFINITY;
                }
                continue;
            }
            worst = worst.max((fd - an).abs() / denom);
        }
    }
    Ok((worst, nodes.len()))
}

/// End-to-end gradient check of the monotonic distance.
pub fn monotonic_gradient_check(problem: &Problem, step: f64, tolerance: f64) -> Result<crate::oracle::GradientCheck> {
    let sur = problem.surrogate()?;
    let (_, grad) = distance_and_gradient(&sur, &problem.input, problem.grid(), &problem.target)?;
    let fd = finite_diff_gradient(
        |s| monotonic_distance(problem.model, s, &problem.input, &problem.target),
        &problem.design,
        step,
    )?;
    Ok(compare_gradients(&grad, &fd, tolerance))
}

/// Gradient check of the kernel formulation with frozen samples and a fixed
/// bandwidth (Silverman's rule at the checked design).
pub fn kde_gradient_check(
    problem: &Problem,
    n_samples: usize,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<crate::oracle::GradientCheck> {
    let mut objective = KdeObjective {
        model: problem.model,
        uncertainty_samples: problem.input.sample(n_samples, seed),
        bandwidth: 1.0,
        grid: problem.grid().clone(),
        target: problem.target.clone(),
    };
    let responses = objective.responses(&problem.design)?;
    objective.bandwidth = silverman_bandwidth(responses.values())?;
    let cfg = KdeConfig::fixed(objective.bandwidth);
    let (_, grad) = kde_distance_and_gradient(&responses, problem.grid(), &cfg, &problem.target)?;
    let fd = finite_diff_gradient(
        |s| {
            let r = objective.responses(s)?;
            distance(&problem.target, &kde_estimate(&r, problem.grid(), &cfg)?)
        },
        &problem.design,
        step,
    )?;
    Ok(compare_gradients(&grad, &fd, tolerance))
}

/// Runs the full suite at the problem's design.
pub fn run_suite(problem: &Problem, settings: &VerifySettings) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let sur = problem.surrogate()?;
    let grid = problem.grid();
    let p = &problem.input;
    let (u1, u2) = problem.model.uncertainty_bounds();
    let e1 = problem.model.evaluate(&problem.design, u1)?;
    let e2 = problem.model.evaluate(&problem.design, u2)?;

    let miss =
        ((sur.eval(u1) - e1.q).abs() / e1.q.abs().max(1.0)).max((sur.eval(u2) - e2.q).abs() / e2.q.abs().max(1.0));
    checks.push(CheckResult::at_most(
        "surrogate_interpolates_states",
        miss,
        1e-10,
        format!("a = {}, b = {}", sur.a, sur.b),
    ));

    let (img_lo, img_hi) = sur.image(p.lower(), p.upper());
    let r = derived_pdf(&sur, p, grid);
    let covered = grid.lower() <= img_lo && grid.upper() >= img_hi;
    let mass_err = if covered {
        (r.integral() - 1.0).abs()
    } else {
        f64::INFINITY
    };
    checks.push(CheckResult::at_most(
        "derived_pdf_normalization",
        mass_err,
        settings.normalization_tolerance,
        format!(
            "image [{img_lo}, {img_hi}] on grid [{}, {}]",
            grid.lower(),
            grid.upper()
        ),
    ));

    let m = p.moments();
    let mean_exact = sur.a * m.mean + sur.b;
    let var_exact = sur.a * sur.a * m.variance;
    let qm = r.moments();
    let quad_err = if covered {
        ((qm.mean - mean_exact) / mean_exact.abs().max(f64::MIN_POSITIVE))
            .abs()
            .max(((qm.variance - var_exact) / var_exact).abs())
    } else {
        f64::INFINITY
    };
    checks.push(CheckResult::at_most(
        "quadrature_moments",
        quad_err,
        settings.quadrature_moment_tolerance,
        format!("quadrature mean {} variance {}", qm.mean, qm.variance),
    ));

    let (sens_err, sens_nodes) = sensitivity_fd_error(problem, settings.fd_step, settings.sensitivity_norm)?;
    checks.push(CheckResult::at_most(
        "sensitivity_fd",
        sens_err,
        settings.fd_tol(settings.sensitivity_tolerance),
        format!("{sens_nodes} interior nodes, {:?} errors", settings.sensitivity_norm),
    ));

    let grad = monotonic_gradient_check(problem, settings.fd_step, settings.fd_tol(settings.gradient_tolerance))?;
    checks.push(CheckResult::at_most(
        "monotonic_gradient_fd",
        grad.max_relative_error,
        grad.tolerance,
        format!("analytic {:?} numeric {:?}", grad.analytic, grad.numeric),
    ));
    if !grad.passed {
        checks.last_mut().unwrap().passed = false;
    }

    let kde = kde_gradient_check(
        problem,
        settings.kde_samples,
        settings.seed,
        settings.fd_step,
        settings.fd_tol(settings.kde_gradient_tolerance),
    )?;
    checks.push(CheckResult::at_most(
        "kde_gradient_fd",
        kde.max_relative_error,
        kde.tolerance,
        format!("analytic {:?} numeric {:?}", kde.analytic, kde.numeric),
    ));
    if !kde.passed {
        checks.last_mut().unwrap().passed = false;
    }

    let n = settings.mc_samples;
    let qs = mc_propagate(problem.model, &problem.design, p, n, settings.seed)?;
    let (mc_mean, mc_var) = sample_moments(&qs);
    let se_mean = (mc_var / n as f64).sqrt();
    checks.push(CheckResult::at_most(
        "mc_mean_identity",
        (mc_mean - mean_exact).abs() / se_mean,
        settings.standard_errors,
        format!("sample mean {mc_mean}, a E[U] + b = {mean_exact}"),
    ));
    let m4 = qs.iter().map(|q| (q - mc_mean).powi(4)).sum::<f64>() / n as f64;
    let se_var = ((m4 - mc_var * mc_var) / n as f64).sqrt();
    checks.push(CheckResult::at_most(
        "mc_variance_identity",
        (mc_var - var_exact).abs() / se_var,
        settings.standard_errors,
        format!("sample variance {mc_var}, a² Var[U] = {var_exact}"),
    ));

    let (h_lo, h_hi) = qs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &q| {
        (lo.min(q), hi.max(q))
    });
    let bins = settings.histogram_bins;
    let hist = histogram_on_range(&qs, h_lo, h_hi, bins)?;
    let centers = hist.centers();
    let r_centers: Vec<f64> = centers.iter().map(|&c| p.pdf(sur.inverse(c)) / sur.a.abs()).collect();
    let l2 = histogram_l2(&hist, &r_centers);
    // Two half-sample histograms differ by about four times the noise of
    // the full-sample histogram.
    let (first, second) = qs.split_at(n / 2);
    let h1 = histogram_on_range(first, h_lo, h_hi, bins)?;
    let h2 = histogram_on_range(second, h_lo, h_hi, bins)?;
    let self_noise = histogram_l2(&h1, &h2.densities) / 4.0;
    checks.push(CheckResult::at_most(
        "histogram_vs_derived_pdf",
        l2 / self_noise,
        settings.noise_multiple,
        format!("L2 {l2:e}, self-noise {self_noise:e}"),
    ));

    let mut report = VerifyReport::new(checks);
    report.histogram = Some(hist);
    Ok(report)
}
