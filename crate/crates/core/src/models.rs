//! Uncertain models: qoi plus adjoint-style design sensitivities at a given
//! design and uncertainty state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Qoi and its gradient with respect to the design variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub q: f64,
    pub dq_ds: Vec<f64>,
}

/// Per-variable box constraints on the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl DesignBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u >= l)) {
            return Err(invalid("bounds", "every lower bound must not exceed its upper bound"));
        }
        Ok(DesignBounds { lower, upper })
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn check(&self, s: &[f64]) -> Result<()> {
        for (index, ((&value, &lower), &upper)) in s.iter().zip(&self.lower).zip(&self.upper).enumerate() {
            if !(value >= lower && value <= upper) {
                return Err(Error::DesignOutOfBounds {
                    index,
                    value,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }

    pub fn project(&self, s: &mut [f64]) {
        for ((v, l), u) in s.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

/// Stand-in for a flow solve followed by its adjoint solve.
///
/// Implementations must be deterministic and monotonic in the uncertainty
/// over [`uncertainty_bounds`](UncertainModel::uncertainty_bounds) at every
/// admissible design.
pub trait UncertainModel: Send + Sync {
    fn name(&self) -> &str;

    fn design_dim(&self) -> usize;

    /// `[U_L, U_U]`, the range of the scalar uncertainty.
    fn uncertainty_bounds(&self) -> (f64, f64);

    fn design_bounds(&self) -> Option<&DesignBounds> {
        None
    }

    /// Evaluates without validating the inputs.
    fn evaluate_unchecked(&self, s: &[f64], u: f64) -> ModelEvaluation;

    fn evaluate(&self, s: &[f64], u: f64) -> Result<ModelEvaluation> {
        self.check_design(s)?;
        let (lower, upper) = self.uncertainty_bounds();
        if !(u >= lower && u <= upper) {
            return Err(Error::UncertaintyOutOfBounds { value: u, lower, upper });
        }
        Ok(self.evaluate_unchecked(s, u))
    }

    fn check_design(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.design_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.design_dim(),
                found: s.len(),
            });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(invalid("design", "design variables must be finite"));
        }
        match self.design_bounds() {
            Some(b) => b.check(s),
            None => Ok(()),
        }
    }
}

/// One-variable linear model interpolating between two states,
///
/// ```text
/// Q(s, U) = Q̄₁(s)·λ + Q̄₂(s)·(1 − λ),   λ = (0.2 − U) / 0.1,
/// Q̄₁(s) = 30 + 0.1·s,   Q̄₂(s) = 50 − 0.2·s,
/// ```
///
/// for `U ∈ [0.1, 0.2]`. At `s = 0` this is `Q = 200·U + 10`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExampleModel;

impl ExampleModel {
    pub const U_LOWER: f64 = 0.1;
    pub const U_UPPER: f64 = 0.2;
}

pub fn example_model() -> ExampleModel {
    ExampleModel
}

impl UncertainModel for ExampleModel {
    fn name(&self) -> &str {
        "example"
    }

    fn design_dim(&self) -> usize {
        1
    }

    fn uncertainty_bounds(&self) -> (f64, f64) {
        (Self::U_LOWER, Self::U_UPPER)
    }

    fn evaluate_unchecked(&self, s: &[f64], u: f64) -> ModelEvaluation {
        let lambda = (Self::U_UPPER - u) / (Self::U_UPPER - Self::U_LOWER);
        let q1 = 30.0 + 0.1 * s[0];
        let q2 = 50.0 - 0.2 * s[0];
        ModelEvaluation {
            q: q1 * lambda + q2 * (1.0 - lambda),
            dq_ds: vec![0.1 * lambda - 0.2 * (1.0 - lambda)],
        }
    }
}

/// Fan root efficiency `(PR^((γ−1)/γ) − 1) / (TR − 1)`.
pub fn fan_root_efficiency(pr: f64, tr: f64, gamma: f64) -> Result<f64> {
    efficiency_partials(pr, tr, gamma).map(|(eta, _, _)| eta)
}

/// Efficiency with its partial derivatives in `PR` and `TR`.
pub fn efficiency_partials(pr: f64, tr: f64, gamma: f64) -> Result<(f64, f64, f64)> {
    if !(tr > 1.0) {
        return Err(invalid("tr", format!("temperature ratio must exceed 1, got {tr}")));
    }
    if !(pr > 1.0) {
        return Err(invalid("pr", format!("pressure ratio must exceed 1, got {pr}")));
    }
    if !(gamma > 1.0) {
        return Err(invalid(
            "gamma",
            format!("heat-capacity ratio must exceed 1, got {gamma}"),
        ));
    }
    let e = (gamma - 1.0) / gamma;
    let pr_e = pr.powf(e);
    let work = tr - 1.0;
    let eta = (pr_e - 1.0) / work;
    Ok((eta, e * pr_e / pr / work, -eta / work))
}

/// Synthetic fan-stage model with rear-seal leakage as the uncertainty.
///
/// With `x = (U − U_L)/(U_U − U_L)` the normalized leakage, the stage
/// temperature ratio and an underlying loss model are
///
/// ```text
/// TR(s)    = TR₀ + Σ τ_k s_k
/// η*(s, x) = η₀ + Σ g_k s_k − ½ Σ c_k s_k² − m(s)·x,   m(s) = m₀ exp(Σ β_k s_k)
/// PR(s, x) = (1 + η*·(TR − 1))^(γ/(γ−1))
/// ```
///
/// and the qoi is the fan root efficiency of `(PR, TR)`. PR falls with
/// leakage, the design moves both the efficiency level and the leakage
/// slope `m(s)`, and `Σ|β_k| ≥ 0.4` guarantees the slope can be halved
/// inside the `[−1, 1]ⁿ` design box. Coefficients are drawn from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct FanModel {
    gamma: f64,
    tr0: f64,
    eta0: f64,
    m0: f64,
    tau: Vec<f64>,
    level: Vec<f64>,
    curvature: Vec<f64>,
    slope_exp: Vec<f64>,
    bounds: DesignBounds,
}

impl FanModel {
    pub const LEAKAGE_MIN: f64 = 0.0013;
    pub const LEAKAGE_MAX: f64 = 0.0030;
    pub const DEFAULT_GAMMA: f64 = 1.4;

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Magnitude of `∂η/∂U`, which is uniform in `U` by construction.
    pub fn leakage_slope(&self, s: &[f64]) -> f64 {
        self.slope(s) / (Self::LEAKAGE_MAX - Self::LEAKAGE_MIN)
    }

    fn slope(&self, s: &[f64]) -> f64 {
        let exponent: f64 = self.slope_exp.iter().zip(s).map(|(b, s)| b * s).sum();
        self.m0 * exponent.exp()
    }
}

pub fn synthetic_fan_model(n_design: usize, seed: u64) -> Result<FanModel> {
    if n_design == 0 {
        return Err(invalid("n_design", "need at least one design variable"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_design as f64;
    let tau = (0..n_design)
        .map(|_| rng.random_range(-0.002..0.002) / n.sqrt())
        .collect();
    let level = (0..n_design)
        .map(|_| rng.random_range(-0.003..0.003) / n.sqrt())
        .collect();
    let curvature = (0..n_design).map(|_| rng.random_range(0.002..0.006)).collect();
    let raw: Vec<f64> = (0..n_design).map(|_| rng.random_range(0.5..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let budget = rng.random_range(0.4..0.8);
    let slope_exp = raw
        .iter()
        .map(|w| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * budget * w / total
        })
        .collect();
    Ok(FanModel {
        gamma: FanModel::DEFAULT_GAMMA,
        tr0: 1.14,
        eta0: 0.92,
        m0: 0.004,
        tau,
        level,
        curvature,
        slope_exp,
        bounds: DesignBounds::uniform(n_design, -1.0, 1.0)?,
    })
}

impl UncertainModel for FanModel {
    fn name(&self) -> &str {
        "synthetic-fan"
    }

    fn design_dim(&self) -> usize {
        self.tau.len()
    }

    fn uncertainty_bounds(&self) -> (f64, f64) {
        (Self::LEAKAGE_MIN, Self::LEAKAGE_MAX)
    }

    fn design_bounds(&self) -> Option<&DesignBounds> {
        Some(&self.bounds)
    }

    fn evaluate_unchecked(&self, s: &[f64], u: f64) -> ModelEvaluation {
        let x = (u - Self::LEAKAGE_MIN) / (Self::LEAKAGE_MAX - Self::LEAKAGE_MIN);
        let e = (self.gamma - 1.0) / self.gamma;
        let tr = self.tr0 + self.tau.iter().zip(s).map(|(t, s)| t * s).sum::<f64>();
        let m = self.slope(s);
        let eta_star = self.eta0
            + s.iter()
                .zip(&self.level)
                .zip(&self.curvature)
                .map(|((s, g), c)| g * s - 0.5 * c * s * s)
                .sum::<f64>()
            - m * x;
        let base = 1.0 + eta_star * (tr - 1.0);
        let pr = base.powf(1.0 / e);
        let (eta, deta_dpr, deta_dtr) =
            efficiency_partials(pr, tr, self.gamma).expect("fan model stays in the physical range");
        let dpr_dbase = pr / (e * base);
        let dq_ds = (0..s.len())
            .map(|k| {
                let dtr = self.tau[k];
                let deta_star = self.level[k] - self.curvature[k] * s[k] - m * self.slope_exp[k] * x;
                let dpr = dpr_dbase * (deta_star * (tr - 1.0) + eta_star * dtr);
                deta_dpr * dpr + deta_dtr * dtr
            })
            .collect();
        ModelEvaluation { q: eta, dq_ds }
    }
}
