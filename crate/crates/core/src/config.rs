//! TOML run configuration shared by the `pdf`, `match` and `verify` commands.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! name = "example"            # or "synthetic-fan" (needs n_design, model_seed)
//! design = [0.0]
//!
//! [uncertainty]
//! family = "beta"
//! alpha = 1.7
//! beta = 3.2                  # lower/upper default to the model's range
//!
//! [target]
//! family = "gaussian"         # gaussian | beta | derived | narrowed
//! mean = 37.0
//! std_dev = 1.0
//!
//! [grid]
//! n_points = 2000
//! bounds = "auto"             # or [lo, hi]
//!
//! [matcher]
//! kind = "monotonic"          # or "kde" (samples, bandwidth, seed)
//! ```
//!
//! Unknown keys are rejected everywhere. See the README for every section.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::densities::{ScaledBeta, TargetDensity};
use crate::kde_matching::Bandwidth;
use crate::models::{example_model, synthetic_fan_model, UncertainModel};
use crate::monotonic_matching::{derived_pdf, fit_surrogate, ShiftFormula};
use crate::optimizer::{MonotonicObjective, OptimizerConfig};
use crate::quadrature::{DensityVector, QuadratureGrid};
use crate::verify::VerifySettings;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn bad(key: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    pub uncertainty: UncertaintySpec,
    pub target: TargetSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub matcher: MatcherSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub pdf: PdfSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Example {
        #[serde(default)]
        design: Option<Vec<f64>>,
    },
    SyntheticFan {
        n_design: usize,
        #[serde(default)]
        model_seed: u64,
        #[serde(default)]
        design: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum UncertaintySpec {
    Beta {
        alpha: f64,
        beta: f64,
        #[serde(default)]
        lower: Option<f64>,
        #[serde(default)]
        upper: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    Gaussian {
        mean: f64,
        std_dev: f64,
    },
    Beta {
        alpha: f64,
        beta: f64,
        lower: f64,
        upper: f64,
    },
    /// Derived pdf of the model at a given design.
    Derived {
        design: Vec<f64>,
    },
    /// Gaussian with the derived mean at `design` (default: the start
    /// design) and `factor` times its standard deviation.
    Narrowed {
        factor: f64,
        #[serde(default)]
        design: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum GridBounds {
    Explicit([f64; 2]),
    #[serde(with = "auto_tag")]
    Auto,
}

mod auto_tag {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("expected \"auto\" or [lo, hi], got \"{s}\"")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_points: usize,
    pub bounds: GridBounds,
    /// Fraction of the covered width added on each side of auto bounds.
    pub padding: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_points: 2000,
            bounds: GridBounds::Auto,
            padding: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatcherKind {
    #[default]
    Monotonic,
    Kde,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherSpec {
    pub kind: MatcherKind,
    /// Number of frozen uncertainty samples for the kernel formulation.
    pub samples: usize,
    /// Silverman's rule is applied once, at the start design.
    pub bandwidth: Bandwidth,
    /// Sampling seed; the top-level seed when absent.
    pub seed: Option<u64>,
}

impl Default for MatcherSpec {
    fn default() -> Self {
        MatcherSpec {
            kind: MatcherKind::Monotonic,
            samples: 10_000,
            bandwidth: Bandwidth::Silverman,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdfSpec {
    /// Also write a kernel estimate from Monte-Carlo samples.
    pub kde: bool,
    pub kde_samples: usize,
    pub sensitivity: bool,
}

impl Default for PdfSpec {
    fn default() -> Self {
        PdfSpec {
            kde: true,
            kde_samples: 100_000,
            sensitivity: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Replaces the tolerance of every finite-difference check.
    pub fd_tolerance: Option<f64>,
    /// Debug: use the sign-flipped intercept formula.
    pub uncorrected_shift: bool,
    pub mc_samples: usize,
    pub kde_samples: usize,
    pub histogram_bins: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let d = VerifySettings::default();
        VerifySpec {
            fd_tolerance: None,
            uncorrected_shift: false,
            mc_samples: d.mc_samples,
            kde_samples: d.kde_samples,
            histogram_bins: d.histogram_bins,
        }
    }
}

/// A configuration resolved into ready-to-run objects.
pub struct Setup {
    pub model: Box<dyn UncertainModel>,
    pub design: Vec<f64>,
    pub input: ScaledBeta,
    pub grid: QuadratureGrid,
    pub target: DensityVector,
    pub shift: ShiftFormula,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn matcher_seed(&self) -> u64 {
        self.matcher.seed.unwrap_or(self.seed)
    }

    pub fn verify_settings(&self) -> Result<VerifySettings, ConfigError> {
        let v = &self.verify;
        if let Some(t) = v.fd_tolerance {
            if !(t > 0.0) {
                return Err(bad("verify.fd_tolerance", "must be > 0"));
            }
        }
        if v.mc_samples < 4 {
            return Err(bad("verify.mc_samples", "must be at least 4"));
        }
        if v.kde_samples < 2 {
            return Err(bad("verify.kde_samples", "must be at least 2"));
        }
        if v.histogram_bins == 0 {
            return Err(bad("verify.histogram_bins", "must be at least 1"));
        }
        Ok(VerifySettings {
            fd_tolerance_override: v.fd_tolerance,
            mc_samples: v.mc_samples,
            kde_samples: v.kde_samples,
            histogram_bins: v.histogram_bins,
            seed: self.seed,
            ..VerifySettings::default()
        })
    }

    fn build_model(&self) -> Result<(Box<dyn UncertainModel>, Vec<f64>), ConfigError> {
        let (model, design): (Box<dyn UncertainModel>, _) = match &self.model {
            ModelSpec::Example { design } => (Box::new(example_model()), design.clone()),
            ModelSpec::SyntheticFan {
                n_design,
                model_seed,
                design,
            } => {
                if *n_design == 0 {
                    return Err(bad("model.n_design", "must be at least 1"));
                }
                let m = synthetic_fan_model(*n_design, *model_seed).map_err(|e| bad("model", e))?;
                (Box::new(m), design.clone())
            }
        };
        let design = design.unwrap_or_else(|| vec![0.0; model.design_dim()]);
        model.check_design(&design).map_err(|e| bad("model.design", e))?;
        Ok((model, design))
    }

    fn build_input(&self, model: &dyn UncertainModel) -> Result<ScaledBeta, ConfigError> {
        let UncertaintySpec::Beta {
            alpha,
            beta,
            lower,
            upper,
        } = self.uncertainty;
        let (u_lo, u_hi) = model.uncertainty_bounds();
        let (lower, upper) = (lower.unwrap_or(u_lo), upper.unwrap_or(u_hi));
        if lower < u_lo || upper > u_hi {
            return Err(bad(
                "uncertainty",
                format!("support [{lower}, {upper}] leaves the model's range [{u_lo}, {u_hi}]"),
            ));
        }
        ScaledBeta::new(alpha, beta, lower, upper).map_err(|e| bad("uncertainty", e))
    }

    /// Resolves models, densities and the grid. Auto bounds cover the
    /// target's effective support and the derived pdf's image at the design,
    /// padded on each side.
    pub fn resolve(&self) -> Result<Setup, ConfigError> {
        let (model, design) = self.build_model()?;
        let input = self.build_input(model.as_ref())?;
        let shift = if self.verify.uncorrected_shift {
            ShiftFormula::SignFlipped
        } else {
            ShiftFormula::Interpolating
        };
        self.optimizer.validate().map_err(|e| bad("optimizer", e))?;
        if self.grid.n_points < 2 {
            return Err(bad("grid.n_points", "must be at least 2"));
        }

        let probe_grid = QuadratureGrid::new(0.0, 1.0, 2).map_err(|e| bad("grid", e))?;
        let image_at = |s: &[f64], key: &str| -> Result<(f64, f64), ConfigError> {
            let obj = MonotonicObjective::new(model.as_ref(), input, DensityVector::from_fn(&probe_grid, |_| 0.0));
            let states = obj.states(s).map_err(|e| bad(key, e))?;
            let sur = fit_surrogate(&states).map_err(|e| bad(key, e))?;
            Ok(sur.image(input.lower(), input.upper()))
        };

        enum Resolved {
            Fixed(TargetDensity),
            Derived(Vec<f64>),
        }
        let (target, target_support) = match &self.target {
            TargetSpec::Gaussian { mean, std_dev } => {
                let t = TargetDensity::gaussian(*mean, *std_dev).map_err(|e| bad("target", e))?;
                let sup = t.effective_support();
                (Resolved::Fixed(t), sup)
            }
            TargetSpec::Beta {
                alpha,
                beta,
                lower,
                upper,
            } => {
                let t = ScaledBeta::new(*alpha, *beta, *lower, *upper).map_err(|e| bad("target", e))?;
                (Resolved::Fixed(TargetDensity::Beta(t)), (*lower, *upper))
            }
            TargetSpec::Derived { design: s } => {
                model.check_design(s).map_err(|e| bad("target.design", e))?;
                (Resolved::Derived(s.clone()), image_at(s, "target.design")?)
            }
            TargetSpec::Narrowed { factor, design: s } => {
                if !(*factor > 0.0 && factor.is_finite()) {
                    return Err(bad("target.factor", "must be finite and > 0"));
                }
                let s = s.clone().unwrap_or_else(|| design.clone());
                model.check_design(&s).map_err(|e| bad("target.design", e))?;
                let obj = MonotonicObjective::new(model.as_ref(), input, DensityVector::from_fn(&probe_grid, |_| 0.0));
                let sur = obj
                    .states(&s)
                    .and_then(|st| fit_surrogate(&st))
                    .map_err(|e| bad("target.design", e))?;
                let m = input.moments();
                let mean = sur.a * m.mean + sur.b;
                let sd = sur.a.abs() * m.variance.sqrt() * factor;
                let t = TargetDensity::gaussian(mean, sd).map_err(|e| bad("target", e))?;
                let sup = t.effective_support();
                (Resolved::Fixed(t), sup)
            }
        };

        let (lo, hi) = match self.grid.bounds {
            GridBounds::Explicit([lo, hi]) => (lo, hi),
            GridBounds::Auto => {
                if !(self.grid.padding >= 0.0 && self.grid.padding.is_finite()) {
                    return Err(bad("grid.padding", "must be finite and >= 0"));
                }
                let (i_lo, i_hi) = image_at(&design, "model.design")?;
                let lo = i_lo.min(target_support.0);
                let hi = i_hi.max(target_support.1);
                let pad = self.grid.padding * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let grid = QuadratureGrid::new(lo, hi, self.grid.n_points).map_err(|e| bad("grid", e))?;
        let target = match target {
            Resolved::Fixed(t) => t.on_grid(&grid).map_err(|e| bad("target", e))?,
            Resolved::Derived(s) => {
                let obj = MonotonicObjective::new(model.as_ref(), input, DensityVector::from_fn(&grid, |_| 0.0));
                let sur = obj
                    .states(&s)
                    .and_then(|st| fit_surrogate(&st))
                    .map_err(|e| bad("target.design", e))?;
                derived_pdf(&sur, &input, &grid)
            }
        };
        Ok(Setup {
            model,
            design,
            input,
            grid,
            target,
            shift,
        })
    }
}
