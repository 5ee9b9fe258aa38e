//! The `pdf`, `match` and `verify` commands, independent of argument parsing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ConfigError, MatcherKind, RunConfig, Setup};
use crate::error::Error;
use crate::kde_matching::{kde_estimate, KdeConfig, SampleResponses};
use crate::monotonic_matching::{derived_pdf, fit_surrogate_with, pdf_sensitivity, LinearSurrogate};
use crate::optimizer::{minimize, KdeObjective, MonotonicObjective, RunTrace};
use crate::quadrature::{distance, DensityVector};
use crate::verify::{run_suite, Problem, VerifyReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{failed} verification check(s) failed: {names}")]
    VerificationFailed { failed: usize, names: String },
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn load(config: &Path, overrides: &Overrides) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    let out = overrides
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, out))
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    let path = dir.join(name);
    let io = |source| CliError::Io {
        path: path.clone(),
        source,
    };
    let mut w = BufWriter::new(File::create(&path).map_err(io)?);
    body(&mut w).and_then(|_| w.flush()).map_err(io)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("summaries are serializable");
    write_file(dir, name, |w| writeln!(w, "{text}"))
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SurrogateSummary {
    pub a: f64,
    pub b: f64,
    pub da_ds: Vec<f64>,
    pub db_ds: Vec<f64>,
}

impl From<&LinearSurrogate> for SurrogateSummary {
    fn from(s: &LinearSurrogate) -> Self {
        SurrogateSummary {
            a: s.a,
            b: s.b,
            da_ds: s.da_ds.clone(),
            db_ds: s.db_ds.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct KdeSummary {
    pub samples: usize,
    pub bandwidth: f64,
    /// L2 norm of the difference to the derived pdf.
    pub l2_to_derived: f64,
    pub relative_l2_to_derived: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PdfSummary {
    pub model: String,
    pub design: Vec<f64>,
    pub grid_lower: f64,
    pub grid_upper: f64,
    pub grid_points: usize,
    pub surrogate: SurrogateSummary,
    pub derived_integral: f64,
    pub derived_mean: f64,
    pub derived_variance: f64,
    pub kde: Option<KdeSummary>,
}

/// Kernel estimate of the qoi density from fresh Monte-Carlo samples.
fn sampled_kde(setup: &Setup, s: &[f64], n: usize, seed: u64, cfg: &RunConfig) -> Result<(DensityVector, f64), Error> {
    let us = setup.input.sample(n, seed);
    let values = us
        .iter()
        .map(|&u| setup.model.evaluate(s, u).map(|e| e.q))
        .collect::<Result<Vec<_>, _>>()?;
    let kcfg = KdeConfig {
        bandwidth: cfg.matcher.bandwidth,
        ..KdeConfig::default()
    };
    let h = kcfg.resolve_bandwidth(&values)?;
    let est = kde_estimate(&SampleResponses::new(values), &setup.grid, &KdeConfig::fixed(h))?;
    Ok((est, h))
}

fn surrogate_at(setup: &Setup, s: &[f64]) -> Result<LinearSurrogate, Error> {
    let obj = MonotonicObjective::new(setup.model.as_ref(), setup.input, setup.target.clone()).with_shift(setup.shift);
    fit_surrogate_with(&obj.states(s)?, setup.shift)
}

/// Writes `derived_pdf.csv`, `target_pdf.csv`, optionally `kde_pdf.csv` and
/// `sensitivity.csv`, and `pdf_summary.json`.
pub fn cmd_pdf(cfg: &RunConfig, out: &Path) -> Result<PdfSummary, CliError> {
    let setup = cfg.resolve()?;
    if cfg.pdf.kde && cfg.pdf.kde_samples < 2 {
        return Err(ConfigError::Invalid {
            key: "pdf.kde_samples".into(),
            reason: "must be at least 2".into(),
        }
        .into());
    }
    prepare_dir(out)?;
    let sur = surrogate_at(&setup, &setup.design)?;
    let r = derived_pdf(&sur, &setup.input, &setup.grid);
    write_file(out, "derived_pdf.csv", |w| r.write_csv(w))?;
    write_file(out, "target_pdf.csv", |w| setup.target.write_csv(w))?;
    let kde = if cfg.pdf.kde {
        let (est, h) = sampled_kde(&setup, &setup.design, cfg.pdf.kde_samples, cfg.matcher_seed(), cfg)?;
        write_file(out, "kde_pdf.csv", |w| est.write_csv(w))?;
        let l2 = distance(&r, &est)?.sqrt();
        Some(KdeSummary {
            samples: cfg.pdf.kde_samples,
            bandwidth: h,
            l2_to_derived: l2,
            relative_l2_to_derived: l2 / r.l2_norm(),
        })
    } else {
        None
    };
    if cfg.pdf.sensitivity {
        let d = pdf_sensitivity(&sur, &setup.input, &setup.grid);
        write_file(out, "sensitivity.csv", |w| d.write_csv(w))?;
    }
    let m = r.moments();
    let summary = PdfSummary {
        model: setup.model.name().to_string(),
        design: setup.design.clone(),
        grid_lower: setup.grid.lower(),
        grid_upper: setup.grid.upper(),
        grid_points: setup.grid.len(),
        surrogate: (&sur).into(),
        derived_integral: r.integral(),
        derived_mean: m.mean,
        derived_variance: m.variance,
        kde,
    };
    write_json(out, "pdf_summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchSummary {
    pub matcher: MatcherKind,
    pub function_calls: usize,
    pub termination: String,
    pub initial_design: Vec<f64>,
    pub final_design: Vec<f64>,
    pub final_normalized_distance: f64,
    pub initial_mean: f64,
    pub initial_variance: f64,
    pub final_mean: f64,
    pub final_variance: f64,
    pub target_mean: f64,
    pub target_variance: f64,
    /// Bandwidth of the kernel formulation, frozen for the run.
    pub bandwidth: Option<f64>,
}

/// Runs the optimizer and writes `trace.json`, `convergence.csv`,
/// `initial_pdf.csv`, `final_pdf.csv`, `target_pdf.csv` and
/// `match_summary.json`. Pdf files hold derived pdfs for the monotonic
/// matcher and kernel estimates over the frozen samples otherwise.
pub fn cmd_match(cfg: &RunConfig, out: &Path) -> Result<(MatchSummary, RunTrace), CliError> {
    let setup = cfg.resolve()?;
    if cfg.matcher.kind == MatcherKind::Kde && cfg.matcher.samples < 2 {
        return Err(ConfigError::Invalid {
            key: "matcher.samples".into(),
            reason: "must be at least 2".into(),
        }
        .into());
    }
    prepare_dir(out)?;
    let model = setup.model.as_ref();
    let (trace, initial, fin, bandwidth) = match cfg.matcher.kind {
        MatcherKind::Monotonic => {
            let obj = MonotonicObjective::new(model, setup.input, setup.target.clone()).with_shift(setup.shift);
            let trace = minimize(&obj, &setup.design, &cfg.optimizer)?;
            let pdf_at = |s: &[f64]| -> Result<DensityVector, Error> {
                Ok(derived_pdf(&obj.surrogate(s)?, &setup.input, &setup.grid))
            };
            (trace.clone(), pdf_at(&setup.design)?, pdf_at(&trace.best_s)?, None)
        }
        MatcherKind::Kde => {
            let mut obj = KdeObjective {
                model,
                uncertainty_samples: setup.input.sample(cfg.matcher.samples, cfg.matcher_seed()),
                bandwidth: 1.0,
                grid: setup.grid.clone(),
                target: setup.target.clone(),
            };
            let kcfg = KdeConfig {
                bandwidth: cfg.matcher.bandwidth,
                ..KdeConfig::default()
            };
            obj.bandwidth = kcfg.resolve_bandwidth(obj.responses(&setup.design)?.values())?;
            let trace = minimize(&obj, &setup.design, &cfg.optimizer)?;
            let fixed = KdeConfig::fixed(obj.bandwidth);
            let pdf_at =
                |s: &[f64]| -> Result<DensityVector, Error> { kde_estimate(&obj.responses(s)?, &setup.grid, &fixed) };
            (
                trace.clone(),
                pdf_at(&setup.design)?,
                pdf_at(&trace.best_s)?,
                Some(obj.bandwidth),
            )
        }
    };
    write_file(out, "trace.json", |w| writeln!(w, "{}", trace.to_json()))?;
    write_file(out, "convergence.csv", |w| trace.write_convergence_csv(w))?;
    write_file(out, "initial_pdf.csv", |w| initial.write_csv(w))?;
    write_file(out, "final_pdf.csv", |w| fin.write_csv(w))?;
    write_file(out, "target_pdf.csv", |w| setup.target.write_csv(w))?;
    let (mi, mf, mt) = (initial.moments(), fin.moments(), setup.target.moments());
    let summary = MatchSummary {
        matcher: cfg.matcher.kind,
        function_calls: trace.function_calls(),
        termination: format!("{:?}", trace.termination),
        initial_design: setup.design.clone(),
        final_design: trace.best_s.clone(),
        final_normalized_distance: trace.final_normalized_distance(),
        initial_mean: mi.mean,
        initial_variance: mi.variance,
        final_mean: mf.mean,
        final_variance: mf.variance,
        target_mean: mt.mean,
        target_variance: mt.variance,
        bandwidth,
    };
    write_json(out, "match_summary.json", &summary)?;
    Ok((summary, trace))
}

/// Runs the oracle suite and writes `verify_report.json`, `sensitivity.csv`
/// and `histogram.csv`. Any failed check is an error after the files are
/// written.
pub fn cmd_verify(cfg: &RunConfig, out: &Path) -> Result<VerifyReport, CliError> {
    let setup = cfg.resolve()?;
    let settings = cfg.verify_settings()?;
    prepare_dir(out)?;
    let problem = Problem {
        model: setup.model.as_ref(),
        design: setup.design.clone(),
        input: setup.input,
        target: setup.target.clone(),
        shift: setup.shift,
    };
    let report = run_suite(&problem, &settings)?;
    write_json(out, "verify_report.json", &report)?;
    let sur = problem.surrogate()?;
    let d = pdf_sensitivity(&sur, &setup.input, &setup.grid);
    write_file(out, "sensitivity.csv", |w| d.write_csv(w))?;
    if let Some(h) = &report.histogram {
        write_file(out, "histogram.csv", |w| h.write_csv(w))?;
    }
    let failed: Vec<&str> = report
        .checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::VerificationFailed {
            failed: failed.len(),
            names: failed.join(", "),
        });
    }
    Ok(report)
}
