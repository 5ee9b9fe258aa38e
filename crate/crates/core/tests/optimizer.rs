use std::sync::atomic::{AtomicUsize, Ordering};

use density_match::models::{example_model, synthetic_fan_model, ModelEvaluation, UncertainModel};
use density_match::monotonic_matching::{derived_pdf, fit_surrogate};
use density_match::optimizer::{
    minimize, minimize_monotonic, Method, MonotonicObjective, OptimizerConfig, Termination,
};
use density_match::{DensityVector, QuadratureGrid, ScaledBeta};

fn example_input() -> ScaledBeta {
    ScaledBeta::new(1.7, 3.2, 0.1, 0.2).unwrap()
}

fn derived_target<M: UncertainModel + ?Sized>(
    model: &M,
    s: &[f64],
    input: ScaledBeta,
    grid: &QuadratureGrid,
) -> DensityVector {
    let obj = MonotonicObjective::new(model, input, DensityVector::from_fn(grid, |_| 0.0));
    derived_pdf(&fit_surrogate(&obj.states(s).unwrap()).unwrap(), &input, grid)
}

struct Counting<M> {
    inner: M,
    calls: AtomicUsize,
}

impl<M: UncertainModel> UncertainModel for Counting<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }
    fn design_dim(&self) -> usize {
        self.inner.design_dim()
    }
    fn uncertainty_bounds(&self) -> (f64, f64) {
        self.inner.uncertainty_bounds()
    }
    fn design_bounds(&self) -> Option<&density_match::models::DesignBounds> {
        self.inner.design_bounds()
    }
    fn evaluate_unchecked(&self, s: &[f64], u: f64) -> ModelEvaluation {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate_unchecked(s, u)
    }
}

/// Qoi independent of the design.
struct Insensitive;

impl UncertainModel for Insensitive {
    fn name(&self) -> &str {
        "insensitive"
    }
    fn design_dim(&self) -> usize {
        2
    }
    fn uncertainty_bounds(&self) -> (f64, f64) {
        (0.1, 0.2)
    }
    fn evaluate_unchecked(&self, _s: &[f64], u: f64) -> ModelEvaluation {
        ModelEvaluation {
            q: 200.0 * u + 10.0,
            dq_ds: vec![0.0, 0.0],
        }
    }
}

#[test]
fn recovers_known_design_on_example_model() {
    let model = example_model();
    let grid = QuadratureGrid::new(28.0, 52.0, 2000).unwrap();
    let target = derived_target(&model, &[5.0], example_input(), &grid);
    for method in [Method::QuasiNewtonBfgs, Method::SteepestDescent] {
        let cfg = OptimizerConfig {
            method,
            ..Default::default()
        };
        let trace = minimize_monotonic(&model, &[0.0], example_input(), &target, &cfg).unwrap();
        assert!(trace.function_calls() <= 40);
        assert!((trace.best_s[0] - 5.0).abs() < 1e-3, "{method:?}: {:?}", trace.best_s);
        assert_eq!(trace.records[0].normalized_distance, 1.0);
    }
}

#[test]
fn stationary_start_stops_within_two_calls() {
    let model = example_model();
    let grid = QuadratureGrid::new(28.0, 52.0, 2000).unwrap();
    let target = derived_target(&model, &[5.0], example_input(), &grid);
    let trace = minimize_monotonic(&model, &[5.0], example_input(), &target, &OptimizerConfig::default()).unwrap();
    assert!(trace.function_calls() <= 2, "{}", trace.function_calls());
    assert!(matches!(
        trace.termination,
        Termination::GradientTolerance | Termination::StepTolerance
    ));
}

#[test]
fn insensitive_model_stops_on_gradient_at_first_call() {
    let grid = QuadratureGrid::new(28.0, 52.0, 500).unwrap();
    let target = density_match::TargetDensity::gaussian(37.0, 1.0)
        .unwrap()
        .on_grid(&grid)
        .unwrap();
    let trace = minimize_monotonic(
        &Insensitive,
        &[0.3, -0.2],
        example_input(),
        &target,
        &OptimizerConfig::default(),
    )
    .unwrap();
    assert_eq!(trace.function_calls(), 1);
    assert_eq!(trace.termination, Termination::GradientTolerance);
}

#[test]
fn two_model_evaluations_per_call_and_monotone_acceptance() {
    let model = Counting {
        inner: synthetic_fan_model(3, 11).unwrap(),
        calls: AtomicUsize::new(0),
    };
    let input = ScaledBeta::new(1.7, 2.8, 0.0013, 0.0030).unwrap();
    let grid = QuadratureGrid::new(0.85, 0.97, 2000).unwrap();
    let target = density_match::TargetDensity::gaussian(0.915, 0.001)
        .unwrap()
        .on_grid(&grid)
        .unwrap();
    let cfg = OptimizerConfig::default();
    let trace = minimize_monotonic(&model, &[0.0; 3], input, &target, &cfg).unwrap();
    assert_eq!(model.calls.load(Ordering::SeqCst), 2 * trace.function_calls());
    assert!(trace.function_calls() <= cfg.max_function_calls);
    let accepted: Vec<f64> = trace
        .records
        .iter()
        .filter(|r| r.accepted)
        .map(|r| r.distance)
        .collect();
    assert!(accepted.windows(2).all(|w| w[1] <= w[0]), "{accepted:?}");
    let d0 = trace.records[0].distance;
    for r in &trace.records {
        assert_eq!(r.normalized_distance, r.distance / d0);
        assert!(r.s.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn budget_of_one_records_one_call() {
    let model = example_model();
    let grid = QuadratureGrid::new(28.0, 52.0, 2000).unwrap();
    let target = derived_target(&model, &[5.0], example_input(), &grid);
    let cfg = OptimizerConfig {
        max_function_calls: 1,
        ..Default::default()
    };
    let trace = minimize_monotonic(&model, &[0.0], example_input(), &target, &cfg).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.termination, Termination::BudgetExhausted);
}

#[test]
fn identical_inputs_give_identical_traces() {
    let model = synthetic_fan_model(4, 3).unwrap();
    let input = ScaledBeta::new(1.7, 2.8, 0.0013, 0.0030).unwrap();
    let grid = QuadratureGrid::new(0.85, 0.97, 1000).unwrap();
    let target = density_match::TargetDensity::gaussian(0.915, 0.0005)
        .unwrap()
        .on_grid(&grid)
        .unwrap();
    let obj = MonotonicObjective::new(&model, input, target);
    let a = minimize(&obj, &[0.1; 4], &OptimizerConfig::default()).unwrap();
    let b = minimize(&obj, &[0.1; 4], &OptimizerConfig::default()).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}
