use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quadplan::data::TaskSampler;
use quadplan::error::{Error, Result};
use quadplan::lcd::{plan, PlanOptions, TrackingPenalty};
use quadplan::minsnap::{snap_cost, solve_minsnap, time_allocation, QpSystem, ORDER};
use quadplan::tracknet::{column_stats, TrackNetModel};
use quadplan::trajectory::{PiecewiseTrajectory, WaypointSet};

fn tasks(n: u64) -> Vec<WaypointSet> {
    (0..n)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            TaskSampler::default().sample(&mut rng).unwrap()
        })
        .collect()
}

/// Random network normalized on min-snap coefficients so its penalty has
/// a nontrivial gradient at the planner's starting point.
fn random_penalty(seed: u64) -> TrackNetModel {
    let coeffs: Vec<Vec<f64>> = tasks(64)
        .iter()
        .map(|w| solve_minsnap(w, 2.0).unwrap().coeffs().to_vec())
        .collect();
    let inputs: Vec<&[f64]> = coeffs.iter().map(|c| c.as_slice()).collect();
    let rows: Vec<usize> = (0..inputs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = TrackNetModel::init(&[96, 100, 100, 20, 1], true, &mut rng);
    (m.mean, m.std) = column_stats(&inputs, &rows);
    m.layers.last_mut().unwrap().bias[0] = 3.0;
    m
}

fn max_coeff_gap(a: &PiecewiseTrajectory, b: &PiecewiseTrajectory) -> f64 {
    let scale = b.coeffs().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    a.coeffs()
        .iter()
        .zip(b.coeffs())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

#[test]
fn zero_lambda_reproduces_minsnap() {
    let model = random_penalty(1);
    let opts = PlanOptions { lambda: 0.0, ..PlanOptions::default() };
    for w in tasks(10) {
        let (traj, report) = plan(&w, 2.0, &model, &opts).unwrap();
        let base = solve_minsnap(&w, 2.0).unwrap();
        assert!(max_coeff_gap(&traj, &base) < 1e-8);
        let (a, b) = (report.final_snap, snap_cost(&base));
        assert!((a - b).abs() <= 1e-10 * b, "{a} vs {b}");
    }
}

#[test]
fn zero_model_reproduces_minsnap_at_any_lambda() {
    let model = TrackNetModel::zeros(&[96, 100, 100, 20, 1], true);
    for lambda in [1.0, 1e3, 1e6] {
        let opts = PlanOptions { lambda, ..PlanOptions::default() };
        for w in tasks(5) {
            let (traj, report) = plan(&w, 2.0, &model, &opts).unwrap();
            assert!(max_coeff_gap(&traj, &solve_minsnap(&w, 2.0).unwrap()) < 1e-8);
            assert_eq!(report.final_penalty, 0.0);
        }
    }
}

#[test]
fn planned_trajectories_stay_feasible() {
    let model = random_penalty(2);
    let opts = PlanOptions { lambda: 1e4, ..PlanOptions::default() };
    for w in tasks(10) {
        let (traj, report) = plan(&w, 2.0, &model, &opts).unwrap();
        let qp = QpSystem::build(&w, &time_allocation(&w, 2.0).unwrap(), ORDER).unwrap();
        let c = DVector::from_column_slice(traj.coeffs());
        assert!(qp.constraint_residual(&c) < 1e-8 * (1.0 + qp.b.amax()));
        for (k, t) in traj.knot_times().into_iter().enumerate() {
            assert!((traj.position(t).unwrap() - w.positions[k]).norm() < 1e-6);
        }
        assert!(report.iterations > 0);
    }
}

#[test]
fn objective_history_is_monotone_and_penalty_drops() {
    let model = random_penalty(3);
    let lambda = 1e4;
    let opts = PlanOptions { lambda, ..PlanOptions::default() };
    let mut reduced = 0;
    let all = tasks(20);
    for w in &all {
        let (_, r) = plan(w, 2.0, &model, &opts).unwrap();
        assert!(r.objective_history.windows(2).all(|h| h[1] <= h[0]));
        assert!(r.final_objective(lambda) <= r.initial_objective(lambda));
        assert_eq!(r.objective_history.len(), r.iterations + 1);
        if r.final_penalty < r.initial_penalty {
            reduced += 1;
        }
    }
    assert!(reduced * 10 >= all.len() * 7, "penalty reduced on {reduced} of {}", all.len());
}

#[test]
fn plain_gradient_descent_is_also_monotone() {
    let model = random_penalty(4);
    let opts = PlanOptions {
        lambda: 1e4,
        precondition: false,
        ..PlanOptions::default()
    };
    for w in tasks(5) {
        let (_, r) = plan(&w, 2.0, &model, &opts).unwrap();
        assert!(r.objective_history.windows(2).all(|h| h[1] <= h[0]));
    }
}

#[test]
fn restarts_never_do_worse_than_single_start() {
    let model = random_penalty(5);
    let single = PlanOptions { lambda: 1e4, ..PlanOptions::default() };
    let multi = PlanOptions { restarts: 4, seed: 7, ..single.clone() };
    for w in tasks(5) {
        let (_, a) = plan(&w, 2.0, &model, &single).unwrap();
        let (_, b) = plan(&w, 2.0, &model, &multi).unwrap();
        assert!(b.final_objective(1e4) <= a.final_objective(1e4) * (1.0 + 1e-12));
    }
}

#[test]
fn wrong_model_width_is_rejected() {
    let model = TrackNetModel::zeros(&[64, 4, 1], true);
    let w = &tasks(1)[0];
    assert!(matches!(
        plan(w, 2.0, &model, &PlanOptions::default()),
        Err(Error::DimensionMismatch { expected: 96, got: 64 })
    ));
}

struct Exploding;

impl TrackingPenalty for Exploding {
    fn input_dim(&self) -> usize {
        32
    }

    fn value(&self, _: &[f64]) -> Result<f64> {
        Ok(f64::NAN)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((f64::NAN, vec![f64::NAN; x.len()]))
    }
}

#[test]
fn non_finite_penalty_falls_back_to_minsnap() {
    let w = WaypointSet::from_positions(vec![Vector3::zeros(), Vector3::new(1.0, 2.0, 2.0)]).unwrap();
    let (traj, report) = plan(&w, 2.0, &Exploding, &PlanOptions::default()).unwrap();
    assert!(report.fallback);
    assert!(max_coeff_gap(&traj, &solve_minsnap(&w, 2.0).unwrap()) < 1e-12);

    let strict = PlanOptions { fallback: false, ..PlanOptions::default() };
    assert!(matches!(plan(&w, 2.0, &Exploding, &strict), Err(Error::NonFiniteObjective)));
}

#[test]
fn invalid_options_are_rejected() {
    let w = &tasks(1)[0];
    let model = TrackNetModel::zeros(&[96, 4, 1], true);
    for bad in [
        PlanOptions { lambda: -1.0, ..PlanOptions::default() },
        PlanOptions { tolerance: 0.0, ..PlanOptions::default() },
        PlanOptions { backtrack: 1.5, ..PlanOptions::default() },
    ] {
        assert!(matches!(plan(w, 2.0, &model, &bad), Err(Error::InvalidConfig(_))));
    }
}
