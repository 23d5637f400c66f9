//! Controller-aware planning: snap cost plus a weighted learned tracking
//! penalty, minimized over the affine set of waypoint-consistent trajectories.
//!
//! The feasible set `A c = b` is charted as `c = c_p + N z` with `N` an
//! orthonormal null-space basis, which makes every iterate exactly feasible.
//! Descent directions are gradients preconditioned by the (constant) Hessian
//! of the snap term on the chart, followed by Armijo backtracking, starting
//! from the min-snap solution.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::minsnap::{check_full_row_rank, time_allocation, QpSystem, ORDER};
use crate::tracknet::TrackNetModel;

/// Differentiable penalty on raw trajectory coefficients.
pub trait TrackingPenalty {
    fn input_dim(&self) -> usize;
    fn value(&self, coeffs: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, coeffs: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl TrackingPenalty for TrackNetModel {
    fn input_dim(&self) -> usize {
        TrackNetModel::input_dim(self)
    }

    fn value(&self, coeffs: &[f64]) -> Result<f64> {
        self.forward(coeffs)
    }

    fn value_and_gradient(&self, coeffs: &[f64]) -> Result<(f64, Vec<f64>)> {
        TrackNetModel::value_and_gradient(self, coeffs)
    }
}
use crate::trajectory::{PiecewiseTrajectory, WaypointSet};

/// Feasible-set parametrization `c = particular + basis z`.
#[derive(Debug, Clone)]
pub struct NullspaceChart {
    pub particular: DVector<f64>,
    /// Orthonormal columns spanning `null(A)`; may have zero columns.
    pub basis: DMatrix<f64>,
}

/// Least-norm particular solution and orthonormal null-space basis from a
/// full QR factorization of `A^T`.
pub fn nullspace_chart(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NullspaceChart> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: b.len(),
        });
    }
    if m > n {
        return Err(Error::RankDeficiency { rank: n, rows: m });
    }
    check_full_row_rank(a)?;
    // square padding yields the complete orthogonal factor
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (n, m)).copy_from(&a.transpose());
    let qr = padded.qr();
    let q = qr.q();
    let r = qr.r();
    let r1 = r.view((0, 0), (m, m)).into_owned();
    let y = r1
        .transpose()
        .solve_lower_triangular(b)
        .ok_or(Error::RankDeficiency { rank: 0, rows: m })?;
    let particular = q.columns(0, m) * y;
    let basis = q.columns(m, n - m).into_owned();
    Ok(NullspaceChart { particular, basis })
}

impl NullspaceChart {
    pub fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.particular + &self.basis * z
    }

    /// Chart coordinates of a feasible point.
    pub fn coords(&self, c: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&(c - &self.particular))
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    /// Weight of the learned penalty against the snap cost.
    pub lambda: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    /// Relative objective decrease regarded as stalled.
    pub tolerance: f64,
    /// Consecutive stalled iterations before stopping.
    pub patience: usize,
    /// Fall back to min-snap when the objective turns non-finite.
    pub fallback: bool,
    /// Extra randomly perturbed starts (0 disables multi-start).
    pub restarts: usize,
    pub restart_scale: f64,
    pub seed: u64,
    /// Scale descent directions by the inverse snap Hessian on the chart.
    pub precondition: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            lambda: 1.0e3,
            max_iterations: 200,
            initial_step: 1.0,
            backtrack: 0.5,
            tolerance: 1e-6,
            patience: 5,
            fallback: true,
            restarts: 0,
            restart_scale: 0.05,
            seed: 0,
            precondition: true,
        }
    }
}

impl PlanOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if !(self.tolerance > 0.0 && self.initial_step > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig("backtracking factor must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanReport {
    pub iterations: usize,
    pub initial_snap: f64,
    pub initial_penalty: f64,
    pub final_snap: f64,
    pub final_penalty: f64,
    /// Objective after every accepted iterate, starting with the initial one.
    pub objective_history: Vec<f64>,
    pub fallback: bool,
}

impl PlanReport {
    pub fn initial_objective(&self, lambda: f64) -> f64 {
        self.initial_snap + lambda * self.initial_penalty
    }

    pub fn final_objective(&self, lambda: f64) -> f64 {
        self.final_snap + lambda * self.final_penalty
    }
}

/// Objective on chart coordinates, in the solver's normalized-time variables.
struct Problem<'a> {
    qp_h: DMatrix<f64>,
    cost_scale: f64,
    col_scale: DVector<f64>,
    chart: NullspaceChart,
    model: &'a dyn TrackingPenalty,
    lambda: f64,
}

struct Eval {
    snap: f64,
    penalty: f64,
    grad: Option<DVector<f64>>,
}

impl Problem<'_> {
    fn raw(&self, z: &DVector<f64>) -> DVector<f64> {
        self.chart.point(z).component_mul(&self.col_scale)
    }

    fn eval(&self, z: &DVector<f64>, with_grad: bool) -> Result<Eval> {
        let zhat = self.chart.point(z);
        let hz = &self.qp_h * &zhat;
        let snap = zhat.dot(&hz) / self.cost_scale;
        let c = zhat.component_mul(&self.col_scale);
        let c_slice: Vec<f64> = c.iter().copied().collect();
        let (penalty, grad) = if with_grad && self.lambda != 0.0 {
            let (v, g) = self.model.value_and_gradient(&c_slice)?;
            (v, Some(DVector::from_vec(g)))
        } else {
            (self.model.value(&c_slice)?, None)
        };
        let grad = with_grad.then(|| {
            let mut g_hat = hz * (2.0 / self.cost_scale);
            if let Some(gc) = grad {
                g_hat += gc.component_mul(&self.col_scale) * self.lambda;
            }
            self.chart.basis.tr_mul(&g_hat)
        });
        Ok(Eval { snap, penalty, grad })
    }

    fn objective(&self, e: &Eval) -> f64 {
        e.snap + self.lambda * e.penalty
    }
}

struct Descent {
    z: DVector<f64>,
    eval: Eval,
    iterations: usize,
    history: Vec<f64>,
}

fn descend(
    problem: &Problem,
    precond: Option<&Cholesky<f64, Dyn>>,
    z0: DVector<f64>,
    opts: &PlanOptions,
) -> Result<Descent> {
    let mut z = z0;
    let mut cur = problem.eval(&z, true)?;
    let mut phi = problem.objective(&cur);
    if !phi.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let mut history = vec![phi];
    let mut stalled = 0;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let grad = cur.grad.clone().expect("gradient requested");
        let dir = match precond {
            Some(p) => -p.solve(&grad),
            None => -grad.clone(),
        };
        let slope = grad.dot(&dir);
        if !(slope < 0.0) {
            break;
        }
        let mut step = opts.initial_step;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = &z + &dir * step;
            let e = problem.eval(&trial, false)?;
            let val = problem.objective(&e);
            if val.is_finite() && val <= phi + 1e-4 * step * slope {
                accepted = Some((trial, val));
                break;
            }
            step *= opts.backtrack;
        }
        let Some((trial, val)) = accepted else { break };
        iterations += 1;
        let decrease = phi - val;
        z = trial;
        cur = problem.eval(&z, true)?;
        phi = problem.objective(&cur);
        debug_assert!((phi - val).abs() <= 1e-9 * (1.0 + val.abs()));
        history.push(phi);
        if decrease < opts.tolerance * (1.0 + phi.abs()) {
            stalled += 1;
            if stalled >= opts.patience {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    Ok(Descent {
        z,
        eval: cur,
        iterations,
        history,
    })
}

/// Solves the regularized planning problem for `wps` with heuristic
/// durations. The returned trajectory always satisfies the waypoint and
/// continuity constraints.
pub fn plan(
    wps: &WaypointSet,
    v_avg: f64,
    model: &dyn TrackingPenalty,
    opts: &PlanOptions,
) -> Result<(PiecewiseTrajectory, PlanReport)> {
    opts.validate()?;
    let durations = time_allocation(wps, v_avg)?;
    let qp = QpSystem::build(wps, &durations, ORDER)?;
    if model.input_dim() != qp.a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: qp.a.ncols(),
            got: model.input_dim(),
        });
    }
    let minsnap = qp.solve()?;
    let sc = qp.scaled();
    let chart = nullspace_chart(&sc.a, &sc.b)?;
    let problem = Problem {
        qp_h: sc.h.clone(),
        cost_scale: sc.cost_scale,
        col_scale: sc.col_scale.clone(),
        chart,
        model,
        lambda: opts.lambda,
    };
    let z0 = problem.chart.coords(&sc.scale(&minsnap.coeffs));
    let init = problem.eval(&z0, false)?;

    let fallback = |init: &Eval| -> Result<(PiecewiseTrajectory, PlanReport)> {
        let traj = qp.to_trajectory(&minsnap.coeffs)?;
        Ok((
            traj,
            PlanReport {
                iterations: 0,
                initial_snap: init.snap,
                initial_penalty: init.penalty,
                final_snap: init.snap,
                final_penalty: init.penalty,
                objective_history: vec![problem.objective(init)],
                fallback: true,
            },
        ))
    };

    if !problem.objective(&init).is_finite() {
        return if opts.fallback {
            fallback(&init)
        } else {
            Err(Error::NonFiniteObjective)
        };
    }
    if problem.dim() == 0 {
        let traj = qp.to_trajectory(&minsnap.coeffs)?;
        let phi = problem.objective(&init);
        return Ok((
            traj,
            PlanReport {
                iterations: 0,
                initial_snap: init.snap,
                initial_penalty: init.penalty,
                final_snap: init.snap,
                final_penalty: init.penalty,
                objective_history: vec![phi],
                fallback: false,
            },
        ));
    }

    let nh = problem.chart.basis.tr_mul(&(&problem.qp_h * &problem.chart.basis))
        * (2.0 / problem.cost_scale);
    let precond = nh.cholesky().ok_or(Error::SingularKkt)?;
    let precond = opts.precondition.then_some(&precond);

    let mut starts = vec![z0.clone()];
    if opts.restarts > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let scale = opts.restart_scale * (1.0 + z0.norm());
        for _ in 0..opts.restarts {
            let noise = DVector::from_fn(z0.len(), |_, _| {
                let n: f64 = StandardNormal.sample(&mut rng);
                n * scale
            });
            starts.push(&z0 + noise);
        }
    }

    let mut best: Option<Descent> = None;
    for start in starts {
        match descend(&problem, precond, start, opts) {
            Ok(d) => {
                let better = best.as_ref().is_none_or(|b| {
                    problem.objective(&d.eval) < problem.objective(&b.eval)
                });
                if better {
                    best = Some(d);
                }
            }
            Err(Error::NonFiniteObjective) if opts.fallback => continue,
            Err(e) => return Err(e),
        }
    }
    let Some(best) = best else {
        return if opts.fallback {
            fallback(&init)
        } else {
            Err(Error::NonFiniteObjective)
        };
    };
    // keep the min-snap start when no run improved on it
    let (z, final_eval, iterations, history) =
        if problem.objective(&best.eval) <= problem.objective(&init) {
            (best.z, best.eval, best.iterations, best.history)
        } else {
            let phi0 = problem.objective(&init);
            (z0, init_eval_clone(&init), 0, vec![phi0])
        };
    let c = problem.raw(&z);
    debug_assert!(qp.constraint_residual(&c) < 1e-6 * (1.0 + qp.b.amax()));
    let traj = qp.to_trajectory(&c)?;
    Ok((
        traj,
        PlanReport {
            iterations,
            initial_snap: init.snap,
            initial_penalty: init.penalty,
            final_snap: final_eval.snap,
            final_penalty: final_eval.penalty,
            objective_history: history,
            fallback: false,
        },
    ))
}

fn init_eval_clone(e: &Eval) -> Eval {
    Eval {
        snap: e.snap,
        penalty: e.penalty,
        grad: e.grad.clone(),
    }
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.chart.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn two_dimensional_chart() {
        let a = dmatrix![1.0, 0.0];
        let b = DVector::from_vec(vec![1.0]);
        let ch = nullspace_chart(&a, &b).unwrap();
        assert!((ch.particular - DVector::from_vec(vec![1.0, 0.0])).amax() < 1e-15);
        assert_eq!(ch.basis.shape(), (2, 1));
        assert!(ch.basis[(0, 0)].abs() < 1e-15);
        assert!((ch.basis[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn square_system_has_empty_chart() {
        let a = dmatrix![2.0, 1.0; 1.0, 3.0];
        let b = DVector::from_vec(vec![3.0, 5.0]);
        let ch = nullspace_chart(&a, &b).unwrap();
        assert_eq!(ch.dim(), 0);
        let x = a.clone().lu().solve(&b).unwrap();
        assert!((ch.particular - x).amax() < 1e-12);
    }

    #[test]
    fn random_wide_chart_invariants() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(8, 24, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(8, |_, _| rng.random_range(-1.0..1.0));
        let ch = nullspace_chart(&a, &b).unwrap();
        assert_eq!(ch.dim(), 16);
        assert!((&a * &ch.particular - &b).amax() < 1e-8);
        assert!((&a * &ch.basis).amax() < 1e-10);
        let gram = ch.basis.tr_mul(&ch.basis);
        assert!((gram - DMatrix::identity(16, 16)).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_chart() {
        let a = dmatrix![1.0, 2.0, 3.0; 2.0, 4.0, 6.0];
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            nullspace_chart(&a, &b),
            Err(Error::RankDeficiency { .. })
        ));
    }
}
