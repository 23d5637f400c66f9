//! Minimum-snap trajectory generation as an equality-constrained QP.
//!
//! Decision variable: the stacked coefficient vector of a
//! [`PiecewiseTrajectory`]. The cost is the integrated squared snap of every
//! flat output (yaw uses the same functional as position), and the
//! constraints pin waypoints, bring the vehicle to rest at both ends and keep
//! velocity, acceleration and jerk continuous at interior knots.
//!
//! Solves run on a rescaled copy of the problem: coefficient `j` of a segment
//! of length `T` is multiplied by `T^j` (local time normalized to [0, 1]) and
//! every constraint row is normalized to unit max-norm.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::trajectory::{coeff_len, falling, PiecewiseTrajectory, WaypointSet, FLAT_DIMS};

/// Polynomial degree used throughout.
pub const ORDER: usize = 7;
/// Highest derivative kept continuous at interior knots (jerk).
pub const CONTINUITY: usize = 3;
const RANK_TOL: f64 = 1e-10;

pub fn time_allocation(wps: &WaypointSet, v_avg: f64) -> Result<Vec<f64>> {
    if !(v_avg.is_finite() && v_avg > 0.0) {
        return Err(Error::InvalidConfig("v_avg must be positive".into()));
    }
    wps.positions
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let d = (w[1] - w[0]).norm();
            if d <= 1e-12 {
                Err(Error::DegenerateSegment(i))
            } else {
                Ok(d / v_avg)
            }
        })
        .collect()
}

/// Snap-cost block of one flat output on one segment of duration `t`.
pub fn snap_block(t: f64, order: usize) -> DMatrix<f64> {
    let n1 = order + 1;
    DMatrix::from_fn(n1, n1, |j, k| {
        if j < 4 || k < 4 {
            0.0
        } else {
            let p = (j + k - 7) as i32;
            falling(j, 4) * falling(k, 4) * t.powi(p) / p as f64
        }
    })
}

/// Block-diagonal Hessian `H` with `c^T H c = sum of integrated squared snap`.
pub fn snap_hessian(durations: &[f64], order: usize) -> DMatrix<f64> {
    assert!(order >= 4, "snap cost needs order >= 4");
    let n1 = order + 1;
    let dim = coeff_len(durations.len(), order);
    let mut h = DMatrix::zeros(dim, dim);
    for (seg, &t) in durations.iter().enumerate() {
        let block = snap_block(t, order);
        for d in 0..FLAT_DIMS {
            let o = (seg * FLAT_DIMS + d) * n1;
            h.view_mut((o, o), (n1, n1)).copy_from(&block);
        }
    }
    h
}

/// Affine constraints `A c = b` for the given waypoints and durations.
pub fn constraint_system(
    wps: &WaypointSet,
    durations: &[f64],
    order: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (a, b) = build_constraints(wps, durations, order)?;
    let scaled = ScaledQp::from_raw(&DMatrix::zeros(0, 0), &a, &b, durations, order, false);
    check_full_row_rank(&scaled.a)?;
    Ok((a, b))
}

fn build_constraints(
    wps: &WaypointSet,
    durations: &[f64],
    order: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let s = durations.len();
    if wps.segments() != s {
        return Err(Error::DimensionMismatch {
            expected: wps.segments(),
            got: s,
        });
    }
    let n1 = order + 1;
    let cols = coeff_len(s, order);
    let per_dim = 2 * s + 2 * CONTINUITY + CONTINUITY * (s - 1);
    let rows = FLAT_DIMS * per_dim;
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    // row of the k-th derivative of (segment, dim) at local time t
    let deriv_row = |a: &mut DMatrix<f64>, row: usize, seg: usize, dim: usize, k: usize, t: f64, sign: f64| {
        let o = (seg * FLAT_DIMS + dim) * n1;
        for j in k..n1 {
            a[(row, o + j)] += sign * falling(j, k) * t.powi((j - k) as i32);
        }
    };
    for dim in 0..FLAT_DIMS {
        for seg in 0..s {
            deriv_row(&mut a, r, seg, dim, 0, 0.0, 1.0);
            b[r] = wps.flat(seg, dim);
            r += 1;
            deriv_row(&mut a, r, seg, dim, 0, durations[seg], 1.0);
            b[r] = wps.flat(seg + 1, dim);
            r += 1;
        }
        for k in 1..=CONTINUITY {
            deriv_row(&mut a, r, 0, dim, k, 0.0, 1.0);
            r += 1;
            deriv_row(&mut a, r, s - 1, dim, k, durations[s - 1], 1.0);
            r += 1;
        }
        for knot in 1..s {
            for k in 1..=CONTINUITY {
                deriv_row(&mut a, r, knot - 1, dim, k, durations[knot - 1], 1.0);
                deriv_row(&mut a, r, knot, dim, k, 0.0, -1.0);
                r += 1;
            }
        }
    }
    debug_assert_eq!(r, rows);
    Ok((a, b))
}

/// Numerical rank of `a` via column-pivoted QR of its transpose.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 {
        return 0;
    }
    let mut rows = a.clone();
    for mut row in rows.row_iter_mut() {
        let m = row.amax();
        if m > 0.0 {
            row /= m;
        }
    }
    let qr = rows.transpose().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.nrows().min(r.ncols())).map(|i| r[(i, i)].abs()).collect();
    let top = diag.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    diag.iter().filter(|&&d| d > RANK_TOL * top).count()
}

pub fn check_full_row_rank(a: &DMatrix<f64>) -> Result<()> {
    let rank = numerical_rank(a);
    if rank < a.nrows() {
        Err(Error::RankDeficiency {
            rank,
            rows: a.nrows(),
        })
    } else {
        Ok(())
    }
}

/// `minimize c^T H c  subject to  A c = b`.
#[derive(Debug, Clone)]
pub struct QpSystem {
    pub h: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub durations: Vec<f64>,
    pub order: usize,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub coeffs: DVector<f64>,
    /// Multipliers of the raw constraints: `2 H c + A^T lambda = 0`.
    pub multipliers: DVector<f64>,
}

impl QpSystem {
    pub fn build(wps: &WaypointSet, durations: &[f64], order: usize) -> Result<Self> {
        let (a, b) = constraint_system(wps, durations, order)?;
        Ok(QpSystem {
            h: snap_hessian(durations, order),
            a,
            b,
            durations: durations.to_vec(),
            order,
        })
    }

    pub fn cost(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.h * c))
    }

    pub fn constraint_residual(&self, c: &DVector<f64>) -> f64 {
        (&self.a * c - &self.b).amax()
    }

    pub fn kkt_residual(&self, sol: &QpSolution) -> f64 {
        (2.0 * &self.h * &sol.coeffs + self.a.transpose() * &sol.multipliers).amax()
    }

    pub(crate) fn scaled(&self) -> ScaledQp {
        ScaledQp::from_raw(&self.h, &self.a, &self.b, &self.durations, self.order, true)
    }

    /// Direct dense solve of the KKT system with partial-pivoting LU.
    pub fn solve(&self) -> Result<QpSolution> {
        let sc = self.scaled();
        let (n, m) = (sc.a.ncols(), sc.a.nrows());
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&(2.0 * &sc.h));
        kkt.view_mut((0, n), (n, m)).copy_from(&sc.a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&sc.a);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(n, m).copy_from(&sc.b);
        let x = kkt.lu().solve(&rhs).ok_or(Error::SingularKkt)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularKkt);
        }
        let z = x.rows(0, n).into_owned();
        let mu = x.rows(n, m).into_owned();
        Ok(QpSolution {
            coeffs: sc.unscale(&z),
            multipliers: sc.raw_multipliers(&mu),
        })
    }

    pub fn to_trajectory(&self, c: &DVector<f64>) -> Result<PiecewiseTrajectory> {
        PiecewiseTrajectory::new(self.order, self.durations.clone(), c.iter().copied().collect())
    }
}

/// Problem in normalized-time coordinates `z` with `c = diag(col_scale) z`,
/// constraint rows scaled by `row_scale` and the cost by `cost_scale`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledQp {
    pub h: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub col_scale: DVector<f64>,
    pub row_scale: DVector<f64>,
    pub cost_scale: f64,
}

impl ScaledQp {
    fn from_raw(
        h: &DMatrix<f64>,
        a: &DMatrix<f64>,
        b: &DVector<f64>,
        durations: &[f64],
        order: usize,
        with_cost: bool,
    ) -> Self {
        let n1 = order + 1;
        let col_scale = DVector::from_fn(a.ncols(), |i, _| {
            let seg = i / (FLAT_DIMS * n1);
            durations[seg].powi(-((i % n1) as i32))
        });
        let mut a_s = a.clone();
        for (j, mut col) in a_s.column_iter_mut().enumerate() {
            col *= col_scale[j];
        }
        let row_scale = DVector::from_fn(a.nrows(), |i, _| {
            let m = a_s.row(i).amax();
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        });
        for (i, mut row) in a_s.row_iter_mut().enumerate() {
            row *= row_scale[i];
        }
        let b_s = b.component_mul(&row_scale);
        let (h_s, cost_scale) = if with_cost {
            let mut h_s = h.clone();
            for j in 0..h_s.ncols() {
                for i in 0..h_s.nrows() {
                    h_s[(i, j)] *= col_scale[i] * col_scale[j];
                }
            }
            let m = h_s.amax();
            let s = if m > 0.0 { 1.0 / m } else { 1.0 };
            (h_s * s, s)
        } else {
            (DMatrix::zeros(0, 0), 1.0)
        };
        ScaledQp {
            h: h_s,
            a: a_s,
            b: b_s,
            col_scale,
            row_scale,
            cost_scale,
        }
    }

    pub fn unscale(&self, z: &DVector<f64>) -> DVector<f64> {
        z.component_mul(&self.col_scale)
    }

    /// Inverse of [`Self::unscale`].
    pub fn scale(&self, c: &DVector<f64>) -> DVector<f64> {
        c.component_div(&self.col_scale)
    }

    fn raw_multipliers(&self, mu: &DVector<f64>) -> DVector<f64> {
        mu.component_mul(&self.row_scale) / self.cost_scale
    }
}

/// Integrated squared snap of a trajectory, summed over flat outputs.
pub fn snap_cost(traj: &PiecewiseTrajectory) -> f64 {
    let h = snap_hessian(traj.durations(), traj.order());
    let c = DVector::from_column_slice(traj.coeffs());
    c.dot(&(h * &c))
}

/// Min-snap trajectory through `wps` with the given segment durations.
pub fn solve_with_durations(wps: &WaypointSet, durations: &[f64]) -> Result<PiecewiseTrajectory> {
    let qp = QpSystem::build(wps, durations, ORDER)?;
    let sol = qp.solve()?;
    qp.to_trajectory(&sol.coeffs)
}

/// Min-snap trajectory with durations from the average-speed heuristic.
pub fn solve_minsnap(wps: &WaypointSet, v_avg: f64) -> Result<PiecewiseTrajectory> {
    let durations = time_allocation(wps, v_avg)?;
    solve_with_durations(wps, &durations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn line(points: &[[f64; 3]]) -> WaypointSet {
        WaypointSet::from_positions(points.iter().map(|p| Vector3::from(*p)).collect()).unwrap()
    }

    #[test]
    fn time_allocation_ratio() {
        let w = line(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, 1.0, 0.0]]);
        assert_eq!(time_allocation(&w, 2.0).unwrap(), vec![1.0, 0.5]);
        let w = line(&[[0.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(time_allocation(&w, 0.5).unwrap(), vec![2.0]);
        let w = line(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]);
        assert!(matches!(time_allocation(&w, 2.0), Err(Error::DegenerateSegment(1))));
    }

    #[test]
    fn quartic_snap_cost() {
        let h = snap_block(1.0, 7);
        let mut c = DVector::zeros(8);
        c[4] = 1.0;
        assert_relative_eq!(c.dot(&(&h * &c)), 576.0, max_relative = 1e-14);
        let cubic = DVector::from_vec(vec![1.0, -2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(cubic.dot(&(&h * &cubic)), 0.0);
    }

    #[test]
    fn two_waypoints_fully_determined() {
        let w = line(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let (a, _) = constraint_system(&w, &[1.0], 7).unwrap();
        assert_eq!(a.nrows(), 4 * 8);
        assert_eq!(a.ncols(), 4 * 8);
        let t = solve_minsnap(&w, 1.0).unwrap();
        // other flat outputs stay at their constant waypoint value
        for dim in 1..4 {
            assert!(t.poly(0, dim).iter().all(|&c| c.abs() < 1e-12));
        }
        // rest-to-rest septic: 35 t^4 - 84 t^5 + 70 t^6 - 20 t^7
        let expected = [0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0];
        for (c, e) in t.poly(0, 0).iter().zip(expected) {
            assert!((c - e).abs() < 1e-8, "{c} vs {e}");
        }
    }

    #[test]
    fn four_waypoint_row_count() {
        let w = line(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0], [0.0, 2.0, 1.0]]);
        let d = time_allocation(&w, 2.0).unwrap();
        let (a, b) = constraint_system(&w, &d, 7).unwrap();
        assert_eq!(a.nrows(), 4 * 18);
        assert_eq!(a.ncols(), 4 * 24);
        let qp = QpSystem::build(&w, &d, 7).unwrap();
        let sol = qp.solve().unwrap();
        assert!((&a * &sol.coeffs - &b).amax() < 1e-10);
        assert!(qp.kkt_residual(&sol) < 1e-6);
    }

    #[test]
    fn duplicated_row_is_rank_deficient() {
        let w = line(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 2.0, 0.0]]);
        let (a, _) = constraint_system(&w, &[0.5, 1.0], 7).unwrap();
        let mut dup = a.clone().insert_row(a.nrows(), 0.0);
        let r = a.row(3).into_owned();
        dup.row_mut(a.nrows()).copy_from(&r);
        assert!(matches!(
            check_full_row_rank(&dup),
            Err(Error::RankDeficiency { .. })
        ));
        assert!(check_full_row_rank(&a).is_ok());
    }

    #[test]
    fn mismatched_durations() {
        let w = line(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(matches!(
            constraint_system(&w, &[1.0, 1.0], 7),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
