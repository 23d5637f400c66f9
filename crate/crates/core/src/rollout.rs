//! Closed-loop simulation of the fixed controller following a reference, and
//! the tracking-cost label it produces.

use nalgebra::{Vector3, Vector4};
use rand::Rng;

use crate::control::{eval_reference, FlatReference, TrackingController};
use crate::dynamics::{advance, QuadState};
use crate::error::Result;
use crate::params::{ControlGains, QuadParams};
use crate::trajectory::PiecewiseTrajectory;

/// Crash threshold on the maximum position tracking error, m.
pub const CRASH_THRESHOLD: f64 = 1.5;

/// A run crashes when its maximum position error is strictly above the
/// threshold.
pub fn classify_crash(max_error: f64, threshold: f64) -> bool {
    max_error > threshold
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Controller rate, Hz.
    pub control_rate: f64,
    /// RK4 steps per controller tick.
    pub substeps: usize,
    /// Extra simulated time after the reference ends, s.
    pub settle_time: f64,
    pub crash_threshold: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            control_rate: 100.0,
            substeps: 5,
            settle_time: 1.0,
            crash_threshold: CRASH_THRESHOLD,
        }
    }
}

impl SimConfig {
    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    pub position: Vector3<f64>,
    pub yaw: f64,
    pub ref_position: Vector3<f64>,
    pub ref_yaw: f64,
    pub rotor_speeds: Vector4<f64>,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutcome {
    /// Integrated squared position and yaw error, m^2 s (crash-padded).
    pub label: f64,
    pub max_error: f64,
    pub crashed: bool,
    pub ticks: usize,
    pub saturated_ticks: usize,
    /// True when the run ended on a non-finite state or singular reference.
    pub diverged: bool,
}

impl RolloutOutcome {
    pub fn saturation_fraction(&self) -> f64 {
        if self.ticks == 0 {
            0.0
        } else {
            self.saturated_ticks as f64 / self.ticks as f64
        }
    }
}

/// Wraps into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
}

/// Initial condition shared by every rollout: at rest on the first reference
/// point, level, rotors at hover speed.
pub fn initial_state(traj: &PiecewiseTrajectory, params: &QuadParams) -> Result<QuadState> {
    Ok(QuadState::hover_at(traj.position(0.0)?, params))
}

/// Flies `traj` and accumulates the tracking cost. When the position error
/// exceeds the crash threshold the run stops and the label is padded with
/// `threshold^2` per second of remaining time.
pub fn rollout_cost<R: Rng + ?Sized>(
    traj: &PiecewiseTrajectory,
    params: &QuadParams,
    gains: &ControlGains,
    sim: &SimConfig,
    rng: &mut R,
) -> Result<RolloutOutcome> {
    run(traj, params, gains, sim, rng, None)
}

/// Like [`rollout_cost`] but also returns the per-tick trace.
pub fn rollout_logged<R: Rng + ?Sized>(
    traj: &PiecewiseTrajectory,
    params: &QuadParams,
    gains: &ControlGains,
    sim: &SimConfig,
    rng: &mut R,
) -> Result<(RolloutOutcome, Vec<LogRow>)> {
    let mut log = Vec::new();
    let out = run(traj, params, gains, sim, rng, Some(&mut log))?;
    Ok((out, log))
}

fn run<R: Rng + ?Sized>(
    traj: &PiecewiseTrajectory,
    params: &QuadParams,
    gains: &ControlGains,
    sim: &SimConfig,
    rng: &mut R,
    mut log: Option<&mut Vec<LogRow>>,
) -> Result<RolloutOutcome> {
    let controller = TrackingController::new(params.clone(), *gains);
    let dt = sim.control_dt();
    let t_end = traj.total_duration();
    let ticks = ((t_end + sim.settle_time) * sim.control_rate).ceil() as usize;
    let mut state = initial_state(traj, params)?;
    let mut out = RolloutOutcome {
        label: 0.0,
        max_error: 0.0,
        crashed: false,
        ticks: 0,
        saturated_ticks: 0,
        diverged: false,
    };
    let thr2 = sim.crash_threshold * sim.crash_threshold;
    for k in 0..ticks {
        let t = k as f64 * dt;
        let reference: FlatReference = eval_reference(traj, t.min(t_end))?;
        let err = (state.position - reference.pos).norm();
        let yaw_err = wrap_angle(state.yaw() - reference.yaw);
        out.label += (err * err + yaw_err * yaw_err) * dt;
        out.max_error = out.max_error.max(err);
        out.ticks += 1;
        let remaining = (ticks - k - 1) as f64 * dt;
        if classify_crash(out.max_error, sim.crash_threshold) {
            out.crashed = true;
            out.label += thr2 * remaining;
            break;
        }
        let cmd = match controller.update(&state, &reference) {
            Ok(c) => c,
            Err(_) => {
                diverge(&mut out, thr2, remaining);
                break;
            }
        };
        if cmd.allocation.saturated {
            out.saturated_ticks += 1;
        }
        if let Some(log) = log.as_deref_mut() {
            log.push(LogRow {
                t,
                position: state.position,
                yaw: state.yaw(),
                ref_position: reference.pos,
                ref_yaw: reference.yaw,
                rotor_speeds: state.rotor_speeds,
                saturated: cmd.allocation.saturated,
            });
        }
        match advance(&state, &cmd.allocation.rotor_speeds, params, dt, sim.substeps, rng) {
            Ok(s) => state = s,
            Err(_) => {
                diverge(&mut out, thr2, remaining);
                break;
            }
        }
    }
    Ok(out)
}

fn diverge(out: &mut RolloutOutcome, thr2: f64, remaining: f64) {
    out.diverged = true;
    out.crashed = true;
    out.max_error = f64::INFINITY;
    out.label += thr2 * remaining;
}

pub fn log_to_csv(log: &[LogRow]) -> String {
    let mut s = String::from("t,x,y,z,yaw,x_ref,y_ref,z_ref,yaw_ref,saturated\n");
    for r in log {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.position.x,
            r.position.y,
            r.position.z,
            r.yaw,
            r.ref_position.x,
            r.ref_position.y,
            r.ref_position.z,
            r.ref_yaw,
            u8::from(r.saturated)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::coeff_len;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crash_boundary_is_strict() {
        assert!(classify_crash(1.6, 1.5));
        assert!(!classify_crash(0.3, 1.5));
        assert!(!classify_crash(1.5, 1.5));
    }

    #[test]
    fn wrap_into_pi_range() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) + std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!((wrap_angle(2.0 * std::f64::consts::PI + 0.1) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn hover_reference_costs_nothing() {
        let v = crate::params::Vehicle::preset("crazyflie-default")
            .unwrap()
            .with_overrides([("sigma_m", 0.0)])
            .unwrap();
        let mut c = vec![0.0; coeff_len(1, 7)];
        c[0] = 1.0;
        c[8] = 2.0;
        c[16] = 3.0;
        let traj = PiecewiseTrajectory::new(7, vec![2.0], c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = rollout_cost(&traj, &v.params, &v.gains, &SimConfig::default(), &mut rng).unwrap();
        assert!(out.label < 1e-6, "{}", out.label);
        assert!(!out.crashed);
        assert_eq!(out.ticks, 300);
    }
}
