//! Rigid-body quadrotor model with linear parasitic drag, first-order motor
//! response, actuation noise and rotor-speed saturation.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::QuadParams;

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`hat`] for antisymmetric matrices.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Body-frame angular velocity.
    pub omega: Vector3<f64>,
    pub rotor_speeds: Vector4<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadStateDerivative {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub omega: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchCommand {
    /// Collective thrust along `-z_B`, N.
    pub thrust: f64,
    /// Body moment, N m.
    pub moment: Vector3<f64>,
}

impl QuadState {
    /// At rest at `position`, level, rotors spinning at hover speed.
    pub fn hover_at(position: Vector3<f64>, params: &QuadParams) -> Self {
        QuadState {
            position,
            velocity: Vector3::zeros(),
            rotation: Matrix3::identity(),
            omega: Vector3::zeros(),
            rotor_speeds: Vector4::repeat(params.hover_speed()),
        }
    }

    /// Heading angle of the body x axis about `z_W`.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.omega.iter().all(|v| v.is_finite())
            && self.rotor_speeds.iter().all(|v| v.is_finite())
    }

    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm()
    }
}

/// Rotor layout: "X" configuration, rotors at (±L/√2, ±L/√2, 0) listed
/// counter-clockwise from the +x/+y quadrant, alternating spin direction.
pub const ROTOR_SIGNS: [f64; 4] = [1.0, -1.0, 1.0, -1.0];
const ROTOR_QUADRANTS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

/// Maps per-rotor thrusts to `[f, M_x, M_y, M_z]`.
pub fn allocation_matrix(params: &QuadParams) -> Matrix4<f64> {
    let a = params.arm_length / std::f64::consts::SQRT_2;
    let gamma = params.k_m / params.k_f;
    let mut w = Matrix4::zeros();
    for (i, &(sx, sy)) in ROTOR_QUADRANTS.iter().enumerate() {
        // moment of a force -F e3 applied at p: F (-p_y, p_x, 0)
        w[(0, i)] = 1.0;
        w[(1, i)] = -sy * a;
        w[(2, i)] = sx * a;
        w[(3, i)] = ROTOR_SIGNS[i] * gamma;
    }
    w
}

pub fn rotor_wrench(rotor_speeds: &Vector4<f64>, params: &QuadParams) -> WrenchCommand {
    let thrusts = rotor_speeds.map(|w| params.k_f * w * w);
    let fm = allocation_matrix(params) * thrusts;
    WrenchCommand {
        thrust: fm[0],
        moment: Vector3::new(fm[1], fm[2], fm[3]),
    }
}

/// Rigid-body time derivative. Rotor dynamics are handled in [`step`].
pub fn derivative(state: &QuadState, params: &QuadParams) -> QuadStateDerivative {
    let wrench = rotor_wrench(&state.rotor_speeds, params);
    let r = &state.rotation;
    let z_w = Vector3::z();
    let drag = r * Matrix3::from_diagonal(&params.drag) * r.transpose() * state.velocity;
    let accel = params.gravity * z_w - (wrench.thrust / params.mass) * (r * z_w)
        - drag / params.mass;
    let j = params.inertia;
    let jw = j.component_mul(&state.omega);
    let omega_dot = (-state.omega.cross(&jw) + wrench.moment).component_div(&j);
    QuadStateDerivative {
        position: state.velocity,
        velocity: accel,
        rotation: r * hat(&state.omega),
        omega: omega_dot,
    }
}

/// Draws the per-tick actuation noise and applies the speed limits.
pub fn noisy_command<R: Rng + ?Sized>(
    cmd: &Vector4<f64>,
    params: &QuadParams,
    rng: &mut R,
) -> Vector4<f64> {
    cmd.map(|w| {
        let noise = if params.sigma_m > 0.0 {
            params.sigma_m * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        (w + noise).clamp(params.omega_min, params.omega_max)
    })
}

struct Stage {
    d: QuadStateDerivative,
    rotor: Vector4<f64>,
}

fn stage(state: &QuadState, applied: &Vector4<f64>, params: &QuadParams) -> Stage {
    Stage {
        d: derivative(state, params),
        rotor: (applied - state.rotor_speeds) / params.tau_m,
    }
}

fn offset(state: &QuadState, k: &Stage, h: f64) -> QuadState {
    QuadState {
        position: state.position + k.d.position * h,
        velocity: state.velocity + k.d.velocity * h,
        rotation: state.rotation + k.d.rotation * h,
        omega: state.omega + k.d.omega * h,
        rotor_speeds: state.rotor_speeds + k.rotor * h,
    }
}

/// One Newton step of the polar iteration; quadratic convergence near SO(3).
fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    r * (Matrix3::identity() * 1.5 - r.transpose() * r * 0.5)
}

/// Advances by one RK4 step with an already noisy, clamped rotor command
/// held constant over `dt`.
pub fn integrate(
    state: &QuadState,
    applied: &Vector4<f64>,
    params: &QuadParams,
    dt: f64,
) -> Result<QuadState> {
    let k1 = stage(state, applied, params);
    let k2 = stage(&offset(state, &k1, dt / 2.0), applied, params);
    let k3 = stage(&offset(state, &k2, dt / 2.0), applied, params);
    let k4 = stage(&offset(state, &k3, dt), applied, params);
    let w = dt / 6.0;
    let mut next = QuadState {
        position: state.position
            + (k1.d.position + 2.0 * k2.d.position + 2.0 * k3.d.position + k4.d.position) * w,
        velocity: state.velocity
            + (k1.d.velocity + 2.0 * k2.d.velocity + 2.0 * k3.d.velocity + k4.d.velocity) * w,
        rotation: state.rotation
            + (k1.d.rotation + 2.0 * k2.d.rotation + 2.0 * k3.d.rotation + k4.d.rotation) * w,
        omega: state.omega + (k1.d.omega + 2.0 * k2.d.omega + 2.0 * k3.d.omega + k4.d.omega) * w,
        rotor_speeds: state.rotor_speeds
            + (k1.rotor + 2.0 * k2.rotor + 2.0 * k3.rotor + k4.rotor) * w,
    };
    next.rotation = reorthonormalize(&next.rotation);
    next.rotor_speeds = next
        .rotor_speeds
        .map(|w| w.clamp(params.omega_min, params.omega_max));
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::NonFiniteState)
    }
}

/// Applies actuation noise and saturation to the command, then advances
/// one RK4 step of `dt`.
pub fn step<R: Rng + ?Sized>(
    state: &QuadState,
    cmd_rotor_speeds: &Vector4<f64>,
    params: &QuadParams,
    dt: f64,
    rng: &mut R,
) -> Result<QuadState> {
    let applied = noisy_command(cmd_rotor_speeds, params, rng);
    integrate(state, &applied, params, dt)
}

/// One controller tick: noise is drawn once, then the command is held for
/// `substeps` RK4 steps covering `control_dt`.
pub fn advance<R: Rng + ?Sized>(
    state: &QuadState,
    cmd_rotor_speeds: &Vector4<f64>,
    params: &QuadParams,
    control_dt: f64,
    substeps: usize,
    rng: &mut R,
) -> Result<QuadState> {
    let applied = noisy_command(cmd_rotor_speeds, params, rng);
    let h = control_dt / substeps as f64;
    let mut s = integrate(state, &applied, params, h)?;
    for _ in 1..substeps {
        s = integrate(&s, &applied, params, h)?;
    }
    Ok(s)
}
