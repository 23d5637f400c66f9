//! Flat-output references, the fixed geometric SE(3) tracking controller and
//! the rotor-speed allocation.

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::dynamics::{allocation_matrix, hat, vee, QuadState, WrenchCommand};
use crate::error::{Error, Result};
use crate::params::{ControlGains, QuadParams};
use crate::trajectory::PiecewiseTrajectory;

/// Desired flat outputs and their derivatives at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatReference {
    pub t: f64,
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub snap: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub yaw_acc: f64,
}

impl FlatReference {
    pub fn hover(pos: Vector3<f64>, yaw: f64) -> Self {
        FlatReference {
            t: 0.0,
            pos,
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            jerk: Vector3::zeros(),
            snap: Vector3::zeros(),
            yaw,
            yaw_rate: 0.0,
            yaw_acc: 0.0,
        }
    }

    /// Shifts the reference by `h` seconds using its own Taylor expansion.
    fn extrapolate(&self, h: f64) -> FlatReference {
        FlatReference {
            t: self.t + h,
            acc: self.acc + self.jerk * h + self.snap * (h * h / 2.0),
            jerk: self.jerk + self.snap * h,
            yaw: self.yaw + self.yaw_rate * h + self.yaw_acc * (h * h / 2.0),
            yaw_rate: self.yaw_rate + self.yaw_acc * h,
            ..self.clone()
        }
    }
}

pub fn eval_reference(traj: &PiecewiseTrajectory, t: f64) -> Result<FlatReference> {
    let d: Vec<Vec<f64>> = (0..4)
        .map(|dim| traj.derivatives(dim, t, if dim < 3 { 4 } else { 2 }))
        .collect::<Result<_>>()?;
    let v = |k: usize| Vector3::new(d[0][k], d[1][k], d[2][k]);
    Ok(FlatReference {
        t,
        pos: v(0),
        vel: v(1),
        acc: v(2),
        jerk: v(3),
        snap: v(4),
        yaw: d[3][0],
        yaw_rate: d[3][1],
        yaw_acc: d[3][2],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesiredAttitude {
    pub rotation: Matrix3<f64>,
    /// Body-frame desired angular velocity.
    pub omega: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

/// Step for the symmetric difference giving the desired angular acceleration.
const OMEGA_DOT_STEP: f64 = 1e-3;

/// Rotation and its time derivative implied by an acceleration/jerk/yaw
/// reference.
fn attitude_and_rate(
    acc: &Vector3<f64>,
    jerk: &Vector3<f64>,
    yaw: f64,
    yaw_rate: f64,
    gravity: f64,
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    // thrust direction: f z_B = m (g z_W - r_dd)
    let a = gravity * Vector3::z() - acc;
    let a_norm = a.norm();
    if a_norm < 1e-9 * gravity.max(1.0) {
        return Err(Error::FlatnessSingularity);
    }
    let b3 = a / a_norm;
    let b3_dot = (-jerk - b3 * b3.dot(&-jerk)) / a_norm;

    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let heading_dot = yaw_rate * Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
    let p = heading - b3 * b3.dot(&heading);
    let p_norm = p.norm();
    if p_norm < 1e-9 {
        return Err(Error::FlatnessSingularity);
    }
    let p_dot = heading_dot
        - b3_dot * b3.dot(&heading)
        - b3 * (b3_dot.dot(&heading) + b3.dot(&heading_dot));
    let b1 = p / p_norm;
    let b1_dot = (p_dot - b1 * b1.dot(&p_dot)) / p_norm;
    let b2 = b3.cross(&b1);
    let b2_dot = b3_dot.cross(&b1) + b3.cross(&b1_dot);

    let r = Matrix3::from_columns(&[b1, b2, b3]);
    let r_dot = Matrix3::from_columns(&[b1_dot, b2_dot, b3_dot]);
    let w_hat = r.transpose() * r_dot;
    Ok((r, vee(&((w_hat - w_hat.transpose()) * 0.5))))
}

/// Differential-flatness map from a reference to the desired attitude,
/// body rates and body angular acceleration.
pub fn flat_to_attitude(reference: &FlatReference, params: &QuadParams) -> Result<DesiredAttitude> {
    let g = params.gravity;
    let at = |r: &FlatReference| attitude_and_rate(&r.acc, &r.jerk, r.yaw, r.yaw_rate, g);
    let (rotation, omega) = at(reference)?;
    let (_, w_plus) = at(&reference.extrapolate(OMEGA_DOT_STEP))?;
    let (_, w_minus) = at(&reference.extrapolate(-OMEGA_DOT_STEP))?;
    Ok(DesiredAttitude {
        rotation,
        omega,
        omega_dot: (w_plus - w_minus) / (2.0 * OMEGA_DOT_STEP),
    })
}

/// Geometric tracking law: thrust and moment for the given desired attitude.
pub fn se3_control(
    state: &QuadState,
    reference: &FlatReference,
    att: &DesiredAttitude,
    gains: &ControlGains,
    params: &QuadParams,
) -> WrenchCommand {
    let j = params.inertia_matrix();
    let r = &state.rotation;
    let rd = &att.rotation;
    let e_x = state.position - reference.pos;
    let e_v = state.velocity - reference.vel;
    let thrust_vec = thrust_vector(&e_x, &e_v, &reference.acc, gains, params);
    let thrust = thrust_vec.dot(&(r * Vector3::z()));

    let e_r = vee(&(rd.transpose() * r - r.transpose() * rd)) * 0.5;
    let rt_rd = r.transpose() * rd;
    let e_w = state.omega - rt_rd * att.omega;
    let w = &state.omega;
    let moment = -gains.k_r * e_r - gains.k_w * e_w
        + w.cross(&(j * w))
        - j * (hat(w) * rt_rd * att.omega - rt_rd * att.omega_dot);
    WrenchCommand { thrust, moment }
}

/// Desired force `k_x e_x + k_v e_v + m g z_W - m r_dd`, expressed so that
/// `f z_B` equal to it reproduces the reference acceleration.
fn thrust_vector(
    e_x: &Vector3<f64>,
    e_v: &Vector3<f64>,
    acc: &Vector3<f64>,
    gains: &ControlGains,
    params: &QuadParams,
) -> Vector3<f64> {
    gains.k_x * e_x + gains.k_v * e_v + params.mass * (params.gravity * Vector3::z() - acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub rotor_speeds: Vector4<f64>,
    pub saturated: bool,
}

/// Solves the mixer for per-rotor thrusts and converts them to clamped rotor
/// speeds.
pub fn allocate(cmd: &WrenchCommand, params: &QuadParams) -> Allocation {
    let inv = allocation_matrix(params)
        .try_inverse()
        .expect("allocation matrix is invertible for positive arm length and k_m");
    let thrusts = inv * Vector4::new(cmd.thrust, cmd.moment.x, cmd.moment.y, cmd.moment.z);
    let floor = params.k_f * params.omega_min * params.omega_min;
    let mut saturated = false;
    let rotor_speeds = thrusts.map(|f| {
        if !f.is_finite() {
            saturated = true;
            return params.omega_max;
        }
        let f = if f < floor {
            saturated = true;
            floor
        } else {
            f
        };
        let w = (f / params.k_f).sqrt();
        if w > params.omega_max {
            saturated = true;
            params.omega_max
        } else {
            w.max(params.omega_min)
        }
    });
    Allocation {
        rotor_speeds,
        saturated,
    }
}

/// The complete fixed controller: position feedback tilts the desired thrust
/// axis, the flatness map supplies feed-forward rates, and the geometric law
/// produces the wrench that the mixer turns into rotor commands.
#[derive(Debug, Clone)]
pub struct TrackingController {
    pub params: QuadParams,
    pub gains: ControlGains,
}

#[derive(Debug, Clone)]
pub struct ControlOutput {
    pub wrench: WrenchCommand,
    pub allocation: Allocation,
}

impl TrackingController {
    pub fn new(params: QuadParams, gains: ControlGains) -> Self {
        TrackingController { params, gains }
    }

    pub fn update(&self, state: &QuadState, reference: &FlatReference) -> Result<ControlOutput> {
        let e_x = state.position - reference.pos;
        let e_v = state.velocity - reference.vel;
        let force = thrust_vector(&e_x, &e_v, &reference.acc, &self.gains, &self.params);
        // acceleration whose flat attitude aligns z_B with the feedback force
        let mut commanded = reference.clone();
        commanded.acc = self.params.gravity * Vector3::z() - force / self.params.mass;
        let att = flat_to_attitude(&commanded, &self.params)?;
        let wrench = se3_control(state, reference, &att, &self.gains, &self.params);
        let allocation = allocate(&wrench, &self.params);
        Ok(ControlOutput { wrench, allocation })
    }
}
