//! Vehicle parameters, controller gains, and the `name = value` preset format.
//!
//! Frame convention: the world z axis points along gravity, so hover balance
//! reads `m g z_W = f R z_W` and positive collective thrust pushes along
//! `-z_B`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const CRAZYFLIE_DEFAULT: &str = include_str!("../presets/crazyflie-default.params");

pub const PRESET_NAMES: &[&str] = &["crazyflie-default"];

#[derive(Debug, Clone, PartialEq)]
pub struct QuadParams {
    pub mass: f64,
    /// Diagonal of the inertia tensor, kg m^2.
    pub inertia: Vector3<f64>,
    pub gravity: f64,
    pub arm_length: f64,
    /// Thrust coefficient, N/(rad/s)^2.
    pub k_f: f64,
    /// Yaw drag-torque coefficient, N m/(rad/s)^2.
    pub k_m: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Motor time constant, s.
    pub tau_m: f64,
    /// Std of the additive noise on commanded rotor speed, rad/s.
    pub sigma_m: f64,
    /// Parasitic drag diagonal (body frame), N/(m/s).
    pub drag: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains {
    pub k_x: f64,
    pub k_v: f64,
    pub k_r: f64,
    pub k_w: f64,
}

impl QuadParams {
    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.inertia)
    }

    /// Rotor speed at which four rotors exactly cancel gravity.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.k_f)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidOverride(msg.to_string()));
        let all_finite = [
            self.mass,
            self.gravity,
            self.arm_length,
            self.k_f,
            self.k_m,
            self.omega_min,
            self.omega_max,
            self.tau_m,
            self.sigma_m,
        ]
        .iter()
        .chain(self.inertia.iter())
        .chain(self.drag.iter())
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("parameters must be finite");
        }
        if self.mass <= 0.0 {
            return bad("mass must be positive");
        }
        if self.inertia.iter().any(|&j| j <= 0.0) {
            return bad("inertia diagonal must be positive");
        }
        if self.gravity <= 0.0 {
            return bad("gravity must be positive");
        }
        if self.arm_length <= 0.0 {
            return bad("arm_length must be positive");
        }
        if self.k_f <= 0.0 || self.k_m <= 0.0 {
            return bad("k_f and k_m must be positive");
        }
        if self.omega_min < 0.0 || self.omega_max <= self.omega_min {
            return bad("rotor bounds must satisfy omega_max > omega_min >= 0");
        }
        if self.tau_m <= 0.0 {
            return bad("tau_m must be positive");
        }
        if self.sigma_m < 0.0 {
            return bad("sigma_m must be non-negative");
        }
        if self.drag.iter().any(|&d| d < 0.0) {
            return bad("drag coefficients must be non-negative");
        }
        Ok(())
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<()> {
        let g = [self.k_x, self.k_v, self.k_r, self.k_w];
        if g.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidOverride("control gains must be positive".into()))
        }
    }
}

/// A vehicle description: physical parameters plus the gains of the fixed
/// tracking controller, as stored in a preset file.
#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub params: QuadParams,
    pub gains: ControlGains,
}

impl Vehicle {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "crazyflie-default" => Self::parse(CRAZYFLIE_DEFAULT, name),
            _ => Err(Error::UnknownPreset(name.to_string())),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses a complete preset. Every key must appear exactly once.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut values = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = parse_assignment(line)
                .map_err(|m| Error::parse(format!("{context}:{}", lineno + 1), m))?;
            if !KEYS.contains(&key.as_str()) {
                return Err(Error::parse(
                    format!("{context}:{}", lineno + 1),
                    format!("unknown key `{key}`"),
                ));
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::parse(context, format!("duplicate key `{key}`")));
            }
        }
        let get = |k: &str| {
            values
                .get(k)
                .copied()
                .ok_or_else(|| Error::parse(context, format!("missing key `{k}`")))
        };
        let vehicle = Vehicle {
            params: QuadParams {
                mass: get("mass")?,
                inertia: Vector3::new(get("ixx")?, get("iyy")?, get("izz")?),
                gravity: get("g")?,
                arm_length: get("arm_length")?,
                k_f: get("k_f")?,
                k_m: get("k_m")?,
                omega_min: get("omega_min")?,
                omega_max: get("omega_max")?,
                tau_m: get("tau_m")?,
                sigma_m: get("sigma_m")?,
                drag: Vector3::new(get("d_x")?, get("d_y")?, get("d_z")?),
            },
            gains: ControlGains {
                k_x: get("k_x")?,
                k_v: get("k_v")?,
                k_r: get("k_R")?,
                k_w: get("k_w")?,
            },
        };
        vehicle.params.validate()?;
        vehicle.gains.validate()?;
        Ok(vehicle)
    }

    /// Applies `key = value` overrides and re-validates.
    pub fn with_overrides<'a, I>(mut self, overrides: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, f64)>,
    {
        for (key, value) in overrides {
            let slot = self.slot_mut(key).ok_or_else(|| {
                Error::InvalidOverride(format!("unknown parameter `{key}`"))
            })?;
            *slot = value;
        }
        self.params.validate()?;
        self.gains.validate()?;
        Ok(self)
    }

    fn slot_mut(&mut self, key: &str) -> Option<&mut f64> {
        let p = &mut self.params;
        let g = &mut self.gains;
        Some(match key {
            "mass" => &mut p.mass,
            "ixx" => &mut p.inertia.x,
            "iyy" => &mut p.inertia.y,
            "izz" => &mut p.inertia.z,
            "g" => &mut p.gravity,
            "arm_length" => &mut p.arm_length,
            "k_f" => &mut p.k_f,
            "k_m" => &mut p.k_m,
            "omega_min" => &mut p.omega_min,
            "omega_max" => &mut p.omega_max,
            "tau_m" => &mut p.tau_m,
            "sigma_m" => &mut p.sigma_m,
            "d_x" => &mut p.drag.x,
            "d_y" => &mut p.drag.y,
            "d_z" => &mut p.drag.z,
            "k_x" => &mut g.k_x,
            "k_v" => &mut g.k_v,
            "k_R" => &mut g.k_r,
            "k_w" => &mut g.k_w,
            _ => return None,
        })
    }

    pub fn to_preset_string(&self) -> String {
        let p = &self.params;
        let g = &self.gains;
        let pairs = [
            ("mass", p.mass),
            ("ixx", p.inertia.x),
            ("iyy", p.inertia.y),
            ("izz", p.inertia.z),
            ("g", p.gravity),
            ("arm_length", p.arm_length),
            ("k_f", p.k_f),
            ("k_m", p.k_m),
            ("omega_min", p.omega_min),
            ("omega_max", p.omega_max),
            ("tau_m", p.tau_m),
            ("sigma_m", p.sigma_m),
            ("d_x", p.drag.x),
            ("d_y", p.drag.y),
            ("d_z", p.drag.z),
            ("k_x", g.k_x),
            ("k_v", g.k_v),
            ("k_R", g.k_r),
            ("k_w", g.k_w),
        ];
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v:e}");
        }
        out
    }
}

const KEYS: &[&str] = &[
    "mass",
    "ixx",
    "iyy",
    "izz",
    "g",
    "arm_length",
    "k_f",
    "k_m",
    "omega_min",
    "omega_max",
    "tau_m",
    "sigma_m",
    "d_x",
    "d_y",
    "d_z",
    "k_x",
    "k_v",
    "k_R",
    "k_w",
];

fn parse_assignment(line: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| format!("expected `name = value`, got `{line}`"))?;
    let key = k.trim().to_string();
    let value: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("invalid number `{}` for `{key}`", v.trim()))?;
    Ok((key, value))
}

/// Parses a `key=value,key=value` override list as used on the command line.
pub fn parse_overrides(text: &str) -> Result<Vec<(String, f64)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| {
            parse_assignment(item)
                .map_err(|m| Error::parse("override list", m))
        })
        .collect()
}

/// Builds a validated parameter set from a named preset plus overrides.
pub fn make_params(preset: &str, overrides: &[(&str, f64)]) -> Result<QuadParams> {
    Ok(Vehicle::preset(preset)?
        .with_overrides(overrides.iter().copied())?
        .params)
}
