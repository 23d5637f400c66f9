//! Piecewise polynomial flat-output trajectories and waypoint sets.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Number of flat outputs: x, y, z, yaw.
pub const FLAT_DIMS: usize = 4;

/// Stacked per-segment polynomial coefficients plus segment durations.
///
/// Layout: segment-major, then flat output (x, y, z, yaw), then ascending
/// powers of segment-local time. Coefficients are in unscaled local time.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    order: usize,
    durations: Vec<f64>,
    coeffs: Vec<f64>,
}

impl PiecewiseTrajectory {
    pub fn new(order: usize, durations: Vec<f64>, coeffs: Vec<f64>) -> Result<Self> {
        if durations.is_empty() {
            return Err(Error::InvalidConfig("trajectory needs at least one segment".into()));
        }
        if durations.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidConfig("segment durations must be positive".into()));
        }
        let expected = coeff_len(durations.len(), order);
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: coeffs.len(),
            });
        }
        Ok(PiecewiseTrajectory {
            order,
            durations,
            coeffs,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn segments(&self) -> usize {
        self.durations.len()
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Equal to the last knot time bit for bit.
    pub fn total_duration(&self) -> f64 {
        self.durations.iter().fold(0.0, |t, d| t + d)
    }

    /// Times at which segments start, followed by the final time.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut knots = Vec::with_capacity(self.segments() + 1);
        let mut t = 0.0;
        knots.push(t);
        for d in &self.durations {
            t += d;
            knots.push(t);
        }
        knots
    }

    pub fn poly(&self, segment: usize, dim: usize) -> &[f64] {
        let n1 = self.order + 1;
        let start = (segment * FLAT_DIMS + dim) * n1;
        &self.coeffs[start..start + n1]
    }

    /// Maps global time to (segment, local time). Boundaries belong to the
    /// right segment except at the final time.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let end = self.total_duration();
        if !(0.0..=end).contains(&t) {
            return Err(Error::OutOfDomain { t, end });
        }
        let mut start = 0.0;
        for (i, d) in self.durations.iter().enumerate() {
            if t < start + d || i + 1 == self.segments() {
                return Ok((i, (t - start).clamp(0.0, *d)));
            }
            start += d;
        }
        unreachable!("durations are non-empty")
    }

    /// Derivatives `0..=max_order` of flat output `dim` at global time `t`.
    pub fn derivatives(&self, dim: usize, t: f64, max_order: usize) -> Result<Vec<f64>> {
        let (seg, tau) = self.locate(t)?;
        Ok((0..=max_order)
            .map(|k| poly_derivative(self.poly(seg, dim), k, tau))
            .collect())
    }

    pub fn position(&self, t: f64) -> Result<Vector3<f64>> {
        let (seg, tau) = self.locate(t)?;
        Ok(Vector3::new(
            poly_derivative(self.poly(seg, 0), 0, tau),
            poly_derivative(self.poly(seg, 1), 0, tau),
            poly_derivative(self.poly(seg, 2), 0, tau),
        ))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.order, self.segments());
        let durations: Vec<String> = self.durations.iter().map(|d| fmt_f64(*d)).collect();
        out.push_str(&durations.join(" "));
        out.push('\n');
        for chunk in self.coeffs.chunks(self.order + 1) {
            let line: Vec<String> = chunk.iter().map(|c| fmt_f64(*c)).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let ctx = "trajectory file";
        let mut tokens = text.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::parse(ctx, format!("missing {what}")))?
                .parse()
                .map_err(|_| Error::parse(ctx, format!("invalid {what}")))
        };
        let order = next_usize("order")?;
        let segments = next_usize("segment count")?;
        let values: Vec<f64> = text
            .split_whitespace()
            .skip(2)
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::parse(ctx, format!("invalid number `{t}`")))
            })
            .collect::<Result<_>>()?;
        let expected = segments + coeff_len(segments, order);
        if values.len() != expected {
            return Err(Error::parse(
                ctx,
                format!("expected {expected} values, found {}", values.len()),
            ));
        }
        let (durations, coeffs) = values.split_at(segments);
        Self::new(order, durations.to_vec(), coeffs.to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

pub fn coeff_len(segments: usize, order: usize) -> usize {
    FLAT_DIMS * segments * (order + 1)
}

/// Falling factorial j (j-1) ... (j-k+1).
pub fn falling(j: usize, k: usize) -> f64 {
    if k > j {
        return 0.0;
    }
    ((j - k + 1)..=j).fold(1.0, |acc, v| acc * v as f64)
}

/// k-th derivative of an ascending-power polynomial at `t`.
pub fn poly_derivative(coeffs: &[f64], k: usize, t: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(k)
        .rev()
        .fold(0.0, |acc, (j, c)| acc * t + falling(j, k) * c)
}

/// Full-precision decimal text (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaypointSet {
    pub positions: Vec<Vector3<f64>>,
    pub yaws: Vec<f64>,
}

impl WaypointSet {
    pub fn new(positions: Vec<Vector3<f64>>, yaws: Vec<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidConfig("need at least two waypoints".into()));
        }
        if yaws.len() != positions.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                got: yaws.len(),
            });
        }
        let finite = positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
            && yaws.iter().all(|y| y.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("waypoints must be finite".into()));
        }
        Ok(WaypointSet { positions, yaws })
    }

    /// Zero yaw at every waypoint.
    pub fn from_positions(positions: Vec<Vector3<f64>>) -> Result<Self> {
        let yaws = vec![0.0; positions.len()];
        Self::new(positions, yaws)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn segments(&self) -> usize {
        self.len() - 1
    }

    /// Flat output value of waypoint `i` along `dim`.
    pub fn flat(&self, i: usize, dim: usize) -> f64 {
        if dim < 3 {
            self.positions[i][dim]
        } else {
            self.yaws[i]
        }
    }

    /// One `x y z [yaw]` line per waypoint; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut positions = Vec::new();
        let mut yaws = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = format!("waypoint line {}", lineno + 1);
            let vals: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|t| t.parse().map_err(|_| Error::parse(&ctx, format!("invalid number `{t}`"))))
                .collect::<Result<_>>()?;
            match vals.len() {
                3 | 4 => {
                    positions.push(Vector3::new(vals[0], vals[1], vals[2]));
                    yaws.push(vals.get(3).copied().unwrap_or(0.0));
                }
                k => return Err(Error::parse(ctx, format!("expected 3 or 4 values, got {k}"))),
            }
        }
        Self::new(positions, yaws)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (p, y) in self.positions.iter().zip(&self.yaws) {
            let _ = writeln!(out, "{} {} {} {}", fmt_f64(p.x), fmt_f64(p.y), fmt_f64(p.z), fmt_f64(*y));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
