//! Hand-written SVG figures: reference vs executed trajectories and
//! crash-rate bar charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::eval::{SweepRow, TASK_CSV_HEADER};
use crate::trajectory::PiecewiseTrajectory;

const REF_SAMPLES: usize = 400;
const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 720.0;

/// One executed state from a rollout log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub position: Vector3<f64>,
    pub yaw: f64,
}

/// Reads the executed columns of a rollout log written by
/// [`crate::rollout::log_to_csv`].
pub fn parse_rollout_csv(text: &str) -> Result<Vec<TracePoint>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("rollout log", "empty file"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::parse("rollout log", format!("missing column `{name}`")))
    };
    let idx = [find("t")?, find("x")?, find("y")?, find("z")?, find("yaw")?];
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| Error::parse("rollout log", format!("bad value on line {}", n + 2)))
        };
        out.push(TracePoint {
            t: get(idx[0])?,
            position: Vector3::new(get(idx[1])?, get(idx[2])?, get(idx[3])?),
            yaw: get(idx[4])?,
        });
    }
    Ok(out)
}

/// Affine map from data coordinates into a pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub x0: f64,
    pub y0: f64,
    pub w: f64,
    pub h: f64,
    pub lo: (f64, f64),
    pub hi: (f64, f64),
}

impl Frame {
    fn new(rect: (f64, f64, f64, f64), lo: (f64, f64), hi: (f64, f64)) -> Self {
        let pad = |a: f64, b: f64| {
            let span = (b - a).abs().max(1e-9);
            (a - 0.05 * span, b + 0.05 * span)
        };
        let (lx, hx) = pad(lo.0, hi.0);
        let (ly, hy) = pad(lo.1, hi.1);
        Frame {
            x0: rect.0,
            y0: rect.1,
            w: rect.2,
            h: rect.3,
            lo: (lx, ly),
            hi: (hx, hy),
        }
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.x0 + (x - self.lo.0) / (self.hi.0 - self.lo.0) * self.w,
            self.y0 + self.h - (y - self.lo.1) / (self.hi.1 - self.lo.1) * self.h,
        )
    }
}

/// Oblique projection used for the 3D panel; altitude is `-z`.
pub fn project(p: &Vector3<f64>) -> (f64, f64) {
    let (c, s) = (30f64.to_radians().cos(), 30f64.to_radians().sin());
    ((p.x - p.y) * c, (p.x + p.y) * s - p.z)
}

fn bounds(pts: impl Iterator<Item = (f64, f64)>) -> ((f64, f64), (f64, f64)) {
    pts.fold(
        ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY)),
        |(lo, hi), (x, y)| ((lo.0.min(x), lo.1.min(y)), (hi.0.max(x), hi.1.max(y))),
    )
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
    let mut d = String::new();
    for (x, y) in pts {
        write!(d, "{x:.2},{y:.2} ").expect("write to string");
    }
    let dash = if dashed { r#" stroke-dasharray="2,3""# } else { "" };
    writeln!(
        svg,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
        d.trim_end()
    )
    .expect("write to string");
}

fn marker(svg: &mut String, (x, y): (f64, f64)) {
    writeln!(
        svg,
        r#"<circle class="waypoint" cx="{x:.2}" cy="{y:.2}" r="4" fill="none" stroke="black"/>"#
    )
    .expect("write to string");
}

fn label(svg: &mut String, x: f64, y: f64, text: &str) {
    writeln!(svg, r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="12">{text}</text>"#)
        .expect("write to string");
}

fn rect_outline(svg: &mut String, f: &Frame) {
    writeln!(
        svg,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
        f.x0, f.y0, f.w, f.h
    )
    .expect("write to string");
}

/// Reference sample times: a uniform grid with every knot time included.
pub fn reference_times(traj: &PiecewiseTrajectory) -> Vec<f64> {
    let t_end = traj.total_duration();
    let mut ts: Vec<f64> = (0..=REF_SAMPLES)
        .map(|i| (t_end * i as f64 / REF_SAMPLES as f64).min(t_end))
        .chain(traj.knot_times())
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Panel geometry of a trajectory figure, exposed for marker checks.
#[derive(Debug, Clone)]
pub struct TrajectoryLayout {
    pub path: Frame,
    /// x, y, z and yaw against time.
    pub series: [Frame; 4],
}

/// Four-channel figure: projected 3D path plus x, y, z and yaw over time.
/// The reference is dotted, the executed trace solid, and waypoints are
/// circled on the reference at their knot times.
pub fn trajectory_svg(traj: &PiecewiseTrajectory, trace: &[TracePoint]) -> Result<(String, TrajectoryLayout)> {
    let times = reference_times(traj);
    let mut ref_pos = Vec::with_capacity(times.len());
    let mut ref_yaw = Vec::with_capacity(times.len());
    for &t in &times {
        ref_pos.push(traj.position(t)?);
        ref_yaw.push(traj.derivatives(3, t, 0)?[0]);
    }
    let knots = traj.knot_times();

    let all_proj = ref_pos
        .iter()
        .chain(trace.iter().map(|p| &p.position))
        .map(project);
    let (lo, hi) = bounds(all_proj);
    let path = Frame::new((40.0, 40.0, 420.0, 620.0), lo, hi);

    let t_end = times
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(trace.last().map_or(0.0, |p| p.t));
    let channel = |k: usize, i: usize, yaws: &[f64]| -> f64 {
        if k < 3 {
            ref_pos[i][k]
        } else {
            yaws[i]
        }
    };
    let trace_channel = |k: usize, p: &TracePoint| if k < 3 { p.position[k] } else { p.yaw };
    let series: [Frame; 4] = std::array::from_fn(|k| {
        let vals = (0..times.len())
            .map(|i| channel(k, i, &ref_yaw))
            .chain(trace.iter().map(|p| trace_channel(k, p)));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        Frame::new((520.0, 40.0 + k as f64 * 165.0, 400.0, 130.0), (0.0, lo), (t_end, hi))
    });

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .expect("write to string");
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("write to string");

    rect_outline(&mut svg, &path);
    label(&mut svg, path.x0, path.y0 - 8.0, "path (oblique projection, up = -z)");
    let r: Vec<_> = ref_pos.iter().map(|p| {
        let (u, v) = project(p);
        path.map(u, v)
    }).collect();
    polyline(&mut svg, &r, "#1f77b4", true);
    if !trace.is_empty() {
        let e: Vec<_> = trace.iter().map(|p| {
            let (u, v) = project(&p.position);
            path.map(u, v)
        }).collect();
        polyline(&mut svg, &e, "#d62728", false);
    }
    for &tk in &knots {
        let (u, v) = project(&traj.position(tk)?);
        marker(&mut svg, path.map(u, v));
    }

    for (k, f) in series.iter().enumerate() {
        rect_outline(&mut svg, f);
        label(&mut svg, f.x0, f.y0 - 6.0, ["x [m]", "y [m]", "z [m]", "yaw [rad]"][k]);
        let r: Vec<_> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| f.map(t, channel(k, i, &ref_yaw)))
            .collect();
        polyline(&mut svg, &r, "#1f77b4", true);
        if !trace.is_empty() {
            let e: Vec<_> = trace.iter().map(|p| f.map(p.t, trace_channel(k, p))).collect();
            polyline(&mut svg, &e, "#d62728", false);
        }
        for &tk in &knots {
            let v = if k < 3 {
                traj.position(tk)?[k]
            } else {
                traj.derivatives(3, tk, 0)?[0]
            };
            marker(&mut svg, f.map(tk, v));
        }
    }
    label(&mut svg, 520.0, 700.0, "dotted: reference, solid: executed, circles: waypoints");
    svg.push_str("</svg>\n");
    Ok((svg, TrajectoryLayout { path, series }))
}

/// Crash-rate bars from either a per-task evaluation CSV or a sweep CSV.
pub fn eval_svg(csv: &str) -> Result<String> {
    let first = csv
        .lines()
        .find(|l| !l.starts_with('#') && !l.trim().is_empty())
        .ok_or_else(|| Error::parse("eval csv", "no header"))?;
    let groups: Vec<(String, Vec<(String, f64)>)> = if first == TASK_CSV_HEADER {
        per_task_rates(csv)?
    } else if first == SweepRow::CSV_HEADER {
        sweep_rates(csv)?
    } else {
        return Err(Error::parse("eval csv", "unrecognized header"));
    };
    Ok(bar_chart(&groups))
}

fn per_task_rates(csv: &str) -> Result<Vec<(String, Vec<(String, f64)>)>> {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (n, line) in csv.lines().skip(1).enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::parse("eval csv", format!("line {} has {} fields", n + 2, f.len())));
        }
        let e = counts.entry(f[1].to_string()).or_default();
        e.0 += 1;
        e.1 += usize::from(f[3].trim() == "1");
    }
    let bars = counts
        .into_iter()
        .map(|(p, (n, c))| (p, 100.0 * c as f64 / n as f64))
        .collect();
    Ok(vec![(String::new(), bars)])
}

fn sweep_rates(csv: &str) -> Result<Vec<(String, Vec<(String, f64)>)>> {
    let mut groups: Vec<(String, Vec<(String, f64)>)> = Vec::new();
    for (n, line) in csv
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .skip(1)
        .enumerate()
    {
        let f: Vec<&str> = line.split(',').collect();
        let rate: f64 = f
            .get(6)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse("sweep csv", format!("bad row {}", n + 1)))?;
        let key = format!("d=({}, {})", f[0], f[2]);
        match groups.last_mut() {
            Some((k, bars)) if *k == key => bars.push((f[3].to_string(), rate)),
            _ => groups.push((key, vec![(f[3].to_string(), rate)])),
        }
    }
    Ok(groups)
}

fn bar_chart(groups: &[(String, Vec<(String, f64)>)]) -> String {
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let (w, h) = (160.0 + 140.0 * groups.len() as f64, 360.0);
    let plot = Frame {
        x0: 60.0,
        y0: 30.0,
        w: w - 100.0,
        h: 260.0,
        lo: (0.0, 0.0),
        hi: (groups.len() as f64, 100.0),
    };
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .expect("write to string");
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("write to string");
    rect_outline(&mut svg, &plot);
    for pct in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let (_, y) = plot.map(0.0, pct);
        label(&mut svg, 20.0, y + 4.0, &format!("{pct:.0}"));
    }
    label(&mut svg, 10.0, 20.0, "crash rate [%]");
    let mut planners: Vec<&str> = Vec::new();
    for (_, bars) in groups {
        for (p, _) in bars {
            if !planners.contains(&p.as_str()) {
                planners.push(p);
            }
        }
    }
    for (g, (name, bars)) in groups.iter().enumerate() {
        let slot = 0.8 / bars.len().max(1) as f64;
        for (b, (planner, rate)) in bars.iter().enumerate() {
            let x = g as f64 + 0.1 + b as f64 * slot;
            let (px, py) = plot.map(x, *rate);
            let (px2, base) = plot.map(x + slot * 0.9, 0.0);
            let color = COLORS[planners.iter().position(|p| p == planner).unwrap_or(0) % COLORS.len()];
            writeln!(
                svg,
                r#"<rect class="bar" data-planner="{planner}" data-rate="{rate}" x="{px:.2}" y="{py:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                px2 - px,
                base - py
            )
            .expect("write to string");
        }
        let (cx, _) = plot.map(g as f64 + 0.5, 0.0);
        label(&mut svg, cx - 40.0, plot.y0 + plot.h + 18.0, name);
    }
    for (i, p) in planners.iter().enumerate() {
        let y = plot.y0 + plot.h + 40.0 + i as f64 * 0.0;
        let x = 60.0 + i as f64 * 120.0;
        writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            COLORS[i % COLORS.len()]
        )
        .expect("write to string");
        label(&mut svg, x + 14.0, y, p);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minsnap::solve_minsnap;
    use crate::trajectory::WaypointSet;

    fn traj() -> PiecewiseTrajectory {
        let w = WaypointSet::from_positions(vec![
            Vector3::new(1.0, 1.0, 5.0),
            Vector3::new(2.5, 1.0, 5.5),
            Vector3::new(3.0, 3.0, 5.0),
        ])
        .unwrap();
        solve_minsnap(&w, 1.0).unwrap()
    }

    fn circles(svg: &str) -> Vec<(f64, f64)> {
        svg.lines()
            .filter(|l| l.contains(r#"class="waypoint""#))
            .map(|l| {
                let attr = |name: &str| -> f64 {
                    let s = l.split(&format!(r#"{name}=""#)).nth(1).unwrap();
                    s[..s.find('"').unwrap()].parse().unwrap()
                };
                (attr("cx"), attr("cy"))
            })
            .collect()
    }

    #[test]
    fn markers_sit_on_reference_curve() {
        let tr = traj();
        let (svg, layout) = trajectory_svg(&tr, &[]).unwrap();
        let marks = circles(&svg);
        let knots = tr.knot_times();
        assert_eq!(marks.len(), knots.len() * 5);
        let dashed: Vec<&str> = svg.lines().filter(|l| l.contains("stroke-dasharray")).collect();
        assert_eq!(dashed.len(), 5);
        for (panel, line) in dashed.iter().enumerate() {
            let pts: Vec<(f64, f64)> = line
                .split("points=\"")
                .nth(1)
                .unwrap()
                .trim_end_matches("\"/>")
                .split(' ')
                .map(|p| {
                    let (a, b) = p.split_once(',').unwrap();
                    (a.parse().unwrap(), b.parse().unwrap())
                })
                .collect();
            for (k, _) in knots.iter().enumerate() {
                let m = marks[panel * knots.len() + k];
                let nearest = pts
                    .iter()
                    .map(|p| ((p.0 - m.0).powi(2) + (p.1 - m.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min);
                assert!(nearest < 0.75, "panel {panel} knot {k}: {nearest}");
            }
        }
        assert!(layout.series[0].w > 0.0);
    }

    #[test]
    fn executed_trace_is_solid() {
        let tr = traj();
        let trace: Vec<TracePoint> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.05;
                TracePoint { t, position: tr.position(t.min(tr.total_duration())).unwrap(), yaw: 0.0 }
            })
            .collect();
        let (svg, _) = trajectory_svg(&tr, &trace).unwrap();
        let solid = svg
            .lines()
            .filter(|l| l.starts_with("<polyline") && !l.contains("dasharray"))
            .count();
        assert_eq!(solid, 5);
    }

    #[test]
    fn rollout_log_round_trip() {
        let csv = "t,x,y,z,yaw,x_ref,y_ref,z_ref,yaw_ref,saturated\n0,1,2,3,0.5,1,2,3,0,0\n0.01,1.1,2,3,0.5,1,2,3,0,1\n";
        let pts = parse_rollout_csv(csv).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1].position, Vector3::new(1.1, 2.0, 3.0));
        assert!(parse_rollout_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn per_task_bars() {
        let csv = format!(
            "{TASK_CSV_HEADER}\n1,minsnap,2.0,1,,3,0.1\n2,minsnap,0.2,0,,3,0.1\n1,lcd,0.3,0,,3,0.1\n2,lcd,0.2,0,,3,0.1\n"
        );
        let svg = eval_svg(&csv).unwrap();
        assert!(svg.contains(r#"data-planner="minsnap" data-rate="50""#));
        assert!(svg.contains(r#"data-planner="lcd" data-rate="0""#));
    }

    #[test]
    fn sweep_bars_grouped_by_drag() {
        let csv = format!(
            "# drag_xy_range=0.002,0.008\n{}\n0.002,0.002,0.007,minsnap,10,3,30,0.2,0.5,0.1\n0.002,0.002,0.007,lcd,10,1,10,0.2,0.5,0.1\n0.008,0.008,0.013,minsnap,10,4,40,0.2,0.5,0.1\n",
            SweepRow::CSV_HEADER
        );
        let svg = eval_svg(&csv).unwrap();
        assert_eq!(svg.matches(r#"class="bar""#).count(), 3);
        assert!(svg.contains("d=(0.008, 0.013)"));
    }
}
