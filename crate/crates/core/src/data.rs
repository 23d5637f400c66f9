//! Labeled data collection: random waypoint tasks, min-snap references,
//! closed-loop rollouts and the tracking-cost labels they produce.
//!
//! Every task draws from its own random stream derived from
//! `(namespace, master seed, task index)`, so records are independent of
//! worker count and scheduling order.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::minsnap::{solve_minsnap, ORDER};
use crate::params::Vehicle;
use crate::rollout::{rollout_cost, RolloutOutcome, SimConfig};
use crate::trajectory::{coeff_len, fmt_f64, PiecewiseTrajectory, WaypointSet};

/// Seed namespace for training-data tasks.
pub const COLLECT_NAMESPACE: u64 = 0x636f_6c6c_6563_7400;
/// Seed namespace for evaluation tasks.
pub const EVAL_NAMESPACE: u64 = 0x6576_616c_7561_7465;

const MAX_SAMPLING_ATTEMPTS: usize = 1000;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-task seed: a 64-bit mix of namespace, master seed and index.
pub fn task_seed(namespace: u64, master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(namespace) ^ master) ^ index)
}

#[derive(Debug, Clone)]
pub struct TaskSampler {
    pub domain_min: Vector3<f64>,
    pub domain_max: Vector3<f64>,
    pub min_spacing: f64,
    pub max_spacing: f64,
    pub waypoints: usize,
}

impl Default for TaskSampler {
    fn default() -> Self {
        TaskSampler {
            domain_min: Vector3::zeros(),
            domain_max: Vector3::repeat(10.0),
            min_spacing: 1.0,
            max_spacing: 3.0,
            waypoints: 4,
        }
    }
}

impl TaskSampler {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_spacing > 0.0 && self.min_spacing <= self.max_spacing) {
            return Err(Error::InvalidConfig("need 0 < min spacing <= max spacing".into()));
        }
        if (0..3).any(|i| self.domain_max[i] <= self.domain_min[i]) {
            return Err(Error::InvalidConfig("empty sampling domain".into()));
        }
        if self.waypoints < 2 {
            return Err(Error::InvalidConfig("need at least two waypoints".into()));
        }
        Ok(())
    }

    fn inside(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.domain_min[i] && p[i] <= self.domain_max[i])
    }

    /// First waypoint uniform in the domain, each next one uniform in the
    /// spherical shell around its predecessor, rejected until inside.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<WaypointSet> {
        self.validate()?;
        let mut pts = Vec::with_capacity(self.waypoints);
        pts.push(Vector3::from_fn(|i, _| {
            rng.random_range(self.domain_min[i]..=self.domain_max[i])
        }));
        let (r0, r1) = (self.min_spacing.powi(3), self.max_spacing.powi(3));
        for _ in 1..self.waypoints {
            let prev = *pts.last().expect("non-empty");
            let mut accepted = None;
            for _ in 0..MAX_SAMPLING_ATTEMPTS {
                let dir: [f64; 3] = UnitSphere.sample(rng);
                let u: f64 = rng.random();
                let radius = if r1 > r0 {
                    (r0 + u * (r1 - r0)).cbrt()
                } else {
                    self.min_spacing
                };
                let p = prev + Vector3::from(dir) * radius;
                if self.inside(&p) {
                    accepted = Some(p);
                    break;
                }
            }
            pts.push(accepted.ok_or(Error::SamplingExhausted(MAX_SAMPLING_ATTEMPTS))?);
        }
        WaypointSet::from_positions(pts)
    }
}

pub fn sample_waypoints<R: Rng + ?Sized>(rng: &mut R, sampler: &TaskSampler) -> Result<WaypointSet> {
    sampler.sample(rng)
}

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub tasks: usize,
    pub master_seed: u64,
    pub sampler: TaskSampler,
    pub v_avg: f64,
    pub vehicle: Vehicle,
    pub sim: SimConfig,
    pub workers: usize,
}

impl CollectConfig {
    pub fn new(vehicle: Vehicle) -> Self {
        CollectConfig {
            tasks: 5000,
            master_seed: 0,
            sampler: TaskSampler::default(),
            v_avg: 2.0,
            vehicle,
            sim: SimConfig::default(),
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if !(self.v_avg > 0.0) || self.workers == 0 {
            return Err(Error::InvalidConfig("need v_avg > 0 and workers >= 1".into()));
        }
        if !(self.sim.control_rate > 0.0) || self.sim.substeps == 0 {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        Ok(())
    }
}

/// One labeled datum.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub seed: u64,
    pub waypoints: WaypointSet,
    pub durations: Vec<f64>,
    pub coeffs: Vec<f64>,
    /// Integrated tracking cost, m^2 s.
    pub label: f64,
    pub max_error: f64,
    pub crashed: bool,
    pub drag: Vector3<f64>,
}

impl RolloutRecord {
    pub fn trajectory(&self) -> Result<PiecewiseTrajectory> {
        PiecewiseTrajectory::new(ORDER, self.durations.clone(), self.coeffs.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetEntry {
    Record(RolloutRecord),
    /// A task whose planning failed; kept so no index is silently lost.
    Skipped { seed: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub order: usize,
    pub segments: usize,
    pub entries: Vec<DatasetEntry>,
}

/// Runs one training task: sample, plan min-snap, fly, label.
pub fn run_task(config: &CollectConfig, index: u64) -> DatasetEntry {
    let seed = task_seed(COLLECT_NAMESPACE, config.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempt = || -> Result<RolloutRecord> {
        let wps = config.sampler.sample(&mut rng)?;
        let traj = solve_minsnap(&wps, config.v_avg)?;
        let out: RolloutOutcome = rollout_cost(
            &traj,
            &config.vehicle.params,
            &config.vehicle.gains,
            &config.sim,
            &mut rng,
        )?;
        Ok(RolloutRecord {
            seed,
            waypoints: wps,
            durations: traj.durations().to_vec(),
            coeffs: traj.coeffs().to_vec(),
            label: out.label,
            max_error: out.max_error,
            crashed: out.crashed,
            drag: config.vehicle.params.drag,
        })
    };
    match attempt() {
        Ok(r) => DatasetEntry::Record(r),
        Err(e) => DatasetEntry::Skipped {
            seed,
            reason: e.to_string(),
        },
    }
}

/// Collects `config.tasks` labeled rollouts on `config.workers` threads.
/// Entries are ordered by task index.
pub fn collect(config: &CollectConfig) -> Result<Dataset> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let entries = pool.install(|| {
        (0..config.tasks as u64)
            .into_par_iter()
            .map(|i| run_task(config, i))
            .collect()
    });
    Ok(Dataset {
        order: ORDER,
        segments: config.sampler.waypoints - 1,
        entries,
    })
}

impl Dataset {
    pub fn records(&self) -> impl Iterator<Item = &RolloutRecord> {
        self.entries.iter().filter_map(|e| match e {
            DatasetEntry::Record(r) => Some(r),
            DatasetEntry::Skipped { .. } => None,
        })
    }

    pub fn skipped(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e, DatasetEntry::Skipped { .. }))
            .count()
    }

    pub fn header(&self) -> String {
        format!("QLCD-DATASET v1 n={} s={}", self.order, self.segments)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for e in &self.entries {
            match e {
                DatasetEntry::Record(r) => {
                    let mut fields: Vec<String> = vec![r.seed.to_string()];
                    for p in &r.waypoints.positions {
                        fields.extend(p.iter().map(|v| fmt_f64(*v)));
                    }
                    fields.extend(r.waypoints.yaws.iter().map(|v| fmt_f64(*v)));
                    fields.extend(r.durations.iter().map(|v| fmt_f64(*v)));
                    fields.extend(r.coeffs.iter().map(|v| fmt_f64(*v)));
                    fields.push(fmt_f64(r.label));
                    fields.push(fmt_f64(r.max_error));
                    fields.push(u8::from(r.crashed).to_string());
                    fields.extend(r.drag.iter().map(|v| fmt_f64(*v)));
                    let _ = writeln!(out, "{}", fields.join(","));
                }
                DatasetEntry::Skipped { seed, reason } => {
                    let reason = reason.replace([',', '\n'], ";");
                    let _ = writeln!(out, "{seed},skipped,{reason}");
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("dataset", "missing header"))?;
        let (order, segments) = parse_header(header)?;
        let wps = segments + 1;
        let ncoef = coeff_len(segments, order);
        let expected = 1 + 3 * wps + wps + segments + ncoef + 3 + 3;
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ctx = format!("dataset line {}", i + 2);
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let seed: u64 = fields[0]
                .parse()
                .map_err(|_| Error::parse(&ctx, "invalid seed"))?;
            if fields.get(1) == Some(&"skipped") {
                entries.push(DatasetEntry::Skipped {
                    seed,
                    reason: fields[2..].join(","),
                });
                continue;
            }
            if fields.len() != expected {
                return Err(Error::parse(
                    &ctx,
                    format!("expected {expected} fields, got {}", fields.len()),
                ));
            }
            let vals: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse().map_err(|_| Error::parse(&ctx, format!("invalid number `{f}`"))))
                .collect::<Result<_>>()?;
            let mut it = vals.into_iter();
            let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
            let coords = take(3 * wps);
            let yaws = take(wps);
            let durations = take(segments);
            let coeffs = take(ncoef);
            let tail = take(6);
            let positions = coords.chunks(3).map(Vector3::from_column_slice).collect();
            entries.push(DatasetEntry::Record(RolloutRecord {
                seed,
                waypoints: WaypointSet::new(positions, yaws)?,
                durations,
                coeffs,
                label: tail[0],
                max_error: tail[1],
                crashed: tail[2] != 0.0,
                drag: Vector3::new(tail[3], tail[4], tail[5]),
            }));
        }
        Ok(Dataset {
            order,
            segments,
            entries,
        })
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

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let bad = || Error::parse("dataset header", format!("unrecognized header `{line}`"));
    let mut parts = line.split_whitespace();
    if parts.next() != Some("QLCD-DATASET") || parts.next() != Some("v1") {
        return Err(bad());
    }
    let mut field = |prefix: &str| -> Result<usize> {
        parts
            .next()
            .and_then(|p| p.strip_prefix(prefix))
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad)
    };
    let n = field("n=")?;
    let s = field("s=")?;
    Ok((n, s))
}

/// Seeded permutation split into (train, validation) index lists.
pub fn split(len: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    assert!(val_fraction > 0.0 && val_fraction < 1.0, "fraction must be in (0, 1)");
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = (len as f64 * val_fraction).round() as usize;
    let val = idx.split_off(len - n_val);
    (idx, val)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sampler_spacing_and_domain() {
        let s = TaskSampler::default();
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = s.sample(&mut rng).unwrap();
            assert_eq!(w.len(), 4);
            for p in &w.positions {
                assert!(p.iter().all(|v| (0.0..=10.0).contains(v)));
            }
            for pair in w.positions.windows(2) {
                let d = (pair[1] - pair[0]).norm();
                assert!((1.0 - 1e-12..=3.0 + 1e-12).contains(&d), "{d}");
            }
            assert!(w.yaws.iter().all(|&y| y == 0.0));
        }
    }

    #[test]
    fn degenerate_shell() {
        let s = TaskSampler {
            min_spacing: 2.0,
            max_spacing: 2.0,
            ..TaskSampler::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = s.sample(&mut rng).unwrap();
        for pair in w.positions.windows(2) {
            assert!(((pair[1] - pair[0]).norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let s = TaskSampler::default();
        let a = s.sample(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = s.sample(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn impossible_domain_exhausts() {
        let s = TaskSampler {
            domain_max: Vector3::repeat(0.1),
            ..TaskSampler::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(s.sample(&mut rng), Err(Error::SamplingExhausted(_))));
    }

    #[test]
    fn split_sizes() {
        let (tr, va) = split(10, 0.2, 1);
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr, va) = split(4, 0.5, 1);
        assert_eq!((tr.len(), va.len()), (2, 2));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(split(50, 0.2, 7), split(50, 0.2, 7));
    }

    #[test]
    fn namespaces_do_not_collide() {
        let train: std::collections::HashSet<u64> =
            (0..5000).map(|i| task_seed(COLLECT_NAMESPACE, 0, i)).collect();
        assert!((0..500).all(|i| !train.contains(&task_seed(EVAL_NAMESPACE, 0, i))));
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut cfg = CollectConfig::new(Vehicle::preset("crazyflie-default").unwrap());
        cfg.tasks = 0;
        let ds = collect(&cfg).unwrap();
        assert_eq!(ds.to_text(), "QLCD-DATASET v1 n=7 s=3\n");
        assert_eq!(Dataset::from_text(&ds.to_text()).unwrap(), ds);
    }

    #[test]
    fn skipped_entries_round_trip() {
        let ds = Dataset {
            order: 7,
            segments: 3,
            entries: vec![DatasetEntry::Skipped {
                seed: 5,
                reason: "KKT system is singular".into(),
            }],
        };
        let back = Dataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.skipped(), 1);
    }
}
