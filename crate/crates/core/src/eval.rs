//! Paired crash-rate evaluation of planners and the drag sweep.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{collect, task_seed, CollectConfig, TaskSampler, EVAL_NAMESPACE};
use crate::error::{Error, Result};
use crate::lcd::PlanOptions;
use crate::minsnap::snap_cost;
use crate::params::Vehicle;
use crate::planner::{Planner, PlannerRegistry, PlannerSettings};
use crate::rollout::{rollout_cost, SimConfig};
use crate::tracknet::{train, TrackNetModel, TrainConfig};
use crate::trajectory::WaypointSet;

pub use crate::rollout::classify_crash;

/// Drag sweep range for the x and y axes, N/(m/s).
pub const DRAG_XY_RANGE: (f64, f64) = (0.002, 0.008);
/// Drag sweep range for the z axis, N/(m/s).
pub const DRAG_Z_RANGE: (f64, f64) = (0.007, 0.013);

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub tasks: usize,
    pub eval_seed: u64,
    pub sampler: TaskSampler,
    pub v_avg: f64,
    pub vehicle: Vehicle,
    pub sim: SimConfig,
    pub workers: usize,
}

impl EvalConfig {
    pub fn new(vehicle: Vehicle) -> Self {
        EvalConfig {
            tasks: 50,
            eval_seed: 1,
            sampler: TaskSampler::default(),
            v_avg: 2.0,
            vehicle,
            sim: SimConfig::default(),
            workers: 1,
        }
    }
}

/// One evaluation task; the seed drives both waypoint sampling and the
/// rollout noise, so every planner sees the same task and the same noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTask {
    pub seed: u64,
    pub waypoints: Option<WaypointSet>,
}

pub fn eval_tasks(config: &EvalConfig) -> Vec<EvalTask> {
    (0..config.tasks as u64)
        .map(|i| {
            let seed = task_seed(EVAL_NAMESPACE, config.eval_seed, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            EvalTask {
                seed,
                waypoints: config.sampler.sample(&mut rng).ok(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_seed: u64,
    pub planner: String,
    pub max_error: f64,
    pub crashed: bool,
    pub label_pred: Option<f64>,
    pub snap_cost: f64,
    pub sat_fraction: f64,
    /// Initial and final learned penalty, for optimizing planners.
    pub penalty: Option<(f64, f64)>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub planner: String,
    pub tasks: usize,
    pub crashes: usize,
    /// Percent.
    pub crash_rate: f64,
    /// Over non-crashed runs; NaN when every run crashed.
    pub mean_error: f64,
    pub max_error: f64,
    pub mean_saturation: f64,
}

impl EvalResult {
    pub fn from_outcomes(planner: &str, outcomes: &[TaskOutcome]) -> Self {
        let tasks = outcomes.len();
        let crashes = outcomes.iter().filter(|o| o.crashed).count();
        let ok: Vec<f64> = outcomes.iter().filter(|o| !o.crashed).map(|o| o.max_error).collect();
        let mean_error = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        };
        let max_error = if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().copied().fold(0.0, f64::max)
        };
        let mean_saturation = if tasks == 0 {
            0.0
        } else {
            outcomes.iter().map(|o| o.sat_fraction).sum::<f64>() / tasks as f64
        };
        EvalResult {
            planner: planner.to_string(),
            tasks,
            crashes,
            crash_rate: if tasks == 0 {
                0.0
            } else {
                100.0 * crashes as f64 / tasks as f64
            },
            mean_error,
            max_error,
            mean_saturation,
        }
    }

    pub const CSV_HEADER: &'static str =
        "planner,tasks,crashes,crash_rate_pct,mean_error_m,max_error_m,mean_sat_fraction";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.planner,
            self.tasks,
            self.crashes,
            self.crash_rate,
            self.mean_error,
            self.max_error,
            self.mean_saturation
        )
    }
}

fn run_eval_task(
    planner: &dyn Planner,
    task: &EvalTask,
    config: &EvalConfig,
    model: Option<&TrackNetModel>,
) -> TaskOutcome {
    let failed = |reason: String| TaskOutcome {
        task_seed: task.seed,
        planner: planner.name().to_string(),
        max_error: f64::INFINITY,
        crashed: true,
        label_pred: None,
        snap_cost: f64::NAN,
        sat_fraction: 0.0,
        penalty: None,
        failure: Some(reason),
    };
    let Some(wps) = &task.waypoints else {
        return failed("waypoint sampling failed".into());
    };
    let out = match planner.plan(wps, config.v_avg) {
        Ok(o) => o,
        Err(e) => return failed(e.to_string()),
    };
    // replay the task stream so noise is identical across planners
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    if config.sampler.sample(&mut rng).is_err() {
        return failed("waypoint sampling failed".into());
    }
    let roll = match rollout_cost(
        &out.trajectory,
        &config.vehicle.params,
        &config.vehicle.gains,
        &config.sim,
        &mut rng,
    ) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    TaskOutcome {
        task_seed: task.seed,
        planner: planner.name().to_string(),
        max_error: roll.max_error,
        crashed: roll.crashed,
        label_pred: model.and_then(|m| m.forward(out.trajectory.coeffs()).ok()),
        snap_cost: snap_cost(&out.trajectory),
        sat_fraction: roll.saturation_fraction(),
        penalty: out.report.map(|r| (r.initial_penalty, r.final_penalty)),
        failure: None,
    }
}

/// Plans and flies every task with `planner`. Per-task failures count as
/// crashes. Outcomes are in task order regardless of `config.workers`.
pub fn evaluate(
    planner: &dyn Planner,
    tasks: &[EvalTask],
    config: &EvalConfig,
    model: Option<&TrackNetModel>,
) -> Result<(EvalResult, Vec<TaskOutcome>)> {
    if config.workers == 0 {
        return Err(Error::InvalidConfig("workers must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<TaskOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| run_eval_task(planner, t, config, model))
            .collect()
    });
    Ok((EvalResult::from_outcomes(planner.name(), &outcomes), outcomes))
}

pub const TASK_CSV_HEADER: &str =
    "task_seed,planner,max_error_m,crashed,label_pred,snap_cost,sat_fraction";

pub fn outcomes_to_csv(outcomes: &[TaskOutcome]) -> String {
    let mut s = format!("{TASK_CSV_HEADER}\n");
    for o in outcomes {
        let pred = o.label_pred.map(|p| p.to_string()).unwrap_or_default();
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            o.task_seed,
            o.planner,
            o.max_error,
            u8::from(o.crashed),
            pred,
            o.snap_cost,
            o.sat_fraction
        )
        .expect("write to string");
    }
    s
}

/// `k` evenly spaced drag settings spanning both sweep ranges.
pub fn drag_settings(k: usize) -> Result<Vec<Vector3<f64>>> {
    if k < 2 {
        return Err(Error::InvalidConfig("a sweep needs at least 2 points".into()));
    }
    let lerp = |(a, b): (f64, f64), i: usize| a + (b - a) * i as f64 / (k - 1) as f64;
    Ok((0..k)
        .map(|i| {
            let xy = lerp(DRAG_XY_RANGE, i);
            Vector3::new(xy, xy, lerp(DRAG_Z_RANGE, i))
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub points: usize,
    /// Collect and train a fresh model at every drag setting.
    pub retrain: bool,
    pub planners: Vec<String>,
    pub collect: CollectConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub plan: PlanOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub drag: Vector3<f64>,
    pub results: Vec<EvalResult>,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str =
        "d_x,d_y,d_z,planner,tasks,crashes,crash_rate_pct,mean_error_m,max_error_m,mean_sat_fraction";

    /// One line per planner.
    pub fn csv_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.results {
            writeln!(s, "{},{},{},{}", self.drag.x, self.drag.y, self.drag.z, r.csv_row())
                .expect("write to string");
        }
        s
    }
}

/// Preamble for sweep CSV files: the swept ranges as comments, then the
/// column header.
pub fn sweep_csv_header(settings: &[Vector3<f64>]) -> String {
    let (first, last) = (settings[0], settings[settings.len() - 1]);
    format!(
        "# drag_xy_range={},{}\n# drag_z_range={},{}\n# points={}\n{}\n",
        first.x,
        last.x,
        first.z,
        last.z,
        settings.len(),
        SweepRow::CSV_HEADER
    )
}

/// Runs the sweep, handing each completed row to `sink` before starting the
/// next setting. Without retraining, `shared_model` is used everywhere.
pub fn drag_sweep<F>(
    config: &SweepConfig,
    registry: &PlannerRegistry,
    shared_model: Option<Arc<TrackNetModel>>,
    mut sink: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(&SweepRow) -> Result<()>,
{
    let settings = drag_settings(config.points)?;
    let mut rows = Vec::with_capacity(settings.len());
    for drag in settings {
        let mut vehicle = config.eval.vehicle.clone();
        vehicle.params.drag = drag;
        let model = if config.retrain {
            let mut cc = config.collect.clone();
            cc.vehicle = vehicle.clone();
            let ds = collect(&cc)?;
            let records: Vec<_> = ds.records().cloned().collect();
            Some(Arc::new(train(&records, &config.train)?.0))
        } else {
            shared_model.clone()
        };
        let settings = PlannerSettings {
            model: model.clone(),
            options: config.plan.clone(),
        };
        let mut ec = config.eval.clone();
        ec.vehicle = vehicle;
        let tasks = eval_tasks(&ec);
        let mut results = Vec::with_capacity(config.planners.len());
        for name in &config.planners {
            let planner = registry.build(name, &settings)?;
            results.push(evaluate(planner.as_ref(), &tasks, &ec, model.as_deref())?.0);
        }
        let row = SweepRow { drag, results };
        sink(&row)?;
        rows.push(row);
    }
    Ok(rows)
}
