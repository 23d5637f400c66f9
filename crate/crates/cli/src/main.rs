use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quadplan::data::{collect, CollectConfig, Dataset};
use quadplan::error::{Error, Result};
use quadplan::eval::{
    drag_settings, drag_sweep, eval_tasks, evaluate, outcomes_to_csv, sweep_csv_header, EvalConfig,
    EvalResult, SweepConfig,
};
use quadplan::lcd::PlanOptions;
use quadplan::params::{parse_overrides, Vehicle};
use quadplan::planner::{PlannerRegistry, PlannerSettings};
use quadplan::plot::{eval_svg, parse_rollout_csv, trajectory_svg};
use quadplan::rollout::{log_to_csv, rollout_logged, SimConfig};
use quadplan::tracknet::{train, TrackNetModel, TrainConfig};
use quadplan::trajectory::{PiecewiseTrajectory, WaypointSet};

const SYNOPSIS: &str = "usage: quadplan <collect|train|plan|rollout|eval|sweep|plot> [options]
  collect  --tasks N --seed S --vavg F --drag dx,dy,dz --out FILE --workers W
  train    --data FILE --out MODEL [--epochs E --lr F --batch B --train-seed S]
  plan     --waypoints FILE [--model MODEL --lambda F] --out TRAJ [--planner NAME]
  rollout  --traj TRAJ --log CSV [--seed S]
  eval     --planner NAME [--model MODEL] --tasks N --seed S [--out CSV]
  sweep    --points K [--model MODEL --no-retrain] --out CSV
  plot     (--traj TRAJ [--rollout CSV] | --eval CSV) --svg FILE
vehicle options on every command: --preset NAME --params FILE --set k=v,...
run `quadplan <command> --help` for details";

#[derive(Parser, Debug)]
#[command(name = "quadplan", version, about = "Controller-aware quadrotor trajectory planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct VehicleArgs {
    /// Built-in vehicle preset.
    #[arg(long, default_value = "crazyflie-default")]
    preset: String,
    /// Parameter file overriding the preset entirely.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Individual overrides, e.g. `omega_max=2400,k_x=0.3`.
    #[arg(long = "set")]
    overrides: Option<String>,
    /// Parasitic drag `dx,dy,dz` in N/(m/s).
    #[arg(long)]
    drag: Option<String>,
}

impl VehicleArgs {
    fn vehicle(&self) -> Result<Vehicle> {
        let mut v = match &self.params {
            Some(p) => Vehicle::from_file(p)?,
            None => Vehicle::preset(&self.preset)?,
        };
        if let Some(o) = &self.overrides {
            let kv = parse_overrides(o)?;
            v = v.with_overrides(kv.iter().map(|(k, x)| (k.as_str(), *x)))?;
        }
        if let Some(d) = &self.drag {
            let parts: Vec<f64> = d
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::InvalidOverride(format!("drag `{d}`")))?;
            let [dx, dy, dz] = parts[..] else {
                return Err(Error::InvalidOverride(format!("drag `{d}` needs three values")));
            };
            v = v.with_overrides([("d_x", dx), ("d_y", dy), ("d_z", dz)])?;
        }
        Ok(v)
    }
}

#[derive(Args, Debug, Clone)]
struct PlanArgs {
    /// Weight of the learned tracking penalty.
    #[arg(long, default_value_t = PlanOptions::default().lambda)]
    lambda: f64,
    #[arg(long, default_value_t = PlanOptions::default().max_iterations)]
    max_iter: usize,
    /// Add randomly perturbed restarts to the descent.
    #[arg(long, default_value_t = 0)]
    restarts: usize,
    /// Fail instead of falling back to min-snap on a non-finite objective.
    #[arg(long)]
    no_fallback: bool,
}

impl PlanArgs {
    fn options(&self) -> PlanOptions {
        PlanOptions {
            lambda: self.lambda,
            max_iterations: self.max_iter,
            restarts: self.restarts,
            fallback: !self.no_fallback,
            ..PlanOptions::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch: usize,
    #[arg(long = "train-seed", default_value_t = 0)]
    train_seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            batch_size: self.batch,
            seed: self.train_seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out min-snap references on random tasks and write a labeled dataset.
    Collect {
        #[arg(long, default_value_t = 5000)]
        tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        vavg: f64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        vehicle: VehicleArgs,
    },
    /// Fit the tracking-cost network to a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Plan a trajectory through a waypoint file.
    Plan {
        #[arg(long)]
        waypoints: PathBuf,
        #[arg(long, default_value = "lcd")]
        planner: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        vavg: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Fly a trajectory file in closed loop and log the run.
    Rollout {
        #[arg(long)]
        traj: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        vehicle: VehicleArgs,
    },
    /// Crash-rate evaluation of one planner on a seeded task list.
    Eval {
        #[arg(long)]
        planner: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        tasks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        vavg: f64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Per-task CSV destination.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        vehicle: VehicleArgs,
    },
    /// Evaluate planners across evenly spaced drag settings.
    Sweep {
        #[arg(long, default_value_t = 5)]
        points: usize,
        /// Shared model; required with --no-retrain.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        no_retrain: bool,
        #[arg(long, default_value = "minsnap,lcd")]
        planners: String,
        #[arg(long, default_value_t = 5000)]
        collect_tasks: usize,
        #[arg(long, default_value_t = 50)]
        tasks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        vehicle: VehicleArgs,
    },
    /// Render a trajectory (optionally with its rollout) or an eval CSV to SVG.
    Plot {
        #[arg(long, conflicts_with = "eval")]
        traj: Option<PathBuf>,
        #[arg(long, requires = "traj")]
        rollout: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        svg: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn load_model(path: Option<&PathBuf>) -> Result<Option<Arc<TrackNetModel>>> {
    path.map(|p| TrackNetModel::load(p).map(Arc::new)).transpose()
}

fn run(cmd: Command) -> Result<()> {
    let registry = PlannerRegistry::with_builtins();
    match cmd {
        Command::Collect {
            tasks,
            seed,
            vavg,
            workers,
            out,
            vehicle,
        } => {
            let mut cfg = CollectConfig::new(vehicle.vehicle()?);
            cfg.tasks = tasks;
            cfg.master_seed = seed;
            cfg.v_avg = vavg;
            cfg.workers = workers;
            let ds = collect(&cfg)?;
            ds.save(&out)?;
            let n = ds.records().count();
            let crashes = ds.records().filter(|r| r.crashed).count();
            println!(
                "records={n} skipped={} crashes={crashes} crash_rate_pct={:.1}",
                ds.skipped(),
                if n == 0 { 0.0 } else { 100.0 * crashes as f64 / n as f64 }
            );
        }
        Command::Train { data, out, train: t } => {
            let ds = Dataset::load(&data)?;
            let records: Vec<_> = ds.records().cloned().collect();
            let (model, report) = train(&records, &t.config())?;
            model.save(&out)?;
            println!("epoch,train_loss,val_loss");
            println!("0,,{}", report.initial_val_loss);
            for (i, (tl, vl)) in report.epochs.iter().enumerate() {
                println!("{},{tl},{vl}", i + 1);
            }
            println!("val_spearman={:.4}", report.val_spearman);
        }
        Command::Plan {
            waypoints,
            planner,
            model,
            vavg,
            out,
            plan,
        } => {
            let wps = WaypointSet::load(&waypoints)?;
            let settings = PlannerSettings {
                model: load_model(model.as_ref())?,
                options: plan.options(),
            };
            let p = registry.build(&planner, &settings)?;
            let result = p.plan(&wps, vavg)?;
            result.trajectory.save(&out)?;
            if let Some(r) = result.report {
                println!(
                    "iterations={} snap={:.6e}->{:.6e} penalty={:.6}->{:.6} fallback={}",
                    r.iterations, r.initial_snap, r.final_snap, r.initial_penalty, r.final_penalty, r.fallback
                );
            }
        }
        Command::Rollout {
            traj,
            log,
            seed,
            vehicle,
        } => {
            let v = vehicle.vehicle()?;
            let tr = PiecewiseTrajectory::load(&traj)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (out, rows) = rollout_logged(&tr, &v.params, &v.gains, &SimConfig::default(), &mut rng)?;
            if let Some(path) = log {
                write(&path, &log_to_csv(&rows))?;
            }
            println!(
                "label={} max_error_m={} crashed={} sat_fraction={}",
                out.label,
                out.max_error,
                u8::from(out.crashed),
                out.saturation_fraction()
            );
        }
        Command::Eval {
            planner,
            model,
            tasks,
            seed,
            vavg,
            workers,
            out,
            plan,
            vehicle,
        } => {
            let mut ec = EvalConfig::new(vehicle.vehicle()?);
            ec.tasks = tasks;
            ec.eval_seed = seed;
            ec.v_avg = vavg;
            ec.workers = workers;
            let model = load_model(model.as_ref())?;
            let settings = PlannerSettings {
                model: model.clone(),
                options: plan.options(),
            };
            let p = registry.build(&planner, &settings)?;
            let list = eval_tasks(&ec);
            let (result, outcomes) = evaluate(p.as_ref(), &list, &ec, model.as_deref())?;
            if let Some(path) = out {
                write(&path, &outcomes_to_csv(&outcomes))?;
            }
            println!("{}", EvalResult::CSV_HEADER);
            println!("{}", result.csv_row());
        }
        Command::Sweep {
            points,
            model,
            no_retrain,
            planners,
            collect_tasks,
            tasks,
            seed,
            workers,
            out,
            plan,
            train: t,
            vehicle,
        } => {
            let v = vehicle.vehicle()?;
            let shared = load_model(model.as_ref())?;
            if no_retrain && shared.is_none() && planners.split(',').any(|p| p.trim() == "lcd") {
                return Err(Error::InvalidConfig("--no-retrain needs --model".into()));
            }
            let mut cc = CollectConfig::new(v.clone());
            cc.tasks = collect_tasks;
            cc.workers = workers;
            let mut ec = EvalConfig::new(v);
            ec.tasks = tasks;
            ec.eval_seed = seed;
            ec.workers = workers;
            let cfg = SweepConfig {
                points,
                retrain: !no_retrain,
                planners: planners.split(',').map(|s| s.trim().to_string()).collect(),
                collect: cc,
                train: t.config(),
                eval: ec,
                plan: plan.options(),
            };
            let mut file = File::create(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let io = |e| Error::Io {
                path: out.clone(),
                source: e,
            };
            file.write_all(sweep_csv_header(&drag_settings(points)?).as_bytes())
                .map_err(io)?;
            file.flush().map_err(io)?;
            drag_sweep(&cfg, &registry, shared, |row| {
                file.write_all(row.csv_lines().as_bytes()).map_err(io)?;
                file.flush().map_err(io)?;
                print!("{}", row.csv_lines());
                Ok(())
            })?;
        }
        Command::Plot {
            traj,
            rollout,
            eval,
            svg,
        } => {
            let text = match (traj, eval) {
                (Some(t), None) => {
                    let tr = PiecewiseTrajectory::load(&t)?;
                    let trace = match rollout {
                        Some(r) => parse_rollout_csv(&read(&r)?)?,
                        None => Vec::new(),
                    };
                    trajectory_svg(&tr, &trace)?.0
                }
                (None, Some(e)) => eval_svg(&read(&e)?)?,
                _ => return Err(Error::InvalidConfig("plot needs --traj or --eval".into())),
            };
            write(&svg, &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            eprintln!("{SYNOPSIS}");
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
