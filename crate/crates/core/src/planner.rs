//! Named planning strategies behind a common trait.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lcd::{plan, PlanOptions, PlanReport};
use crate::minsnap::solve_minsnap;
use crate::tracknet::TrackNetModel;
use crate::trajectory::{PiecewiseTrajectory, WaypointSet};

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub trajectory: PiecewiseTrajectory,
    /// Present for optimizing planners.
    pub report: Option<PlanReport>,
}

pub trait Planner: Send + Sync {
    fn name(&self) -> &str;
    fn plan(&self, waypoints: &WaypointSet, v_avg: f64) -> Result<PlanOutput>;
}

/// Inputs a factory may draw on when building a planner.
#[derive(Debug, Clone, Default)]
pub struct PlannerSettings {
    pub model: Option<Arc<TrackNetModel>>,
    pub options: PlanOptions,
}

pub struct MinSnapPlanner;

impl Planner for MinSnapPlanner {
    fn name(&self) -> &str {
        "minsnap"
    }

    fn plan(&self, waypoints: &WaypointSet, v_avg: f64) -> Result<PlanOutput> {
        Ok(PlanOutput {
            trajectory: solve_minsnap(waypoints, v_avg)?,
            report: None,
        })
    }
}

pub struct LcdPlanner {
    pub model: Arc<TrackNetModel>,
    pub options: PlanOptions,
}

impl Planner for LcdPlanner {
    fn name(&self) -> &str {
        "lcd"
    }

    fn plan(&self, waypoints: &WaypointSet, v_avg: f64) -> Result<PlanOutput> {
        let (trajectory, report) = plan(waypoints, v_avg, self.model.as_ref(), &self.options)?;
        Ok(PlanOutput {
            trajectory,
            report: Some(report),
        })
    }
}

pub type PlannerFactory = Box<dyn Fn(&PlannerSettings) -> Result<Box<dyn Planner>> + Send + Sync>;

pub struct PlannerRegistry {
    factories: BTreeMap<String, PlannerFactory>,
}

impl PlannerRegistry {
    pub fn empty() -> Self {
        PlannerRegistry {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding `minsnap` and `lcd`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("minsnap", |_| Ok(Box::new(MinSnapPlanner)));
        r.register("lcd", |s| {
            let model = s.model.clone().ok_or_else(|| {
                Error::InvalidConfig("the lcd planner needs a trained model".into())
            })?;
            s.options.validate()?;
            Ok(Box::new(LcdPlanner {
                model,
                options: s.options.clone(),
            }))
        });
        r
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&PlannerSettings) -> Result<Box<dyn Planner>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_string(), Box::new(factory));
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, settings: &PlannerSettings) -> Result<Box<dyn Planner>> {
        let f = self.factories.get(name).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown planner `{name}` (available: {})",
                self.names().join(", ")
            ))
        })?;
        f(settings)
    }
}

impl Default for PlannerRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_are_registered() {
        let r = PlannerRegistry::with_builtins();
        assert_eq!(r.names(), vec!["lcd", "minsnap"]);
        let p = r.build("minsnap", &PlannerSettings::default()).unwrap();
        assert_eq!(p.name(), "minsnap");
    }

    #[test]
    fn lcd_requires_model() {
        let r = PlannerRegistry::with_builtins();
        assert!(matches!(
            r.build("lcd", &PlannerSettings::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn unknown_name_lists_choices() {
        let r = PlannerRegistry::with_builtins();
        let Err(Error::InvalidConfig(msg)) = r.build("rrt", &PlannerSettings::default()) else {
            panic!("expected InvalidConfig");
        };
        assert!(msg.contains("minsnap"));
    }

    #[test]
    fn custom_strategy() {
        struct Fixed;
        impl Planner for Fixed {
            fn name(&self) -> &str {
                "fixed"
            }
            fn plan(&self, w: &WaypointSet, v: f64) -> Result<PlanOutput> {
                MinSnapPlanner.plan(w, v)
            }
        }
        let mut r = PlannerRegistry::empty();
        r.register("fixed", |_| Ok(Box::new(Fixed)));
        let wps = WaypointSet::from_positions(vec![
            nalgebra::Vector3::zeros(),
            nalgebra::Vector3::new(1.0, 0.0, 0.0),
        ])
        .unwrap();
        let out = r.build("fixed", &PlannerSettings::default()).unwrap().plan(&wps, 1.0).unwrap();
        assert!(out.report.is_none());
        assert_eq!(out.trajectory.segments(), 1);
    }
}
