//! Evaluation: tracking, mapping, motion, occupancy and planning metrics.
//!
//! Per-scenario evaluation data lives in a [`MetricsAccumulator`] keyed by
//! scenario index; merging is a map union, and [`MetricsAccumulator::report`]
//! folds the scenarios in index order so any merge tree yields the same report.

pub mod motion;
pub mod occupancy;
pub mod planning;
pub mod tracking;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub use motion::{
    average_precision, eval_motion_frame, min_ade_fde, motion_metrics, ForecastGt, ForecastPred, MotionFrameEval,
    MotionMetricConfig, MotionMetrics,
};
pub use occupancy::{eval_occupancy, eval_occupancy_sequence, occupancy_metrics, OccEval, OccRangeMetrics, OccSequenceEval};
pub use planning::{eval_plan, planning_metrics, PlanEval, PlanInput, PlanningMetrics, HORIZON_STEPS};
pub use tracking::{amota, clear_counts, greedy_match, GtObject, PredTrack, TrackFrame, TrackingMetricConfig, TrackingMetrics};

pub const MAP_CLASSES: [&str; 4] = ["lane", "divider", "crossing", "drivable"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub tracking: TrackingMetricConfig,
    pub motion: MotionMetricConfig,
}

/// Everything one scenario contributes to the report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEval {
    pub tracking: Vec<TrackFrame>,
    /// Intersection and union cell counts per map class.
    pub map: [(u64, u64); 4],
    pub motion: Vec<MotionFrameEval>,
    pub occupancy: Vec<OccEval>,
    pub planning: Vec<PlanEval>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsAccumulator {
    pub scenarios: BTreeMap<u64, ScenarioEval>,
}

impl MetricsAccumulator {
    pub fn single(index: u64, eval: ScenarioEval) -> Self {
        MetricsAccumulator {
            scenarios: BTreeMap::from([(index, eval)]),
        }
    }

    pub fn insert(&mut self, index: u64, eval: ScenarioEval) -> Result<()> {
        ensure!(
            !self.scenarios.contains_key(&index),
            "metrics",
            "merge",
            "scenario {index} evaluated twice"
        );
        self.scenarios.insert(index, eval);
        Ok(())
    }

    pub fn merge(mut self, other: MetricsAccumulator) -> Result<Self> {
        for (k, v) in other.scenarios {
            self.insert(k, v)?;
        }
        Ok(self)
    }

    pub fn report(&self, cfg: &MetricsConfig) -> MetricsReport {
        let mut r = MetricsReport {
            scenarios: self.scenarios.len() as u64,
            ..Default::default()
        };
        let evals: Vec<&ScenarioEval> = self.scenarios.values().collect();

        let seqs: Vec<&[TrackFrame]> = evals.iter().map(|e| e.tracking.as_slice()).collect();
        match amota(&seqs, &cfg.tracking) {
            Some(t) => {
                let prov = [("gt", t.gt as f64), ("recall_points", t.points.len() as f64)];
                r.put("tracking.amota", Some(t.amota), &prov);
                r.put("tracking.amotp", Some(t.amotp), &prov);
                r.put("tracking.recall", Some(t.recall), &prov);
                r.put("tracking.ids", Some(t.ids as f64), &prov);
            }
            None => {
                for name in ["amota", "amotp", "recall", "ids"] {
                    r.put(&format!("tracking.{name}"), None, &[("gt", 0.0)]);
                }
            }
        }

        for (c, name) in MAP_CLASSES.iter().enumerate() {
            let (i, u) = evals
                .iter()
                .fold((0u64, 0u64), |(i, u), e| (i + e.map[c].0, u + e.map[c].1));
            let iou = if u == 0 { 1.0 } else { i as f64 / u as f64 };
            r.put(
                &format!("map.iou_{name}"),
                Some(iou),
                &[("intersection", i as f64), ("union", u as f64)],
            );
        }

        let m = motion_metrics(evals.iter().flat_map(|e| e.motion.iter()), &cfg.motion);
        let tp = [("matched", m.matched as f64)];
        r.put("motion.min_ade", m.min_ade, &tp);
        r.put("motion.min_fde", m.min_fde, &tp);
        r.put("motion.miss_rate", m.miss_rate, &tp);
        r.put(
            "motion.epa",
            m.epa,
            &[("hits", m.hits as f64), ("false_positives", m.false_positives as f64), ("gt", m.gt as f64)],
        );
        r.put("motion.min_fde_ap", m.min_fde_ap, &[("gt", m.gt as f64)]);

        for (range, pick) in [
            ("near", (|o: &OccEval| &o.near) as fn(&OccEval) -> &OccSequenceEval),
            ("far", |o: &OccEval| &o.far),
        ] {
            let o = occupancy_metrics(evals.iter().flat_map(|e| e.occupancy.iter().map(pick)));
            r.put(
                &format!("occupancy.iou_{range}"),
                o.iou,
                &[("intersection", o.intersection as f64), ("union", o.union as f64)],
            );
            r.put(
                &format!("occupancy.vpq_{range}"),
                o.vpq,
                &[("tp", o.tp as f64), ("fp", o.fp as f64), ("fn", o.fn_ as f64)],
            );
        }

        let p = planning_metrics(evals.iter().flat_map(|e| e.planning.iter()));
        for (h, secs) in ["1s", "2s", "3s"].iter().enumerate() {
            r.put(&format!("planning.l2_{secs}"), p.l2[h], &[("plans", p.plans as f64)]);
            r.put(
                &format!("planning.collision_{secs}"),
                p.collision[h],
                &[("colliding_steps", p.colliding_steps[h] as f64), ("steps", p.steps[h] as f64)],
            );
        }
        r.put("planning.l2_avg", p.l2_avg, &[("plans", p.plans as f64)]);
        r.put("planning.collision_avg", p.collision_avg, &[("plans", p.plans as f64)]);
        r
    }
}

/// Flat metric map; absent values are undefined (for example no ground truth).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenarios: u64,
    pub metrics: BTreeMap<String, Option<f64>>,
    /// Counts behind each value.
    pub provenance: BTreeMap<String, BTreeMap<String, f64>>,
}

impl MetricsReport {
    fn put(&mut self, name: &str, value: Option<f64>, counts: &[(&str, f64)]) {
        self.metrics.insert(name.to_string(), value);
        self.provenance
            .insert(name.to_string(), counts.iter().map(|&(k, v)| (k.to_string(), v)).collect());
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied().flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `metric,value,counts` with counts as `key=value` pairs joined by `;`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value,counts\n");
        for (name, v) in &self.metrics {
            let counts = self.provenance.get(name).map_or(String::new(), |c| {
                c.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
            });
            let value = v.map_or(String::new(), |v| v.to_string());
            let _ = writeln!(s, "{name},{value},{counts}");
        }
        s
    }
}
