//! Scenario suites: parallel evaluation, noise sweeps and the planted-obstacle
//! planning check.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::artifacts::ArtifactDir;
use super::{gt_occupancy, Pipeline, PipelineConfig, RunManifest};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::metrics::{eval_plan, planning_metrics, MetricsAccumulator, MetricsReport, PlanEval, PlanInput, PlanningMetrics, HORIZON_STEPS};
use crate::planner::{occupied_points, optimize_plan, PlannerConfig};
use crate::scene::{generate_scenario, Box2d, NoiseSpec, Scenario, ScenarioSpec};
use crate::seed;

pub const THREADS_ENV: &str = "GOALSTACK_THREADS";

/// Thread cap from `GOALSTACK_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| Error::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub report: MetricsReport,
    pub accumulator: MetricsAccumulator,
    pub manifests: Vec<RunManifest>,
}

/// Generated scenarios `start..start + count` of the pipeline's generator.
pub fn generate_suite(pipeline: &Pipeline, start: u64, count: u64) -> Result<Vec<(u64, Scenario)>> {
    (start..start + count).map(|i| Ok((i, pipeline.generate(i)?))).collect()
}

/// Run every scenario (in parallel, at most `threads` workers) and merge the
/// per-scenario accumulators. With `out`, scenario `i` writes below
/// `out/scenario-<i>` and the suite report lands in `out`.
pub fn eval_suite(
    pipeline: &Pipeline,
    scenarios: &[(u64, Scenario)],
    out: Option<&Path>,
    threads: Option<usize>,
) -> Result<SuiteResult> {
    if scenarios.is_empty() {
        return Err(Error::config("suite has no scenarios"));
    }
    let run_one = |(i, sc): &(u64, Scenario)| {
        let dir = out.map(|o| o.join(format!("scenario-{i:04}")));
        pipeline.run(sc, *i, dir.as_deref())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let runs: Vec<_> = pool.install(|| scenarios.par_iter().map(run_one).collect::<Result<Vec<_>>>())?;
    let mut acc = MetricsAccumulator::default();
    let mut manifests = Vec::with_capacity(runs.len());
    for ((i, _), run) in scenarios.iter().zip(runs) {
        acc.insert(*i, run.eval)?;
        manifests.push(run.manifest);
    }
    let report = acc.report(&pipeline.cfg.metrics);
    if out.is_some() {
        let mut dir = ArtifactDir::create(out)?;
        dir.write("report.json", report.to_json()?.as_bytes())?;
        dir.write("report.csv", report.to_csv().as_bytes())?;
        dir.write("planning_horizons.csv", planning_csv(&report).as_bytes())?;
    }
    Ok(SuiteResult {
        report,
        accumulator: acc,
        manifests,
    })
}

/// `horizon_s,l2,collision` rows for plotting.
pub fn planning_csv(report: &MetricsReport) -> String {
    let mut s = String::from("horizon_s,l2,collision\n");
    for (h, &steps) in HORIZON_STEPS.iter().enumerate() {
        let secs = ["1s", "2s", "3s"][h];
        let f = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            s,
            "{},{},{}",
            steps / 2,
            f(report.get(&format!("planning.l2_{secs}"))),
            f(report.get(&format!("planning.collision_{secs}")))
        );
    }
    s
}

/// Re-run the suite with the detection position noise set to each level.
/// Returns `level,metric,value` CSV rows and the reports.
pub fn noise_sweep(
    cfg: &PipelineConfig,
    scenarios: &[(u64, Scenario)],
    levels: &[f64],
    threads: Option<usize>,
) -> Result<(String, Vec<(f64, MetricsReport)>)> {
    let mut csv = String::from("position_std,metric,value\n");
    let mut reports = Vec::new();
    for &level in levels {
        let mut c = cfg.clone();
        c.noise = NoiseSpec {
            position_std: level,
            ..cfg.noise
        };
        c.write_rasters = false;
        let p = Pipeline::new(c)?;
        let r = eval_suite(&p, scenarios, None, threads)?.report;
        for (name, v) in &r.metrics {
            let _ = writeln!(csv, "{level},{name},{}", v.map_or(String::new(), |v| v.to_string()));
        }
        reports.push((level, r));
    }
    Ok((csv, reports))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSuite {
    pub all_pre: PlanningMetrics,
    pub all_post: PlanningMetrics,
    pub planted_pre: PlanningMetrics,
    pub planted_post: PlanningMetrics,
    /// Whether every objective trace was non-increasing.
    pub traces_monotone: bool,
}

/// Obstacle planted next to the raw plan in the planted-obstacle suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedObstacle {
    pub width: f64,
    pub length: f64,
    /// Waypoint index the obstacle is placed beside.
    pub waypoint: usize,
    /// Sideways shift of the obstacle centre from the waypoint, metres;
    /// the side alternates between planted scenarios.
    pub lateral_offset: f64,
}

impl Default for PlantedObstacle {
    /// A parked car encroaching 1 m into the ego's path at the fourth waypoint.
    fn default() -> Self {
        PlantedObstacle {
            width: 1.9,
            length: 4.5,
            waypoint: 3,
            lateral_offset: 1.0,
        }
    }
}

/// Planning check on ground-truth occupancy: the raw plan is the ego's
/// ground-truth future with a small seeded jitter, and every even-indexed
/// scenario gets `obstacle` planted beside its raw plan, aligned with the
/// direction of travel. The optimizer sees the ground-truth agents (and the
/// planted obstacle) at each waypoint's frame.
pub fn planted_obstacle_suite(
    spec: &ScenarioSpec,
    grid: &GridSpec,
    planner: &PlannerConfig,
    obstacle: &PlantedObstacle,
    count: u64,
    seed_value: u64,
) -> Result<PlantedSuite> {
    let t_p = planner.horizon;
    let spec = ScenarioSpec {
        horizon: spec.horizon.max(t_p + 1),
        ..spec.clone()
    };
    let mut all_pre = Vec::new();
    let mut all_post = Vec::new();
    let mut planted_pre = Vec::new();
    let mut planted_post = Vec::new();
    let mut monotone = true;
    for i in 0..count {
        let s = seed::derive_index(seed_value, i);
        let scenario = generate_scenario(&spec, s)?;
        let mut rng = seed::rng(seed::derive(s, "jitter"));
        let ego = scenario.ego_position(0);
        let gt_ego: Vec<[f64; 2]> = (1..=t_p).map(|k| scenario.ego_position(k)).collect();
        let raw = Array2::from_shape_fn((t_p, 2), |(t, c)| gt_ego[t][c]) + Array2::from_shape_fn((t_p, 2), |_| rng.random_range(-0.2..0.2));
        let planted = i % 2 == 0;
        let j = obstacle.waypoint.min(t_p - 1);
        let planted_boxes: Vec<Box2d> = if planted {
            let prev = if j == 0 { ego } else { [raw[[j - 1, 0]], raw[[j - 1, 1]]] };
            let yaw = (raw[[j, 1]] - prev[1]).atan2(raw[[j, 0]] - prev[0]);
            let side = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let shift = side * obstacle.lateral_offset;
            let (s, c) = yaw.sin_cos();
            vec![Box2d::new(
                raw[[j, 0]] - s * shift,
                raw[[j, 1]] + c * shift,
                obstacle.width,
                obstacle.length,
                yaw,
            )]
        } else {
            Vec::new()
        };
        let view = grid.centered_at(ego);
        let layers: Vec<Vec<[f64; 2]>> = (1..=t_p)
            .map(|k| gt_occupancy(&scenario, k, &view, &planted_boxes).map(|g| occupied_points(&g)))
            .collect::<Result<_>>()?;
        let plan = optimize_plan(&raw, &layers, planner)?;
        monotone &= plan.objective_trace.windows(2).all(|w| w[1] <= w[0]);
        let agents: Vec<Vec<Box2d>> = (1..=t_p)
            .map(|k| {
                let mut b: Vec<Box2d> = scenario.agents_at(k).into_iter().map(|a| a.bbox).collect();
                b.extend_from_slice(&planted_boxes);
                b
            })
            .collect();
        let input = |plan| PlanInput {
            plan,
            gt_ego: &gt_ego,
            agents: &agents,
            start: ego,
            start_yaw: scenario.ego[0].yaw,
            ego_width: planner.ego_width,
            ego_length: planner.ego_length,
        };
        let pre = eval_plan(&input(&raw))?;
        let post = eval_plan(&input(&plan.optimized))?;
        if planted {
            planted_pre.push(pre.clone());
            planted_post.push(post.clone());
        }
        all_pre.push(pre);
        all_post.push(post);
    }
    let m = |v: &[PlanEval]| planning_metrics(v.iter());
    Ok(PlantedSuite {
        all_pre: m(&all_pre),
        all_post: m(&all_post),
        planted_pre: m(&planted_pre),
        planted_post: m(&planted_post),
        traces_monotone: monotone,
    })
}
