//! Configuration and the per-frame loop: track, map, motion, target
//! smoothing, occupancy, planning and evaluation, with every output persisted.

pub mod artifacts;
pub mod suite;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, IdGrid};
use crate::kernel::{join, Params};
use crate::map::{decode_map, map_ground_truth, map_query_matrix, mask_counts, MapConfig, MapParams};
use crate::metrics::{
    eval_motion_frame, eval_occupancy, eval_plan, ForecastGt, ForecastPred, GtObject, MetricsAccumulator, MetricsConfig,
    PlanInput, PredTrack, ScenarioEval, TrackFrame,
};
use crate::motion::{forecast, AnchorFixture, AnchorSet, ForecastRecord, MotionConfig, MotionParams};
use crate::occupancy::{forecast_occupancy, OccConfig, OccParams, FEATURE_STRIDE};
use crate::planner::{
    occupancy_per_waypoint, occupied_points, optimize_plan, plan_head, PlanRecord, PlannerConfig, PlannerParams,
};
use crate::scene::{
    corrupt_detections, generate_scenario, rasterize_boxes, synth_bev_features, Box2d, FeatureSpec, NoiseSpec, Scenario,
    ScenarioSpec,
};
use crate::seed;
use crate::smoother::{smooth, SmootherProblem, SmootherWeights};
use crate::tracker::{step_tracker, TrackRecord, TrackState, TrackerConfig, TrackerParams};
use crate::weights::WeightsFile;
use artifacts::{canonical_hash, pgm_ids, pgm_mask, ArtifactDir};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dim: 256, heads: 8 }
    }
}

/// Occupancy the plan optimizer avoids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccupancySource {
    #[default]
    Predicted,
    /// Ground-truth agent boxes rasterized at each waypoint's frame.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub model: ModelConfig,
    /// BEV raster; its extent is re-centred on the ego every frame.
    pub grid: GridSpec,
    pub scenario: ScenarioSpec,
    pub features: FeatureSpec,
    pub noise: NoiseSpec,
    pub tracker: TrackerConfig,
    pub map: MapConfig,
    pub motion: MotionConfig,
    pub smoother: SmootherWeights,
    pub occupancy: OccConfig,
    pub planner: PlannerConfig,
    pub metrics: MetricsConfig,
    pub planner_occupancy: OccupancySource,
    /// Weights file replacing the seeded initialisation.
    pub weights: Option<PathBuf>,
    /// Write per-frame PGM rasters of map and occupancy outputs.
    pub write_rasters: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            model: ModelConfig::default(),
            grid: GridSpec::default(),
            scenario: ScenarioSpec::default(),
            features: FeatureSpec::default(),
            noise: NoiseSpec::realistic(),
            tracker: TrackerConfig::default(),
            map: MapConfig::default(),
            motion: MotionConfig::default(),
            smoother: SmootherWeights::default(),
            occupancy: OccConfig::default(),
            planner: PlannerConfig::default(),
            metrics: MetricsConfig::default(),
            planner_occupancy: OccupancySource::Predicted,
            weights: None,
            write_rasters: true,
        }
    }
}

impl PipelineConfig {
    /// Full-size model: D = 256 over a 200 x 200 grid of +/-51.2 m.
    pub fn full() -> Self {
        Self::default()
    }

    /// Laptop-scale preset used by the test suites: D = 32 over a 96 x 96
    /// grid of +/-30.72 m, 20 map thing queries; layer counts unchanged.
    pub fn desk() -> Self {
        let extent = 30.72;
        PipelineConfig {
            model: ModelConfig { dim: 32, heads: 4 },
            grid: GridSpec {
                height: 96,
                width: 96,
                extent: [-extent, extent, -extent, extent],
            },
            scenario: ScenarioSpec {
                view_half_extent: extent,
                spawn_radius: 25.0,
                ..ScenarioSpec::default()
            },
            map: MapConfig {
                thing_queries: 20,
                ..MapConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(s).map_err(|e| Error::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        canonical_hash(self)
    }

    /// Cross-module consistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        let d = self.model.dim;
        if d == 0 || d % 4 != 0 || self.model.heads == 0 || d % self.model.heads != 0 {
            return bad(format!(
                "model width {d} must be a positive multiple of 4 and of the head count {}",
                self.model.heads
            ));
        }
        let strides = [self.map.memory_stride, self.planner.memory_stride, FEATURE_STRIDE];
        for s in strides {
            if s == 0 || self.grid.height % s != 0 || self.grid.width % s != 0 {
                return bad(format!(
                    "grid {}x{} is not divisible by stride {s}",
                    self.grid.height, self.grid.width
                ));
            }
        }
        if (self.tracker.frame_rate - self.scenario.frame_rate).abs() > 1e-12 {
            return bad(format!(
                "tracker frame rate {} differs from scenario frame rate {}",
                self.tracker.frame_rate, self.scenario.frame_rate
            ));
        }
        if self.motion.modes == 0 || self.motion.horizon == 0 || self.motion.layers == 0 {
            return bad("motion needs at least one mode, step and layer".into());
        }
        if self.occupancy.blocks < 2 {
            return bad("occupancy needs at least two blocks".into());
        }
        if self.planner.horizon == 0 || self.planner.layers == 0 {
            return bad("planner needs at least one waypoint and layer".into());
        }
        if self.map.thing_queries == 0 || self.map.layers == 0 {
            return bad("map head needs queries and layers".into());
        }
        self.scenario.validate()?;
        self.noise.validate().map_err(|e| Error::config(e.to_string()))?;
        self.tracker.validate().map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }
}

/// Parameters of every learned module.
#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub tracker: TrackerParams,
    pub map: MapParams,
    pub motion: MotionParams,
    pub occupancy: OccParams,
    pub planner: PlannerParams,
}

impl StackParams {
    /// Seeded Xavier initialisation; each module draws from its own stream.
    pub fn xavier(cfg: &PipelineConfig) -> Self {
        let root = seed::derive(cfg.seed, "weights");
        let rng = |name: &str| seed::rng(seed::derive(root, name));
        let (d, h) = (cfg.model.dim, cfg.model.heads);
        StackParams {
            tracker: TrackerParams::xavier(d, h, &cfg.tracker, &mut rng("tracker")),
            map: MapParams::xavier(d, h, &cfg.map, &mut rng("map")),
            motion: MotionParams::xavier(d, h, &cfg.motion, &mut rng("motion")),
            occupancy: OccParams::xavier(d, h, &cfg.occupancy, &mut rng("occupancy")),
            planner: PlannerParams::xavier(d, h, &cfg.planner, &mut rng("planner")),
        }
    }

    /// Seeded weights, replaced by the configured weights file if any.
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let mut p = Self::xavier(cfg);
        if let Some(path) = &cfg.weights {
            WeightsFile::load(path)?.apply(&mut p, "")?;
        }
        Ok(p)
    }
}

impl Params for StackParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.tracker.visit_mut(&join(prefix, "tracker"), f);
        self.map.visit_mut(&join(prefix, "map"), f);
        self.motion.visit_mut(&join(prefix, "motion"), f);
        self.occupancy.visit_mut(&join(prefix, "occupancy"), f);
        self.planner.visit_mut(&join(prefix, "planner"), f);
    }
}

/// Motion anchors for `cfg`: the bundled fixture when K matches, otherwise
/// clustered on the fly with the fixture's seed.
pub fn anchors_for(cfg: &MotionConfig) -> Result<AnchorSet> {
    let fx = AnchorFixture::bundled();
    if fx.k == cfg.modes {
        AnchorSet::bundled(cfg.modes, cfg.horizon)
    } else {
        let fx = AnchorFixture::harvest(cfg.modes, cfg.horizon, AnchorFixture::SCENARIOS, AnchorFixture::SEED)?;
        let ends: Vec<[f64; 2]> = fx.centroids.clone();
        AnchorSet::from_endpoints(&ends, cfg.horizon)
    }
}

/// Everything written for one scenario run, addressed relative to its
/// output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub scenario_index: u64,
    pub scenario_hash: String,
    pub frames: usize,
    pub tracks: String,
    pub forecasts: String,
    pub targets: String,
    pub plans: String,
    pub map_index: Option<String>,
    pub occupancy_index: Option<String>,
    pub metrics_json: String,
    pub metrics_csv: String,
    /// SHA-256 of every artifact above and of every raster.
    pub artifacts: BTreeMap<String, String>,
    /// Seconds per stage, summed over frames.
    pub wall_times: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Hash of the manifest without wall times: identical inputs give
    /// identical hashes.
    pub fn content_hash(&self) -> Result<String> {
        let mut m = self.clone();
        m.wall_times.clear();
        canonical_hash(&m)
    }
}

/// One line of the smoothed-target JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub t: usize,
    pub agents: Vec<TargetAgent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetAgent {
    pub id: u32,
    pub target: Vec<[f64; 2]>,
    pub smoothed: Vec<[f64; 2]>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RasterIndex {
    spec: Vec<(usize, GridSpec)>,
    files: Vec<RasterEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RasterEntry {
    t: usize,
    layer: String,
    path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub manifest: RunManifest,
    pub eval: ScenarioEval,
    pub plans: Vec<PlanRecord>,
}

/// Configured modules with their weights and anchors.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub params: StackParams,
    pub anchors: AnchorSet,
}

fn rows(m: &Array2<f64>) -> Vec<[f64; 2]> {
    m.rows().into_iter().map(|r| [r[0], r[1]]).collect()
}

/// Ground-truth instance grid of frame `f` on `spec`.
fn gt_occupancy(scenario: &Scenario, f: usize, spec: &GridSpec, extra: &[Box2d]) -> Result<IdGrid> {
    let agents = scenario.agents_at(f);
    let mut boxes: Vec<Box2d> = agents.iter().map(|a| a.bbox).collect();
    let mut ids: Vec<u32> = agents.iter().map(|a| a.id).collect();
    let base = ids.iter().max().map_or(1, |m| m + 1);
    for (k, b) in extra.iter().enumerate() {
        boxes.push(*b);
        ids.push(base + k as u32);
    }
    rasterize_boxes(spec, &boxes, &ids)
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let params = StackParams::load(&cfg)?;
        let anchors = anchors_for(&cfg.motion)?;
        Ok(Pipeline { cfg, params, anchors })
    }

    /// Seed of the sensor-noise streams of scenario `index`.
    pub fn noise_seed(&self, index: u64) -> u64 {
        seed::derive_index(seed::derive(self.cfg.seed, "scenario-noise"), index)
    }

    /// Scenario `index` of the configured generator.
    pub fn generate(&self, index: u64) -> Result<Scenario> {
        generate_scenario(
            &self.cfg.scenario,
            seed::derive_index(seed::derive(self.cfg.seed, "scenario"), index),
        )
    }

    /// Run every frame of `scenario`; artifacts go below `out` when given,
    /// otherwise only their hashes are kept.
    pub fn run(&self, scenario: &Scenario, index: u64, out: Option<&Path>) -> Result<ScenarioRun> {
        scenario.validate()?;
        let cfg = &self.cfg;
        let p = &self.params;
        if (scenario.frame_rate - cfg.tracker.frame_rate).abs() > 1e-12 {
            return Err(Error::config(format!(
                "scenario frame rate {} differs from tracker frame rate {}",
                scenario.frame_rate, cfg.tracker.frame_rate
            )));
        }
        let dim = cfg.model.dim;
        let horizon = scenario.horizon;
        let noise_seed = self.noise_seed(index);
        let bev_seed = seed::derive(noise_seed, "bev");
        let det_seed = seed::derive(noise_seed, "detections");
        let mut dir = ArtifactDir::create(out)?;
        let mut times: BTreeMap<String, f64> = BTreeMap::new();
        let mut clock = |name: &str, start: Instant| {
            *times.entry(name.to_string()).or_default() += start.elapsed().as_secs_f64();
        };

        let mut state = TrackState::new(scenario.ego_box(0), &p.tracker);
        let mut eval = ScenarioEval::default();
        let (mut track_recs, mut fc_recs, mut tgt_recs, mut plan_recs) = (vec![], vec![], vec![], vec![]);
        let mut map_index = RasterIndex { spec: vec![], files: vec![] };
        let mut occ_index = RasterIndex { spec: vec![], files: vec![] };
        let t_p = cfg.planner.horizon;
        let t_m = cfg.motion.horizon;
        let blocks = cfg.occupancy.blocks;

        for t in 0..horizon {
            let ego = scenario.ego_position(t);
            let spec = cfg.grid.centered_at(ego);

            let start = Instant::now();
            let bev = synth_bev_features(scenario, t, &spec, dim, &cfg.features, bev_seed)?;
            clock("features", start);

            let start = Instant::now();
            let dets = corrupt_detections(scenario, t, &cfg.noise, &spec, det_seed)?;
            let (next, tracks) = step_tracker(state, &dets, &bev, scenario.ego_box(t), &p.tracker, &cfg.tracker)?;
            state = next;
            clock("track", start);

            let start = Instant::now();
            let map_out = decode_map(&bev, &p.map, &cfg.map)?;
            let map_q = map_query_matrix(&map_out.queries);
            clock("map", start);

            let start = Instant::now();
            let motion = forecast(&tracks, Some(map_q.view()), &bev, &self.anchors, &p.motion)?;
            clock("motion", start);

            let start = Instant::now();
            let mut targets = Vec::new();
            for a in scenario.agents_at(t) {
                if !spec.contains(a.bbox.center()) {
                    continue;
                }
                let agent = scenario.agent(a.id).expect("listed agent");
                let fut: Vec<[f64; 2]> = (t + 1..(t + 1 + t_m).min(horizon))
                    .map_while(|f| agent.frames.get(f).filter(|fr| fr.valid).map(|fr| [fr.x, fr.y]))
                    .collect();
                if fut.len() < 4 {
                    continue;
                }
                let target = Array2::from_shape_fn((fut.len(), 2), |(r, c)| fut[r][c]);
                let problem = SmootherProblem {
                    target,
                    dt: scenario.dt(),
                    weights: cfg.smoother,
                };
                let res = smooth(&problem)?;
                targets.push(TargetAgent {
                    id: a.id,
                    target: fut,
                    smoothed: rows(&res.trajectory),
                    iterations: res.iterations,
                    converged: res.converged,
                });
            }
            clock("smooth", start);

            let start = Instant::now();
            let n = tracks.tracks.len();
            let q_a = Array2::from_shape_fn((n, dim), |(i, c)| tracks.tracks[i].feature[c]);
            let centers = Array2::from_shape_fn((n, 2), |(i, c)| tracks.tracks[i].bbox.center()[c]);
            let ids: Vec<u32> = tracks.tracks.iter().map(|tr| tr.id).collect();
            let q_x = motion.agent_features.slice(s![1.., ..]);
            let occ = forecast_occupancy(&bev, q_a.view(), centers.view(), q_x, &ids, &p.occupancy, &cfg.occupancy)?;
            clock("occupancy", start);

            let start = Instant::now();
            let raw = plan_head(
                tracks.ego.feature.view(),
                motion.ego_context().view(),
                scenario.command[t],
                ego,
                &bev,
                &p.planner,
                &cfg.planner,
            )?;
            let layers = match cfg.planner_occupancy {
                OccupancySource::Predicted => {
                    let grids: Vec<IdGrid> = occ.steps.iter().map(|s| s.merged.clone()).collect();
                    occupancy_per_waypoint(&grids, t_p)
                }
                OccupancySource::Oracle => (0..t_p)
                    .map(|j| gt_occupancy(scenario, (t + j + 1).min(horizon - 1), &spec, &[]).map(|g| occupied_points(&g)))
                    .collect::<Result<_>>()?,
            };
            let plan = optimize_plan(&raw, &layers, &cfg.planner)?;
            clock("plan", start);

            let start = Instant::now();
            let visible: Vec<_> = scenario
                .agents_at(t)
                .into_iter()
                .filter(|a| spec.contains(a.bbox.center()))
                .collect();
            eval.tracking.push(TrackFrame {
                pred: tracks
                    .tracks
                    .iter()
                    .map(|tr| PredTrack {
                        id: tr.id,
                        center: tr.bbox.center(),
                        score: tr.score,
                    })
                    .collect(),
                gt: visible
                    .iter()
                    .map(|a| GtObject {
                        id: a.id,
                        center: a.bbox.center(),
                    })
                    .collect(),
            });

            let pred_masks = map_out.class_masks(cfg.map.mask_threshold);
            let gt_masks = map_ground_truth(&scenario.map, &spec, &cfg.features);
            for (c, ((_, pm), (_, gm))) in pred_masks.named().iter().zip(gt_masks.named().iter()).enumerate() {
                let (i, u) = mask_counts(pm, gm)?;
                eval.map[c].0 += i;
                eval.map[c].1 += u;
            }

            if t + 1 < horizon {
                let k = motion.trajectories.modes();
                let preds: Vec<ForecastPred> = tracks
                    .tracks
                    .iter()
                    .enumerate()
                    .filter(|(_, tr)| tr.class.is_vehicle())
                    .map(|(i, tr)| ForecastPred {
                        position: tr.bbox.center(),
                        score: tr.score,
                        modes: (0..k)
                            .map(|m| (0..t_m).map(|s| motion.trajectories.point(i + 1, m, s)).collect())
                            .collect(),
                    })
                    .collect();
                let gts: Vec<ForecastGt> = visible
                    .iter()
                    .filter(|a| a.class.is_vehicle())
                    .map(|a| {
                        let agent = scenario.agent(a.id).expect("listed agent");
                        ForecastGt {
                            position: a.bbox.center(),
                            future: (1..=t_m)
                                .map(|s| agent.frames.get(t + s).filter(|f| f.valid).map(|f| [f.x, f.y]))
                                .collect(),
                        }
                    })
                    .collect();
                eval.motion.push(eval_motion_frame(&preds, &gts, &cfg.metrics.motion));
            }

            if t + blocks <= horizon {
                let pred: Vec<IdGrid> = occ.steps.iter().map(|s| s.merged.clone()).collect();
                let gt: Vec<IdGrid> = (0..blocks)
                    .map(|s| gt_occupancy(scenario, t + s, &spec, &[]))
                    .collect::<Result<_>>()?;
                eval.occupancy.push(eval_occupancy(&pred, &gt, ego)?);
            }

            if t + t_p < horizon {
                let gt_ego: Vec<[f64; 2]> = (1..=t_p).map(|s| scenario.ego_position(t + s)).collect();
                let agents: Vec<Vec<Box2d>> = (1..=t_p)
                    .map(|s| scenario.agents_at(t + s).into_iter().map(|a| a.bbox).collect())
                    .collect();
                eval.planning.push(eval_plan(&PlanInput {
                    plan: &plan.optimized,
                    gt_ego: &gt_ego,
                    agents: &agents,
                    start: ego,
                    start_yaw: scenario.ego[t].yaw,
                    ego_width: cfg.planner.ego_width,
                    ego_length: cfg.planner.ego_length,
                })?);
            }
            clock("metrics", start);

            let start = Instant::now();
            track_recs.push(tracks.record());
            fc_recs.push(motion.record(t));
            tgt_recs.push(TargetRecord { t, agents: targets });
            plan_recs.push(PlanRecord::new(t, scenario.command[t], &plan));
            if cfg.write_rasters {
                map_index.spec.push((t, spec));
                occ_index.spec.push((t, spec));
                for (name, mask) in pred_masks.named() {
                    let path = dir.write(&format!("map/frame-{t:04}-{name}.pgm"), &pgm_mask(mask))?;
                    map_index.files.push(RasterEntry {
                        t,
                        layer: name.to_string(),
                        path,
                    });
                }
                for (sidx, step) in occ.steps.iter().enumerate() {
                    let path = dir.write(&format!("occupancy/frame-{t:04}-step-{sidx}.pgm"), &pgm_ids(&step.merged.data)?)?;
                    occ_index.files.push(RasterEntry {
                        t,
                        layer: format!("step-{sidx}"),
                        path,
                    });
                }
            }
            clock("write", start);
        }

        let tracks_path = dir.write_jsonl::<TrackRecord>("tracks.jsonl", &track_recs)?;
        let forecasts_path = dir.write_jsonl::<ForecastRecord>("forecasts.jsonl", &fc_recs)?;
        let targets_path = dir.write_jsonl("targets.jsonl", &tgt_recs)?;
        let plans_path = dir.write_jsonl("plans.jsonl", &plan_recs)?;
        let (map_idx, occ_idx) = if cfg.write_rasters {
            (
                Some(dir.write_json("map/index.json", &map_index)?),
                Some(dir.write_json("occupancy/index.json", &occ_index)?),
            )
        } else {
            (None, None)
        };
        let report = MetricsAccumulator::single(index, eval.clone()).report(&cfg.metrics);
        let metrics_json = dir.write("metrics.json", report.to_json()?.as_bytes())?;
        let metrics_csv = dir.write("metrics.csv", report.to_csv().as_bytes())?;
        let manifest = RunManifest {
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            scenario_index: index,
            scenario_hash: canonical_hash(scenario)?,
            frames: horizon,
            tracks: tracks_path,
            forecasts: forecasts_path,
            targets: targets_path,
            plans: plans_path,
            map_index: map_idx,
            occupancy_index: occ_idx,
            metrics_json,
            metrics_csv,
            artifacts: dir.hashes.clone(),
            wall_times: times,
        };
        dir.write_json("manifest.json", &manifest)?;
        Ok(ScenarioRun {
            manifest,
            eval,
            plans: plan_recs,
        })
    }
}

/// Seed the bundled smoke scenario was generated with.
pub const SMOKE_SEED: u64 = 0x5e0e_2026;
pub const SMOKE_SCENARIO: &str = include_str!("../../fixtures/smoke_scenario.json");
/// Manifest content hash of the smoke run, recorded from a verified run.
pub const SMOKE_MANIFEST_HASH: &str = include_str!("../../fixtures/smoke_manifest.sha256");

/// Desk preset shortened to the smoke scenario's eight frames and four agents.
pub fn smoke_config() -> PipelineConfig {
    let mut c = PipelineConfig::desk();
    c.scenario.horizon = 8;
    c.scenario.num_agents = 4;
    c
}

pub fn smoke_scenario() -> Result<Scenario> {
    Scenario::from_json(SMOKE_SCENARIO)
}
