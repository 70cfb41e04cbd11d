//! Scene-centric multimodal motion forecasting.
//!
//! Every agent (the ego first) carries `K` motion queries. Each layer lets them
//! attend to the agent queries, the map queries and the BEV around the goal
//! predicted by the previous layer, then decodes per-step velocities that are
//! summed into trajectories.

mod anchors;
mod kmeans;

pub use anchors::{AnchorFixture, AnchorSet};
pub use kmeans::{kmeans, KMeans};

use ndarray::{s, Array2, Array4, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::BevGrid;
use crate::kernel::{
    concat_cols, deform_attn, join, layer_norm, mlp_forward, sinusoidal_pe, softmax_rows, DecoderLayer, DeformParams,
    FeatureMat, Mlp, Params,
};
use crate::tracker::TrackOutput;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionConfig {
    pub modes: usize,
    pub horizon: usize,
    pub layers: usize,
    pub sampling_points: usize,
    pub offset_scale: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            modes: 6,
            horizon: 12,
            layers: 3,
            sampling_points: 4,
            offset_scale: 2.0,
        }
    }
}

/// The four positional MLPs of the query position.
#[derive(Debug, Clone, PartialEq)]
pub struct QposMlps {
    pub scene_anchor: Mlp,
    pub agent_anchor: Mlp,
    pub current: Mlp,
    pub goal: Mlp,
}

impl QposMlps {
    pub fn xavier(dim: usize, rng: &mut impl Rng) -> Self {
        QposMlps {
            scene_anchor: Mlp::xavier(&[dim, dim, dim], rng),
            agent_anchor: Mlp::xavier(&[dim, dim, dim], rng),
            current: Mlp::xavier(&[dim, dim, dim], rng),
            goal: Mlp::xavier(&[dim, dim, dim], rng),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        QposMlps {
            scene_anchor: Mlp::zeros(&[dim, dim, dim]),
            agent_anchor: Mlp::zeros(&[dim, dim, dim]),
            current: Mlp::zeros(&[dim, dim, dim]),
            goal: Mlp::zeros(&[dim, dim, dim]),
        }
    }
}

impl Params for QposMlps {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.scene_anchor.visit_mut(&join(prefix, "scene_anchor"), f);
        self.agent_anchor.visit_mut(&join(prefix, "agent_anchor"), f);
        self.current.visit_mut(&join(prefix, "current"), f);
        self.goal.visit_mut(&join(prefix, "goal"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionLayerParams {
    pub agent_attn: DecoderLayer,
    pub map_attn: DecoderLayer,
    pub goal_attn: DeformParams,
    /// `3D -> D`
    pub fusion: Mlp,
    /// `D -> T * 5`: per-step velocity residuals and three spread parameters.
    pub traj_head: Mlp,
    pub score_head: Mlp,
}

impl Params for MotionLayerParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.agent_attn.visit_mut(&join(prefix, "agent_attn"), f);
        self.map_attn.visit_mut(&join(prefix, "map_attn"), f);
        self.goal_attn.visit_mut(&join(prefix, "goal_attn"), f);
        self.fusion.visit_mut(&join(prefix, "fusion"), f);
        self.traj_head.visit_mut(&join(prefix, "traj_head"), f);
        self.score_head.visit_mut(&join(prefix, "score_head"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    pub qpos: QposMlps,
    /// Positional MLP added to the agent keys.
    pub agent_pos: Mlp,
    pub layers: Vec<MotionLayerParams>,
}

impl MotionParams {
    pub fn xavier(dim: usize, heads: usize, cfg: &MotionConfig, rng: &mut impl Rng) -> Self {
        MotionParams {
            qpos: QposMlps::xavier(dim, rng),
            agent_pos: Mlp::xavier(&[dim, dim, dim], rng),
            layers: (0..cfg.layers)
                .map(|_| MotionLayerParams {
                    agent_attn: DecoderLayer::xavier(dim, heads, true, rng),
                    map_attn: DecoderLayer::xavier(dim, heads, true, rng),
                    goal_attn: DeformParams::xavier(dim, dim, heads, cfg.sampling_points, cfg.offset_scale, rng),
                    fusion: Mlp::xavier(&[3 * dim, dim, dim], rng),
                    traj_head: Mlp::xavier(&[dim, dim, cfg.horizon * 5], rng),
                    score_head: Mlp::xavier(&[dim, dim, 1], rng),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.agent_pos.input_dim()
    }
}

impl Params for MotionParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.qpos.visit_mut(&join(prefix, "qpos"), f);
        self.agent_pos.visit_mut(&join(prefix, "agent_pos"), f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}

/// Query context and query position, both `N*K x D` with row `i*K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionQuery {
    pub ctx: FeatureMat,
    pub pos: FeatureMat,
}

/// K-modal forecasts for `N` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    /// `N x K x T x 5`: `(x, y)` offsets from the agent's current position in
    /// the world frame, then three spread parameters.
    pub params: Array4<f64>,
    /// `N x K x T x 2` per-step displacements; `params[.., t, :2]` is their
    /// running sum.
    pub velocities: Array4<f64>,
    /// `N x K`, each row a distribution.
    pub scores: Array2<f64>,
    /// `N x 2` current positions.
    pub origins: Array2<f64>,
}

impl TrajectorySet {
    pub fn agents(&self) -> usize {
        self.params.shape()[0]
    }

    pub fn modes(&self) -> usize {
        self.params.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.params.shape()[2]
    }

    /// World position of agent `i`, mode `k`, step `t`.
    pub fn point(&self, i: usize, k: usize, t: usize) -> [f64; 2] {
        [
            self.origins[[i, 0]] + self.params[[i, k, t, 0]],
            self.origins[[i, 1]] + self.params[[i, k, t, 1]],
        ]
    }

    /// World-frame trajectory `T x 2` of one mode.
    pub fn path(&self, i: usize, k: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.horizon(), 2), |(t, c)| self.point(i, k, t)[c])
    }

    /// World-frame goals `N*K x 2`.
    pub fn goals(&self) -> Array2<f64> {
        let (n, k, t) = (self.agents(), self.modes(), self.horizon());
        Array2::from_shape_fn((n * k, 2), |(r, c)| self.point(r / k, r % k, t - 1)[c])
    }

    pub fn best_mode(&self, i: usize) -> usize {
        let row = self.scores.row(i);
        (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionOutput {
    /// Track ids in row order; the ego (id 0) is row 0.
    pub ids: Vec<u32>,
    pub trajectories: TrajectorySet,
    pub query: MotionQuery,
    /// Modality-max-pooled context `Q_X`, `N x D`.
    pub agent_features: FeatureMat,
}

impl MotionOutput {
    /// Final query context of the ego's `K` modes.
    pub fn ego_context(&self) -> FeatureMat {
        let k = self.trajectories.modes();
        self.query.ctx.slice(s![..k, ..]).to_owned()
    }
}

/// Query inputs shared by every layer.
pub struct MotionScene<'a> {
    pub agent_queries: ArrayView2<'a, f64>,
    pub positions: &'a Array2<f64>,
    pub yaws: &'a [f64],
    pub map_queries: Option<ArrayView2<'a, f64>>,
    pub bev: &'a BevGrid,
}

fn repeat_rows(x: ArrayView2<'_, f64>, times: usize) -> Array2<f64> {
    Array2::from_shape_fn((x.nrows() * times, x.ncols()), |(r, c)| x[[r / times, c]])
}

/// `Q_pos`: the sum of four MLP-encoded positions, per agent and mode.
///
/// `scene_ends` and `goals` are `N*K x 2` world points, `agent_ends` is the
/// `K x 2` agent-frame anchor endpoints and `current` the `N x 2` positions.
pub fn build_qpos(
    scene_ends: &Array2<f64>,
    agent_ends: &Array2<f64>,
    current: &Array2<f64>,
    goals: &Array2<f64>,
    mlps: &QposMlps,
) -> Result<FeatureMat> {
    let n = current.nrows();
    let k = agent_ends.nrows();
    ensure!(
        scene_ends.dim() == (n * k, 2) && goals.dim() == (n * k, 2) && agent_ends.ncols() == 2 && current.ncols() == 2,
        "motion-former",
        "build_qpos",
        "shape mismatch: scene {:?}, agent {:?}, current {:?}, goals {:?}",
        scene_ends.dim(),
        agent_ends.dim(),
        current.dim(),
        goals.dim()
    );
    let dim = mlps.goal.input_dim();
    let enc = |pts: &Array2<f64>, mlp: &Mlp| -> Result<FeatureMat> { mlp_forward(sinusoidal_pe(pts.view(), dim)?.view(), mlp) };
    let mut q = enc(scene_ends, &mlps.scene_anchor)?;
    q += &repeat_rows_tile(enc(agent_ends, &mlps.agent_anchor)?.view(), n);
    q += &repeat_rows(enc(current, &mlps.current)?.view(), k);
    q += &enc(goals, &mlps.goal)?;
    Ok(q)
}

/// Stack `x` on top of itself `times` times.
fn repeat_rows_tile(x: ArrayView2<'_, f64>, times: usize) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((n * times, x.ncols()), |(r, c)| x[[r % n, c]])
}

/// One interaction layer followed by its trajectory and score heads.
///
/// `goals` are the previous layer's `N*K x 2` world goals (scene-level anchor
/// endpoints at the first layer).
pub fn motion_layer(
    q: &MotionQuery,
    scene: &MotionScene<'_>,
    anchors: &AnchorSet,
    goals: &Array2<f64>,
    p: &MotionLayerParams,
    agent_pos: &Mlp,
) -> Result<(FeatureMat, TrajectorySet)> {
    let n = scene.positions.nrows();
    let k = anchors.modes();
    let horizon = anchors.horizon();
    let dim = q.ctx.ncols();
    ensure!(
        q.ctx.dim() == (n * k, dim) && q.pos.dim() == q.ctx.dim(),
        "motion-former",
        "motion_layer",
        "query shapes {:?} / {:?} do not match {n} agents x {k} modes",
        q.ctx.dim(),
        q.pos.dim()
    );
    ensure!(
        p.traj_head.output_dim() == horizon * 5,
        "motion-former",
        "motion_layer",
        "trajectory head emits {} values, need {} x 5",
        p.traj_head.output_dim(),
        horizon
    );
    let query = &q.ctx + &q.pos;

    let agent_key = &scene.agent_queries + &mlp_forward(sinusoidal_pe(scene.positions.view(), dim)?.view(), agent_pos)?;
    let q_a = p.agent_attn.forward(&query, None, agent_key.view(), scene.agent_queries, None)?;
    let q_m = match scene.map_queries {
        Some(m) if m.nrows() > 0 => p.map_attn.forward(&query, None, m, m, None)?,
        _ => query.clone(),
    };
    let q_g = layer_norm(&deform_attn(query.view(), goals.view(), scene.bev, &p.goal_attn)?);
    let fused = mlp_forward(concat_cols(&[q_a.view(), q_m.view(), q_g.view()])?.view(), &p.fusion)?;
    let ctx = layer_norm(&fused);

    let raw = mlp_forward(ctx.view(), &p.traj_head)?;
    let mut logits = mlp_forward(ctx.view(), &p.score_head)?.into_shape_with_order((n, k)).expect("one score per row");
    softmax_rows(&mut logits);

    let scene_anchors = anchors.scene_level(scene.positions, scene.yaws)?;
    let mut params = Array4::zeros((n, k, horizon, 5));
    let mut velocities = Array4::zeros((n, k, horizon, 2));
    for i in 0..n {
        for m in 0..k {
            let r = i * k + m;
            let mut acc = [0.0, 0.0];
            for t in 0..horizon {
                for c in 0..2 {
                    let prev = if t == 0 {
                        scene.positions[[i, c]]
                    } else {
                        scene_anchors[[i, m, t - 1, c]]
                    };
                    let v = (scene_anchors[[i, m, t, c]] - prev) + raw[[r, 5 * t + c]];
                    velocities[[i, m, t, c]] = v;
                    acc[c] += v;
                    params[[i, m, t, c]] = acc[c];
                }
                for c in 2..5 {
                    params[[i, m, t, c]] = raw[[r, 5 * t + c]];
                }
            }
        }
    }
    let traj = TrajectorySet {
        params,
        velocities,
        scores: logits,
        origins: scene.positions.clone(),
    };
    Ok((ctx, traj))
}

/// Run the full layer stack for the tracks of one frame.
pub fn forecast(
    tracks: &TrackOutput,
    map_queries: Option<ArrayView2<'_, f64>>,
    bev: &BevGrid,
    anchors: &AnchorSet,
    params: &MotionParams,
) -> Result<MotionOutput> {
    let agent_queries = tracks.query_features();
    let positions = tracks.centers();
    let mut yaws = vec![tracks.ego.bbox.yaw];
    yaws.extend(tracks.tracks.iter().map(|t| t.bbox.yaw));
    let mut ids = vec![tracks.ego.id];
    ids.extend(tracks.tracks.iter().map(|t| t.id));
    let scene = MotionScene {
        agent_queries: agent_queries.view(),
        positions: &positions,
        yaws: &yaws,
        map_queries,
        bev,
    };
    run_layers(&scene, anchors, params, ids)
}

pub fn run_layers(
    scene: &MotionScene<'_>,
    anchors: &AnchorSet,
    params: &MotionParams,
    ids: Vec<u32>,
) -> Result<MotionOutput> {
    let n = scene.positions.nrows();
    let k = anchors.modes();
    let dim = params.dim();
    ensure!(n >= 1, "motion-former", "forecast", "no agents (the ego must be present)");
    ensure!(!params.layers.is_empty(), "motion-former", "forecast", "no decoder layers");
    ensure!(
        scene.agent_queries.dim() == (n, dim) && scene.bev.channels() == dim,
        "motion-former",
        "forecast",
        "agent queries {:?} / BEV channels {} do not match width {dim}",
        scene.agent_queries.dim(),
        scene.bev.channels()
    );
    let scene_anchors = anchors.scene_level(scene.positions, scene.yaws)?;
    let t_last = anchors.horizon() - 1;
    let scene_ends = Array2::from_shape_fn((n * k, 2), |(r, c)| scene_anchors[[r / k, r % k, t_last, c]]);
    let agent_ends = anchors.endpoints();
    let mut goals = scene_ends.clone();
    let mut ctx = repeat_rows(scene.agent_queries, k);
    let mut traj = None;
    for layer in &params.layers {
        let pos = build_qpos(&scene_ends, &agent_ends, scene.positions, &goals, &params.qpos)?;
        let q = MotionQuery { ctx, pos };
        let (next, out) = motion_layer(&q, scene, anchors, &goals, layer, &params.agent_pos)?;
        goals = out.goals();
        ctx = next;
        traj = Some((out, q.pos));
    }
    let (trajectories, pos) = traj.expect("at least one layer");
    let agent_features = Array2::from_shape_fn((n, dim), |(i, c)| {
        (0..k).map(|m| ctx[[i * k + m, c]]).fold(f64::NEG_INFINITY, f64::max)
    });
    Ok(MotionOutput {
        ids,
        trajectories,
        query: MotionQuery { ctx, pos },
        agent_features,
    })
}

/// One line of the forecast JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub t: usize,
    pub agents: Vec<ForecastAgent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastAgent {
    pub id: u32,
    pub modes: Vec<ForecastMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastMode {
    pub score: f64,
    /// World coordinates.
    pub xy: Vec<[f64; 2]>,
}

impl MotionOutput {
    pub fn record(&self, t: usize) -> ForecastRecord {
        let tr = &self.trajectories;
        ForecastRecord {
            t,
            agents: self
                .ids
                .iter()
                .enumerate()
                .map(|(i, &id)| ForecastAgent {
                    id,
                    modes: (0..tr.modes())
                        .map(|k| ForecastMode {
                            score: tr.scores[[i, k]],
                            xy: (0..tr.horizon()).map(|t| tr.point(i, k, t)).collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}
