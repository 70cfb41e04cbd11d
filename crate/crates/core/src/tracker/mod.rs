//! Track-query lifecycle: association, spawning, patience-based death and
//! attention-based refresh of per-track query features.

mod hungarian;

pub use hungarian::{assignment_cost, hungarian};

use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::BevGrid;
use crate::kernel::{
    deform_attn, join, layer_norm, mha, mlp_forward, sinusoidal_pe, visit_array, xavier, AttentionParams,
    DeformParams, FeatureMat, Mlp, Params,
};
use crate::scene::{rotated_iou, AgentClass, Box2d, DetectionFrame};

/// Id reserved for the ego track.
pub const EGO_ID: u32 = 0;

/// Cost assigned to pairings that the gate forbids.
const FORBIDDEN: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub frame_rate: f64,
    pub spawn_threshold: f64,
    pub keep_threshold: f64,
    /// Consecutive sub-threshold frames a track survives.
    pub patience_frames: usize,
    /// Pairings below this IoU fall back to the centre-distance band.
    pub iou_gate: f64,
    /// Centre-distance gate for tracks with a velocity estimate, metres.
    pub distance_gate: f64,
    /// Upper speed bound used to gate tracks seen only once, m/s.
    pub max_speed: f64,
    pub layers: usize,
    pub detection_queries: usize,
    pub sampling_points: usize,
    pub offset_scale: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig::for_frame_rate(2.0)
    }
}

impl TrackerConfig {
    pub fn for_frame_rate(frame_rate: f64) -> Self {
        TrackerConfig {
            frame_rate,
            spawn_threshold: 0.4,
            keep_threshold: 0.35,
            patience_frames: patience_frames(frame_rate),
            iou_gate: 0.1,
            distance_gate: 2.0,
            max_speed: 15.0,
            layers: 6,
            detection_queries: 900,
            sampling_points: 4,
            offset_scale: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.frame_rate > 0.0 && self.frame_rate.is_finite(),
            "tracker",
            "config",
            "frame rate must be positive"
        );
        ensure!(
            (0.0..=1.0).contains(&self.spawn_threshold) && (0.0..=1.0).contains(&self.keep_threshold),
            "tracker",
            "config",
            "thresholds must lie in [0, 1]"
        );
        ensure!(
            self.detection_queries > 0 && self.distance_gate > 0.0 && self.max_speed > 0.0,
            "tracker",
            "config",
            "query table and gates must be non-empty"
        );
        Ok(())
    }
}

/// Two seconds of frames, rounded up.
pub fn patience_frames(frame_rate: f64) -> usize {
    (2.0 * frame_rate - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: u32,
    pub class: AgentClass,
    pub bbox: Box2d,
    pub score: f64,
    pub feature: Array1<f64>,
    /// Frames since the track was created, counting the creation frame.
    pub age: usize,
    /// Consecutive frames unmatched or matched below the keep threshold.
    pub misses: usize,
    /// Frame of the last association.
    pub last_seen: usize,
    /// Centre velocity from the last two associations, m/s.
    pub velocity: Option<[f64; 2]>,
}

impl AgentTrack {
    fn predicted_center(&self, t: usize, dt: f64) -> [f64; 2] {
        let c = self.bbox.center();
        match self.velocity {
            Some(v) => {
                let lag = t.saturating_sub(self.last_seen) as f64 * dt;
                [c[0] + v[0] * lag, c[1] + v[1] * lag]
            }
            None => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub tracks: Vec<AgentTrack>,
    pub next_id: u32,
    pub ego: AgentTrack,
}

impl TrackState {
    pub fn new(ego_box: Box2d, params: &TrackerParams) -> Self {
        TrackState {
            tracks: Vec::new(),
            next_id: EGO_ID + 1,
            ego: AgentTrack {
                id: EGO_ID,
                class: AgentClass::Car,
                bbox: ego_box,
                score: 1.0,
                feature: params.ego_query.row(0).to_owned(),
                age: 0,
                misses: 0,
                last_seen: 0,
                velocity: None,
            },
        }
    }
}

/// Tracks associated in one frame, plus the ego track.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub t: usize,
    pub ego: AgentTrack,
    pub tracks: Vec<AgentTrack>,
}

impl TrackOutput {
    /// Agent query matrix `Q_A`: ego row first, then the reported tracks.
    pub fn query_features(&self) -> FeatureMat {
        let d = self.ego.feature.len();
        let mut q = Array2::zeros((self.tracks.len() + 1, d));
        q.row_mut(0).assign(&self.ego.feature);
        for (i, tr) in self.tracks.iter().enumerate() {
            q.row_mut(i + 1).assign(&tr.feature);
        }
        q
    }

    /// Centres in the same row order as [`TrackOutput::query_features`].
    pub fn centers(&self) -> Array2<f64> {
        let mut c = Array2::zeros((self.tracks.len() + 1, 2));
        let e = self.ego.bbox.center();
        c.row_mut(0).assign(&ndarray::arr1(&e));
        for (i, tr) in self.tracks.iter().enumerate() {
            c.row_mut(i + 1).assign(&ndarray::arr1(&tr.bbox.center()));
        }
        c
    }

    pub fn record(&self) -> TrackRecord {
        TrackRecord {
            t: self.t,
            tracks: self
                .tracks
                .iter()
                .map(|tr| TrackBox {
                    id: tr.id,
                    x: tr.bbox.x,
                    y: tr.bbox.y,
                    w: tr.bbox.w,
                    l: tr.bbox.l,
                    yaw: tr.bbox.yaw,
                    score: tr.score,
                })
                .collect(),
        }
    }
}

/// One line of the per-frame tracks JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub t: usize,
    pub tracks: Vec<TrackBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub score: f64,
}

impl TrackBox {
    pub fn center(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Deformable sampling of the BEV at the track centre, self-attention over the
/// track set, feed-forward; each followed by a residual and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackLayer {
    pub bev_attn: DeformParams,
    pub self_attn: AttentionParams,
    pub ffn: Mlp,
}

impl Params for TrackLayer {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.bev_attn.visit_mut(&join(prefix, "bev_attn"), f);
        self.self_attn.visit_mut(&join(prefix, "self_attn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    /// Detection-query embeddings, indexed by detection feature seed.
    pub query_embed: Array2<f64>,
    pub ego_query: Array2<f64>,
    pub layers: Vec<TrackLayer>,
}

impl TrackerParams {
    pub fn xavier(dim: usize, heads: usize, cfg: &TrackerConfig, rng: &mut impl Rng) -> Self {
        TrackerParams {
            query_embed: xavier(cfg.detection_queries, dim, rng),
            ego_query: xavier(1, dim, rng),
            layers: (0..cfg.layers)
                .map(|_| TrackLayer {
                    bev_attn: DeformParams::xavier(dim, dim, heads, cfg.sampling_points, cfg.offset_scale, rng),
                    self_attn: AttentionParams::xavier(dim, dim, heads, rng),
                    ffn: Mlp::xavier(&[dim, 2 * dim, dim], rng),
                })
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.ego_query.ncols()
    }
}

impl Params for TrackerParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array(prefix, "query_embed", &mut self.query_embed, f);
        visit_array(prefix, "ego_query", &mut self.ego_query, f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}

/// Cost of pairing a (predicted) track with a detection. IoU pairs cost
/// `1 - IoU` in `[0, 0.9]`; pairs that fail the IoU gate but fall inside the
/// distance band cost `1 + d / gate` in `(1, 2]`; everything else is forbidden.
fn pair_cost(track: &AgentTrack, det: &crate::scene::Detection, t: usize, cfg: &TrackerConfig) -> f64 {
    if track.class != det.class {
        return FORBIDDEN;
    }
    let dt = 1.0 / cfg.frame_rate;
    let c = track.predicted_center(t, dt);
    let predicted = Box2d { x: c[0], y: c[1], ..track.bbox };
    let iou = rotated_iou(&predicted, &det.bbox);
    if iou >= cfg.iou_gate {
        return 1.0 - iou;
    }
    let lag = t.saturating_sub(track.last_seen).max(1) as f64;
    let gate = match track.velocity {
        Some(_) => cfg.distance_gate * lag,
        None => cfg.max_speed * dt * lag,
    };
    let d = (c[0] - det.bbox.x).hypot(c[1] - det.bbox.y);
    if d <= gate {
        1.0 + d / gate
    } else {
        FORBIDDEN
    }
}

/// Advance the tracker by one frame.
///
/// Tracks are associated with detections by minimum-cost assignment, matched
/// tracks take the detection box and score, unmatched detections scoring at
/// least the spawn threshold open new tracks, and a track is dropped once it
/// has spent more than `patience_frames` consecutive frames unmatched or below
/// the keep threshold. The ego track follows `ego_box` and never competes for
/// detections.
pub fn step_tracker(
    state: TrackState,
    dets: &DetectionFrame,
    bev: &BevGrid,
    ego_box: Box2d,
    params: &TrackerParams,
    cfg: &TrackerConfig,
) -> Result<(TrackState, TrackOutput)> {
    cfg.validate()?;
    let dim = params.dim();
    ensure!(
        bev.channels() == dim,
        "tracker",
        "step_tracker",
        "BEV has {} channels, track queries have {dim}",
        bev.channels()
    );
    ensure!(
        params.query_embed.nrows() > 0 && params.query_embed.ncols() == dim,
        "tracker",
        "step_tracker",
        "detection-query table has the wrong shape"
    );
    ensure!(
        dets.detections.iter().all(|d| (0.0..=1.0).contains(&d.score) && d.bbox.is_valid()),
        "tracker",
        "step_tracker",
        "detections need scores in [0, 1] and valid boxes"
    );
    let t = dets.t;
    let dt = 1.0 / cfg.frame_rate;
    let TrackState {
        mut tracks,
        mut next_id,
        mut ego,
    } = state;

    let cost = Array2::from_shape_fn((tracks.len(), dets.detections.len()), |(i, j)| {
        pair_cost(&tracks[i], &dets.detections[j], t, cfg)
    });
    let mut det_taken = vec![false; dets.detections.len()];
    let mut matched = vec![false; tracks.len()];
    for (i, j) in hungarian(&cost)? {
        if cost[[i, j]] >= FORBIDDEN {
            continue;
        }
        let det = &dets.detections[j];
        let tr = &mut tracks[i];
        let lag = t.saturating_sub(tr.last_seen);
        if lag > 0 {
            let c = tr.bbox.center();
            let span = lag as f64 * dt;
            tr.velocity = Some([(det.bbox.x - c[0]) / span, (det.bbox.y - c[1]) / span]);
        }
        tr.bbox = det.bbox;
        tr.score = det.score;
        tr.last_seen = t;
        tr.misses = if det.score < cfg.keep_threshold { tr.misses + 1 } else { 0 };
        det_taken[j] = true;
        matched[i] = true;
    }
    for (tr, &m) in tracks.iter_mut().zip(&matched) {
        tr.age += 1;
        if !m {
            tr.misses += 1;
        }
    }
    let mut kept = Vec::with_capacity(tracks.len());
    let mut reported = Vec::new();
    for (tr, m) in tracks.into_iter().zip(matched) {
        if tr.misses <= cfg.patience_frames {
            reported.push(m);
            kept.push(tr);
        }
    }
    let mut tracks = kept;
    for (j, det) in dets.detections.iter().enumerate() {
        if det_taken[j] || det.score < cfg.spawn_threshold {
            continue;
        }
        let row = (det.feature_seed % params.query_embed.nrows() as u64) as usize;
        tracks.push(AgentTrack {
            id: next_id,
            class: det.class,
            bbox: det.bbox,
            score: det.score,
            feature: params.query_embed.row(row).to_owned(),
            age: 1,
            misses: 0,
            last_seen: t,
            velocity: None,
        });
        reported.push(true);
        next_id += 1;
    }

    if ego.age > 0 && t > ego.last_seen {
        let c = ego.bbox.center();
        let span = (t - ego.last_seen) as f64 * dt;
        ego.velocity = Some([(ego_box.x - c[0]) / span, (ego_box.y - c[1]) / span]);
    }
    ego.bbox = ego_box;
    ego.last_seen = t;
    ego.age += 1;

    let mut q = Array2::zeros((tracks.len() + 1, dim));
    let mut centers = Array2::zeros((tracks.len() + 1, 2));
    q.row_mut(0).assign(&ego.feature);
    centers.row_mut(0).assign(&ndarray::arr1(&ego.bbox.center()));
    for (i, tr) in tracks.iter().enumerate() {
        q.row_mut(i + 1).assign(&tr.feature);
        centers.row_mut(i + 1).assign(&ndarray::arr1(&tr.bbox.center()));
    }
    let q = refine_queries(q, &centers, bev, params)?;
    ego.feature = q.row(0).to_owned();
    for (i, tr) in tracks.iter_mut().enumerate() {
        tr.feature = q.row(i + 1).to_owned();
    }

    let mut out_tracks: Vec<AgentTrack> = tracks
        .iter()
        .zip(&reported)
        .filter(|(_, &r)| r)
        .map(|(tr, _)| tr.clone())
        .collect();
    out_tracks.sort_by_key(|tr| tr.id);
    let output = TrackOutput {
        t,
        ego: ego.clone(),
        tracks: out_tracks,
    };
    Ok((TrackState { tracks, next_id, ego }, output))
}

fn refine_queries(mut q: FeatureMat, centers: &Array2<f64>, bev: &BevGrid, params: &TrackerParams) -> Result<FeatureMat> {
    let pos = sinusoidal_pe(centers.view(), params.dim())?;
    for layer in &params.layers {
        let qp = &q + &pos;
        let sampled = deform_attn(qp.view(), centers.view(), bev, &layer.bev_attn)?;
        q = layer_norm(&(q + sampled));
        let qp = &q + &pos;
        let mixed = mha(qp.view(), qp.view(), q.view(), &layer.self_attn, None)?;
        q = layer_norm(&(q + mixed));
        let f = mlp_forward(q.view(), &layer.ffn)?;
        q = layer_norm(&(q + f));
    }
    Ok(q)
}

/// Convenience: `[x, y]` rows of a slice of boxes.
pub fn box_centers(boxes: &[Box2d]) -> Array2<f64> {
    let mut c = Array2::zeros((boxes.len(), 2));
    for (i, b) in boxes.iter().enumerate() {
        c.slice_mut(s![i, ..]).assign(&ndarray::arr1(&b.center()));
    }
    c
}
