//! Occupancy forecasting: agent features are injected into the dense scene
//! features through pixel-agent attention restricted by a predicted mask, and
//! per-agent occupancy comes from a dot product with the decoded features.
//!
//! Block `t` (1-based) predicts the frame `t - 1` steps ahead of the current
//! one, so block 1 is the present.

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::{BevGrid, GridSpec, IdGrid};
use crate::kernel::{
    concat_cols, conv3x3, join, mha, mha_with_weights, mlp_forward, sigmoid, sinusoidal_pe, AttentionParams, Conv3x3,
    FeatureMat, Linear, Mlp, Params,
};

/// Scale of the block features relative to the BEV.
pub const FEATURE_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccConfig {
    pub blocks: usize,
    /// Threshold on sigmoid affinity for the pixel-agent attention mask.
    pub mask_threshold: f64,
    /// Minimum instance probability for a cell to be claimed when merging.
    pub merge_threshold: f64,
}

impl Default for OccConfig {
    fn default() -> Self {
        OccConfig {
            blocks: 5,
            mask_threshold: 0.5,
            merge_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccBlockParams {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    /// Bias-free so that silent attention leaves the residual untouched.
    pub up_conv: Conv3x3,
}

impl Params for OccBlockParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.self_attn.visit_mut(&join(prefix, "self_attn"), f);
        self.cross_attn.visit_mut(&join(prefix, "cross_attn"), f);
        self.up_conv.visit_mut(&join(prefix, "up_conv"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccParams {
    /// Projection of the pooled BEV into the first block's features.
    pub input_proj: Linear,
    /// Temporal-specific fusion MLPs, `3D -> D`, one per block.
    pub fuse: Vec<Mlp>,
    /// `G -> M`
    pub mask_mlp: Mlp,
    /// `M -> U`, emitting the decoder width.
    pub occ_mlp: Mlp,
    pub blocks: Vec<OccBlockParams>,
    /// `/4 -> /2 -> /1`, halving the channel count at each stage.
    pub decoder: [Conv3x3; 2],
}

impl OccParams {
    pub fn xavier(dim: usize, heads: usize, cfg: &OccConfig, rng: &mut impl Rng) -> Self {
        let (d2, d4) = (dim / 2, dim / 4);
        OccParams {
            input_proj: Linear::xavier(dim, dim, rng),
            fuse: (0..cfg.blocks).map(|_| Mlp::xavier(&[3 * dim, dim, dim], rng)).collect(),
            mask_mlp: Mlp::xavier(&[dim, dim, dim], rng),
            occ_mlp: Mlp::xavier(&[dim, dim, d4], rng),
            blocks: (0..cfg.blocks)
                .map(|_| OccBlockParams {
                    self_attn: AttentionParams::xavier(dim, dim, heads, rng),
                    cross_attn: AttentionParams::xavier(dim, dim, heads, rng),
                    up_conv: Conv3x3::xavier(dim, dim, false, rng),
                })
                .collect(),
            decoder: [Conv3x3::xavier(dim, d2, true, rng), Conv3x3::xavier(d2, d4, true, rng)],
        }
    }

    pub fn dim(&self) -> usize {
        self.input_proj.output_dim()
    }
}

impl Params for OccParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.input_proj.visit_mut(&join(prefix, "input_proj"), f);
        for (i, m) in self.fuse.iter_mut().enumerate() {
            m.visit_mut(&join(prefix, &format!("fuse.{i}")), f);
        }
        self.mask_mlp.visit_mut(&join(prefix, "mask_mlp"), f);
        self.occ_mlp.visit_mut(&join(prefix, "occ_mlp"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
        for (i, c) in self.decoder.iter_mut().enumerate() {
            c.visit_mut(&join(prefix, &format!("decoder.{i}")), f);
        }
    }
}

/// `G^t = MLP_t([Q_A, P_A, Q_X])` for block `t` (1-based).
pub fn fuse_agent_features(
    q_a: ArrayView2<'_, f64>,
    p_a: ArrayView2<'_, f64>,
    q_x: ArrayView2<'_, f64>,
    t: usize,
    params: &OccParams,
) -> Result<FeatureMat> {
    ensure!(
        q_a.nrows() == p_a.nrows() && q_a.nrows() == q_x.nrows(),
        "occ-former",
        "fuse_agent_features",
        "row counts differ: {}, {}, {}",
        q_a.nrows(),
        p_a.nrows(),
        q_x.nrows()
    );
    ensure!(
        (1..=params.fuse.len()).contains(&t),
        "occ-former",
        "fuse_agent_features",
        "block index {t} outside 1..={}",
        params.fuse.len()
    );
    mlp_forward(concat_cols(&[q_a, p_a, q_x])?.view(), &params.fuse[t - 1])
}

/// Initial block features: BEV pooled to a quarter and projected.
pub fn initial_features(bev: &BevGrid, params: &OccParams) -> Result<BevGrid> {
    let pooled = bev.avg_pool(FEATURE_STRIDE)?;
    let proj = params.input_proj.forward(pooled.flatten().view())?;
    BevGrid::from_flat(pooled.spec, proj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccBlockOutput {
    pub features: BevGrid,
    /// `agents x pixels` at 1/8 scale: pixel may attend to agent.
    pub attn_mask: Array2<bool>,
    /// Per-head `pixels x agents` cross-attention weights (empty with no agents).
    pub cross_weights: Vec<Array2<f64>>,
    /// `agents x H x W` instance probabilities at full resolution.
    pub instance: Array3<f64>,
}

/// One occupancy block.
pub fn occ_block(
    prev: &BevGrid,
    g: &FeatureMat,
    block: &OccBlockParams,
    params: &OccParams,
    cfg: &OccConfig,
) -> Result<OccBlockOutput> {
    let dim = params.dim();
    ensure!(
        prev.channels() == dim && g.ncols() == dim,
        "occ-former",
        "occ_block",
        "features have {} channels and agents {}, expected {dim}",
        prev.channels(),
        g.ncols()
    );
    let ds = prev.avg_pool(2)?;
    let x = ds.flatten();
    let pos = sinusoidal_pe(ds.spec.cell_centers().view(), dim)?;
    let xp = &x + &pos;
    let attended = mha(xp.view(), xp.view(), x.view(), &block.self_attn, None)?;

    let n = g.nrows();
    let m = mlp_forward(g.view(), &params.mask_mlp)?;
    let affinity = m.dot(&x.t());
    let logit = (cfg.mask_threshold / (1.0 - cfg.mask_threshold)).ln();
    let attn_mask = affinity.mapv(|a| a > logit);
    let (d_ds, cross_weights) = if n == 0 {
        (attended, Vec::new())
    } else {
        let mask_t = attn_mask.t().to_owned();
        let q = &attended + &pos;
        mha_with_weights(q.view(), g.view(), g.view(), &block.cross_attn, Some(&mask_t))?
    };
    let up = BevGrid::from_flat(ds.spec, d_ds)?.nearest_up(2);
    let mut features = conv3x3(&up, &block.up_conv)?;
    ensure!(
        features.data.dim() == prev.data.dim(),
        "occ-former",
        "occ_block",
        "residual shape mismatch"
    );
    features.data += &prev.data;

    let instance = if n == 0 {
        Array3::zeros((0, prev.spec.height * 4, prev.spec.width * 4))
    } else {
        let dec = decode(&features, params)?;
        let u = mlp_forward(m.view(), &params.occ_mlp)?;
        let scale = 1.0 / (u.ncols() as f64).sqrt();
        let logits = u.dot(&dec.flatten().t()) * scale;
        let (h, w) = (dec.spec.height, dec.spec.width);
        Array3::from_shape_vec((n, h, w), logits.iter().map(|&l| sigmoid(l)).collect()).expect("cell count")
    };
    Ok(OccBlockOutput {
        features,
        attn_mask,
        cross_weights,
        instance,
    })
}

/// Decode block features back to the BEV resolution.
pub fn decode(features: &BevGrid, params: &OccParams) -> Result<BevGrid> {
    let mut x = features.clone();
    for conv in &params.decoder {
        x = conv3x3(&x.nearest_up(2), conv)?;
    }
    Ok(x)
}

/// Per-cell argmax over agents, kept only at or above `threshold`; ties go to
/// the lower id.
pub fn merge_occupancy(instance: &Array3<f64>, ids: &[u32], spec: GridSpec, threshold: f64) -> Result<IdGrid> {
    let (n, h, w) = instance.dim();
    ensure!(
        n == ids.len() && (h, w) == (spec.height, spec.width),
        "occ-former",
        "merge_occupancy",
        "{n} probability maps of {h}x{w} for {} ids on a {}x{} grid",
        ids.len(),
        spec.height,
        spec.width
    );
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ids[i]);
    let mut grid = IdGrid::zeros(spec);
    for r in 0..h {
        for c in 0..w {
            let mut best: Option<(f64, u32)> = None;
            for &i in &order {
                let p = instance[[i, r, c]];
                if p >= threshold && best.is_none_or(|(bp, _)| p > bp) {
                    best = Some((p, ids[i]));
                }
            }
            if let Some((_, id)) = best {
                grid.data[[r, c]] = id;
            }
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccStep {
    pub instance: Array3<f64>,
    pub merged: IdGrid,
    pub attn_mask: Array2<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccOutput {
    /// Steps `0..blocks` ahead of the current frame.
    pub steps: Vec<OccStep>,
    pub ids: Vec<u32>,
}

/// Run every block for the given agents (ego excluded).
///
/// `q_a`, `centers` and `q_x` hold one row per agent; `ids` label the merged
/// grids.
pub fn forecast_occupancy(
    bev: &BevGrid,
    q_a: ArrayView2<'_, f64>,
    centers: ArrayView2<'_, f64>,
    q_x: ArrayView2<'_, f64>,
    ids: &[u32],
    params: &OccParams,
    cfg: &OccConfig,
) -> Result<OccOutput> {
    let dim = params.dim();
    ensure!(
        bev.channels() == dim,
        "occ-former",
        "forecast",
        "BEV has {} channels, expected {dim}",
        bev.channels()
    );
    ensure!(
        ids.len() == q_a.nrows() && centers.nrows() == q_a.nrows(),
        "occ-former",
        "forecast",
        "{} ids for {} agents",
        ids.len(),
        q_a.nrows()
    );
    ensure!(
        params.blocks.len() == cfg.blocks && params.fuse.len() == cfg.blocks,
        "occ-former",
        "forecast",
        "parameters hold {} blocks, config asks for {}",
        params.blocks.len(),
        cfg.blocks
    );
    let p_a = sinusoidal_pe(centers, dim)?;
    let mut f = initial_features(bev, params)?;
    let mut steps = Vec::with_capacity(cfg.blocks);
    for (t, block) in params.blocks.iter().enumerate() {
        let g = fuse_agent_features(q_a, p_a.view(), q_x, t + 1, params)?;
        let out = occ_block(&f, &g, block, params, cfg)?;
        let merged = merge_occupancy(&out.instance, ids, bev.spec, cfg.merge_threshold)?;
        steps.push(OccStep {
            instance: out.instance,
            merged,
            attn_mask: out.attn_mask,
        });
        f = out.features;
    }
    Ok(OccOutput {
        steps,
        ids: ids.to_vec(),
    })
}
