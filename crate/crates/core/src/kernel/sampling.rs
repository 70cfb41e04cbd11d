use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use super::{join, softmax_slice, FeatureMat, Linear, Params};
use crate::error::{ensure, Result};
use crate::grid::BevGrid;

/// Bilinear interpolation of grid features at world points.
///
/// Points outside the raster clamp to the border cells.
pub fn bilinear_sample(grid: &BevGrid, points: ArrayView2<'_, f64>) -> Result<FeatureMat> {
    ensure!(
        points.ncols() == 2,
        "tensor-kernel",
        "bilinear_sample",
        "points must be n x 2"
    );
    let c = grid.channels();
    let mut out = Array2::zeros((points.nrows(), c));
    for (i, p) in points.rows().into_iter().enumerate() {
        let corners = corner_weights(grid, [p[0], p[1]]);
        let mut row = out.row_mut(i);
        for (r, q, w) in corners {
            if w != 0.0 {
                row.scaled_add(w, &grid.data.slice(s![r, q, ..]));
            }
        }
    }
    Ok(out)
}

/// The four `(row, col, weight)` interpolation taps for a world point.
pub(crate) fn corner_weights(grid: &BevGrid, p: [f64; 2]) -> [(usize, usize, f64); 4] {
    let (h, w) = (grid.spec.height, grid.spec.width);
    let f = grid.spec.world_to_cell(p);
    let (c0, tx) = axis_tap(f[0], w);
    let (r0, ty) = axis_tap(f[1], h);
    let c1 = (c0 + 1).min(w - 1);
    let r1 = (r0 + 1).min(h - 1);
    [
        (r0, c0, (1.0 - ty) * (1.0 - tx)),
        (r0, c1, (1.0 - ty) * tx),
        (r1, c0, ty * (1.0 - tx)),
        (r1, c1, ty * tx),
    ]
}

fn axis_tap(frac: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let x = frac.clamp(0.0, (n - 1) as f64);
    let i = (x.floor() as usize).min(n - 2);
    (i, x - i as f64)
}

/// Single-scale deformable attention: per head, `points` learned offsets around
/// a reference point with softmax weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformParams {
    pub heads: usize,
    pub points: usize,
    /// Metres per unit of raw offset output.
    pub offset_scale: f64,
    /// `dim -> heads * points * 2`
    pub offset: Linear,
    /// `dim -> heads * points`
    pub weight: Linear,
    /// `channels -> dim`
    pub value: Linear,
    pub output: Linear,
}

impl DeformParams {
    pub fn xavier(
        dim: usize,
        channels: usize,
        heads: usize,
        points: usize,
        offset_scale: f64,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        DeformParams {
            heads,
            points,
            offset_scale,
            offset: Linear::xavier(dim, heads * points * 2, rng),
            weight: Linear::xavier(dim, heads * points, rng),
            value: Linear::xavier(channels, dim, rng),
            output: Linear::xavier(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.output.output_dim()
    }
}

impl Params for DeformParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.offset.visit_mut(&join(prefix, "offset"), f);
        self.weight.visit_mut(&join(prefix, "weight"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// `out_i = W_o [ sum_p a_{i,h,p} W_v^h sample(grid, r_i + dp_{i,h,p}) ]_h`.
pub fn deform_attn(
    q: ArrayView2<'_, f64>,
    ref_points: ArrayView2<'_, f64>,
    grid: &BevGrid,
    p: &DeformParams,
) -> Result<FeatureMat> {
    let n = q.nrows();
    ensure!(
        ref_points.dim() == (n, 2),
        "tensor-kernel",
        "deform_attn",
        "need one reference point per query: {} queries, {:?} points",
        n,
        ref_points.dim()
    );
    ensure!(
        grid.channels() == p.value.input_dim(),
        "tensor-kernel",
        "deform_attn",
        "grid has {} channels, value projection expects {}",
        grid.channels(),
        p.value.input_dim()
    );
    let dim = p.dim();
    let dh = dim / p.heads;
    let offsets = p.offset.forward(q)?;
    let logits = p.weight.forward(q)?;
    let mut merged = Array2::zeros((n, dim));
    let mut sample_points = Array2::zeros((p.points, 2));
    for i in 0..n {
        for h in 0..p.heads {
            let mut w: Vec<f64> = (0..p.points).map(|k| logits[[i, h * p.points + k]]).collect();
            softmax_slice(&mut w);
            for k in 0..p.points {
                let o = 2 * (h * p.points + k);
                sample_points[[k, 0]] = ref_points[[i, 0]] + p.offset_scale * offsets[[i, o]];
                sample_points[[k, 1]] = ref_points[[i, 1]] + p.offset_scale * offsets[[i, o + 1]];
            }
            let sampled = bilinear_sample(grid, sample_points.view())?;
            // Interpolation weights sum to one, so projecting after sampling is exact.
            let mut acc = Array1::<f64>::zeros(grid.channels());
            for k in 0..p.points {
                acc.scaled_add(w[k], &sampled.row(k));
            }
            let (c0, c1) = (h * dh, (h + 1) * dh);
            let head = acc.dot(&p.value.weight.slice(s![.., c0..c1])) + &p.value.bias.slice(s![c0..c1]);
            merged.slice_mut(s![i, c0..c1]).assign(&head);
        }
    }
    p.output.forward(merged.view())
}
