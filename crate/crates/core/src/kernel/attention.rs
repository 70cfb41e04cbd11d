use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use super::{join, layer_norm, mlp_forward, softmax_slice, FeatureMat, Linear, Mlp, Params};
use crate::error::{ensure, Result};

/// Multi-head attention projections. Head width is `dim / heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl AttentionParams {
    /// Xavier-initialised attention whose keys/values come from `kv_dim`
    /// channels.
    pub fn xavier(dim: usize, kv_dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "dim {dim} not divisible by {heads} heads");
        AttentionParams {
            query: Linear::xavier(dim, dim, rng),
            key: Linear::xavier(kv_dim, dim, rng),
            value: Linear::xavier(kv_dim, dim, rng),
            output: Linear::xavier(dim, dim, rng),
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    /// Zero output projection: the block contributes nothing.
    pub fn silence(&mut self) {
        self.output.weight.fill(0.0);
        self.output.bias.fill(0.0);
    }
}

impl Params for AttentionParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Scaled dot-product multi-head attention.
///
/// `mask[i, j] == true` lets query `i` attend to key `j`. A query whose mask
/// row is entirely false attends uniformly to every key.
pub fn mha(
    query: ArrayView2<'_, f64>,
    key: ArrayView2<'_, f64>,
    value: ArrayView2<'_, f64>,
    p: &AttentionParams,
    mask: Option<&Array2<bool>>,
) -> Result<FeatureMat> {
    Ok(attend(query, key, value, p, mask, false)?.0)
}

/// [`mha`] that also returns the per-head attention matrices
/// (`heads` entries of `queries x keys`).
pub fn mha_with_weights(
    query: ArrayView2<'_, f64>,
    key: ArrayView2<'_, f64>,
    value: ArrayView2<'_, f64>,
    p: &AttentionParams,
    mask: Option<&Array2<bool>>,
) -> Result<(FeatureMat, Vec<Array2<f64>>)> {
    attend(query, key, value, p, mask, true)
}

fn attend(
    query: ArrayView2<'_, f64>,
    key: ArrayView2<'_, f64>,
    value: ArrayView2<'_, f64>,
    p: &AttentionParams,
    mask: Option<&Array2<bool>>,
    keep_weights: bool,
) -> Result<(FeatureMat, Vec<Array2<f64>>)> {
    let (nq, nk) = (query.nrows(), key.nrows());
    ensure!(
        nk == value.nrows(),
        "tensor-kernel",
        "mha",
        "{nk} keys but {} values",
        value.nrows()
    );
    ensure!(nk > 0, "tensor-kernel", "mha", "attention over an empty key set");
    ensure!(
        p.heads > 0 && p.dim() % p.heads == 0,
        "tensor-kernel",
        "mha",
        "dim {} not divisible by {} heads",
        p.dim(),
        p.heads
    );
    if let Some(m) = mask {
        ensure!(
            m.dim() == (nq, nk),
            "tensor-kernel",
            "mha",
            "mask {:?} does not match {nq}x{nk}",
            m.dim()
        );
    }
    let q = p.query.forward(query)?;
    let k = p.key.forward(key)?;
    let v = p.value.forward(value)?;
    let dh = p.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut merged = Array2::zeros((nq, p.dim()));
    let mut weights = Vec::new();
    for h in 0..p.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for i in 0..nq {
            let row = scores.row_mut(i).into_slice().expect("contiguous row");
            masked_softmax(row, mask.map(|m| m.row(i)));
        }
        merged.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        if keep_weights {
            weights.push(scores);
        }
    }
    Ok((p.output.forward(merged.view())?, weights))
}

fn masked_softmax(row: &mut [f64], allowed: Option<ndarray::ArrayView1<'_, bool>>) {
    match allowed {
        Some(m) if m.iter().any(|&a| a) => {
            let max = row
                .iter()
                .zip(m.iter())
                .filter(|(_, &a)| a)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (x, &a) in row.iter_mut().zip(m.iter()) {
                *x = if a { (*x - max).exp() } else { 0.0 };
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        Some(_) => {
            let u = 1.0 / row.len() as f64;
            row.iter_mut().for_each(|x| *x = u);
        }
        None => softmax_slice(row),
    }
}

/// Post-norm transformer decoder layer: optional self-attention, cross-attention
/// to a memory, feed-forward; each with a residual and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: Option<AttentionParams>,
    pub cross_attn: AttentionParams,
    pub ffn: Mlp,
}

impl DecoderLayer {
    pub fn xavier(dim: usize, heads: usize, with_self: bool, rng: &mut impl Rng) -> Self {
        DecoderLayer {
            self_attn: with_self.then(|| AttentionParams::xavier(dim, dim, heads, rng)),
            cross_attn: AttentionParams::xavier(dim, dim, heads, rng),
            ffn: Mlp::xavier(&[dim, 2 * dim, dim], rng),
        }
    }

    /// `pos` is added to the queries before every attention (not to values).
    pub fn forward(
        &self,
        q: &FeatureMat,
        pos: Option<&FeatureMat>,
        memory_key: ArrayView2<'_, f64>,
        memory_value: ArrayView2<'_, f64>,
        mask: Option<&Array2<bool>>,
    ) -> Result<FeatureMat> {
        let with_pos = |x: &FeatureMat| match pos {
            Some(p) => x + p,
            None => x.clone(),
        };
        let mut x = q.clone();
        if let Some(sa) = &self.self_attn {
            let qp = with_pos(&x);
            let a = mha(qp.view(), qp.view(), x.view(), sa, None)?;
            x = layer_norm(&(x + a));
        }
        let qp = with_pos(&x);
        let c = mha(qp.view(), memory_key, memory_value, &self.cross_attn, mask)?;
        x = layer_norm(&(x + c));
        let f = mlp_forward(x.view(), &self.ffn)?;
        Ok(layer_norm(&(x + f)))
    }
}

impl Params for DecoderLayer {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        if let Some(sa) = &mut self.self_attn {
            sa.visit_mut(&join(prefix, "self_attn"), f);
        }
        self.cross_attn.visit_mut(&join(prefix, "cross_attn"), f);
        self.ffn.visit_mut(&join(prefix, "ffn"), f);
    }
}
