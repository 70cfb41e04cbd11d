//! Dense linear algebra and attention primitives.
//!
//! Everything here is pure: parameters are immutable inputs and identical
//! inputs give bitwise-identical outputs. Feature matrices are `rows x channels`
//! with rows indexing tokens (queries, agents, flattened cells).

mod attention;
mod conv;
mod sampling;

pub use attention::{mha, mha_with_weights, AttentionParams, DecoderLayer};
pub use conv::{conv3x3, Conv3x3};
pub use sampling::{bilinear_sample, deform_attn, DeformParams};

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Query/feature matrix, `rows x channels`.
pub type FeatureMat = Array2<f64>;

/// Default embedding width.
pub const EMBED_DIM: usize = 256;

/// Visitor over named parameter tensors, used by the weights file codec.
pub trait Params {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_array<D: ndarray::Dimension>(
    prefix: &str,
    name: &str,
    a: &mut ndarray::Array<f64, D>,
    f: &mut dyn FnMut(&str, &[usize], &mut [f64]),
) {
    let shape = a.shape().to_vec();
    f(&join(prefix, name), &shape, a.as_slice_mut().expect("standard layout"));
}

/// Xavier-uniform sample rounded to f32 precision so that weights survive the
/// f32 weights file without loss.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = rng.random_range(-bound..bound);
        v as f32 as f64
    })
}

/// Affine map `x W + b` with `W: in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn xavier(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            weight: xavier(input, output, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Linear {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<FeatureMat> {
        ensure!(
            x.ncols() == self.input_dim(),
            "tensor-kernel",
            "linear",
            "input has {} channels, layer expects {}",
            x.ncols(),
            self.input_dim()
        );
        Ok(x.dot(&self.weight) + &self.bias)
    }
}

impl Params for Linear {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = [self.weight.nrows(), self.weight.ncols()];
        f(
            &join(prefix, "weight"),
            &shape,
            self.weight.as_slice_mut().expect("standard layout"),
        );
        let len = [self.bias.len()];
        f(
            &join(prefix, "bias"),
            &len,
            self.bias.as_slice_mut().expect("standard layout"),
        );
    }
}

/// Multi-layer perceptron: ReLU between layers, identity after the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Layer widths of an MLP, including input and output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape(pub Vec<usize>);

impl Mlp {
    pub fn xavier(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        Mlp {
            layers: dims
                .windows(2)
                .map(|w| Linear::xavier(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Mlp {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        ensure!(!layers.is_empty(), "tensor-kernel", "mlp", "no layers");
        for (i, pair) in layers.windows(2).enumerate() {
            ensure!(
                pair[0].output_dim() == pair[1].input_dim(),
                "tensor-kernel",
                "mlp",
                "layer {i} outputs {} but layer {} takes {}",
                pair[0].output_dim(),
                i + 1,
                pair[1].input_dim()
            );
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<FeatureMat> {
        mlp_forward(x, self)
    }
}

impl Params for Mlp {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
    }
}

pub fn mlp_forward(x: ArrayView2<'_, f64>, p: &Mlp) -> Result<FeatureMat> {
    ensure!(
        x.ncols() == p.input_dim(),
        "tensor-kernel",
        "mlp_forward",
        "input has {} channels, MLP expects {}",
        x.ncols(),
        p.input_dim()
    );
    let last = p.layers.len() - 1;
    let mut h = p.layers[0].forward(x)?;
    if last > 0 {
        relu_inplace(&mut h);
    }
    for (i, layer) in p.layers.iter().enumerate().skip(1) {
        h = layer.forward(h.view())?;
        if i < last {
            relu_inplace(&mut h);
        }
    }
    Ok(h)
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        softmax_slice(row.as_slice_mut().expect("row of standard layout"));
    }
}

pub(crate) fn softmax_slice(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Parameter-free layer normalisation over channels.
pub fn layer_norm(x: &Array2<f64>) -> FeatureMat {
    const EPS: f64 = 1e-5;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

/// Sinusoidal encoding of 2-D points.
///
/// The first half of the output encodes x, the second half y; each half holds
/// interleaved `(sin, cos)` pairs at geometrically spaced frequencies
/// `1 / 10000^(2k / half)`.
pub fn sinusoidal_pe(points: ArrayView2<'_, f64>, out_dim: usize) -> Result<FeatureMat> {
    ensure!(
        out_dim > 0 && out_dim % 4 == 0,
        "tensor-kernel",
        "sinusoidal_pe",
        "output width {out_dim} must be a positive multiple of 4"
    );
    ensure!(
        points.ncols() == 2,
        "tensor-kernel",
        "sinusoidal_pe",
        "points must be n x 2, got {} columns",
        points.ncols()
    );
    let half = out_dim / 2;
    let pairs = half / 2;
    let freqs: Vec<f64> = (0..pairs)
        .map(|k| 1.0 / 10000f64.powf(2.0 * k as f64 / half as f64))
        .collect();
    let mut out = Array2::zeros((points.nrows(), out_dim));
    for (i, p) in points.rows().into_iter().enumerate() {
        for axis in 0..2 {
            for (k, &w) in freqs.iter().enumerate() {
                let a = p[axis] * w;
                out[[i, axis * half + 2 * k]] = a.sin();
                out[[i, axis * half + 2 * k + 1]] = a.cos();
            }
        }
    }
    Ok(out)
}

/// Channel-wise concatenation of equally tall matrices.
pub fn concat_cols(parts: &[ArrayView2<'_, f64>]) -> Result<FeatureMat> {
    ensure!(!parts.is_empty(), "tensor-kernel", "concat", "nothing to concatenate");
    let rows = parts[0].nrows();
    ensure!(
        parts.iter().all(|p| p.nrows() == rows),
        "tensor-kernel",
        "concat",
        "row counts differ: {:?}",
        parts.iter().map(|p| p.nrows()).collect::<Vec<_>>()
    );
    Ok(concatenate(Axis(1), parts).expect("row counts checked"))
}

pub fn all_finite(x: &Array2<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}
