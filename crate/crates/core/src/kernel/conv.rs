use ndarray::{s, Array1, Array2, Array3};
use rand::Rng;
use rayon::prelude::*;

use super::{join, xavier, Params};
use crate::error::{ensure, Result};
use crate::grid::BevGrid;

/// 3x3 same-padded convolution. `weight` is `(9 * in) x out`, taps ordered
/// row-major over `(dy, dx) in {-1, 0, 1}^2`, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Conv3x3 {
    pub fn xavier(input: usize, output: usize, with_bias: bool, rng: &mut impl Rng) -> Self {
        Conv3x3 {
            weight: xavier(9 * input, output, rng),
            bias: with_bias.then(|| Array1::zeros(output)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows() / 9
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }
}

impl Params for Conv3x3 {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        let shape = [self.weight.nrows(), self.weight.ncols()];
        f(
            &join(prefix, "weight"),
            &shape,
            self.weight.as_slice_mut().expect("standard layout"),
        );
        if let Some(b) = &mut self.bias {
            let len = [b.len()];
            f(&join(prefix, "bias"), &len, b.as_slice_mut().expect("standard layout"));
        }
    }
}

const ROWS_PER_CHUNK: usize = 8;

pub fn conv3x3(x: &BevGrid, conv: &Conv3x3) -> Result<BevGrid> {
    let (h, w, cin) = x.data.dim();
    ensure!(
        cin == conv.input_dim() && conv.weight.nrows() == 9 * cin,
        "tensor-kernel",
        "conv3x3",
        "input has {cin} channels, kernel expects {}",
        conv.input_dim()
    );
    let cout = conv.output_dim();
    let chunks: Vec<usize> = (0..h).step_by(ROWS_PER_CHUNK).collect();
    let pieces: Vec<Array2<f64>> = chunks
        .par_iter()
        .map(|&r0| {
            let r1 = (r0 + ROWS_PER_CHUNK).min(h);
            let mut cols = Array2::<f64>::zeros(((r1 - r0) * w, 9 * cin));
            for r in r0..r1 {
                for c in 0..w {
                    let row = (r - r0) * w + c;
                    for (tap, (dy, dx)) in TAPS.iter().enumerate() {
                        let rr = r as isize + dy;
                        let cc = c as isize + dx;
                        if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                            continue;
                        }
                        cols.slice_mut(s![row, tap * cin..(tap + 1) * cin])
                            .assign(&x.data.slice(s![rr as usize, cc as usize, ..]));
                    }
                }
            }
            let mut out = cols.dot(&conv.weight);
            if let Some(b) = &conv.bias {
                out += b;
            }
            out
        })
        .collect();
    let mut data = Array3::zeros((h, w, cout));
    for (&r0, piece) in chunks.iter().zip(pieces) {
        let r1 = (r0 + ROWS_PER_CHUNK).min(h);
        let block = piece
            .into_shape_with_order(((r1 - r0), w, cout))
            .expect("chunk reshape");
        data.slice_mut(s![r0..r1, .., ..]).assign(&block);
    }
    Ok(BevGrid { spec: x.spec, data })
}

const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];
