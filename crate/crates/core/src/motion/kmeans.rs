//! k-means++ seeding followed by Lloyd iterations, for 2-D anchor endpoints.

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

pub const MAX_ITERS: usize = 100;
pub const SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    /// Within-cluster SSE after each assignment step.
    pub sse_trace: Vec<f64>,
}

impl KMeans {
    pub fn sse(&self) -> f64 {
        *self.sse_trace.last().expect("at least one assignment")
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn row(m: &Array2<f64>, i: usize) -> [f64; 2] {
    [m[[i, 0]], m[[i, 1]]]
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
fn nearest(p: [f64; 2], centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for k in 0..centroids.nrows() {
        let d = dist2(p, row(centroids, k));
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub fn kmeans(points: &Array2<f64>, k: usize, seed_value: u64) -> Result<KMeans> {
    let n = points.nrows();
    if points.ncols() != 2 {
        return Err(Error::config(format!("k-means expects n x 2 points, got {:?}", points.dim())));
    }
    if k == 0 || n < k {
        return Err(Error::config(format!("k-means needs at least k = {k} > 0 points, got {n}")));
    }
    let mut rng = seed::rng(seed::derive(seed_value, "kmeans++"));
    let mut centroids = Array2::zeros((k, 2));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| dist2(row(points, i), row(&centroids, 0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    chosen = i;
                    break;
                }
                u -= w;
            }
            // Never land on a zero-weight point through rounding.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).expect("positive total");
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(dist2(row(points, i), row(&centroids, c)));
        }
    }

    let mut labels = vec![0; n];
    let mut sse_trace = Vec::new();
    for _ in 0..MAX_ITERS {
        let mut sse = 0.0;
        for i in 0..n {
            let (l, d) = nearest(row(points, i), &centroids);
            labels[i] = l;
            sse += d;
        }
        sse_trace.push(sse);
        let mut sums = Array2::<f64>::zeros((k, 2));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            sums[[labels[i], 0]] += points[[i, 0]];
            sums[[labels[i], 1]] += points[[i, 1]];
            counts[labels[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let m = [sums[[c, 0]] / counts[c] as f64, sums[[c, 1]] / counts[c] as f64];
            shift = shift.max(dist2(m, row(&centroids, c)).sqrt());
            centroids[[c, 0]] = m[0];
            centroids[[c, 1]] = m[1];
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    let mut sse = 0.0;
    for i in 0..n {
        let (l, d) = nearest(row(points, i), &centroids);
        labels[i] = l;
        sse += d;
    }
    sse_trace.push(sse);
    Ok(KMeans {
        centroids,
        labels,
        sse_trace,
    })
}
