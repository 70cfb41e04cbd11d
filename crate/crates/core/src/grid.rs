//! Metric bird's-eye-view rasters.
//!
//! Cells are addressed `(row, col)` with rows running along +y and columns
//! along +x. Fractional cell coordinates put integer values at cell centers, so
//! the lower-left corner of the extent sits at `(-0.5, -0.5)`.

use ndarray::{Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Geometry of a raster: size and metric extent `[x_min, x_max, y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub extent: [f64; 4],
}

impl Default for GridSpec {
    /// 200 x 200 cells over [-51.2, 51.2] m, 0.512 m pitch.
    fn default() -> Self {
        GridSpec {
            height: 200,
            width: 200,
            extent: [-51.2, 51.2, -51.2, 51.2],
        }
    }
}

impl GridSpec {
    pub fn new(height: usize, width: usize, extent: [f64; 4]) -> Result<Self> {
        ensure!(height > 0 && width > 0, "grid", "new", "empty grid {height}x{width}");
        ensure!(
            extent[1] > extent[0] && extent[3] > extent[2],
            "grid",
            "new",
            "degenerate extent {extent:?}"
        );
        Ok(GridSpec {
            height,
            width,
            extent,
        })
    }

    pub fn cell_width(&self) -> f64 {
        (self.extent[1] - self.extent[0]) / self.width as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.extent[3] - self.extent[2]) / self.height as f64
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    /// Same extent and size, translated so its center is `center`.
    pub fn centered_at(&self, center: [f64; 2]) -> GridSpec {
        let hw = 0.5 * (self.extent[1] - self.extent[0]);
        let hh = 0.5 * (self.extent[3] - self.extent[2]);
        GridSpec {
            extent: [center[0] - hw, center[0] + hw, center[1] - hh, center[1] + hh],
            ..*self
        }
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.extent[0] + self.extent[1]),
            0.5 * (self.extent[2] + self.extent[3]),
        ]
    }

    /// Same extent with each side divided by `factor`.
    pub fn coarsen(&self, factor: usize) -> Result<GridSpec> {
        ensure!(
            factor > 0 && self.height % factor == 0 && self.width % factor == 0,
            "grid",
            "coarsen",
            "{}x{} not divisible by {factor}",
            self.height,
            self.width
        );
        Ok(GridSpec {
            height: self.height / factor,
            width: self.width / factor,
            extent: self.extent,
        })
    }

    pub fn refine(&self, factor: usize) -> GridSpec {
        GridSpec {
            height: self.height * factor,
            width: self.width * factor,
            extent: self.extent,
        }
    }

    /// World point to fractional `[col, row]`.
    pub fn world_to_cell(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.extent[0]) / self.cell_width() - 0.5,
            (p[1] - self.extent[2]) / self.cell_height() - 0.5,
        ]
    }

    /// Fractional `[col, row]` to world point.
    pub fn cell_to_world(&self, c: [f64; 2]) -> [f64; 2] {
        [
            self.extent[0] + (c[0] + 0.5) * self.cell_width(),
            self.extent[2] + (c[1] + 0.5) * self.cell_height(),
        ]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        self.cell_to_world([col as f64, row as f64])
    }

    /// World coordinates of every cell center, row-major, as an `n x 2` matrix.
    pub fn cell_centers(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_cells(), 2));
        for r in 0..self.height {
            for c in 0..self.width {
                let p = self.cell_center(r, c);
                out[[r * self.width + c, 0]] = p[0];
                out[[r * self.width + c, 1]] = p[1];
            }
        }
        out
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.extent[0] && p[0] < self.extent[1] && p[1] >= self.extent[2] && p[1] < self.extent[3]
    }
}

/// Dense `H x W x C` feature raster.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub spec: GridSpec,
    pub data: Array3<f64>,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        BevGrid {
            spec,
            data: Array3::zeros((spec.height, spec.width, channels)),
        }
    }

    pub fn from_data(spec: GridSpec, data: Array3<f64>) -> Result<Self> {
        let (h, w, c) = data.dim();
        ensure!(
            h == spec.height && w == spec.width && c > 0,
            "grid",
            "from_data",
            "data {h}x{w}x{c} does not fit spec {}x{}",
            spec.height,
            spec.width
        );
        Ok(BevGrid { spec, data })
    }

    pub fn channels(&self) -> usize {
        self.data.dim().2
    }

    pub fn cell(&self, row: usize, col: usize) -> ArrayView1<'_, f64> {
        self.data.slice(ndarray::s![row, col, ..])
    }

    /// Row-major `(H*W) x C` view of the features.
    pub fn flatten(&self) -> Array2<f64> {
        let (h, w, c) = self.data.dim();
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((h * w, c))
            .expect("standard layout reshape")
    }

    pub fn from_flat(spec: GridSpec, flat: Array2<f64>) -> Result<Self> {
        let (n, c) = flat.dim();
        ensure!(
            n == spec.num_cells(),
            "grid",
            "from_flat",
            "{n} rows for a {}x{} grid",
            spec.height,
            spec.width
        );
        let data = flat
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((spec.height, spec.width, c))
            .expect("standard layout reshape");
        Ok(BevGrid { spec, data })
    }

    /// Non-overlapping `factor x factor` mean pooling.
    pub fn avg_pool(&self, factor: usize) -> Result<BevGrid> {
        let spec = self.spec.coarsen(factor)?;
        let c = self.channels();
        let mut data = Array3::zeros((spec.height, spec.width, c));
        let norm = 1.0 / (factor * factor) as f64;
        for r in 0..spec.height {
            for q in 0..spec.width {
                let block = self.data.slice(ndarray::s![
                    r * factor..(r + 1) * factor,
                    q * factor..(q + 1) * factor,
                    ..
                ]);
                let mut acc = data.slice_mut(ndarray::s![r, q, ..]);
                for cell in block.lanes(Axis(2)) {
                    acc += &cell;
                }
                acc *= norm;
            }
        }
        Ok(BevGrid { spec, data })
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn nearest_up(&self, factor: usize) -> BevGrid {
        let spec = self.spec.refine(factor);
        let c = self.channels();
        let mut data = Array3::zeros((spec.height, spec.width, c));
        for r in 0..spec.height {
            for q in 0..spec.width {
                data.slice_mut(ndarray::s![r, q, ..])
                    .assign(&self.data.slice(ndarray::s![r / factor, q / factor, ..]));
            }
        }
        BevGrid { spec, data }
    }
}

/// Integer label raster (instance ids, panoptic labels). 0 means free.
#[derive(Debug, Clone, PartialEq)]
pub struct IdGrid {
    pub spec: GridSpec,
    pub data: Array2<u32>,
}

impl IdGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        IdGrid {
            spec,
            data: Array2::zeros((spec.height, spec.width)),
        }
    }

    pub fn ids(&self) -> std::collections::BTreeSet<u32> {
        self.data.iter().copied().filter(|&v| v != 0).collect()
    }

    pub fn count(&self, id: u32) -> usize {
        self.data.iter().filter(|&&v| v == id).count()
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        self.data
            .indexed_iter()
            .filter(|(_, &v)| v != 0)
            .map(|((r, c), &v)| (r, c, v))
    }
}
