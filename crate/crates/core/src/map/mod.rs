//! Map head: thing queries (lanes, dividers, crossings) and one stuff query
//! (drivable area) refined against the BEV and decoded to masks by a dot
//! product with the per-cell features.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::{BevGrid, GridSpec};
use crate::kernel::{
    join, sigmoid, sinusoidal_pe, visit_array, xavier, DecoderLayer, FeatureMat, Linear, Params,
};
use crate::scene::{rasterize_polygons, rasterize_polylines, FeatureSpec, MapLayers};

/// Thing classes plus the no-object class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapClass {
    Lane,
    Divider,
    Crossing,
    None,
}

impl MapClass {
    pub const THINGS: [MapClass; 3] = [MapClass::Lane, MapClass::Divider, MapClass::Crossing];

    pub fn from_index(i: usize) -> MapClass {
        match i {
            0 => MapClass::Lane,
            1 => MapClass::Divider,
            2 => MapClass::Crossing,
            _ => MapClass::None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MapClass::Lane => "lane",
            MapClass::Divider => "divider",
            MapClass::Crossing => "crossing",
            MapClass::None => "none",
        }
    }
}

/// Panoptic label of a cell with no map element.
pub const LABEL_FREE: u32 = 0;
/// Panoptic label of the drivable-area stuff class.
pub const LABEL_DRIVABLE: u32 = 1;
/// Panoptic label of thing query `q` is `LABEL_THING_BASE + q`.
pub const LABEL_THING_BASE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub thing_queries: usize,
    pub layers: usize,
    /// Pooling factor applied to the BEV before it serves as attention memory.
    pub memory_stride: usize,
    pub mask_threshold: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            thing_queries: 300,
            layers: 6,
            memory_stride: 4,
            mask_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapParams {
    pub thing_queries: Array2<f64>,
    pub stuff_query: Array2<f64>,
    pub layers: Vec<DecoderLayer>,
    /// `D -> 4` logits over lane, divider, crossing, none.
    pub class_head: Linear,
    pub mask_embed: Linear,
}

impl MapParams {
    pub fn xavier(dim: usize, heads: usize, cfg: &MapConfig, rng: &mut impl Rng) -> Self {
        MapParams {
            thing_queries: xavier(cfg.thing_queries, dim, rng),
            stuff_query: xavier(1, dim, rng),
            layers: (0..cfg.layers).map(|_| DecoderLayer::xavier(dim, heads, true, rng)).collect(),
            class_head: Linear::xavier(dim, 4, rng),
            mask_embed: Linear::xavier(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.stuff_query.ncols()
    }
}

impl Params for MapParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        visit_array(prefix, "thing_queries", &mut self.thing_queries, f);
        visit_array(prefix, "stuff_query", &mut self.stuff_query, f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        self.class_head.visit_mut(&join(prefix, "class_head"), f);
        self.mask_embed.visit_mut(&join(prefix, "mask_embed"), f);
    }
}

/// Refined map queries `Q_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapQuerySet {
    pub thing_queries: FeatureMat,
    pub stuff_query: FeatureMat,
    pub class_logits: Array2<f64>,
}

impl MapQuerySet {
    pub fn class_of(&self, q: usize) -> MapClass {
        let row = self.class_logits.row(q);
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        MapClass::from_index(best)
    }

    /// Thing queries whose predicted class is not the no-object class.
    pub fn active_things(&self) -> Vec<usize> {
        (0..self.thing_queries.nrows())
            .filter(|&q| self.class_of(q) != MapClass::None)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOutput {
    pub queries: MapQuerySet,
    /// Mask probabilities, one `H x W` grid per thing query.
    pub thing_masks: Vec<Array2<f64>>,
    pub stuff_mask: Array2<f64>,
    pub panoptic: Array2<u32>,
    pub spec: GridSpec,
}

/// Binary per-class map layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MapMasks {
    pub lane: Array2<bool>,
    pub divider: Array2<bool>,
    pub crossing: Array2<bool>,
    pub drivable: Array2<bool>,
}

impl MapMasks {
    pub fn named(&self) -> [(&'static str, &Array2<bool>); 4] {
        [
            ("lane", &self.lane),
            ("divider", &self.divider),
            ("crossing", &self.crossing),
            ("drivable", &self.drivable),
        ]
    }
}

impl MapOutput {
    /// Per-class union of the thresholded thing masks, plus the stuff mask.
    pub fn class_masks(&self, threshold: f64) -> MapMasks {
        let shape = self.stuff_mask.dim();
        let mut layers = [Array2::from_elem(shape, false), Array2::from_elem(shape, false), Array2::from_elem(shape, false)];
        for (q, mask) in self.thing_masks.iter().enumerate() {
            let class = self.queries.class_of(q);
            if class == MapClass::None {
                continue;
            }
            let target = &mut layers[class as usize];
            ndarray::Zip::from(target).and(mask).for_each(|t, &p| *t |= p > threshold);
        }
        let [lane, divider, crossing] = layers;
        MapMasks {
            lane,
            divider,
            crossing,
            drivable: self.stuff_mask.mapv(|p| p > threshold),
        }
    }
}

/// Ground-truth class layers rendered with the same stroke widths as the
/// synthetic features.
pub fn map_ground_truth(map: &MapLayers, spec: &GridSpec, fs: &FeatureSpec) -> MapMasks {
    MapMasks {
        lane: rasterize_polylines(spec, &map.lanes, fs.line_half_width),
        divider: rasterize_polylines(spec, &map.dividers, fs.line_half_width),
        crossing: rasterize_polylines(spec, &map.crossings, 3.0 * fs.line_half_width),
        drivable: rasterize_polygons(spec, &map.drivable),
    }
}

/// Run the query stack and decode masks and the panoptic partition.
pub fn decode_map(bev: &BevGrid, params: &MapParams, cfg: &MapConfig) -> Result<MapOutput> {
    let dim = params.dim();
    ensure!(
        bev.channels() == dim,
        "map-head",
        "decode_map",
        "BEV has {} channels, map queries have {dim}",
        bev.channels()
    );
    ensure!(
        params.thing_queries.ncols() == dim && params.thing_queries.nrows() == cfg.thing_queries,
        "map-head",
        "decode_map",
        "thing query table is {:?}, config expects {} x {dim}",
        params.thing_queries.dim(),
        cfg.thing_queries
    );
    let memory = if cfg.memory_stride > 1 {
        bev.avg_pool(cfg.memory_stride)?
    } else {
        bev.clone()
    };
    let value = memory.flatten();
    let key = &value + &sinusoidal_pe(memory.spec.cell_centers().view(), dim)?;
    let nt = cfg.thing_queries;
    let mut q = ndarray::concatenate(Axis(0), &[params.thing_queries.view(), params.stuff_query.view()])
        .expect("widths checked");
    for layer in &params.layers {
        q = layer.forward(&q, None, key.view(), value.view(), None)?;
    }
    let thing = q.slice(ndarray::s![..nt, ..]).to_owned();
    let stuff = q.slice(ndarray::s![nt.., ..]).to_owned();
    let class_logits = params.class_head.forward(thing.view())?;

    let embed = params.mask_embed.forward(q.view())?;
    let flat = bev.flatten();
    let scale = 1.0 / (dim as f64).sqrt();
    let logits = flat.dot(&embed.t()) * scale;
    let (h, w) = (bev.spec.height, bev.spec.width);
    let to_grid = |col: usize| -> Array2<f64> {
        let probs: Vec<f64> = logits.column(col).iter().map(|&l| sigmoid(l)).collect();
        Array2::from_shape_vec((h, w), probs).expect("cell count")
    };
    let thing_masks: Vec<Array2<f64>> = (0..nt).map(to_grid).collect();
    let stuff_mask = to_grid(nt);
    let queries = MapQuerySet {
        thing_queries: thing,
        stuff_query: stuff,
        class_logits,
    };
    let panoptic = panoptic_merge(&queries, &thing_masks, &stuff_mask, cfg.mask_threshold);
    Ok(MapOutput {
        queries,
        thing_masks,
        stuff_mask,
        panoptic,
        spec: bev.spec,
    })
}

/// Per-cell argmax over confident thing masks, the stuff mask and free space.
/// Ties go to the lower label.
pub fn panoptic_merge(
    queries: &MapQuerySet,
    thing_masks: &[Array2<f64>],
    stuff_mask: &Array2<f64>,
    threshold: f64,
) -> Array2<u32> {
    let active = queries.active_things();
    Array2::from_shape_fn(stuff_mask.dim(), |(r, c)| {
        let mut label = LABEL_FREE;
        let mut best = threshold;
        let s = stuff_mask[[r, c]];
        if s > best {
            best = s;
            label = LABEL_DRIVABLE;
        }
        for &q in &active {
            let p = thing_masks[q][[r, c]];
            if p > best {
                best = p;
                label = LABEL_THING_BASE + q as u32;
            }
        }
        label
    })
}

/// `|A and B| / |A or B|`, with two empty masks counting as perfect agreement.
pub fn mask_iou(pred: &Array2<bool>, gt: &Array2<bool>) -> Result<f64> {
    let (inter, union) = mask_counts(pred, gt)?;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Intersection and union cell counts.
pub fn mask_counts(pred: &Array2<bool>, gt: &Array2<bool>) -> Result<(u64, u64)> {
    ensure!(
        pred.dim() == gt.dim(),
        "map-head",
        "mask_iou",
        "mask shapes differ: {:?} vs {:?}",
        pred.dim(),
        gt.dim()
    );
    let mut inter = 0u64;
    let mut union = 0u64;
    ndarray::Zip::from(pred).and(gt).for_each(|&a, &b| {
        inter += (a && b) as u64;
        union += (a || b) as u64;
    });
    Ok((inter, union))
}

/// All map queries as one matrix: thing rows then the stuff row.
pub fn map_query_matrix(q: &MapQuerySet) -> FeatureMat {
    ndarray::concatenate(Axis(0), &[q.thing_queries.view(), q.stuff_query.view()]).expect("equal widths")
}
