//! Instance-agnostic IoU and video panoptic quality over a forecast window.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::IdGrid;

/// Square evaluation windows around the ego, in metres of side length.
pub const NEAR_SIDE: f64 = 30.0;
pub const FAR_SIDE: f64 = 100.0;

/// Counts of one range over one forecast sequence, per future step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OccSequenceEval {
    pub intersection: u64,
    pub union: u64,
    /// Per step `(sum of TP IoU, TP, FP, FN)`.
    pub steps: Vec<(f64, u64, u64, u64)>,
}

/// Both ranges of one sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OccEval {
    pub near: OccSequenceEval,
    pub far: OccSequenceEval,
}

fn region_mask(grid: &IdGrid, center: [f64; 2], side: f64) -> impl Fn(usize, usize) -> bool + '_ {
    let half = side / 2.0;
    move |r, c| {
        let p = grid.spec.cell_center(r, c);
        (p[0] - center[0]).abs() <= half && (p[1] - center[1]).abs() <= half
    }
}

/// Evaluate one sequence of instance grids (`pred[t]` against `gt[t]`).
/// Instances match at IoU > 0.5; a match whose ground-truth instance was
/// earlier matched to a different prediction counts as FP and FN.
pub fn eval_occupancy_sequence(pred: &[IdGrid], gt: &[IdGrid], center: [f64; 2], side: f64) -> Result<OccSequenceEval> {
    ensure!(
        pred.len() == gt.len(),
        "metrics",
        "occupancy_metrics",
        "{} predicted steps vs {} ground-truth steps",
        pred.len(),
        gt.len()
    );
    let mut out = OccSequenceEval::default();
    let mut history: BTreeMap<u32, u32> = BTreeMap::new();
    for (p, g) in pred.iter().zip(gt) {
        ensure!(
            p.spec == g.spec,
            "metrics",
            "occupancy_metrics",
            "predicted and ground-truth grids differ in extent"
        );
        let inside = region_mask(p, center, side);
        let mut area_p: BTreeMap<u32, u64> = BTreeMap::new();
        let mut area_g: BTreeMap<u32, u64> = BTreeMap::new();
        let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for ((r, c), &a) in p.data.indexed_iter() {
            if !inside(r, c) {
                continue;
            }
            let b = g.data[[r, c]];
            out.intersection += (a != 0 && b != 0) as u64;
            out.union += (a != 0 || b != 0) as u64;
            if a != 0 {
                *area_p.entry(a).or_default() += 1;
            }
            if b != 0 {
                *area_g.entry(b).or_default() += 1;
            }
            if a != 0 && b != 0 {
                *inter.entry((a, b)).or_default() += 1;
            }
        }
        let mut iou_sum = 0.0;
        let mut tp = 0u64;
        let mut matched_p = 0u64;
        let mut matched_g = 0u64;
        for (&(a, b), &i) in &inter {
            let iou = i as f64 / (area_p[&a] + area_g[&b] - i) as f64;
            if iou <= 0.5 {
                continue;
            }
            matched_p += 1;
            matched_g += 1;
            let consistent = history.get(&b).is_none_or(|&prev| prev == a);
            history.insert(b, a);
            if consistent {
                iou_sum += iou;
                tp += 1;
            }
        }
        let fp = area_p.len() as u64 - matched_p + (matched_p - tp);
        let fn_ = area_g.len() as u64 - matched_g + (matched_g - tp);
        out.steps.push((iou_sum, tp, fp, fn_));
    }
    Ok(out)
}

pub fn eval_occupancy(pred: &[IdGrid], gt: &[IdGrid], ego: [f64; 2]) -> Result<OccEval> {
    Ok(OccEval {
        near: eval_occupancy_sequence(pred, gt, ego, NEAR_SIDE)?,
        far: eval_occupancy_sequence(pred, gt, ego, FAR_SIDE)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccRangeMetrics {
    pub iou: Option<f64>,
    pub vpq: Option<f64>,
    pub intersection: u64,
    pub union: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// IoU over all cells; VPQ as the mean over steps of the per-step panoptic
/// quality, with counts pooled across sequences.
pub fn occupancy_metrics<'a>(seqs: impl IntoIterator<Item = &'a OccSequenceEval>) -> OccRangeMetrics {
    let mut inter = 0u64;
    let mut union = 0u64;
    let mut steps: Vec<(f64, u64, u64, u64)> = Vec::new();
    for s in seqs {
        inter += s.intersection;
        union += s.union;
        if steps.len() < s.steps.len() {
            steps.resize(s.steps.len(), (0.0, 0, 0, 0));
        }
        for (acc, st) in steps.iter_mut().zip(&s.steps) {
            acc.0 += st.0;
            acc.1 += st.1;
            acc.2 += st.2;
            acc.3 += st.3;
        }
    }
    let per_step: Vec<f64> = steps
        .iter()
        .filter(|s| s.1 + s.2 + s.3 > 0)
        .map(|&(iou, tp, fp, fn_)| iou / (tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64))
        .collect();
    OccRangeMetrics {
        iou: (union > 0).then(|| inter as f64 / union as f64),
        vpq: (!per_step.is_empty()).then(|| per_step.iter().sum::<f64>() / per_step.len() as f64),
        intersection: inter,
        union,
        tp: steps.iter().map(|s| s.1).sum(),
        fp: steps.iter().map(|s| s.2).sum(),
        fn_: steps.iter().map(|s| s.3).sum(),
    }
}
