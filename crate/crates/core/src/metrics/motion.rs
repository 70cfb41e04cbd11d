//! Forecast metrics over perception-matched agents.

use serde::{Deserialize, Serialize};

use super::tracking::greedy_match;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPred {
    /// Perceived current position.
    pub position: [f64; 2],
    pub score: f64,
    /// `K` modes of `T` absolute waypoints.
    pub modes: Vec<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastGt {
    pub position: [f64; 2],
    /// `T` future positions, `None` where the agent is not observed.
    pub future: Vec<Option<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionMetricConfig {
    pub match_distance: f64,
    pub miss_distance: f64,
    pub epa_fp_penalty: f64,
}

impl Default for MotionMetricConfig {
    fn default() -> Self {
        MotionMetricConfig {
            match_distance: 1.0,
            miss_distance: 2.0,
            epa_fp_penalty: 0.5,
        }
    }
}

/// Per-frame evaluation; sums are combined across frames and scenarios.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionFrameEval {
    /// `(minADE, minFDE)` of each matched prediction with an observed future.
    pub matched: Vec<(f64, f64)>,
    pub false_positives: u64,
    pub gt: u64,
    /// `(score, is TP for AP)` of every prediction.
    pub ranked: Vec<(f64, bool)>,
}

/// `(minADE, minFDE)` over modes; `None` when no future step is observed.
pub fn min_ade_fde(modes: &[Vec<[f64; 2]>], future: &[Option<[f64; 2]>]) -> Option<(f64, f64)> {
    let last = future.iter().rposition(|p| p.is_some())?;
    let mut best_ade = f64::INFINITY;
    let mut best_fde = f64::INFINITY;
    for m in modes {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (t, g) in future.iter().enumerate() {
            if let (Some(g), Some(p)) = (g, m.get(t)) {
                sum += (p[0] - g[0]).hypot(p[1] - g[1]);
                n += 1;
            }
        }
        let Some(p) = m.get(last) else { continue };
        let g = future[last].expect("observed");
        best_ade = best_ade.min(sum / n as f64);
        best_fde = best_fde.min((p[0] - g[0]).hypot(p[1] - g[1]));
    }
    best_ade.is_finite().then_some((best_ade, best_fde))
}

pub fn eval_motion_frame(pred: &[ForecastPred], gt: &[ForecastGt], cfg: &MotionMetricConfig) -> MotionFrameEval {
    let pc: Vec<[f64; 2]> = pred.iter().map(|p| p.position).collect();
    let gc: Vec<[f64; 2]> = gt.iter().map(|g| g.position).collect();
    let matches = greedy_match(&pc, &gc, cfg.match_distance);
    let mut tp_flag = vec![false; pred.len()];
    let mut matched = Vec::new();
    for &(i, j, _) in &matches {
        if let Some((ade, fde)) = min_ade_fde(&pred[i].modes, &gt[j].future) {
            matched.push((ade, fde));
            tp_flag[i] = fde <= cfg.miss_distance;
        }
    }
    MotionFrameEval {
        matched,
        false_positives: (pred.len() - matches.len()) as u64,
        gt: gt.len() as u64,
        ranked: pred.iter().zip(&tp_flag).map(|(p, &tp)| (p.score, tp)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionMetrics {
    pub min_ade: Option<f64>,
    pub min_fde: Option<f64>,
    pub miss_rate: Option<f64>,
    pub epa: Option<f64>,
    pub min_fde_ap: Option<f64>,
    pub matched: u64,
    pub hits: u64,
    pub false_positives: u64,
    pub gt: u64,
}

/// 11-point interpolated average precision.
pub fn average_precision(ranked: &[(f64, bool)], num_gt: u64) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..ranked.len()).collect();
    order.sort_by(|&a, &b| ranked[b].0.total_cmp(&ranked[a].0).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        tp += ranked[i].1 as usize;
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let ap = (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            curve.iter().filter(|(rc, _)| *rc >= r - 1e-12).map(|&(_, p)| p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0;
    Some(ap)
}

pub fn motion_metrics<'a>(frames: impl IntoIterator<Item = &'a MotionFrameEval>, cfg: &MotionMetricConfig) -> MotionMetrics {
    let mut ade = 0.0;
    let mut fde = 0.0;
    let mut matched = 0u64;
    let mut hits = 0u64;
    let mut misses = 0u64;
    let mut fp = 0u64;
    let mut gt = 0u64;
    let mut ranked = Vec::new();
    for f in frames {
        for &(a, d) in &f.matched {
            ade += a;
            fde += d;
            matched += 1;
            if d > cfg.miss_distance {
                misses += 1;
            }
            if d < cfg.miss_distance {
                hits += 1;
            }
        }
        fp += f.false_positives;
        gt += f.gt;
        ranked.extend_from_slice(&f.ranked);
    }
    let per_tp = |s: f64| (matched > 0).then(|| s / matched as f64);
    MotionMetrics {
        min_ade: per_tp(ade),
        min_fde: per_tp(fde),
        miss_rate: per_tp(misses as f64),
        epa: (gt > 0).then(|| ((hits as f64 - cfg.epa_fp_penalty * fp as f64) / gt as f64).max(0.0)),
        min_fde_ap: average_precision(&ranked, gt),
        matched,
        hits,
        false_positives: fp,
        gt,
    }
}
