//! CLEAR-MOT style tracking metrics averaged over a recall grid.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredTrack {
    pub id: u32,
    pub center: [f64; 2],
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u32,
    pub center: [f64; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub pred: Vec<PredTrack>,
    pub gt: Vec<GtObject>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetricConfig {
    /// Number of recall samples `n`; the grid is `k / (n - 1)`, `k = 1..n-1`.
    pub recall_points: usize,
    pub match_distance: f64,
}

impl Default for TrackingMetricConfig {
    fn default() -> Self {
        TrackingMetricConfig {
            recall_points: 40,
            match_distance: 2.0,
        }
    }
}

/// Event counts at one score threshold.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub gt: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    pub distance_sum: f64,
}

impl ClearCounts {
    pub fn recall(&self) -> f64 {
        self.tp as f64 / self.gt as f64
    }

    /// `MOTA_r` evaluated at the achieved recall.
    pub fn mota(&self) -> f64 {
        let r = self.recall();
        if r <= 0.0 {
            return 0.0;
        }
        let gt = self.gt as f64;
        let num = self.fp as f64 + self.fn_ as f64 + self.ids as f64 - (1.0 - r) * gt;
        (1.0 - num / (r * gt)).max(0.0)
    }

    pub fn motp(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.distance_sum / self.tp as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecallPoint {
    pub target: f64,
    /// `None` when the target recall is out of reach.
    pub threshold: Option<f64>,
    pub counts: ClearCounts,
    pub mota: f64,
    pub motp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub amota: f64,
    pub amotp: f64,
    /// Recall and identity switches at the best-MOTA operating point (the highest recall among ties).
    pub recall: f64,
    pub ids: u64,
    pub gt: u64,
    pub points: Vec<RecallPoint>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Greedy one-to-one matching by ascending centre distance within `max_dist`;
/// ties broken by prediction then ground-truth index.
pub fn greedy_match(pred: &[[f64; 2]], gt: &[[f64; 2]], max_dist: f64) -> Vec<(usize, usize, f64)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &p) in pred.iter().enumerate() {
        for (j, &g) in gt.iter().enumerate() {
            let d = dist(p, g);
            if d <= max_dist {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut out = Vec::new();
    for (d, i, j) in pairs {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            out.push((i, j, d));
        }
    }
    out
}

/// Counts over all sequences keeping predictions with `score >= threshold`.
/// An identity switch is a ground-truth object matched to a different track id
/// than at its previous match.
pub fn clear_counts(sequences: &[&[TrackFrame]], threshold: f64, max_dist: f64) -> (ClearCounts, Vec<f64>) {
    let mut c = ClearCounts::default();
    let mut tp_scores = Vec::new();
    for seq in sequences {
        let mut last: BTreeMap<u32, u32> = BTreeMap::new();
        for frame in seq.iter() {
            let pred: Vec<&PredTrack> = frame.pred.iter().filter(|p| p.score >= threshold).collect();
            let pc: Vec<[f64; 2]> = pred.iter().map(|p| p.center).collect();
            let gc: Vec<[f64; 2]> = frame.gt.iter().map(|g| g.center).collect();
            let m = greedy_match(&pc, &gc, max_dist);
            c.gt += frame.gt.len() as u64;
            c.tp += m.len() as u64;
            c.fp += (pred.len() - m.len()) as u64;
            c.fn_ += (frame.gt.len() - m.len()) as u64;
            for &(i, j, d) in &m {
                c.distance_sum += d;
                tp_scores.push(pred[i].score);
                let gid = frame.gt[j].id;
                if let Some(prev) = last.insert(gid, pred[i].id) {
                    if prev != pred[i].id {
                        c.ids += 1;
                    }
                }
            }
        }
    }
    (c, tp_scores)
}

/// `None` when there is no ground truth.
pub fn amota(sequences: &[&[TrackFrame]], cfg: &TrackingMetricConfig) -> Option<TrackingMetrics> {
    let n = cfg.recall_points.max(2);
    let (all, mut tp_scores) = clear_counts(sequences, f64::NEG_INFINITY, cfg.match_distance);
    if all.gt == 0 {
        return None;
    }
    tp_scores.sort_by(|a, b| b.total_cmp(a));
    let gt = all.gt as f64;
    let mut cache: BTreeMap<u64, ClearCounts> = BTreeMap::new();
    let mut points = Vec::with_capacity(n - 1);
    for k in 1..n {
        let target = k as f64 / (n - 1) as f64;
        let needed = (target * gt - 1e-9).ceil().max(1.0) as usize;
        let point = if needed <= tp_scores.len() {
            let thr = tp_scores[needed - 1];
            let counts = *cache
                .entry(thr.to_bits())
                .or_insert_with(|| clear_counts(sequences, thr, cfg.match_distance).0);
            RecallPoint {
                target,
                threshold: Some(thr),
                counts,
                mota: counts.mota(),
                motp: counts.motp(),
            }
        } else {
            RecallPoint {
                target,
                threshold: None,
                counts: ClearCounts { gt: all.gt, ..Default::default() },
                mota: 0.0,
                motp: cfg.match_distance,
            }
        };
        points.push(point);
    }
    let m = points.len() as f64;
    let best = points
        .iter()
        .filter(|p| p.threshold.is_some())
        .max_by(|a, b| a.mota.total_cmp(&b.mota).then(a.target.total_cmp(&b.target)));
    Some(TrackingMetrics {
        amota: points.iter().map(|p| p.mota).sum::<f64>() / m,
        amotp: points.iter().map(|p| p.motp).sum::<f64>() / m,
        recall: best.map_or(0.0, |p| p.counts.recall()),
        ids: best.map_or(0, |p| p.counts.ids),
        gt: all.gt,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(id: u32, x: f64) -> GtObject {
        GtObject { id, center: [x, 0.0] }
    }

    fn pr(id: u32, x: f64, score: f64) -> PredTrack {
        PredTrack {
            id,
            center: [x, 0.0],
            score,
        }
    }

    #[test]
    fn perfect_tracker() {
        let seq: Vec<TrackFrame> = (0..5)
            .map(|t| TrackFrame {
                gt: vec![gt(1, t as f64), gt(2, 20.0 + t as f64)],
                pred: vec![pr(7, t as f64, 1.0), pr(8, 20.0 + t as f64, 1.0)],
            })
            .collect();
        let m = amota(&[&seq], &TrackingMetricConfig::default()).unwrap();
        assert_eq!(m.amota, 1.0);
        assert_eq!(m.amotp, 0.0);
        assert_eq!(m.ids, 0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn empty_predictions_and_empty_gt() {
        let seq = vec![TrackFrame {
            gt: vec![gt(1, 0.0)],
            pred: vec![],
        }];
        assert_eq!(amota(&[&seq], &TrackingMetricConfig::default()).unwrap().amota, 0.0);
        let none = vec![TrackFrame {
            gt: vec![],
            pred: vec![pr(1, 0.0, 0.9)],
        }];
        assert!(amota(&[&none], &TrackingMetricConfig::default()).is_none());
    }

    #[test]
    fn greedy_prefers_nearest() {
        let m = greedy_match(&[[0.0, 0.0], [1.0, 0.0]], &[[0.9, 0.0], [-1.9, 0.0]], 2.0);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].0, m[0].1), (1, 0));
        assert_eq!((m[1].0, m[1].1), (0, 1));
    }

    /// Two objects over three frames: object A changes track id in the last
    /// frame and a confident false positive appears in frame 1.
    pub(crate) fn id_switch_toy() -> Vec<TrackFrame> {
        vec![
            TrackFrame {
                gt: vec![gt(1, 0.0), gt(2, 10.0)],
                pred: vec![pr(1, 0.0, 0.9), pr(2, 10.0, 0.8)],
            },
            TrackFrame {
                gt: vec![gt(1, 0.0), gt(2, 10.0)],
                pred: vec![pr(1, 0.0, 0.9), pr(2, 10.0, 0.8), pr(9, 50.0, 0.95)],
            },
            TrackFrame {
                gt: vec![gt(1, 0.0), gt(2, 10.0)],
                pred: vec![pr(3, 0.0, 0.9), pr(2, 10.0, 0.5)],
            },
        ]
    }

    #[test]
    fn id_switch_toy_matches_hand_count() {
        let seq = id_switch_toy();
        // thr 0.9: TP 3 FP 1 FN 3 IDS 1; thr 0.8: TP 5 FP 1 FN 1 IDS 1; thr 0.5: TP 6 FP 1 FN 0 IDS 1.
        let c = |thr| clear_counts(&[&seq], thr, 2.0).0;
        assert_eq!((c(0.9).tp, c(0.9).fp, c(0.9).fn_, c(0.9).ids), (3, 1, 3, 1));
        assert_eq!((c(0.8).tp, c(0.8).fp, c(0.8).fn_, c(0.8).ids), (5, 1, 1, 1));
        assert_eq!((c(0.5).tp, c(0.5).fp, c(0.5).fn_, c(0.5).ids), (6, 1, 0, 1));
        assert!((c(0.9).mota() - 1.0 / 3.0).abs() < 1e-15);
        assert!((c(0.8).mota() - 0.6).abs() < 1e-15);
        assert!((c(0.5).mota() - 2.0 / 3.0).abs() < 1e-15);
        // Recall targets k/39 need ceil(6k/39) true positives: k <= 19 -> 3, k <= 32 -> 5, else 6.
        let m = amota(&[&seq], &TrackingMetricConfig::default()).unwrap();
        let expect = (19.0 / 3.0 + 13.0 * 0.6 + 7.0 * 2.0 / 3.0) / 39.0;
        assert!((m.amota - expect).abs() < 1e-12);
        assert_eq!(m.ids, 1);
        assert_eq!(m.recall, 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn frames() -> impl Strategy<Value = Vec<TrackFrame>> {
            let object = (1u32..6, -5.0f64..5.0, 0.0f64..1.0);
            proptest::collection::vec(
                (proptest::collection::vec(object.clone(), 0..5), proptest::collection::vec(object, 0..5)),
                1..6,
            )
            .prop_map(|fs| {
                fs.into_iter()
                    .map(|(g, p)| {
                        let mut seen = std::collections::BTreeSet::new();
                        TrackFrame {
                            gt: g.into_iter().filter(|o| seen.insert(o.0)).map(|(id, x, _)| gt(id, 3.0 * x)).collect(),
                            pred: p.into_iter().map(|(id, x, s)| pr(id, 3.0 * x, s)).collect(),
                        }
                    })
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn rates_are_bounded(seq in frames()) {
                let (c, _) = clear_counts(&[&seq], f64::NEG_INFINITY, 2.0);
                prop_assert_eq!(c.tp + c.fn_, c.gt);
                if let Some(m) = amota(&[&seq], &TrackingMetricConfig::default()) {
                    prop_assert!(m.amota <= 1.0);
                    prop_assert!((0.0..=1.0).contains(&m.recall));
                    prop_assert!((0.0..=2.0).contains(&m.amotp));
                }
            }
        }
    }
}
