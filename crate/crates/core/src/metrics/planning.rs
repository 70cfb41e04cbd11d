//! Planning L2 error and collision rate at 1 s, 2 s and 3 s.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::planner::ego_boxes;
use crate::scene::{rotated_iou, Box2d};

/// Waypoint counts of the 1 s, 2 s and 3 s horizons at 2 Hz.
pub const HORIZON_STEPS: [usize; 3] = [2, 4, 6];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanEval {
    /// Distance to the ground-truth ego position at every step.
    pub l2: Vec<f64>,
    /// Whether the ego box overlaps any ground-truth agent at every step.
    pub collision: Vec<bool>,
}

pub struct PlanInput<'a> {
    pub plan: &'a ndarray::Array2<f64>,
    pub gt_ego: &'a [[f64; 2]],
    /// Ground-truth agent boxes at each future step.
    pub agents: &'a [Vec<Box2d>],
    pub start: [f64; 2],
    pub start_yaw: f64,
    pub ego_width: f64,
    pub ego_length: f64,
}

pub fn eval_plan(input: &PlanInput<'_>) -> Result<PlanEval> {
    let n = input.plan.nrows();
    ensure!(
        input.gt_ego.len() == n && input.agents.len() == n,
        "metrics",
        "planning_metrics",
        "plan has {n} steps, ground truth {} and agents {}",
        input.gt_ego.len(),
        input.agents.len()
    );
    let boxes = ego_boxes(input.plan, input.start, input.start_yaw, input.ego_width, input.ego_length);
    Ok(PlanEval {
        l2: (0..n)
            .map(|t| (input.plan[[t, 0]] - input.gt_ego[t][0]).hypot(input.plan[[t, 1]] - input.gt_ego[t][1]))
            .collect(),
        collision: boxes
            .iter()
            .zip(input.agents)
            .map(|(e, agents)| agents.iter().any(|a| rotated_iou(e, a) > 0.0))
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanningMetrics {
    /// L2 at 1 s, 2 s, 3 s.
    pub l2: [Option<f64>; 3],
    pub l2_avg: Option<f64>,
    /// Fraction of colliding steps up to 1 s, 2 s, 3 s.
    pub collision: [Option<f64>; 3],
    pub collision_avg: Option<f64>,
    pub plans: u64,
    pub colliding_steps: [u64; 3],
    pub steps: [u64; 3],
}

pub fn planning_metrics<'a>(evals: impl IntoIterator<Item = &'a PlanEval>) -> PlanningMetrics {
    let mut l2 = [0.0; 3];
    let mut l2_n = [0u64; 3];
    let mut col = [0u64; 3];
    let mut steps = [0u64; 3];
    let mut plans = 0;
    for e in evals {
        plans += 1;
        for (h, &k) in HORIZON_STEPS.iter().enumerate() {
            if e.l2.len() >= k {
                l2[h] += e.l2[k - 1];
                l2_n[h] += 1;
            }
            let upto = k.min(e.collision.len());
            col[h] += e.collision[..upto].iter().filter(|&&c| c).count() as u64;
            steps[h] += upto as u64;
        }
    }
    let l2v: [Option<f64>; 3] = std::array::from_fn(|h| (l2_n[h] > 0).then(|| l2[h] / l2_n[h] as f64));
    let colv: [Option<f64>; 3] = std::array::from_fn(|h| (steps[h] > 0).then(|| col[h] as f64 / steps[h] as f64));
    let avg = |v: &[Option<f64>; 3]| -> Option<f64> {
        let s: Vec<f64> = v.iter().flatten().copied().collect();
        (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
    };
    PlanningMetrics {
        l2: l2v,
        l2_avg: avg(&l2v),
        collision: colv,
        collision_avg: avg(&colv),
        plans,
        colliding_steps: col,
        steps,
    }
}
