//! Noisy detections drawn from the ground truth, feeding the tracker.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::geometry::Box2d;
use super::scenario::{AgentClass, Scenario};
use crate::error::{ensure, Result};
use crate::grid::GridSpec;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub position_std: f64,
    pub yaw_std: f64,
    pub size_std: f64,
    /// Scores are `1 - |N(0, score_std)|`, clamped to [0, 1].
    pub score_std: f64,
    pub drop_prob: f64,
    /// Per-slot probability of a false positive.
    pub false_positive_prob: f64,
    pub false_positive_slots: usize,
    pub false_positive_max_score: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::noiseless()
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        NoiseSpec {
            position_std: 0.0,
            yaw_std: 0.0,
            size_std: 0.0,
            score_std: 0.0,
            drop_prob: 0.0,
            false_positive_prob: 0.0,
            false_positive_slots: 0,
            false_positive_max_score: 0.0,
        }
    }

    pub fn realistic() -> Self {
        NoiseSpec {
            position_std: 0.2,
            yaw_std: 0.05,
            size_std: 0.05,
            score_std: 0.25,
            drop_prob: 0.05,
            false_positive_prob: 0.1,
            false_positive_slots: 4,
            false_positive_max_score: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.position_std, self.yaw_std, self.size_std, self.score_std];
        ensure!(
            stds.iter().all(|s| *s >= 0.0 && s.is_finite()),
            "bev-scene",
            "corrupt_detections",
            "noise standard deviations must be non-negative"
        );
        ensure!(
            (0.0..=1.0).contains(&self.drop_prob)
                && (0.0..=1.0).contains(&self.false_positive_prob)
                && (0.0..=1.0).contains(&self.false_positive_max_score),
            "bev-scene",
            "corrupt_detections",
            "probabilities must lie in [0, 1]"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Box2d,
    pub score: f64,
    pub class: AgentClass,
    /// Ground-truth id for true detections; `None` for false positives.
    pub gt_id: Option<u32>,
    pub feature_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub t: usize,
    pub detections: Vec<Detection>,
}

impl DetectionFrame {
    pub fn empty(t: usize) -> Self {
        DetectionFrame {
            t,
            detections: Vec::new(),
        }
    }
}

fn gaussian(std: f64, rng: &mut impl Rng) -> f64 {
    // Always consume one draw so the stream layout does not depend on the stds.
    let z: f64 = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
    std * z
}

/// Ground truth at `frame` seen through position/yaw/size jitter, Bernoulli
/// drops and false positives inside `view`.
pub fn corrupt_detections(
    scenario: &Scenario,
    frame: usize,
    noise: &NoiseSpec,
    view: &GridSpec,
    seed_value: u64,
) -> Result<DetectionFrame> {
    noise.validate()?;
    ensure!(
        frame < scenario.horizon,
        "bev-scene",
        "corrupt_detections",
        "frame {frame} beyond horizon {}",
        scenario.horizon
    );
    let frame_seed = seed::derive_index(seed::derive(seed_value, "detections"), frame as u64);
    let mut rng = seed::rng(frame_seed);
    let mut detections = Vec::new();
    for agent in scenario.agents_at(frame) {
        let dropped = rng.random::<f64>() < noise.drop_prob;
        let dx = gaussian(noise.position_std, &mut rng);
        let dy = gaussian(noise.position_std, &mut rng);
        let dyaw = gaussian(noise.yaw_std, &mut rng);
        let ds = gaussian(noise.size_std, &mut rng);
        let dscore = gaussian(noise.score_std, &mut rng);
        if dropped || !view.contains(agent.bbox.center()) {
            continue;
        }
        let b = agent.bbox;
        detections.push(Detection {
            bbox: Box2d::new(
                b.x + dx,
                b.y + dy,
                (b.w * (1.0 + ds)).max(0.1),
                (b.l * (1.0 + ds)).max(0.1),
                b.yaw + dyaw,
            ),
            score: (1.0 - dscore.abs()).clamp(0.0, 1.0),
            class: agent.class,
            gt_id: Some(agent.id),
            feature_seed: seed::derive_index(frame_seed, agent.id as u64),
        });
    }
    for slot in 0..noise.false_positive_slots {
        let fires = rng.random::<f64>() < noise.false_positive_prob;
        let x = rng.random_range(view.extent[0]..view.extent[1]);
        let y = rng.random_range(view.extent[2]..view.extent[3]);
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let score = rng.random::<f64>() * noise.false_positive_max_score;
        if fires {
            detections.push(Detection {
                bbox: Box2d::new(x, y, 1.9, 4.4, yaw),
                score,
                class: AgentClass::Car,
                gt_id: None,
                feature_seed: seed::derive_index(frame_seed, 1_000_000 + slot as u64),
            });
        }
    }
    Ok(DetectionFrame { t: frame, detections })
}
