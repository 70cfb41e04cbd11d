//! Trajectory anchors: k-means endpoint centroids expanded to straight-line
//! trajectories in the agent frame, and their placement in the scene.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use crate::error::{ensure, Error, Result};
use crate::scene::{generate_scenario, ScenarioSpec};
use crate::seed;

/// Committed anchor endpoints (agent frame, metres) clustered from generated
/// scenarios; see [`AnchorFixture::harvest`].
const FIXTURE: &str = include_str!("../../fixtures/anchors.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorFixture {
    pub k: usize,
    pub horizon: usize,
    pub scenarios: usize,
    pub seed: u64,
    pub centroids: Vec<[f64; 2]>,
}

impl AnchorFixture {
    pub const SEED: u64 = 0xa4c4_0125;
    pub const SCENARIOS: usize = 400;

    pub fn bundled() -> AnchorFixture {
        serde_json::from_str(FIXTURE).expect("bundled anchor fixture parses")
    }

    /// Agent-frame endpoint displacements after `horizon` steps, for every
    /// agent (and the ego) visible at both ends, over `scenarios` generated
    /// scenes.
    pub fn harvest_endpoints(horizon: usize, scenarios: usize, seed_value: u64) -> Result<Array2<f64>> {
        let spec = ScenarioSpec {
            horizon: horizon + 1,
            ..ScenarioSpec::default()
        };
        let mut pts = Vec::new();
        for s in 0..scenarios {
            let sc = generate_scenario(&spec, seed::derive_index(seed_value, s as u64))?;
            let mut tracks: Vec<(&crate::scene::AgentFrame, &crate::scene::AgentFrame)> =
                vec![(&sc.ego[0], &sc.ego[horizon])];
            for a in &sc.agents {
                if a.frames[0].valid && a.frames[horizon].valid {
                    tracks.push((&a.frames[0], &a.frames[horizon]));
                }
            }
            for (f0, f1) in tracks {
                let (dx, dy) = (f1.x - f0.x, f1.y - f0.y);
                let (s, c) = f0.yaw.sin_cos();
                pts.push(c * dx + s * dy);
                pts.push(-s * dx + c * dy);
            }
        }
        Ok(Array2::from_shape_vec((pts.len() / 2, 2), pts).expect("pairs"))
    }

    pub fn harvest(k: usize, horizon: usize, scenarios: usize, seed_value: u64) -> Result<AnchorFixture> {
        let pts = Self::harvest_endpoints(horizon, scenarios, seed_value)?;
        let km = kmeans(&pts, k, seed_value)?;
        let mut centroids: Vec<[f64; 2]> = km.centroids.rows().into_iter().map(|r| [r[0], r[1]]).collect();
        centroids.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        Ok(AnchorFixture {
            k,
            horizon,
            scenarios,
            seed: seed_value,
            centroids,
        })
    }
}

/// Agent-level anchors shared by all agents: `K x T x 2`, straight lines from
/// the origin to each endpoint centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub agent_level: Array3<f64>,
}

impl AnchorSet {
    pub fn from_endpoints(endpoints: &[[f64; 2]], horizon: usize) -> Result<AnchorSet> {
        if endpoints.is_empty() || horizon == 0 {
            return Err(Error::config("anchors need at least one endpoint and a positive horizon"));
        }
        let k = endpoints.len();
        let agent_level = Array3::from_shape_fn((k, horizon, 2), |(m, t, c)| {
            endpoints[m][c] * (t + 1) as f64 / horizon as f64
        });
        Ok(AnchorSet { agent_level })
    }

    /// Bundled anchors, resampled to `horizon` steps if it differs from the
    /// fixture's.
    pub fn bundled(k: usize, horizon: usize) -> Result<AnchorSet> {
        let fx = AnchorFixture::bundled();
        if fx.k != k {
            return Err(Error::config(format!(
                "bundled anchors have K = {}, config asks for {k}",
                fx.k
            )));
        }
        let scale = horizon as f64 / fx.horizon as f64;
        let ends: Vec<[f64; 2]> = fx.centroids.iter().map(|c| [c[0] * scale, c[1] * scale]).collect();
        AnchorSet::from_endpoints(&ends, horizon)
    }

    pub fn modes(&self) -> usize {
        self.agent_level.shape()[0]
    }

    pub fn horizon(&self) -> usize {
        self.agent_level.shape()[1]
    }

    /// Agent-level endpoints `K x 2`.
    pub fn endpoints(&self) -> Array2<f64> {
        let t = self.horizon() - 1;
        Array2::from_shape_fn((self.modes(), 2), |(k, c)| self.agent_level[[k, t, c]])
    }

    /// Scene-level anchors `N x K x T x 2`: each agent's anchors rotated by its
    /// heading and translated to its position.
    pub fn scene_level(&self, positions: &Array2<f64>, yaws: &[f64]) -> Result<Array4<f64>> {
        let n = positions.nrows();
        ensure!(
            positions.ncols() == 2 && yaws.len() == n,
            "motion-former",
            "scene_anchors",
            "need n x 2 positions and n headings, got {:?} and {}",
            positions.dim(),
            yaws.len()
        );
        let (k, t) = (self.modes(), self.horizon());
        let mut out = Array4::zeros((n, k, t, 2));
        for i in 0..n {
            let (s, c) = yaws[i].sin_cos();
            for m in 0..k {
                for step in 0..t {
                    let (ax, ay) = (self.agent_level[[m, step, 0]], self.agent_level[[m, step, 1]]);
                    out[[i, m, step, 0]] = c * ax - s * ay + positions[[i, 0]];
                    out[[i, m, step, 1]] = s * ax + c * ay + positions[[i, 1]];
                }
            }
        }
        Ok(out)
    }
}
