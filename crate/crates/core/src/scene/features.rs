//! Synthetic BEV features standing in for a camera encoder.
//!
//! Every cell carries seeded Gaussian noise. Cells covered by an agent add the
//! agent class signature, cells on map elements add the element signature.
//! Signatures are fixed Rademacher vectors, independent of the scenario seed,
//! so downstream modules can rely on them.

use ndarray::{Array1, Array3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::raster::{box_cells, rasterize_polygons, rasterize_polylines};
use super::scenario::{AgentClass, Scenario};
use crate::error::{ensure, Result};
use crate::grid::{BevGrid, GridSpec};
use crate::seed;

const SIGNATURE_SEED: u64 = 0x5eed_b0a7_c0de_0001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSpec {
    /// Amplitude of agent signatures; map signatures use half of it.
    pub signal_amplitude: f64,
    pub noise_std: f64,
    /// Half width of rendered lane/divider/crossing strokes, metres.
    pub line_half_width: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            signal_amplitude: 1.0,
            noise_std: 0.5,
            line_half_width: 0.4,
        }
    }
}

/// Named signature sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignatureKind {
    Agent(AgentClass),
    Lane,
    Divider,
    Crossing,
    Drivable,
}

impl SignatureKind {
    fn label(self) -> String {
        match self {
            SignatureKind::Agent(c) => format!("agent/{}", c.name()),
            SignatureKind::Lane => "map/lane".into(),
            SignatureKind::Divider => "map/divider".into(),
            SignatureKind::Crossing => "map/crossing".into(),
            SignatureKind::Drivable => "map/drivable".into(),
        }
    }
}

/// Deterministic +/-1 vector of length `channels`.
pub fn signature(kind: SignatureKind, channels: usize) -> Array1<f64> {
    let mut rng = seed::rng(seed::derive(SIGNATURE_SEED, &kind.label()));
    Array1::from_shape_fn(channels, |_| if rand::Rng::random_bool(&mut rng, 0.5) { 1.0 } else { -1.0 })
}

pub fn synth_bev_features(
    scenario: &Scenario,
    frame: usize,
    spec: &GridSpec,
    channels: usize,
    fs: &FeatureSpec,
    seed_value: u64,
) -> Result<BevGrid> {
    ensure!(
        frame < scenario.horizon,
        "bev-scene",
        "synth_bev_features",
        "frame {frame} beyond horizon {}",
        scenario.horizon
    );
    ensure!(
        fs.noise_std >= 0.0 && fs.noise_std.is_finite(),
        "bev-scene",
        "synth_bev_features",
        "noise std must be non-negative"
    );
    let mut rng = seed::rng(seed::derive_index(seed::derive(seed_value, "bev-noise"), frame as u64));
    let mut data = if fs.noise_std > 0.0 {
        let normal = Normal::new(0.0, fs.noise_std).expect("valid std");
        Array3::from_shape_simple_fn((spec.height, spec.width, channels), || normal.sample(&mut rng))
    } else {
        Array3::zeros((spec.height, spec.width, channels))
    };
    let half = 0.5 * fs.signal_amplitude;
    let map = &scenario.map;
    let layers = [
        (SignatureKind::Drivable, rasterize_polygons(spec, &map.drivable), 0.5 * half),
        (
            SignatureKind::Lane,
            rasterize_polylines(spec, &map.lanes, fs.line_half_width),
            half,
        ),
        (
            SignatureKind::Divider,
            rasterize_polylines(spec, &map.dividers, fs.line_half_width),
            half,
        ),
        (
            SignatureKind::Crossing,
            rasterize_polylines(spec, &map.crossings, 3.0 * fs.line_half_width),
            half,
        ),
    ];
    for (kind, mask, amp) in layers {
        let sig = signature(kind, channels) * amp;
        for ((r, c), &on) in mask.indexed_iter() {
            if on {
                let mut cell = data.slice_mut(ndarray::s![r, c, ..]);
                cell += &sig;
            }
        }
    }
    for agent in scenario.agents_at(frame) {
        let sig = signature(SignatureKind::Agent(agent.class), channels) * fs.signal_amplitude;
        for (r, c) in box_cells(spec, &agent.bbox) {
            let mut cell = data.slice_mut(ndarray::s![r, c, ..]);
            cell += &sig;
        }
    }
    BevGrid::from_data(*spec, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::scenario::{generate_scenario, ScenarioSpec};

    fn small_spec() -> GridSpec {
        GridSpec::new(64, 64, [-25.6, 25.6, -25.6, 25.6]).unwrap()
    }

    #[test]
    fn deterministic() {
        let sc = generate_scenario(&ScenarioSpec::default(), 3).unwrap();
        let spec = small_spec().centered_at(sc.ego_position(2));
        let a = synth_bev_features(&sc, 2, &spec, 16, &FeatureSpec::default(), 5).unwrap();
        let b = synth_bev_features(&sc, 2, &spec, 16, &FeatureSpec::default(), 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_scene_is_pure_noise() {
        let mut sc = generate_scenario(
            &ScenarioSpec {
                num_agents: 0,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        sc.map = Default::default();
        let fs = FeatureSpec::default();
        let g = synth_bev_features(&sc, 0, &small_spec(), 32, &fs, 9).unwrap();
        let n = g.data.len() as f64;
        let mean = g.data.sum() / n;
        let var = g.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01);
        assert!((var.sqrt() - fs.noise_std).abs() < 0.01);
    }

    #[test]
    fn agent_cells_carry_signature_amplitude() {
        let mut sc = generate_scenario(
            &ScenarioSpec {
                num_agents: 12,
                spawn_radius: 20.0,
                ..Default::default()
            },
            21,
        )
        .unwrap();
        sc.map = Default::default();
        let spec = small_spec().centered_at(sc.ego_position(0));
        let fs = FeatureSpec::default();
        let channels = 64;
        let g = synth_bev_features(&sc, 0, &spec, channels, &fs, 4).unwrap();
        let sig = signature(SignatureKind::Agent(AgentClass::Car), channels);
        let mut agent_cells = std::collections::BTreeSet::new();
        for a in sc.agents_at(0).iter().filter(|a| a.class == AgentClass::Car) {
            agent_cells.extend(box_cells(&spec, &a.bbox));
        }
        let mut other = std::collections::BTreeSet::new();
        for a in sc.agents_at(0) {
            other.extend(box_cells(&spec, &a.bbox));
        }
        assert!(!agent_cells.is_empty());
        let proj = |r: usize, c: usize| g.cell(r, c).dot(&sig) / channels as f64;
        let on: Vec<f64> = agent_cells.iter().map(|&(r, c)| proj(r, c)).collect();
        let mut off = Vec::new();
        for r in 0..spec.height {
            for c in 0..spec.width {
                if !other.contains(&(r, c)) {
                    off.push(proj(r, c));
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        // Projection noise has std noise_std / sqrt(C) per cell.
        let tol = 4.0 * fs.noise_std / (channels as f64).sqrt() / (on.len() as f64).sqrt() + 0.05;
        assert!((mean(&on) - mean(&off) - fs.signal_amplitude).abs() < tol);
    }
}
