//! Ground-truth world description and its synthetic generator.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{intersection_area, wrap_angle, Box2d};
use crate::error::{Error, Result};
use crate::seed;

pub const SCHEMA_VERSION: u32 = 1;

/// Ego footprint used throughout (width x length, metres).
pub const EGO_WIDTH: f64 = 1.85;
pub const EGO_LENGTH: f64 = 4.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentClass {
    Car,
    Truck,
    Pedestrian,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 4] = [
        AgentClass::Car,
        AgentClass::Truck,
        AgentClass::Pedestrian,
        AgentClass::Cyclist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentClass::Car => "car",
            AgentClass::Truck => "truck",
            AgentClass::Pedestrian => "pedestrian",
            AgentClass::Cyclist => "cyclist",
        }
    }

    /// Vehicle category used by the forecasting metrics.
    pub fn is_vehicle(self) -> bool {
        !matches!(self, AgentClass::Pedestrian)
    }
}

/// High-level navigation command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Left,
    Right,
    Forward,
}

impl Command {
    pub fn index(self) -> usize {
        match self {
            Command::Left => 0,
            Command::Right => 1,
            Command::Forward => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Left => "left",
            Command::Right => "right",
            Command::Forward => "forward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentFrame {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub valid: bool,
}

impl AgentFrame {
    pub fn bbox(&self) -> Box2d {
        Box2d {
            x: self.x,
            y: self.y,
            w: self.w,
            l: self.l,
            yaw: self.yaw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub id: u32,
    pub class: AgentClass,
    pub frames: Vec<AgentFrame>,
}

pub type Polyline = Vec<[f64; 2]>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapLayers {
    pub lanes: Vec<Polyline>,
    pub dividers: Vec<Polyline>,
    pub crossings: Vec<Polyline>,
    /// Closed boundary polygons of the drivable area.
    pub drivable: Vec<Polyline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema: u32,
    pub frame_rate: f64,
    pub horizon: usize,
    pub agents: Vec<ScenarioAgent>,
    pub map: MapLayers,
    pub ego: Vec<AgentFrame>,
    pub command: Vec<Command>,
}

/// One ground-truth agent at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub id: u32,
    pub class: AgentClass,
    pub bbox: Box2d,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract("bev-scene", "validate", msg));
        if self.schema != SCHEMA_VERSION {
            return bad(format!("unsupported schema {}", self.schema));
        }
        if !(self.frame_rate > 0.0) || self.horizon == 0 {
            return bad(format!(
                "frame rate {} / horizon {} must be positive",
                self.frame_rate, self.horizon
            ));
        }
        if self.ego.len() != self.horizon || self.command.len() != self.horizon {
            return bad(format!(
                "ego ({}) and command ({}) must cover the horizon {}",
                self.ego.len(),
                self.command.len(),
                self.horizon
            ));
        }
        let mut ids = BTreeSet::new();
        for a in &self.agents {
            if a.id == 0 || !ids.insert(a.id) {
                return bad(format!("agent id {} is zero or duplicated", a.id));
            }
            if a.frames.len() != self.horizon {
                return bad(format!("agent {} has {} frames", a.id, a.frames.len()));
            }
        }
        for frames in self.agents.iter().map(|a| &a.frames).chain(std::iter::once(&self.ego)) {
            for (t, f) in frames.iter().enumerate() {
                if f.t != t || !f.bbox().is_valid() || f.yaw <= -PI || f.yaw > PI {
                    return bad(format!("frame {t} is malformed: {f:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn ego_box(&self, t: usize) -> Box2d {
        self.ego[t].bbox()
    }

    pub fn ego_position(&self, t: usize) -> [f64; 2] {
        [self.ego[t].x, self.ego[t].y]
    }

    /// Valid agents at frame `t`.
    pub fn agents_at(&self, t: usize) -> Vec<AgentState> {
        self.agents
            .iter()
            .filter_map(|a| {
                let f = a.frames.get(t)?;
                f.valid.then(|| AgentState {
                    id: a.id,
                    class: a.class,
                    bbox: f.bbox(),
                })
            })
            .collect()
    }

    pub fn agent(&self, id: u32) -> Option<&ScenarioAgent> {
        self.agents.iter().find(|a| a.id == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let sc: Scenario = serde_json::from_str(s)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Synthetic scenario generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub frame_rate: f64,
    pub horizon: usize,
    pub num_agents: usize,
    /// Agent speed range, m/s.
    pub speed_range: [f64; 2],
    /// Agent yaw-rate range, rad/s.
    pub yaw_rate_range: [f64; 2],
    pub ego_speed_range: [f64; 2],
    /// Ego yaw rate while turning, rad/s.
    pub ego_turn_rate: f64,
    /// Agents spawn within this distance of the ego start.
    pub spawn_radius: f64,
    pub parked_fraction: f64,
    pub pedestrian_fraction: f64,
    /// Minimum gap kept between ground-truth agents and the ego footprint.
    pub clearance: f64,
    /// Half-size of the ego-centred window in which agents count as visible.
    pub view_half_extent: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            frame_rate: 2.0,
            horizon: 20,
            num_agents: 8,
            speed_range: [2.0, 10.0],
            yaw_rate_range: [-0.15, 0.15],
            ego_speed_range: [4.0, 9.0],
            ego_turn_rate: 0.3,
            spawn_radius: 35.0,
            parked_fraction: 0.2,
            pedestrian_fraction: 0.15,
            clearance: 1.0,
            view_half_extent: 51.2,
            max_attempts: 60,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frame_rate > 0.0
            && self.horizon > 0
            && self.speed_range[0] >= 0.0
            && self.speed_range[0] <= self.speed_range[1]
            && self.yaw_rate_range[0] <= self.yaw_rate_range[1]
            && self.ego_speed_range[0] >= 0.0
            && self.ego_speed_range[0] <= self.ego_speed_range[1]
            && self.spawn_radius > 0.0
            && (0.0..=1.0).contains(&self.parked_fraction)
            && (0.0..=1.0).contains(&self.pedestrian_fraction)
            && self.clearance >= 0.0
            && self.view_half_extent > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("infeasible scenario spec: {self:?}")))
        }
    }
}

/// Constant-turn-rate-and-velocity step.
pub fn ctrv_step(x: f64, y: f64, yaw: f64, speed: f64, yaw_rate: f64, dt: f64) -> (f64, f64, f64) {
    if yaw_rate.abs() < 1e-9 {
        (x + speed * dt * yaw.cos(), y + speed * dt * yaw.sin(), yaw)
    } else {
        let r = speed / yaw_rate;
        let yaw2 = yaw + yaw_rate * dt;
        (x + r * (yaw2.sin() - yaw.sin()), y - r * (yaw2.cos() - yaw.cos()), yaw2)
    }
}

/// Frames of look-ahead used to label the navigation command (3 s at 2 Hz).
const COMMAND_LOOKAHEAD_S: f64 = 3.0;
const COMMAND_TURN_THRESHOLD: f64 = 0.3;

pub fn generate_scenario(spec: &ScenarioSpec, seed_value: u64) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive(seed_value, "scenario"));
    let dt = 1.0 / spec.frame_rate;
    let lookahead = (COMMAND_LOOKAHEAD_S * spec.frame_rate).ceil() as usize;
    let total = spec.horizon + lookahead;

    // Ego: straight, then possibly a turn of at most a quarter circle.
    let ego_speed = rng.random_range(spec.ego_speed_range[0]..=spec.ego_speed_range[1]);
    let manoeuvre = match rng.random_range(0..3) {
        0 => 1.0,
        1 => -1.0,
        _ => 0.0,
    };
    let turn_start = rng.random_range(0..=spec.horizon / 2);
    let ego_yaw0 = rng.random_range(-PI..PI);
    let mut ego_states = Vec::with_capacity(total);
    let (mut x, mut y, mut yaw) = (0.0, 0.0, ego_yaw0);
    let mut turned = 0.0f64;
    for t in 0..total {
        ego_states.push((x, y, wrap_angle(yaw)));
        let rate = if t >= turn_start && turned < PI / 2.0 {
            manoeuvre * spec.ego_turn_rate
        } else {
            0.0
        };
        turned += (rate * dt).abs();
        (x, y, yaw) = ctrv_step(x, y, yaw, ego_speed, rate, dt);
    }
    let ego: Vec<AgentFrame> = ego_states[..spec.horizon]
        .iter()
        .enumerate()
        .map(|(t, &(x, y, yaw))| AgentFrame {
            t,
            x,
            y,
            w: EGO_WIDTH,
            l: EGO_LENGTH,
            yaw,
            valid: true,
        })
        .collect();
    let command = (0..spec.horizon)
        .map(|t| {
            let d = wrap_angle(ego_states[t + lookahead].2 - ego_states[t].2);
            if d > COMMAND_TURN_THRESHOLD {
                Command::Left
            } else if d < -COMMAND_TURN_THRESHOLD {
                Command::Right
            } else {
                Command::Forward
            }
        })
        .collect();

    let mut agents: Vec<ScenarioAgent> = Vec::new();
    for _ in 0..spec.num_agents {
        for _attempt in 0..spec.max_attempts {
            let candidate = sample_agent(spec, &mut rng, agents.len() as u32 + 1, &ego);
            let clear_of_ego = candidate.frames.iter().zip(&ego).all(|(a, e)| {
                intersection_area(&a.bbox(), &e.bbox().dilated(2.0 * spec.clearance)) <= 0.0
            });
            let clear_of_others = agents.iter().all(|o| {
                o.frames
                    .iter()
                    .zip(&candidate.frames)
                    .all(|(a, b)| intersection_area(&a.bbox(), &b.bbox()) <= 0.0)
            });
            if clear_of_ego && clear_of_others {
                agents.push(candidate);
                break;
            }
        }
    }

    let map = build_map(&ego_states, &mut rng);
    let sc = Scenario {
        schema: SCHEMA_VERSION,
        frame_rate: spec.frame_rate,
        horizon: spec.horizon,
        agents,
        map,
        ego,
        command,
    };
    sc.validate()?;
    Ok(sc)
}

fn sample_agent(spec: &ScenarioSpec, rng: &mut ChaCha8Rng, id: u32, ego: &[AgentFrame]) -> ScenarioAgent {
    let dt = 1.0 / spec.frame_rate;
    let class = if rng.random_bool(spec.pedestrian_fraction) {
        AgentClass::Pedestrian
    } else {
        match rng.random_range(0..10) {
            0 => AgentClass::Truck,
            1 => AgentClass::Cyclist,
            _ => AgentClass::Car,
        }
    };
    let (w, l) = match class {
        AgentClass::Car => (rng.random_range(1.7..2.0), rng.random_range(4.0..4.8)),
        AgentClass::Truck => (rng.random_range(2.4..2.6), rng.random_range(7.0..10.0)),
        AgentClass::Pedestrian => (0.6, 0.6),
        AgentClass::Cyclist => (0.7, 1.8),
    };
    let parked = rng.random_bool(spec.parked_fraction);
    let max_speed = if class == AgentClass::Pedestrian {
        spec.speed_range[1].min(1.8)
    } else {
        spec.speed_range[1]
    };
    let min_speed = spec.speed_range[0].min(max_speed);
    let speed = if parked { 0.0 } else { rng.random_range(min_speed..=max_speed) };
    let yaw_rate = if parked {
        0.0
    } else {
        rng.random_range(spec.yaw_rate_range[0]..=spec.yaw_rate_range[1])
    };
    let r = spec.spawn_radius * rng.random::<f64>().sqrt();
    let theta = rng.random_range(-PI..PI);
    let (mut x, mut y) = (r * theta.cos(), r * theta.sin());
    let mut yaw = rng.random_range(-PI..PI);
    let frames = (0..spec.horizon)
        .map(|t| {
            let e = &ego[t];
            let visible = (x - e.x).abs() < spec.view_half_extent && (y - e.y).abs() < spec.view_half_extent;
            let f = AgentFrame {
                t,
                x,
                y,
                w,
                l,
                yaw: wrap_angle(yaw),
                valid: visible,
            };
            (x, y, yaw) = ctrv_step(x, y, yaw, speed, yaw_rate, dt);
            f
        })
        .collect();
    ScenarioAgent { id, class, frames }
}

const LANE_WIDTH: f64 = 3.5;

fn build_map(ego_states: &[(f64, f64, f64)], rng: &mut ChaCha8Rng) -> MapLayers {
    // Centre line: a stretch behind the ego start followed by the ego route,
    // densified to at most one metre between vertices.
    let (x0, y0, yaw0) = ego_states[0];
    let mut anchors: Vec<(f64, f64, f64)> = (1..=4)
        .rev()
        .map(|k| {
            let back = 5.0 * k as f64;
            (x0 - back * yaw0.cos(), y0 - back * yaw0.sin(), yaw0)
        })
        .collect();
    anchors.extend_from_slice(ego_states);
    let mut centre: Vec<(f64, f64, f64)> = Vec::new();
    for pair in anchors.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let d = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (d.ceil() as usize).max(1);
        for i in 0..n {
            let s = i as f64 / n as f64;
            let yaw = a.2 + s * wrap_angle(b.2 - a.2);
            centre.push((a.0 + s * (b.0 - a.0), a.1 + s * (b.1 - a.1), yaw));
        }
    }
    centre.push(*anchors.last().expect("non-empty route"));
    let offset = |k: f64| -> Polyline {
        centre
            .iter()
            .map(|&(x, y, yaw)| [x - k * yaw.sin(), y + k * yaw.cos()])
            .collect()
    };
    let lanes = vec![offset(-LANE_WIDTH), offset(0.0), offset(LANE_WIDTH)];
    let dividers = vec![offset(-0.5 * LANE_WIDTH), offset(0.5 * LANE_WIDTH)];
    let edge = 1.5 * LANE_WIDTH;
    let mut boundary = offset(edge);
    boundary.extend(offset(-edge).into_iter().rev());
    let at = rng.random_range(centre.len() / 4..(3 * centre.len() / 4).max(centre.len() / 4 + 1));
    let (cx, cy, cyaw) = centre[at.min(centre.len() - 1)];
    let crossing: Polyline = (-5..=5)
        .map(|k| {
            let s = edge * k as f64 / 5.0;
            [cx - s * cyaw.sin(), cy + s * cyaw.cos()]
        })
        .collect();
    MapLayers {
        lanes,
        dividers,
        crossings: vec![crossing],
        drivable: vec![boundary],
    }
}
