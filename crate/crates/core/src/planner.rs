//! Planning: a command-conditioned plan query attends to the BEV and regresses
//! waypoints, which are then pushed away from predicted occupancy by a
//! per-waypoint damped Newton method.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::{BevGrid, IdGrid};
use crate::kernel::{
    concat_cols, join, mlp_forward, sinusoidal_pe, visit_array, xavier, DecoderLayer, FeatureMat, Mlp, Params,
};
use crate::scene::{rotated_iou, Box2d, Command, EGO_LENGTH, EGO_WIDTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub layers: usize,
    pub memory_stride: usize,
    pub sigma: f64,
    /// Cells farther than this from a waypoint are ignored, metres.
    pub gate: f64,
    pub lambda_coord: f64,
    pub lambda_obs: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub ego_width: f64,
    pub ego_length: f64,
    /// `(weight, dilation)` pairs of the collision loss.
    pub collision_pairs: Vec<(f64, f64)>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 6,
            layers: 3,
            memory_stride: 4,
            sigma: 1.0,
            gate: 5.0,
            lambda_coord: 1.0,
            lambda_obs: 5.0,
            max_iters: 100,
            grad_tol: 1e-6,
            ego_width: EGO_WIDTH,
            ego_length: EGO_LENGTH,
            collision_pairs: vec![(1.0, 0.0), (0.4, 0.5), (0.1, 1.0)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    /// `3D -> D` over `[ego track feature, ego mode context, command]`.
    pub query_mlp: Mlp,
    pub command_embed: Array2<f64>,
    /// Learned positional embedding of the plan query.
    pub query_pos: Array2<f64>,
    pub layers: Vec<DecoderLayer>,
    /// `D -> T_p * 2` offsets from the ego position.
    pub reg_head: Mlp,
}

impl PlannerParams {
    pub fn xavier(dim: usize, heads: usize, cfg: &PlannerConfig, rng: &mut impl Rng) -> Self {
        PlannerParams {
            query_mlp: Mlp::xavier(&[3 * dim, dim, dim], rng),
            command_embed: xavier(3, dim, rng),
            query_pos: xavier(1, dim, rng),
            layers: (0..cfg.layers).map(|_| DecoderLayer::xavier(dim, heads, false, rng)).collect(),
            reg_head: Mlp::xavier(&[dim, dim, 2 * cfg.horizon], rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.query_pos.ncols()
    }
}

impl Params for PlannerParams {
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.query_mlp.visit_mut(&join(prefix, "query_mlp"), f);
        visit_array(prefix, "command_embed", &mut self.command_embed, f);
        visit_array(prefix, "query_pos", &mut self.query_pos, f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        self.reg_head.visit_mut(&join(prefix, "reg_head"), f);
    }
}

/// Plan query: the ego track feature, each ego mode context and the command
/// embedding are fused per mode and max-pooled over modes.
pub fn plan_query(
    ego_track: ArrayView1<'_, f64>,
    ego_ctx: ArrayView2<'_, f64>,
    command: Command,
    params: &PlannerParams,
) -> Result<FeatureMat> {
    let dim = params.dim();
    let k = ego_ctx.nrows();
    ensure!(
        ego_track.len() == dim && ego_ctx.ncols() == dim && k > 0,
        "planner",
        "plan_head",
        "ego features must be {dim} wide with at least one mode"
    );
    let track = ego_track.insert_axis(Axis(0)).broadcast((k, dim)).expect("row broadcast").to_owned();
    let cmd = params
        .command_embed
        .row(command.index())
        .insert_axis(Axis(0))
        .broadcast((k, dim))
        .expect("row broadcast")
        .to_owned();
    let fused = mlp_forward(concat_cols(&[track.view(), ego_ctx, cmd.view()])?.view(), &params.query_mlp)?;
    let pooled = fused.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b));
    Ok(pooled.insert_axis(Axis(0)))
}

/// Raw plan `T_p x 2` in world coordinates.
pub fn plan_head(
    ego_track: ArrayView1<'_, f64>,
    ego_ctx: ArrayView2<'_, f64>,
    command: Command,
    ego_position: [f64; 2],
    bev: &BevGrid,
    params: &PlannerParams,
    cfg: &PlannerConfig,
) -> Result<Array2<f64>> {
    let dim = params.dim();
    ensure!(
        bev.channels() == dim,
        "planner",
        "plan_head",
        "BEV has {} channels, plan query has {dim}",
        bev.channels()
    );
    ensure!(
        params.reg_head.output_dim() == 2 * cfg.horizon,
        "planner",
        "plan_head",
        "regression head emits {} values for a {}-step plan",
        params.reg_head.output_dim(),
        cfg.horizon
    );
    let mut q = plan_query(ego_track, ego_ctx, command, params)?;
    let memory = if cfg.memory_stride > 1 {
        bev.avg_pool(cfg.memory_stride)?
    } else {
        bev.clone()
    };
    let value = memory.flatten();
    let key = &value + &sinusoidal_pe(memory.spec.cell_centers().view(), dim)?;
    for layer in &params.layers {
        q = layer.forward(&q, Some(&params.query_pos), key.view(), value.view(), None)?;
    }
    let off = mlp_forward(q.view(), &params.reg_head)?;
    Ok(Array2::from_shape_fn((cfg.horizon, 2), |(t, c)| ego_position[c] + off[[0, 2 * t + c]]))
}

/// World-space centres of occupied cells.
pub fn occupied_points(grid: &IdGrid) -> Vec<[f64; 2]> {
    grid.occupied_cells().map(|(r, c, _)| grid.spec.cell_center(r, c)).collect()
}

fn gaussian(d2: f64, sigma: f64) -> f64 {
    (-d2 / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma)
}

/// Potential of one waypoint with its gradient and Hessian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPotential {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: [[f64; 2]; 2],
}

/// Sum of isotropic Gaussian densities centred on the occupied points within
/// `gate` of `p`.
pub fn point_potential(p: [f64; 2], occupied: &[[f64; 2]], sigma: f64, gate: f64) -> PointPotential {
    let mut out = PointPotential {
        value: 0.0,
        grad: [0.0; 2],
        hess: [[0.0; 2]; 2],
    };
    let s2 = sigma * sigma;
    for o in occupied {
        let d = [p[0] - o[0], p[1] - o[1]];
        let d2 = d[0] * d[0] + d[1] * d[1];
        if d2 >= gate * gate {
            continue;
        }
        let n = gaussian(d2, sigma);
        out.value += n;
        for i in 0..2 {
            out.grad[i] -= n * d[i] / s2;
            for j in 0..2 {
                let delta = if i == j { 1.0 } else { 0.0 };
                out.hess[i][j] += n * (d[i] * d[j] / (s2 * s2) - delta / s2);
            }
        }
    }
    out
}

/// Total potential of a plan; waypoint `t` is scored against `occupancy[t]`.
pub fn collision_potential(tau: &Array2<f64>, occupancy: &[Vec<[f64; 2]>], sigma: f64, gate: f64) -> Result<f64> {
    ensure!(sigma > 0.0 && gate > 0.0, "planner", "collision_potential", "sigma and gate must be positive");
    ensure!(
        tau.ncols() == 2 && occupancy.len() == tau.nrows(),
        "planner",
        "collision_potential",
        "{} waypoints but {} occupancy layers",
        tau.nrows(),
        occupancy.len()
    );
    Ok((0..tau.nrows())
        .map(|t| point_potential([tau[[t, 0]], tau[[t, 1]]], &occupancy[t], sigma, gate).value)
        .sum())
}

/// Occupancy layer used for each waypoint: waypoint `t` lies `t + 1` frames
/// ahead; beyond the forecast horizon the last layer is reused.
pub fn occupancy_per_waypoint(steps: &[IdGrid], horizon: usize) -> Vec<Vec<[f64; 2]>> {
    (0..horizon)
        .map(|t| match steps.len() {
            0 => Vec::new(),
            n => occupied_points(&steps[(t + 1).min(n - 1)]),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub raw: Array2<f64>,
    pub optimized: Array2<f64>,
    pub objective_trace: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
}

struct WaypointObjective<'a> {
    anchor: [f64; 2],
    occupied: &'a [[f64; 2]],
    cfg: &'a PlannerConfig,
}

impl WaypointObjective<'_> {
    fn value(&self, p: [f64; 2]) -> f64 {
        let d = (p[0] - self.anchor[0]).hypot(p[1] - self.anchor[1]);
        self.cfg.lambda_coord * d
            + self.cfg.lambda_obs * point_potential(p, self.occupied, self.cfg.sigma, self.cfg.gate).value
    }

    /// Gradient (with the zero subgradient at the anchor), Hessian and the
    /// potential's own Hessian.
    fn derivatives(&self, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2], [[f64; 2]; 2]) {
        let pot = point_potential(p, self.occupied, self.cfg.sigma, self.cfg.gate);
        let (lc, lo) = (self.cfg.lambda_coord, self.cfg.lambda_obs);
        let mut g = [lo * pot.grad[0], lo * pot.grad[1]];
        let mut h = [[lo * pot.hess[0][0], lo * pot.hess[0][1]], [lo * pot.hess[1][0], lo * pot.hess[1][1]]];
        let d = [p[0] - self.anchor[0], p[1] - self.anchor[1]];
        let r = d[0].hypot(d[1]);
        if r > 0.0 {
            for i in 0..2 {
                g[i] += lc * d[i] / r;
                for j in 0..2 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    h[i][j] += lc * (delta - d[i] * d[j] / (r * r)) / r;
                }
            }
        }
        (g, h, pot.hess)
    }

    /// Magnitude of the minimum-norm subgradient.
    fn stationarity(&self, p: [f64; 2]) -> f64 {
        let (g, _, _) = self.derivatives(p);
        let at_anchor = p == self.anchor;
        let n = g[0].hypot(g[1]);
        if at_anchor {
            (n - self.cfg.lambda_coord).max(0.0)
        } else {
            n
        }
    }
}

fn solve2(h: [[f64; 2]; 2], g: [f64; 2]) -> Option<[f64; 2]> {
    // Cholesky of a 2x2 symmetric matrix; None unless positive definite.
    let a = h[0][0];
    if a <= 0.0 {
        return None;
    }
    let l10 = h[1][0] / a.sqrt();
    let l11sq = h[1][1] - l10 * l10;
    if l11sq <= 0.0 {
        return None;
    }
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    Some([
        -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
        -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
    ])
}

/// Eigenvector of the smallest eigenvalue of a symmetric 2x2 matrix.
fn min_eigen(h: [[f64; 2]; 2]) -> (f64, [f64; 2]) {
    let (a, b, c) = (h[0][0], h[0][1], h[1][1]);
    let tr = a + c;
    let disc = ((a - c) * (a - c) / 4.0 + b * b).sqrt();
    let lam = tr / 2.0 - disc;
    let v = if b.abs() > 1e-300 {
        [lam - c, b]
    } else if a <= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n = v[0].hypot(v[1]);
    (lam, [v[0] / n, v[1] / n])
}

const ARMIJO_C1: f64 = 1e-4;
const MU0: f64 = 1e-3;

/// One damped Newton step with Armijo backtracking; `None` if no decrease.
fn newton_step(obj: &WaypointObjective<'_>, p: [f64; 2], f0: f64) -> Option<([f64; 2], f64)> {
    let (g, h, _) = obj.derivatives(p);
    if g[0] == 0.0 && g[1] == 0.0 {
        return None;
    }
    let mut mu = MU0;
    let mut dir = None;
    for _ in 0..30 {
        let hd = [[h[0][0] + mu, h[0][1]], [h[1][0], h[1][1] + mu]];
        if let Some(d) = solve2(hd, g) {
            if d[0] * g[0] + d[1] * g[1] < 0.0 {
                dir = Some(d);
                break;
            }
        }
        mu *= 10.0;
    }
    let d = dir.unwrap_or([-g[0], -g[1]]);
    let slope = d[0] * g[0] + d[1] * g[1];
    let mut alpha = 1.0;
    while alpha > 1e-12 {
        let q = [p[0] + alpha * d[0], p[1] + alpha * d[1]];
        let f = obj.value(q);
        if f <= f0 + ARMIJO_C1 * alpha * slope && f < f0 {
            return Some((q, f));
        }
        alpha *= 0.5;
    }
    None
}

/// Leave a stationary point that sits on a potential ridge or peak: probe
/// along the most negative curvature direction (both signs), backtracking
/// from `4 sigma`, and accept the first strict decrease.
fn escape_step(obj: &WaypointObjective<'_>, p: [f64; 2], f0: f64) -> Option<([f64; 2], f64)> {
    let (_, _, pot_h) = obj.derivatives(p);
    let (lam, v) = min_eigen(pot_h);
    if lam >= 0.0 {
        return None;
    }
    let mut step = 4.0 * obj.cfg.sigma;
    while step > 1e-3 * obj.cfg.sigma {
        let mut best: Option<([f64; 2], f64)> = None;
        for s in [1.0, -1.0] {
            let q = [p[0] + s * step * v[0], p[1] + s * step * v[1]];
            let f = obj.value(q);
            if f < f0 && best.is_none_or(|(_, bf)| f < bf) {
                best = Some((q, f));
            }
        }
        if best.is_some() {
            return best;
        }
        step *= 0.5;
    }
    None
}

/// Minimise `lambda_coord * sum_t |tau_t - raw_t| + lambda_obs * sum_t D(tau_t)`.
pub fn optimize_plan(raw: &Array2<f64>, occupancy: &[Vec<[f64; 2]>], cfg: &PlannerConfig) -> Result<PlanResult> {
    ensure!(
        raw.ncols() == 2 && occupancy.len() == raw.nrows(),
        "planner",
        "optimize_plan",
        "{} waypoints but {} occupancy layers",
        raw.nrows(),
        occupancy.len()
    );
    ensure!(
        cfg.sigma > 0.0 && cfg.gate > 0.0 && cfg.lambda_coord >= 0.0 && cfg.lambda_obs >= 0.0,
        "planner",
        "optimize_plan",
        "sigma, gate must be positive and weights non-negative"
    );
    ensure!(
        raw.iter().all(|v| v.is_finite()),
        "planner",
        "optimize_plan",
        "raw plan is not finite"
    );
    let n = raw.nrows();
    let objs: Vec<WaypointObjective<'_>> = (0..n)
        .map(|t| WaypointObjective {
            anchor: [raw[[t, 0]], raw[[t, 1]]],
            occupied: &occupancy[t],
            cfg,
        })
        .collect();
    let mut pts: Vec<[f64; 2]> = objs.iter().map(|o| o.anchor).collect();
    let mut vals: Vec<f64> = objs.iter().zip(&pts).map(|(o, &p)| o.value(p)).collect();
    let total = |v: &[f64]| v.iter().sum::<f64>();
    ensure!(
        total(&vals).is_finite(),
        "planner",
        "optimize_plan",
        "objective is not finite"
    );
    let grad_norm = |pts: &[[f64; 2]]| -> f64 {
        objs.iter().zip(pts).map(|(o, &p)| o.stationarity(p).powi(2)).sum::<f64>().sqrt()
    };
    let mut trace = vec![total(&vals)];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let mut moved = false;
        for t in 0..n {
            let step = if objs[t].stationarity(pts[t]) > 0.0 {
                newton_step(&objs[t], pts[t], vals[t])
            } else {
                None
            };
            let step = step.or_else(|| escape_step(&objs[t], pts[t], vals[t]));
            if let Some((q, f)) = step {
                pts[t] = q;
                vals[t] = f;
                moved = true;
            }
        }
        if !moved {
            break;
        }
        iterations += 1;
        trace.push(total(&vals));
        if grad_norm(&pts) < cfg.grad_tol {
            break;
        }
    }
    let mut optimized = Array2::zeros((n, 2));
    for (t, p) in pts.iter().enumerate() {
        optimized[[t, 0]] = p[0];
        optimized[[t, 1]] = p[1];
    }
    Ok(PlanResult {
        raw: raw.clone(),
        optimized,
        objective_trace: trace,
        grad_norm: grad_norm(&pts),
        iterations,
    })
}

/// Planning objective of an arbitrary trajectory.
pub fn plan_objective(tau: &Array2<f64>, raw: &Array2<f64>, occupancy: &[Vec<[f64; 2]>], cfg: &PlannerConfig) -> f64 {
    (0..tau.nrows())
        .map(|t| {
            WaypointObjective {
                anchor: [raw[[t, 0]], raw[[t, 1]]],
                occupied: &occupancy[t],
                cfg,
            }
            .value([tau[[t, 0]], tau[[t, 1]]])
        })
        .sum()
}

/// Ego boxes along a plan, heading along the finite-difference direction of
/// travel (the previous heading when the step is negligible).
pub fn ego_boxes(tau: &Array2<f64>, start: [f64; 2], start_yaw: f64, width: f64, length: f64) -> Vec<Box2d> {
    let mut prev = start;
    let mut yaw = start_yaw;
    (0..tau.nrows())
        .map(|t| {
            let p = [tau[[t, 0]], tau[[t, 1]]];
            let (dx, dy) = (p[0] - prev[0], p[1] - prev[1]);
            if dx.hypot(dy) > 1e-6 {
                yaw = dy.atan2(dx);
            }
            prev = p;
            Box2d::new(p[0], p[1], width, length, yaw)
        })
        .collect()
}

/// `sum_(w, delta) w * sum_(i, t) IoU(ego box dilated by delta at tau_t, b_(i, t))`.
pub fn collision_loss(
    tau: &Array2<f64>,
    start: [f64; 2],
    start_yaw: f64,
    agents: &[Vec<Box2d>],
    cfg: &PlannerConfig,
) -> Result<f64> {
    ensure!(
        agents.len() == tau.nrows(),
        "planner",
        "collision_loss",
        "{} waypoints but {} agent sets",
        tau.nrows(),
        agents.len()
    );
    let base = ego_boxes(tau, start, start_yaw, cfg.ego_width, cfg.ego_length);
    let mut loss = 0.0;
    for &(w, delta) in &cfg.collision_pairs {
        for (t, ego) in base.iter().enumerate() {
            let b = Box2d::new(ego.x, ego.y, ego.w + delta, ego.l + delta, ego.yaw);
            for a in &agents[t] {
                loss += w * rotated_iou(&b, a);
            }
        }
    }
    Ok(loss)
}

/// One line of the plan JSONL artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub t: usize,
    pub command: Command,
    pub raw: Vec<[f64; 2]>,
    pub optimized: Vec<[f64; 2]>,
    pub objective_trace: Vec<f64>,
}

impl PlanRecord {
    pub fn new(t: usize, command: Command, plan: &PlanResult) -> Self {
        let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| [r[0], r[1]]).collect();
        PlanRecord {
            t,
            command,
            raw: rows(&plan.raw),
            optimized: rows(&plan.optimized),
            objective_trace: plan.objective_trace.clone(),
        }
    }
}
