//! Non-linear target smoother: pulls a trajectory towards a noisy target while
//! penalising jerk, curvature, curvature rate, acceleration and lateral
//! acceleration.
//!
//! The optimiser works on a multiple-shooting parameterisation: the horizon is
//! cut into segments, each owning its start position, start velocity and the
//! accelerations that drive a double integrator through the segment. Position
//! and velocity mismatches at segment seams are penalised. All cost terms are
//! squared residuals, minimised by damped Gauss-Newton with an Armijo line
//! search and a gradient-descent fallback.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Speed floor in the curvature denominator, m/s.
pub const SPEED_FLOOR: f64 = 1e-3;
pub const MAX_ITERS: usize = 200;
pub const REL_TOL: f64 = 1e-8;
const ARMIJO_C1: f64 = 1e-4;
const MIN_STEP: f64 = 1e-12;

/// The five kinematic penalties, in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicCosts {
    pub jerk: f64,
    pub curvature: f64,
    pub curvature_rate: f64,
    pub acceleration: f64,
    pub lateral_acceleration: f64,
}

impl KinematicCosts {
    pub fn as_array(&self) -> [f64; 5] {
        [
            self.jerk,
            self.curvature,
            self.curvature_rate,
            self.acceleration,
            self.lateral_acceleration,
        ]
    }
}

/// Weights of the kinematic penalties, same order as [`KinematicCosts`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicWeights {
    pub jerk: f64,
    pub curvature: f64,
    pub curvature_rate: f64,
    pub acceleration: f64,
    pub lateral_acceleration: f64,
}

impl Default for KinematicWeights {
    fn default() -> Self {
        KinematicWeights::uniform(0.1)
    }
}

impl KinematicWeights {
    pub fn uniform(w: f64) -> Self {
        KinematicWeights {
            jerk: w,
            curvature: w,
            curvature_rate: w,
            acceleration: w,
            lateral_acceleration: w,
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [
            self.jerk,
            self.curvature,
            self.curvature_rate,
            self.acceleration,
            self.lateral_acceleration,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherWeights {
    pub data: f64,
    pub goal: f64,
    pub kinematic: KinematicWeights,
    /// Steps per shooting segment.
    pub segment_len: usize,
    pub continuity: f64,
}

impl Default for SmootherWeights {
    fn default() -> Self {
        SmootherWeights {
            data: 1.0,
            goal: 1.0,
            kinematic: KinematicWeights::default(),
            segment_len: 4,
            continuity: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherProblem {
    /// `T x 2` target.
    pub target: Array2<f64>,
    pub dt: f64,
    pub weights: SmootherWeights,
}

impl SmootherProblem {
    pub fn new(target: Array2<f64>, dt: f64) -> Self {
        SmootherProblem {
            target,
            dt,
            weights: SmootherWeights::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.target.ncols() == 2 && self.target.nrows() >= 4,
            "target-smoother",
            "smooth",
            "target must be T x 2 with T >= 4, got {:?}",
            self.target.dim()
        );
        ensure!(
            self.target.iter().all(|v| v.is_finite()),
            "target-smoother",
            "smooth",
            "target has non-finite entries"
        );
        ensure!(
            self.dt > 0.0 && self.dt.is_finite(),
            "target-smoother",
            "smooth",
            "dt must be positive"
        );
        let w = &self.weights;
        ensure!(
            w.data >= 0.0
                && w.goal >= 0.0
                && w.continuity > 0.0
                && w.segment_len >= 1
                && w.kinematic.as_array().iter().all(|&k| k >= 0.0),
            "target-smoother",
            "smooth",
            "weights must be non-negative, continuity positive"
        );
        Ok(())
    }
}

/// Stacked residuals with their Jacobian with respect to the flattened
/// trajectory (`x[2t + c]`).
struct Residuals {
    r: Vec<f64>,
    jac: Vec<Vec<(usize, f64)>>,
}

impl Residuals {
    fn new() -> Self {
        Residuals { r: Vec::new(), jac: Vec::new() }
    }

    fn push(&mut self, r: f64, row: Vec<(usize, f64)>) {
        self.r.push(r);
        self.jac.push(row);
    }

    fn cost(&self) -> f64 {
        self.r.iter().map(|v| v * v).sum()
    }
}

/// Forward velocity, central acceleration and curvature at interior step `t`,
/// with the partial derivatives of `kappa` and of `|v|^2` w.r.t. `x_{t-1}, x_t, x_{t+1}`.
struct CurvaturePoint {
    kappa: f64,
    speed2: f64,
    dkappa: [[f64; 2]; 3],
    dspeed2: [[f64; 2]; 3],
}

fn curvature_point(x: &[[f64; 2]], t: usize, dt: f64) -> CurvaturePoint {
    let (xm, x0, xp) = (x[t - 1], x[t], x[t + 1]);
    let v = [(xp[0] - x0[0]) / dt, (xp[1] - x0[1]) / dt];
    let a = [
        (xp[0] - 2.0 * x0[0] + xm[0]) / (dt * dt),
        (xp[1] - 2.0 * x0[1] + xm[1]) / (dt * dt),
    ];
    let speed = v[0].hypot(v[1]);
    let n = speed.max(SPEED_FLOOR);
    let cross = v[0] * a[1] - v[1] * a[0];
    let kappa = cross / n.powi(3);
    // d kappa / d v and d kappa / d a.
    let mut dk_dv = [a[1] / n.powi(3), -a[0] / n.powi(3)];
    if speed > SPEED_FLOOR {
        let s = 3.0 * cross / n.powi(4);
        dk_dv[0] -= s * v[0] / speed;
        dk_dv[1] -= s * v[1] / speed;
    }
    let dk_da = [-v[1] / n.powi(3), v[0] / n.powi(3)];
    // v depends on (x_t, x_{t+1}); a on all three.
    let (iv, ia) = (1.0 / dt, 1.0 / (dt * dt));
    let mut dkappa = [[0.0; 2]; 3];
    let mut dspeed2 = [[0.0; 2]; 3];
    for c in 0..2 {
        dkappa[0][c] = dk_da[c] * ia;
        dkappa[1][c] = -dk_dv[c] * iv - 2.0 * dk_da[c] * ia;
        dkappa[2][c] = dk_dv[c] * iv + dk_da[c] * ia;
        dspeed2[1][c] = -2.0 * v[c] * iv;
        dspeed2[2][c] = 2.0 * v[c] * iv;
    }
    CurvaturePoint {
        kappa,
        speed2: speed * speed,
        dkappa,
        dspeed2,
    }
}

fn points(x: &Array2<f64>) -> Vec<[f64; 2]> {
    x.rows().into_iter().map(|r| [r[0], r[1]]).collect()
}

fn residuals(x: &[[f64; 2]], target: &Array2<f64>, dt: f64, w: &SmootherWeights) -> Residuals {
    let n = x.len();
    let mut res = Residuals::new();
    let sd = w.data.sqrt();
    for t in 0..n {
        for c in 0..2 {
            res.push(sd * (x[t][c] - target[[t, c]]), vec![(2 * t + c, sd)]);
        }
    }
    let sg = w.goal.sqrt();
    for c in 0..2 {
        res.push(sg * (x[n - 1][c] - target[[n - 1, c]]), vec![(2 * (n - 1) + c, sg)]);
    }
    let k = w.kinematic;
    let sj = k.jerk.sqrt() / dt.powi(3);
    for t in 0..n - 3 {
        for c in 0..2 {
            let v = x[t + 3][c] - 3.0 * x[t + 2][c] + 3.0 * x[t + 1][c] - x[t][c];
            res.push(
                sj * v,
                vec![
                    (2 * (t + 3) + c, sj),
                    (2 * (t + 2) + c, -3.0 * sj),
                    (2 * (t + 1) + c, 3.0 * sj),
                    (2 * t + c, -sj),
                ],
            );
        }
    }
    let sa = k.acceleration.sqrt() / (dt * dt);
    for t in 1..n - 1 {
        for c in 0..2 {
            let v = x[t + 1][c] - 2.0 * x[t][c] + x[t - 1][c];
            res.push(
                sa * v,
                vec![(2 * (t + 1) + c, sa), (2 * t + c, -2.0 * sa), (2 * (t - 1) + c, sa)],
            );
        }
    }
    let curv: Vec<CurvaturePoint> = (1..n - 1).map(|t| curvature_point(x, t, dt)).collect();
    let idx = |t: usize, j: usize, c: usize| 2 * (t - 1 + j) + c;
    let sk = k.curvature.sqrt();
    for (i, cp) in curv.iter().enumerate() {
        let t = i + 1;
        let mut row = Vec::with_capacity(6);
        for j in 0..3 {
            for c in 0..2 {
                row.push((idx(t, j, c), sk * cp.dkappa[j][c]));
            }
        }
        res.push(sk * cp.kappa, row);
    }
    let sr = k.curvature_rate.sqrt() / dt;
    for i in 0..curv.len().saturating_sub(1) {
        let (a, b) = (&curv[i], &curv[i + 1]);
        let (ta, tb) = (i + 1, i + 2);
        let mut row = Vec::with_capacity(12);
        for j in 0..3 {
            for c in 0..2 {
                row.push((idx(tb, j, c), sr * b.dkappa[j][c]));
                row.push((idx(ta, j, c), -sr * a.dkappa[j][c]));
            }
        }
        res.push(sr * (b.kappa - a.kappa), row);
    }
    let sl = k.lateral_acceleration.sqrt();
    for (i, cp) in curv.iter().enumerate() {
        let t = i + 1;
        let mut row = Vec::with_capacity(6);
        for j in 0..3 {
            for c in 0..2 {
                row.push((idx(t, j, c), sl * (cp.dkappa[j][c] * cp.speed2 + cp.kappa * cp.dspeed2[j][c])));
            }
        }
        res.push(sl * cp.kappa * cp.speed2, row);
    }
    res
}

/// The five unweighted kinematic penalties of a `T x 2` trajectory.
pub fn kinematic_costs(x: &Array2<f64>, dt: f64) -> Result<KinematicCosts> {
    ensure!(
        x.ncols() == 2 && x.nrows() >= 4,
        "target-smoother",
        "kinematic_costs",
        "trajectory must be T x 2 with T >= 4, got {:?}",
        x.dim()
    );
    ensure!(dt > 0.0, "target-smoother", "kinematic_costs", "dt must be positive");
    let p = points(x);
    let n = p.len();
    let mut out = KinematicCosts {
        jerk: 0.0,
        curvature: 0.0,
        curvature_rate: 0.0,
        acceleration: 0.0,
        lateral_acceleration: 0.0,
    };
    for t in 0..n - 3 {
        for c in 0..2 {
            let j = p[t + 3][c] - 3.0 * p[t + 2][c] + 3.0 * p[t + 1][c] - p[t][c];
            out.jerk += j * j / dt.powi(6);
        }
    }
    for t in 1..n - 1 {
        for c in 0..2 {
            let a = p[t + 1][c] - 2.0 * p[t][c] + p[t - 1][c];
            out.acceleration += a * a / dt.powi(4);
        }
    }
    let curv: Vec<CurvaturePoint> = (1..n - 1).map(|t| curvature_point(&p, t, dt)).collect();
    for cp in &curv {
        out.curvature += cp.kappa * cp.kappa;
        out.lateral_acceleration += (cp.kappa * cp.speed2).powi(2);
    }
    for w in curv.windows(2) {
        out.curvature_rate += ((w[1].kappa - w[0].kappa) / dt).powi(2);
    }
    Ok(out)
}

/// Total smoother cost of trajectory `x` against the problem's target.
pub fn smoother_cost(x: &Array2<f64>, problem: &SmootherProblem) -> Result<f64> {
    problem.validate()?;
    ensure!(
        x.dim() == problem.target.dim(),
        "target-smoother",
        "cost",
        "trajectory {:?} vs target {:?}",
        x.dim(),
        problem.target.dim()
    );
    Ok(residuals(&points(x), &problem.target, problem.dt, &problem.weights).cost())
}

/// Analytic gradient of [`smoother_cost`] with respect to `x`.
pub fn smoother_gradient(x: &Array2<f64>, problem: &SmootherProblem) -> Result<Array2<f64>> {
    problem.validate()?;
    let res = residuals(&points(x), &problem.target, problem.dt, &problem.weights);
    let mut g = Array2::zeros(x.dim());
    for (r, row) in res.r.iter().zip(&res.jac) {
        for &(i, d) in row {
            g[[i / 2, i % 2]] += 2.0 * r * d;
        }
    }
    Ok(g)
}

/// Shooting segments: `(first step, owned steps, driven transitions)`.
fn segments(t: usize, len: usize) -> Vec<(usize, usize, usize)> {
    let starts: Vec<usize> = (0..t).step_by(len).collect();
    starts
        .iter()
        .enumerate()
        .map(|(s, &b)| {
            let owned = len.min(t - b);
            let last = s + 1 == starts.len();
            (b, owned, if last { owned - 1 } else { owned })
        })
        .collect()
}

/// Decision-vector layout: per segment `[p (2), v (2), a_0 .. a_{m-1} (2 each)]`.
struct Shooting {
    segs: Vec<(usize, usize, usize)>,
    offsets: Vec<usize>,
    nz: usize,
    dt: f64,
    steps: usize,
}

impl Shooting {
    fn new(steps: usize, len: usize, dt: f64) -> Self {
        let segs = segments(steps, len);
        let mut offsets = Vec::with_capacity(segs.len());
        let mut nz = 0;
        for &(_, _, m) in &segs {
            offsets.push(nz);
            nz += 4 + 2 * m;
        }
        Shooting {
            segs,
            offsets,
            nz,
            dt,
            steps,
        }
    }

    /// Positions of the rollout and the seam defects (position then velocity,
    /// for every seam).
    fn rollout(&self, z: &[f64]) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut x = vec![[0.0; 2]; self.steps];
        let mut defects = Vec::new();
        for (s, &(b, owned, m)) in self.segs.iter().enumerate() {
            let o = self.offsets[s];
            let mut p = [z[o], z[o + 1]];
            let mut v = [z[o + 2], z[o + 3]];
            for j in 0..owned {
                x[b + j] = p;
                if j < m {
                    let a = [z[o + 4 + 2 * j], z[o + 5 + 2 * j]];
                    for c in 0..2 {
                        p[c] += v[c] * self.dt;
                        v[c] += a[c] * self.dt;
                    }
                }
            }
            if s + 1 < self.segs.len() {
                let on = self.offsets[s + 1];
                defects.extend_from_slice(&[p[0] - z[on], p[1] - z[on + 1], v[0] - z[on + 2], v[1] - z[on + 3]]);
            }
        }
        (x, defects)
    }

    /// Decision vector whose rollout reproduces `x` with zero defects (up to
    /// rounding).
    fn init(&self, x: &Array2<f64>) -> Vec<f64> {
        let n = self.steps;
        let vel = |t: usize| -> [f64; 2] {
            let t = t.min(n - 2);
            [(x[[t + 1, 0]] - x[[t, 0]]) / self.dt, (x[[t + 1, 1]] - x[[t, 1]]) / self.dt]
        };
        let mut z = vec![0.0; self.nz];
        for (s, &(b, _, m)) in self.segs.iter().enumerate() {
            let o = self.offsets[s];
            z[o] = x[[b, 0]];
            z[o + 1] = x[[b, 1]];
            let v0 = vel(b);
            z[o + 2] = v0[0];
            z[o + 3] = v0[1];
            for j in 0..m {
                let (va, vb) = (vel(b + j), vel(b + j + 1));
                z[o + 4 + 2 * j] = (vb[0] - va[0]) / self.dt;
                z[o + 5 + 2 * j] = (vb[1] - va[1]) / self.dt;
            }
        }
        z
    }

    /// `d rollout / d z` and `d defects / d z`; both maps are linear.
    fn linear_maps(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let zero = vec![0.0; self.nz];
        let (_, d0) = self.rollout(&zero);
        let mut bx = DMatrix::zeros(2 * self.steps, self.nz);
        let mut bd = DMatrix::zeros(d0.len(), self.nz);
        let mut e = zero;
        for i in 0..self.nz {
            e[i] = 1.0;
            let (x, d) = self.rollout(&e);
            for t in 0..self.steps {
                bx[(2 * t, i)] = x[t][0];
                bx[(2 * t + 1, i)] = x[t][1];
            }
            for (k, v) in d.iter().enumerate() {
                bd[(k, i)] = *v;
            }
            e[i] = 0.0;
        }
        (bx, bd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothResult {
    pub trajectory: Array2<f64>,
    /// Objective (including seam penalties) after every accepted iterate,
    /// starting with the initial point.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Objective<'a> {
    problem: &'a SmootherProblem,
    shoot: Shooting,
    bx: DMatrix<f64>,
    bd: DMatrix<f64>,
}

impl Objective<'_> {
    /// Residual vector and Jacobian w.r.t. `z`.
    fn eval(&self, z: &[f64], with_jac: bool) -> (DVector<f64>, Option<DMatrix<f64>>) {
        let (x, defects) = self.shoot.rollout(z);
        let w = &self.problem.weights;
        let res = residuals(&x, &self.problem.target, self.problem.dt, w);
        let sc = w.continuity.sqrt();
        let nr = res.r.len() + defects.len();
        let mut r = DVector::zeros(nr);
        for (i, v) in res.r.iter().enumerate() {
            r[i] = *v;
        }
        for (k, d) in defects.iter().enumerate() {
            r[res.r.len() + k] = sc * d;
        }
        if !with_jac {
            return (r, None);
        }
        let mut jx = DMatrix::zeros(res.r.len(), 2 * self.shoot.steps);
        for (i, row) in res.jac.iter().enumerate() {
            for &(c, d) in row {
                jx[(i, c)] += d;
            }
        }
        let mut j = DMatrix::zeros(nr, self.shoot.nz);
        j.rows_mut(0, res.r.len()).copy_from(&(jx * &self.bx));
        j.rows_mut(res.r.len(), defects.len()).copy_from(&(&self.bd * sc));
        (r, Some(j))
    }

    fn cost(&self, z: &[f64]) -> f64 {
        self.eval(z, false).0.norm_squared()
    }
}

/// Minimise the smoother cost starting from the target itself.
pub fn smooth(problem: &SmootherProblem) -> Result<SmoothResult> {
    problem.validate()?;
    let target = &problem.target;
    let steps = target.nrows();
    let start_cost = smoother_cost(target, problem)?;
    let g0 = smoother_gradient(target, problem)?;
    let scale = 1.0 + target.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if g0.iter().map(|v| v.abs()).fold(0.0, f64::max) <= 1e-10 * scale {
        // The target is already stationary: keep it bit for bit.
        return Ok(SmoothResult {
            trajectory: target.clone(),
            cost_trace: vec![start_cost],
            iterations: 0,
            converged: true,
        });
    }
    let shoot = Shooting::new(steps, problem.weights.segment_len, problem.dt);
    let (bx, bd) = shoot.linear_maps();
    let obj = Objective { problem, shoot, bx, bd };
    let mut z = obj.shoot.init(target);
    let mut cost = obj.cost(&z);
    let mut trace = vec![cost];
    let mut mu = 1e-6;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERS {
        iterations += 1;
        let (r, j) = obj.eval(&z, true);
        let j = j.expect("jacobian requested");
        let g = j.transpose() * &r * 2.0;
        if g.norm() == 0.0 {
            converged = true;
            break;
        }
        let mut h = j.transpose() * &j * 2.0;
        let diag_scale = (0..h.nrows()).map(|i| h[(i, i)]).fold(0.0, f64::max).max(1.0);
        for i in 0..h.nrows() {
            h[(i, i)] += mu * diag_scale;
        }
        let gn = h.cholesky().map(|c| -c.solve(&g));
        let mut accepted = None;
        let directions: Vec<DVector<f64>> = match gn {
            Some(d) if d.dot(&g) < 0.0 => vec![d, -g.clone()],
            _ => vec![-g.clone()],
        };
        for (attempt, dir) in directions.iter().enumerate() {
            let slope = g.dot(dir);
            let mut alpha = if attempt == 0 { 1.0 } else { 1.0 / g.norm().max(1.0) };
            while alpha > MIN_STEP {
                let trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
                let c = obj.cost(&trial);
                if c <= cost + ARMIJO_C1 * alpha * slope {
                    accepted = Some((trial, c, attempt == 0 && alpha == 1.0));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((trial, c, full_step)) = accepted else {
            converged = true;
            break;
        };
        mu = if full_step { (mu * 0.1).max(1e-12) } else { (mu * 10.0).min(1e6) };
        let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
        z = trial;
        cost = c;
        trace.push(cost);
        if rel < REL_TOL {
            converged = true;
            break;
        }
    }
    let (x, _) = obj.shoot.rollout(&z);
    let mut out = Array2::zeros((steps, 2));
    for (t, p) in x.iter().enumerate() {
        out[[t, 0]] = p[0];
        out[[t, 1]] = p[1];
    }
    if smoother_cost(&out, problem)? > start_cost {
        out = target.clone();
    }
    Ok(SmoothResult {
        trajectory: out,
        cost_trace: trace,
        iterations,
        converged,
    })
}
