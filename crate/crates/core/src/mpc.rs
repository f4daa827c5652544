//! Finite-horizon OCP on the surrogate with tightened state constraints, its
//! single-shooting solver and the receding-horizon feedback.
//!
//! Inputs are bounded by projection; tightened state boxes and the terminal
//! level set enter a PHR augmented Lagrangian whose subproblems are solved by
//! projected BFGS. Gradients use forward sensitivities
//! `S_{k+1} = A_k S_k + B_k E_k` of the predicted states.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::plant::DifferentiableDynamics;
use crate::sets::AxisBox;
use crate::terminal::{quad, TerminalIngredients};
use crate::tightening::tightened_box;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub kkt_tol: f64,
    /// Inner iterations per augmented Lagrangian round.
    pub max_iter: usize,
    pub penalty0: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings { kkt_tol: 1e-8, max_iter: 500, penalty0: 10.0, penalty_growth: 10.0, max_outer: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "Q", with = "crate::matrix_serde")]
    pub q: DMatrix<f64>,
    #[serde(rename = "R", with = "crate::matrix_serde")]
    pub r: DMatrix<f64>,
    pub state_box: AxisBox,
    pub input_box: AxisBox,
    pub eta: f64,
    pub lbar: f64,
    pub terminal: TerminalIngredients,
    pub solver: SolverSettings,
}

impl MpcConfig {
    /// Checks weights and that every tightened box, including the terminal one, is nonempty.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_box.dim();
        let m = self.input_box.dim();
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        check_dim(n, self.q.nrows())?;
        check_dim(n, self.q.ncols())?;
        check_dim(m, self.r.nrows())?;
        check_dim(m, self.r.ncols())?;
        check_dim(n, self.terminal.p.nrows())?;
        check_dim(m, self.terminal.k.nrows())?;
        for (name, w) in [("Q", &self.q), ("R", &self.r)] {
            if (w - w.transpose()).amax() > 1e-12 || w.clone().cholesky().is_none() {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric positive definite")));
            }
        }
        self.tightened_boxes()?;
        if tightened_box(&self.state_box, self.horizon, self.eta, self.lbar)?.is_none() {
            return Err(Error::InvalidArgument(format!("terminal tightened box empty at N={}", self.horizon)));
        }
        Ok(())
    }

    /// `S - B(cbar(k) eta)` for `k = 1..N-1`.
    pub fn tightened_boxes(&self) -> Result<Vec<AxisBox>> {
        (1..self.horizon)
            .map(|k| {
                tightened_box(&self.state_box, k, self.eta, self.lbar)?
                    .ok_or_else(|| Error::InvalidArgument(format!("tightened box empty at k={k}")))
            })
            .collect()
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        quad(&self.q, x) + quad(&self.r, u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

impl OcpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            OcpStatus::Optimal => "optimal",
            OcpStatus::MaxIter => "max_iter",
            OcpStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub inputs: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub cost: f64,
    pub status: OcpStatus,
    pub kkt_residual: f64,
    pub max_violation: f64,
    /// Constraints within `10 kkt_tol` of their bound.
    pub active: Vec<String>,
    /// Most violated constraint when infeasible.
    pub violated: Option<String>,
    pub start: usize,
    pub iterations: usize,
}

impl OcpSolution {
    pub fn is_feasible(&self) -> bool {
        self.status != OcpStatus::Infeasible
    }
}

/// Smooth inequality constraints `g(u) <= 0` of one problem instance.
struct Problem<'a> {
    model: &'a dyn DifferentiableDynamics,
    cfg: &'a MpcConfig,
    boxes: Vec<AxisBox>,
    x0: Vec<f64>,
    n: usize,
    m: usize,
}

struct Evaluation {
    cost: f64,
    grad: Vec<f64>,
    cons: Vec<f64>,
    /// Row `j` is the gradient of constraint `j`.
    jac: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    fn nvar(&self) -> usize {
        self.cfg.horizon * self.m
    }

    fn ncons(&self) -> usize {
        2 * self.n * self.boxes.len() + 1
    }

    fn constraint_name(&self, j: usize) -> String {
        let per_box = 2 * self.n;
        if j / per_box < self.boxes.len() {
            let k = j / per_box + 1;
            let rem = j % per_box;
            let side = if rem % 2 == 0 { "lower" } else { "upper" };
            format!("state x{} {side} bound at k={k}", rem / 2 + 1)
        } else {
            "terminal level V_f(x(N)) <= c".to_string()
        }
    }

    fn rollout(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let mut xs = Vec::with_capacity(self.cfg.horizon + 1);
        xs.push(self.x0.clone());
        for k in 0..self.cfg.horizon {
            let next = self.model.step(&xs[k], &u[k * self.m..(k + 1) * self.m]);
            xs.push(next);
        }
        xs
    }

    fn cost_only(&self, u: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let xs = self.rollout(u);
        let mut cost = 0.0;
        for k in 0..self.cfg.horizon {
            cost += self.cfg.stage_cost(&xs[k], &u[k * self.m..(k + 1) * self.m]);
        }
        cost += quad(&self.cfg.terminal.p, &xs[self.cfg.horizon]);
        let cons = self.constraints_of(&xs);
        (cost, cons, xs)
    }

    fn constraints_of(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        let mut cons = Vec::with_capacity(self.ncons());
        for (k, b) in self.boxes.iter().enumerate() {
            let x = &xs[k + 1];
            for i in 0..self.n {
                cons.push(b.lo[i] - x[i]);
                cons.push(x[i] - b.hi[i]);
            }
        }
        let t = &self.cfg.terminal;
        cons.push(quad(&t.p, &xs[self.cfg.horizon]) / t.c - 1.0);
        cons
    }

    fn evaluate(&self, u: &[f64]) -> Evaluation {
        let (n, m, big_n) = (self.n, self.m, self.cfg.horizon);
        let nv = self.nvar();
        let mut xs = Vec::with_capacity(big_n + 1);
        xs.push(self.x0.clone());
        // sens[k] is dx_k/du, n x nv.
        let mut sens = vec![DMatrix::zeros(n, nv)];
        for k in 0..big_n {
            let uk = &u[k * m..(k + 1) * m];
            let (next, a, b) = self.model.step_with_jacobians(&xs[k], uk);
            let mut s = &a * &sens[k];
            for c in 0..m {
                for i in 0..n {
                    s[(i, k * m + c)] += b[(i, c)];
                }
            }
            xs.push(next);
            sens.push(s);
        }
        let q = &self.cfg.q;
        let r = &self.cfg.r;
        let p = &self.cfg.terminal.p;
        let mut cost = 0.0;
        let mut grad = vec![0.0; nv];
        for k in 0..big_n {
            let uk = &u[k * m..(k + 1) * m];
            cost += self.cfg.stage_cost(&xs[k], uk);
            // 2 R u_k
            for a in 0..m {
                for b in 0..m {
                    grad[k * m + a] += 2.0 * r[(a, b)] * uk[b];
                }
            }
            if k > 0 {
                add_quadratic_grad(q, &xs[k], &sens[k], &mut grad);
            }
        }
        cost += quad(p, &xs[big_n]);
        add_quadratic_grad(p, &xs[big_n], &sens[big_n], &mut grad);

        let cons = self.constraints_of(&xs);
        let mut jac = Vec::with_capacity(cons.len());
        for k in 0..self.boxes.len() {
            let s = &sens[k + 1];
            for i in 0..n {
                let row: Vec<f64> = (0..nv).map(|v| s[(i, v)]).collect();
                jac.push(row.iter().map(|v| -v).collect());
                jac.push(row);
            }
        }
        let mut tg = vec![0.0; nv];
        add_quadratic_grad(p, &xs[big_n], &sens[big_n], &mut tg);
        let c = self.cfg.terminal.c;
        jac.push(tg.into_iter().map(|v| v / c).collect());
        Evaluation { cost, grad, cons, jac, states: xs }
    }

    fn project(&self, u: &mut [f64]) {
        for k in 0..self.cfg.horizon {
            self.cfg.input_box.project(&mut u[k * self.m..(k + 1) * self.m]);
        }
    }

    fn lower(&self, v: usize) -> f64 {
        self.cfg.input_box.lo[v % self.m]
    }

    fn upper(&self, v: usize) -> f64 {
        self.cfg.input_box.hi[v % self.m]
    }
}

/// Adds `d/du (x^T W x) = 2 S^T W x`.
fn add_quadratic_grad(w: &DMatrix<f64>, x: &[f64], s: &DMatrix<f64>, grad: &mut [f64]) {
    let n = x.len();
    let wx: Vec<f64> = (0..n).map(|i| (0..n).map(|j| (w[(i, j)] + w[(j, i)]) * x[j]).sum()).collect();
    for (v, g) in grad.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..n {
            acc += s[(i, v)] * wx[i];
        }
        *g += acc;
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Projected-gradient step `P(u - g) - u` measured in the infinity norm.
fn projected_gradient(prob: &Problem, u: &[f64], g: &[f64]) -> f64 {
    let mut r: f64 = 0.0;
    for v in 0..u.len() {
        let t = (u[v] - g[v]).clamp(prob.lower(v), prob.upper(v));
        r = r.max((t - u[v]).abs());
    }
    r
}

/// Minimizes a smooth function over the input box with projected BFGS.
///
/// `f` returns value and gradient. Stops when the projected gradient falls
/// below `tol`, when no descent is possible at machine precision, or after
/// `max_iter` iterations. Returns the final point and iteration count.
fn projected_bfgs<F>(prob: &Problem, u0: &[f64], tol: f64, max_iter: usize, f: F) -> (Vec<f64>, usize)
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let nv = u0.len();
    let mut u = u0.to_vec();
    prob.project(&mut u);
    let (mut fu, mut g) = f(&u);
    let mut h = DMatrix::<f64>::identity(nv, nv);
    let mut iters = 0;
    let mut prev_active: Vec<bool> = vec![false; nv];
    while iters < max_iter {
        if projected_gradient(prob, &u, &g) <= tol {
            break;
        }
        iters += 1;
        let active: Vec<bool> = (0..nv)
            .map(|v| (u[v] <= prob.lower(v) && g[v] > 0.0) || (u[v] >= prob.upper(v) && g[v] < 0.0))
            .collect();
        if active != prev_active {
            h = DMatrix::identity(nv, nv);
            prev_active = active.clone();
        }
        let mut d = vec![0.0; nv];
        for i in 0..nv {
            if active[i] {
                continue;
            }
            for j in 0..nv {
                if !active[j] {
                    d[i] -= h[(i, j)] * g[j];
                }
            }
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = DMatrix::identity(nv, nv);
            for i in 0..nv {
                d[i] = if active[i] { 0.0 } else { -g[i] };
            }
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) {
                break;
            }
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut un: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            prob.project(&mut un);
            let step: f64 = un.iter().zip(&u).zip(&g).map(|((a, b), gg)| (a - b) * gg).sum();
            let (fn_, gn) = f(&un);
            if fn_.is_finite() && fn_ <= fu + 1e-4 * step.min(0.0) && fn_ <= fu {
                accepted = Some((un, fn_, gn));
                break;
            }
            t *= 0.5;
        }
        let Some((un, fn_, gn)) = accepted else {
            if h != DMatrix::identity(nv, nv) {
                h = DMatrix::identity(nv, nv);
                continue;
            }
            break;
        };
        let s: Vec<f64> = un.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sn = inf_norm(&s);
        if sy > 1e-14 * sn * inf_norm(&y) && sy > 0.0 {
            let rho = 1.0 / sy;
            let sv = nalgebra::DVector::from_vec(s);
            let yv = nalgebra::DVector::from_vec(y);
            let i = DMatrix::<f64>::identity(nv, nv);
            let left = &i - &sv * yv.transpose() * rho;
            let right = &i - &yv * sv.transpose() * rho;
            h = &left * &h * &right + &sv * sv.transpose() * rho;
        }
        let no_progress = sn == 0.0 || (fu - fn_) <= f64::EPSILON * fu.abs().max(1e-300) && sn <= 1e-15;
        u = un;
        fu = fn_;
        g = gn;
        if no_progress {
            break;
        }
    }
    (u, iters)
}

struct Attempt {
    u: Vec<f64>,
    eval: Evaluation,
    multipliers: Vec<f64>,
    kkt: f64,
    violation: f64,
    iterations: usize,
}

fn kkt_measures(prob: &Problem, u: &[f64], ev: &Evaluation, lam: &[f64]) -> (f64, f64) {
    let mut gl = ev.grad.clone();
    for (j, l) in lam.iter().enumerate() {
        if *l != 0.0 {
            for (g, d) in gl.iter_mut().zip(&ev.jac[j]) {
                *g += l * d;
            }
        }
    }
    let stationarity = projected_gradient(prob, u, &gl);
    let mut comp: f64 = 0.0;
    let mut viol: f64 = 0.0;
    for (g, l) in ev.cons.iter().zip(lam) {
        comp = comp.max((l * g).abs());
        viol = viol.max(g.max(0.0));
    }
    (stationarity.max(comp).max(viol), viol)
}

fn augmented_lagrangian(prob: &Problem, u0: &[f64], settings: &SolverSettings) -> Attempt {
    let nc = prob.ncons();
    let mut lam = vec![0.0; nc];
    let mut rho = settings.penalty0;
    let mut u = u0.to_vec();
    prob.project(&mut u);
    let mut iterations = 0;
    let mut last_violation = f64::INFINITY;
    let mut best: Option<Attempt> = None;
    for _ in 0..settings.max_outer.max(1) {
        let lam_now = lam.clone();
        let merit = |v: &[f64]| -> (f64, Vec<f64>) {
            let ev = prob.evaluate(v);
            let mut val = ev.cost;
            let mut grad = ev.grad.clone();
            for j in 0..nc {
                let shifted = (lam_now[j] + rho * ev.cons[j]).max(0.0);
                val += (shifted * shifted - lam_now[j] * lam_now[j]) / (2.0 * rho);
                if shifted > 0.0 {
                    for (g, d) in grad.iter_mut().zip(&ev.jac[j]) {
                        *g += shifted * d;
                    }
                }
            }
            (val, grad)
        };
        let (un, it) = projected_bfgs(prob, &u, 0.1 * settings.kkt_tol, settings.max_iter, merit);
        iterations += it;
        u = un;
        let ev = prob.evaluate(&u);
        for j in 0..nc {
            lam[j] = (lam[j] + rho * ev.cons[j]).max(0.0);
        }
        let (kkt, violation) = kkt_measures(prob, &u, &ev, &lam);
        let key = |viol: f64, kkt: f64| if viol <= settings.kkt_tol { (0, kkt) } else { (1, viol) };
        let better = match &best {
            None => true,
            Some(b) => key(violation, kkt) <= key(b.violation, b.kkt),
        };
        if better {
            best = Some(Attempt { u: u.clone(), eval: prob.evaluate(&u), multipliers: lam.clone(), kkt, violation, iterations });
        }
        if kkt <= settings.kkt_tol {
            break;
        }
        if violation > 0.25 * last_violation {
            rho *= settings.penalty_growth;
        }
        last_violation = violation;
    }
    let mut b = best.expect("at least one round runs");
    b.iterations = iterations;
    b
}

/// Minimizes the squared constraint violation over the input box.
fn restoration(prob: &Problem, u0: &[f64], settings: &SolverSettings) -> Vec<f64> {
    let merit = |v: &[f64]| -> (f64, Vec<f64>) {
        let ev = prob.evaluate(v);
        let mut val = 0.0;
        let mut grad = vec![0.0; v.len()];
        for (j, g) in ev.cons.iter().enumerate() {
            if *g > 0.0 {
                val += g * g;
                for (gr, d) in grad.iter_mut().zip(&ev.jac[j]) {
                    *gr += 2.0 * g * d;
                }
            }
        }
        (val, grad)
    };
    projected_bfgs(prob, u0, 1e-14, settings.max_iter * 4, merit).0
}

fn solve_from(prob: &Problem, u0: &[f64], start: usize) -> OcpSolution {
    let settings = &prob.cfg.solver;
    let mut att = augmented_lagrangian(prob, u0, settings);
    if att.violation > settings.kkt_tol {
        let restored = restoration(prob, &att.u, settings);
        let (_, cons, _) = prob.cost_only(&restored);
        if cons.iter().all(|g| *g <= settings.kkt_tol) {
            let again = augmented_lagrangian(prob, &restored, settings);
            if again.violation <= settings.kkt_tol {
                att = again;
            } else {
                let ev = prob.evaluate(&restored);
                let lam = vec![0.0; prob.ncons()];
                let (kkt, violation) = kkt_measures(prob, &restored, &ev, &lam);
                att = Attempt { u: restored, eval: ev, multipliers: lam, kkt, violation, iterations: att.iterations };
            }
        }
    }
    finish(prob, att, start)
}

fn finish(prob: &Problem, att: Attempt, start: usize) -> OcpSolution {
    let settings = &prob.cfg.solver;
    let m = prob.m;
    let status = if att.violation > settings.kkt_tol {
        OcpStatus::Infeasible
    } else if att.kkt <= settings.kkt_tol {
        OcpStatus::Optimal
    } else {
        OcpStatus::MaxIter
    };
    let mut active = Vec::new();
    let mut worst = (f64::NEG_INFINITY, 0);
    for (j, g) in att.eval.cons.iter().enumerate() {
        if *g >= -10.0 * settings.kkt_tol || att.multipliers[j] > 0.0 {
            active.push(prob.constraint_name(j));
        }
        if *g > worst.0 {
            worst = (*g, j);
        }
    }
    OcpSolution {
        inputs: att.u.chunks(m).map(<[f64]>::to_vec).collect(),
        states: att.eval.states,
        cost: att.eval.cost,
        status,
        kkt_residual: att.kkt,
        max_violation: att.violation,
        active,
        violated: (status == OcpStatus::Infeasible).then(|| prob.constraint_name(worst.1)),
        start,
        iterations: att.iterations,
    }
}

fn terminal_rollout(prob: &Problem) -> Vec<f64> {
    let mut x = prob.x0.clone();
    let mut u = Vec::with_capacity(prob.nvar());
    for _ in 0..prob.cfg.horizon {
        let mut uk = prob.cfg.terminal.control(&x);
        prob.cfg.input_box.project(&mut uk);
        x = prob.model.step(&x, &uk);
        u.extend(uk);
    }
    u
}

/// Solves the OCP at `x0` from the zero sequence, the optional warm start and the
/// terminal-controller rollout, keeping the best feasible result (lowest start index on ties).
pub fn solve_ocp(
    model: &dyn DifferentiableDynamics,
    config: &MpcConfig,
    x0: &[f64],
    warm_start: Option<&[Vec<f64>]>,
) -> Result<OcpSolution> {
    check_dim(config.state_box.dim(), x0.len())?;
    check_dim(model.state_dim(), x0.len())?;
    check_dim(model.input_dim(), config.input_box.dim())?;
    if !config.state_box.contains(x0) {
        return Err(Error::InvalidArgument(format!("initial state {x0:?} outside the state box")));
    }
    let prob = Problem {
        model,
        cfg: config,
        boxes: config.tightened_boxes()?,
        x0: x0.to_vec(),
        n: x0.len(),
        m: config.input_box.dim(),
    };
    let mut starts = vec![vec![0.0; prob.nvar()]];
    if let Some(w) = warm_start {
        check_dim(config.horizon, w.len())?;
        starts.push(w.iter().flatten().copied().collect());
    }
    starts.push(terminal_rollout(&prob));
    let solutions: Vec<OcpSolution> = starts
        .par_iter()
        .enumerate()
        .map(|(i, u0)| solve_from(&prob, u0, i))
        .collect();
    let rank = |s: &OcpSolution| (!s.is_feasible(), s.cost);
    let best = solutions
        .into_iter()
        .reduce(|a, b| if rank(&b) < rank(&a) { b } else { a })
        .expect("at least one start");
    Ok(best)
}

/// Receding-horizon controller holding the shifted warm start.
pub struct MpcController<M: DifferentiableDynamics> {
    pub model: M,
    pub config: MpcConfig,
    warm: Option<Vec<Vec<f64>>>,
}

impl<M: DifferentiableDynamics> MpcController<M> {
    pub fn new(model: M, config: MpcConfig) -> Result<Self> {
        config.validate()?;
        check_dim(config.state_box.dim(), model.state_dim())?;
        check_dim(config.input_box.dim(), model.input_dim())?;
        Ok(MpcController { model, config, warm: None })
    }

    pub fn warm_start(&self) -> Option<&[Vec<f64>]> {
        self.warm.as_deref()
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// First optimal input; on success the warm start becomes `(u*_1, ..., u*_{N-1}, K x*(N))`.
    pub fn feedback(&mut self, x: &[f64]) -> Result<(Vec<f64>, OcpSolution)> {
        let sol = solve_ocp(&self.model, &self.config, x, self.warm.as_deref())?;
        if sol.is_feasible() {
            self.warm = Some(shifted_sequence(&sol, &self.config.terminal));
        }
        Ok((sol.inputs[0].clone(), sol))
    }
}

/// `(u*_1, ..., u*_{N-1}, mu(x*(N)))`.
pub fn shifted_sequence(sol: &OcpSolution, terminal: &TerminalIngredients) -> Vec<Vec<f64>> {
    let mut u: Vec<Vec<f64>> = sol.inputs[1..].to_vec();
    u.push(terminal.control(sol.states.last().expect("nonempty prediction")));
    u
}

/// Predicted states of an input sequence, `x(0) = x0`.
pub fn predict_sequence(model: &dyn DifferentiableDynamics, x0: &[f64], inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut xs = vec![x0.to_vec()];
    for u in inputs {
        let next = model.step(xs.last().expect("nonempty"), u);
        xs.push(next);
    }
    xs
}

/// Constraint check of a given sequence: largest violation among inputs, tightened boxes and the terminal level.
pub fn sequence_violation(model: &dyn DifferentiableDynamics, config: &MpcConfig, x0: &[f64], inputs: &[Vec<f64>]) -> Result<f64> {
    let boxes = config.tightened_boxes()?;
    let xs = predict_sequence(model, x0, inputs);
    let mut v: f64 = 0.0;
    for u in inputs {
        v = v.max(-config.input_box.margin(u));
    }
    for (k, b) in boxes.iter().enumerate() {
        v = v.max(-b.margin(&xs[k + 1]));
    }
    v = v.max(config.terminal.cost(&xs[config.horizon]) / config.terminal.c - 1.0);
    Ok(v)
}

/// Cost `J_N` of a sequence along the model.
pub fn sequence_cost(model: &dyn DifferentiableDynamics, config: &MpcConfig, x0: &[f64], inputs: &[Vec<f64>]) -> f64 {
    let xs = predict_sequence(model, x0, inputs);
    let mut j = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        j += config.stage_cost(&xs[k], u);
    }
    j + config.terminal.cost(&xs[inputs.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::LinearPlant;
    use approx::assert_abs_diff_eq;

    fn linear_setup(c: f64) -> (LinearPlant, MpcConfig) {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let lin = LinearPlant::new(a.clone(), b.clone()).with_boxes(
            AxisBox::symmetric(2, 10.0),
            AxisBox::symmetric(2, 10.0),
            AxisBox::symmetric(1, 100.0),
        );
        let p = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]);
        let cfg = MpcConfig {
            horizon: 2,
            q: DMatrix::identity(2, 2),
            r: DMatrix::from_element(1, 1, 0.1),
            state_box: lin.state_box.clone(),
            input_box: lin.input_box.clone(),
            eta: 0.0,
            lbar: 1.0,
            terminal: TerminalIngredients {
                a,
                b,
                k: DMatrix::from_row_slice(1, 2, &[-1.0, -1.5]),
                p,
                beta: 1.5,
                c,
                seed: 0,
                samples: 0,
                offset_corrected: false,
            },
            solver: SolverSettings::default(),
        };
        (lin, cfg)
    }

    #[test]
    fn origin_is_optimal_at_origin() {
        let (lin, cfg) = linear_setup(1e3);
        let sol = solve_ocp(&lin, &cfg, &[0.0, 0.0], None).unwrap();
        assert_eq!(sol.status, OcpStatus::Optimal);
        assert_eq!(sol.cost, 0.0);
        assert!(sol.inputs.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn unconstrained_linear_matches_batch_least_squares() {
        let (lin, cfg) = linear_setup(1e6);
        let x0 = [0.8, -0.3];
        let sol = solve_ocp(&lin, &cfg, &x0, None).unwrap();
        assert_eq!(sol.status, OcpStatus::Optimal);
        // x1 = A x0 + B u0, x2 = A^2 x0 + A B u0 + B u1
        let a = &cfg.terminal.a;
        let b = &cfg.terminal.b;
        let x0v = nalgebra::DVector::from_column_slice(&x0);
        let mut phi = DMatrix::zeros(4, 2);
        phi.view_mut((0, 0), (2, 1)).copy_from(b);
        phi.view_mut((2, 0), (2, 1)).copy_from(&(a * b));
        phi.view_mut((2, 1), (2, 1)).copy_from(b);
        let mut free = nalgebra::DVector::zeros(4);
        free.rows_mut(0, 2).copy_from(&(a * &x0v));
        free.rows_mut(2, 2).copy_from(&(a * a * &x0v));
        let mut w = DMatrix::zeros(4, 4);
        w.view_mut((0, 0), (2, 2)).copy_from(&cfg.q);
        w.view_mut((2, 2), (2, 2)).copy_from(&cfg.terminal.p);
        let h = phi.transpose() * &w * &phi + DMatrix::identity(2, 2) * 0.1;
        let rhs = -(phi.transpose() * &w * free);
        let u = h.lu().solve(&rhs).unwrap();
        assert_abs_diff_eq!(sol.inputs[0][0], u[0], epsilon = 1e-6);
        assert_abs_diff_eq!(sol.inputs[1][0], u[1], epsilon = 1e-6);
        assert!(sol.states[2].iter().zip(&predict_sequence(&lin, &x0, &sol.inputs)[2]).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn terminal_constraint_binds() {
        let (lin, cfg) = linear_setup(0.05);
        let x0 = [0.8, -0.3];
        let sol = solve_ocp(&lin, &cfg, &x0, None).unwrap();
        assert!(sol.is_feasible(), "{sol:?}");
        assert!(sol.max_violation <= 1e-8);
        let vf = cfg.terminal.cost(&sol.states[2]);
        assert_abs_diff_eq!(vf, 0.05, epsilon = 1e-7);
        assert!(sol.active.iter().any(|a| a.starts_with("terminal")));
    }

    #[test]
    fn unreachable_terminal_set_is_infeasible() {
        let (lin, mut cfg) = linear_setup(1e-6);
        cfg.input_box = AxisBox::symmetric(1, 0.01);
        let sol = solve_ocp(&lin, &cfg, &[5.0, 5.0], None).unwrap();
        assert_eq!(sol.status, OcpStatus::Infeasible);
        assert!(sol.violated.as_deref().unwrap().starts_with("terminal"));
    }

    #[test]
    fn warm_start_gives_same_minimizer() {
        let (lin, cfg) = linear_setup(1e6);
        let x0 = [0.5, 0.5];
        let cold = solve_ocp(&lin, &cfg, &x0, None).unwrap();
        let warm = solve_ocp(&lin, &cfg, &x0, Some(&[vec![1.0], vec![-3.0]])).unwrap();
        for (a, b) in cold.inputs.iter().zip(&warm.inputs) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-6);
        }
    }
}
