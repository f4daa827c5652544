//! Empirical model-error certificates: uniform bound `eta`, proportional
//! slopes `(c_x, c_u)` and the surrogate Lipschitz constant `L`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::plant::Dynamics;
use crate::points::{dist, norm};
use crate::sets::AxisBox;

/// Errors at the origin above this level disqualify the proportional bound.
pub const ORIGIN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundsConfig {
    pub state_steps: usize,
    pub input_steps: usize,
    pub margin: f64,
    pub heldout_state_cells: usize,
    pub heldout_input_cells: usize,
    pub secant_pairs: usize,
    pub seed: u64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            state_steps: 41,
            input_steps: 9,
            margin: 0.05,
            heldout_state_cells: 50,
            heldout_input_cells: 10,
            secant_pairs: 10_000,
            seed: 0,
        }
    }
}

/// Held-out check of `e <= min(c_x |x| + c_u |u|, eta)` on a cell-centre grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutReport {
    pub points: usize,
    pub violations: usize,
    pub violation_rate: f64,
    /// Largest `(e - bound) / eta`, zero when nothing is violated.
    pub max_overshoot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedBounds {
    pub eta: f64,
    /// `None` when the model does not vanish at the origin.
    pub c_x: Option<f64>,
    pub c_u: Option<f64>,
    pub lbar: f64,
    pub lipschitz_jacobian: f64,
    pub lipschitz_secant: f64,
    pub origin_error: f64,
    pub state_box: AxisBox,
    pub input_box: AxisBox,
    pub config: BoundsConfig,
    pub heldout: Option<HeldOutReport>,
}

impl CertifiedBounds {
    /// Bounds with prescribed `eta` and `L` and no proportional part.
    pub fn prescribed(eta: f64, lbar: f64, state_box: AxisBox, input_box: AxisBox) -> Self {
        CertifiedBounds {
            eta,
            c_x: None,
            c_u: None,
            lbar,
            lipschitz_jacobian: lbar,
            lipschitz_secant: lbar,
            origin_error: 0.0,
            state_box,
            input_box,
            config: BoundsConfig::default(),
            heldout: None,
        }
    }

    pub fn is_proportional(&self) -> bool {
        self.c_x.is_some()
    }

    /// `min(c_x |x| + c_u |u|, eta)`, or `eta` without a proportional part.
    pub fn bound_at(&self, x: &[f64], u: &[f64]) -> f64 {
        match (self.c_x, self.c_u) {
            (Some(cx), Some(cu)) => (cx * norm(x) + cu * norm(u)).min(self.eta),
            _ => self.eta,
        }
    }
}

/// One point of an error evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub error: f64,
}

fn product_grid(state: &[Vec<f64>], input: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    state
        .iter()
        .flat_map(|x| input.iter().map(move |u| (x.clone(), u.clone())))
        .collect()
}

fn evaluate(plant: &dyn Dynamics, model: &dyn Dynamics, grid: Vec<(Vec<f64>, Vec<f64>)>) -> Vec<ErrorSample> {
    grid.into_par_iter()
        .map(|(x, u)| {
            let error = dist(&plant.step(&x, &u), &model.step(&x, &u));
            ErrorSample { x, u, error }
        })
        .collect()
}

fn check_boxes(plant: &dyn Dynamics, model: &dyn Dynamics, state: &AxisBox, input: &AxisBox) -> Result<()> {
    check_dim(plant.state_dim(), model.state_dim())?;
    check_dim(plant.input_dim(), model.input_dim())?;
    check_dim(plant.state_dim(), state.dim())?;
    check_dim(plant.input_dim(), input.dim())
}

/// Errors `|f(x,u) - f_eps(x,u)|` on the endpoint grid of `state x input`.
pub fn error_grid(
    plant: &dyn Dynamics,
    model: &dyn Dynamics,
    state: &AxisBox,
    input: &AxisBox,
    state_steps: usize,
    input_steps: usize,
) -> Result<Vec<ErrorSample>> {
    check_boxes(plant, model, state, input)?;
    if state_steps < 2 || input_steps < 2 {
        return Err(Error::InvalidArgument("bound grids need at least 2 points per axis".into()));
    }
    Ok(evaluate(plant, model, product_grid(&state.grid(state_steps), &input.grid(input_steps))))
}

pub fn max_error(samples: &[ErrorSample]) -> f64 {
    samples.iter().map(|s| s.error).fold(0.0, f64::max)
}

/// `(1 + margin)` times the largest grid error.
pub fn estimate_uniform_bound(
    plant: &dyn Dynamics,
    model: &dyn Dynamics,
    state: &AxisBox,
    input: &AxisBox,
    state_steps: usize,
    input_steps: usize,
    margin: f64,
) -> Result<f64> {
    let samples = error_grid(plant, model, state, input, state_steps, input_steps)?;
    Ok((1.0 + margin) * max_error(&samples))
}

/// Minimizes `c_x + c_u` subject to `e_j <= c_x |x_j| + c_u |u_j|` over the samples.
///
/// The feasible set is `c_u >= g(c_x)` with `g` the upper envelope of the lines
/// `(e_j - c_x a_j) / b_j`, so `c_x + g(c_x)` is convex piecewise linear. Its
/// minimizer is located by bisection on the one-sided slope and then snapped to
/// the exact vertex among the breakpoints adjacent to the final bracket.
pub fn proportional_constants(samples: &[ErrorSample]) -> Result<(f64, f64)> {
    let mut lines = Vec::with_capacity(samples.len());
    let mut cx_floor: f64 = 0.0;
    for s in samples {
        let a = norm(&s.x);
        let b = norm(&s.u);
        if a == 0.0 && b == 0.0 {
            if s.error > ORIGIN_TOLERANCE {
                return Err(Error::NotProportional { error: s.error });
            }
            continue;
        }
        if s.error <= 0.0 {
            continue;
        }
        if b == 0.0 {
            cx_floor = cx_floor.max(s.error / a);
        } else {
            lines.push((s.error, a, b));
        }
    }
    if lines.is_empty() {
        return Ok((cx_floor, 0.0));
    }
    // Active value and index of the envelope at cx; ties resolve towards the flatter line.
    let envelope = |cx: f64| -> (f64, Option<usize>) {
        let mut best = 0.0;
        let mut arg = None;
        for (j, &(e, a, b)) in lines.iter().enumerate() {
            let v = (e - cx * a) / b;
            let better = match arg {
                None => v > best,
                Some(k) => {
                    let (_, ak, bk) = lines[k];
                    v > best || (v == best && a / b < ak / bk)
                }
            };
            if better {
                best = v;
                arg = Some(j);
            }
        }
        (best, arg)
    };
    let slope = |cx: f64| -> f64 {
        match envelope(cx).1 {
            Some(j) => 1.0 - lines[j].1 / lines[j].2,
            None => 1.0,
        }
    };
    let objective = |cx: f64| cx + envelope(cx).0;

    let mut lo = cx_floor;
    if slope(lo) >= 0.0 {
        return Ok((lo, envelope(lo).0));
    }
    let mut hi = lines
        .iter()
        .filter(|l| l.1 > 0.0)
        .map(|&(e, a, _)| e / a)
        .fold(cx_floor, f64::max)
        .max(cx_floor)
        * 2.0
        + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut candidates = vec![lo, hi];
    let (_, jl) = envelope(lo);
    let (_, jh) = envelope(hi);
    for j in [jl, jh].into_iter().flatten() {
        let (e, a, _) = lines[j];
        if a > 0.0 {
            candidates.push(e / a);
        }
    }
    if let (Some(p), Some(q)) = (jl, jh) {
        let (ep, ap, bp) = lines[p];
        let (eq, aq, bq) = lines[q];
        let den = ap / bp - aq / bq;
        if den != 0.0 {
            candidates.push((ep / bp - eq / bq) / den);
        }
    }
    let cx = candidates
        .into_iter()
        .filter(|c| c.is_finite() && *c >= cx_floor)
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap_or(lo);
    let cu = envelope(cx).0;
    // Rounding in the envelope can leave a constraint violated by a few ulps.
    let slack = 1.0 + 1e-12;
    Ok((cx * slack, cu * slack))
}

/// Grid estimate of `(c_x, c_u)`.
pub fn estimate_proportional_constants(
    plant: &dyn Dynamics,
    model: &dyn Dynamics,
    state: &AxisBox,
    input: &AxisBox,
    state_steps: usize,
    input_steps: usize,
) -> Result<(f64, f64)> {
    proportional_constants(&error_grid(plant, model, state, input, state_steps, input_steps)?)
}

/// Central-difference state Jacobian of any map.
pub fn fd_state_jacobian(map: &dyn Dynamics, x: &[f64], u: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h = 1e-6 * norm(x).max(1.0);
    let mut a = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let fp = map.step(&xp, u);
        xp[j] = x[j] - h;
        let fm = map.step(&xp, u);
        xp[j] = x[j];
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    a
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub jacobian: f64,
    pub secant: f64,
    /// `max((1 + margin) jacobian, secant)`.
    pub lbar: f64,
}

/// Lipschitz constant in `x`, uniformly over the input grid.
pub fn estimate_lipschitz(
    model: &dyn Dynamics,
    state: &AxisBox,
    input: &AxisBox,
    state_steps: usize,
    input_steps: usize,
    margin: f64,
    secant_pairs: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    check_dim(model.state_dim(), state.dim())?;
    check_dim(model.input_dim(), input.dim())?;
    let grid = product_grid(&state.grid(state_steps), &input.grid(input_steps));
    let jacobian = grid
        .par_iter()
        .map(|(x, u)| spectral_norm(&fd_state_jacobian(model, x, u)))
        .reduce(|| 0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, b: &AxisBox| -> Vec<f64> {
        b.lo.iter().zip(&b.hi).map(|(l, h)| if l < h { rng.random_range(*l..*h) } else { *l }).collect()
    };
    let pairs: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..secant_pairs)
        .map(|_| (draw(&mut rng, state), draw(&mut rng, state), draw(&mut rng, input)))
        .collect();
    let secant = pairs
        .par_iter()
        .map(|(x, y, u)| {
            let dxy = dist(x, y);
            if dxy == 0.0 {
                0.0
            } else {
                dist(&model.step(x, u), &model.step(y, u)) / dxy
            }
        })
        .reduce(|| 0.0, f64::max);
    Ok(LipschitzEstimate { jacobian, secant, lbar: ((1.0 + margin) * jacobian).max(secant) })
}

/// Checks a certificate on the cell-centre grid, which interleaves the estimation grid.
pub fn validate_heldout(
    plant: &dyn Dynamics,
    model: &dyn Dynamics,
    bounds: &CertifiedBounds,
    state_cells: usize,
    input_cells: usize,
) -> Result<(HeldOutReport, Vec<ErrorSample>)> {
    check_boxes(plant, model, &bounds.state_box, &bounds.input_box)?;
    let grid = product_grid(&bounds.state_box.cell_centres(state_cells), &bounds.input_box.cell_centres(input_cells));
    let samples = evaluate(plant, model, grid);
    let mut violations = 0;
    let mut max_overshoot: f64 = 0.0;
    for s in &samples {
        let bound = bounds.bound_at(&s.x, &s.u);
        if s.error > bound {
            violations += 1;
            max_overshoot = max_overshoot.max((s.error - bound) / bounds.eta);
        }
    }
    let points = samples.len();
    let report = HeldOutReport {
        points,
        violations,
        violation_rate: violations as f64 / points.max(1) as f64,
        max_overshoot,
    };
    Ok((report, samples))
}

/// Runs all estimators. A model that does not vanish at the origin gets no proportional part.
pub fn certify(
    plant: &dyn Dynamics,
    model: &dyn Dynamics,
    state: &AxisBox,
    input: &AxisBox,
    config: &BoundsConfig,
) -> Result<CertifiedBounds> {
    let samples = error_grid(plant, model, state, input, config.state_steps, config.input_steps)?;
    let eta = (1.0 + config.margin) * max_error(&samples);
    let zero_x = vec![0.0; plant.state_dim()];
    let zero_u = vec![0.0; plant.input_dim()];
    let origin_error = dist(&plant.step(&zero_x, &zero_u), &model.step(&zero_x, &zero_u));
    let (c_x, c_u) = match proportional_constants(&samples) {
        Ok((cx, cu)) if origin_error <= ORIGIN_TOLERANCE => (Some(cx), Some(cu)),
        Ok(_) | Err(Error::NotProportional { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    let lip = estimate_lipschitz(
        model,
        state,
        input,
        config.state_steps,
        config.input_steps,
        config.margin,
        config.secant_pairs,
        config.seed,
    )?;
    let mut bounds = CertifiedBounds {
        eta,
        c_x,
        c_u,
        lbar: lip.lbar,
        lipschitz_jacobian: lip.jacobian,
        lipschitz_secant: lip.secant,
        origin_error,
        state_box: state.clone(),
        input_box: input.clone(),
        config: *config,
        heldout: None,
    };
    let (report, _) = validate_heldout(plant, model, &bounds, config.heldout_state_cells, config.heldout_input_cells)?;
    bounds.heldout = Some(report);
    Ok(bounds)
}

/// Verification report with columns `x1..xn,u1..um,error,bound`.
pub fn write_verification_csv<W: Write>(out: W, samples: &[ErrorSample], bounds: &CertifiedBounds) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(s) = samples.first() {
        let mut header: Vec<String> = (1..=s.x.len()).map(|i| format!("x{i}")).collect();
        header.extend((1..=s.u.len()).map(|i| format!("u{i}")));
        header.push("error".into());
        header.push("bound".into());
        w.write_record(&header)?;
    }
    for s in samples {
        let mut rec: Vec<String> = s.x.iter().chain(&s.u).map(|v| v.to_string()).collect();
        rec.push(s.error.to_string());
        rec.push(bounds.bound_at(&s.x, &s.u).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
