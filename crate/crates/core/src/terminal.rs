//! Terminal ingredients from the surrogate linearization at the origin:
//! gain `K`, quadratic terminal cost `x^T P x` and a validated level `c`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{fd_state_jacobian, ORIGIN_TOLERANCE};
use crate::error::{check_dim, Error, Result};
use crate::plant::Dynamics;
use crate::points::norm;
use crate::sets::AxisBox;
use crate::tightening::cbar;

const DARE_TOL: f64 = 1e-12;
const DARE_MAX_ITER: usize = 100_000;
const SHRINK: f64 = 0.8;
const MAX_SHRINKS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalIngredients {
    #[serde(rename = "A", with = "crate::matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "crate::matrix_serde")]
    pub b: DMatrix<f64>,
    #[serde(rename = "K", with = "crate::matrix_serde")]
    pub k: DMatrix<f64>,
    #[serde(rename = "P", with = "crate::matrix_serde")]
    pub p: DMatrix<f64>,
    pub beta: f64,
    pub c: f64,
    pub seed: u64,
    pub samples: usize,
    /// The decrease was validated for `f_eps(x, u) - f_eps(0, 0)` because the model moves the origin.
    #[serde(default)]
    pub offset_corrected: bool,
}

impl TerminalIngredients {
    pub fn cost(&self, x: &[f64]) -> f64 {
        quad(&self.p, x)
    }

    pub fn control(&self, x: &[f64]) -> Vec<f64> {
        (&self.k * DVector::from_column_slice(x)).iter().copied().collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.cost(x) <= self.c
    }
}

/// `V_f(x) = x^T P x`.
pub fn terminal_cost(ing: &TerminalIngredients, x: &[f64]) -> f64 {
    ing.cost(x)
}

/// `mu(x) = K x`.
pub fn terminal_controller(ing: &TerminalIngredients, x: &[f64]) -> Vec<f64> {
    ing.control(x)
}

pub fn quad(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += x[i] * m[(i, j)] * x[j];
        }
    }
    s
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().max()
}

/// Stabilizing solution of the discrete algebraic Riccati equation by value iteration from `P = Q`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_dim(n, a.ncols())?;
    check_dim(n, b.nrows())?;
    check_dim(b.ncols(), r.nrows())?;
    let mut p = q.clone();
    for _ in 0..DARE_MAX_ITER {
        let next = riccati_step(a, b, q, r, &p)?;
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= DARE_TOL * p.norm().max(f64::MIN_POSITIVE) {
            return Ok(p);
        }
    }
    Err(Error::NotStabilizable("Riccati iteration did not converge".into()))
}

fn riccati_step(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let btp = b.transpose() * p;
    let s = r + &btp * b;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::NotStabilizable("R + B^T P B is not positive definite".into()))?;
    let gain = chol.solve(&(&btp * a));
    let next = q + a.transpose() * p * a - a.transpose() * btp.transpose() * gain;
    Ok(symmetrize(&next))
}

/// `K = -(R + B^T P B)^-1 B^T P A` with `P` from [`solve_dare`]; `A + B K` is checked to be Schur.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_dare(a, b, q, r)?;
    let btp = b.transpose() * &p;
    let s = r + &btp * b;
    let k = -s
        .cholesky()
        .ok_or_else(|| Error::NotStabilizable("R + B^T P B is not positive definite".into()))?
        .solve(&(&btp * a));
    let rho = spectral_radius(&(a + b * &k));
    if !(rho < 1.0 - 1e-9) {
        return Err(Error::NotStabilizable(format!("closed-loop spectral radius {rho}")));
    }
    Ok(k)
}

/// Solves `A_cl^T P A_cl - P = -beta (Q + K^T R K)` through the vectorized `n^2` system.
pub fn solve_terminal_p(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    beta: f64,
) -> Result<DMatrix<f64>> {
    if !(beta > 1.0) {
        return Err(Error::InvalidArgument(format!("beta must exceed 1, got {beta}")));
    }
    let n = a.nrows();
    let acl = a + b * k;
    let rhs = (q + k.transpose() * r * k) * beta;
    let act = acl.transpose();
    let lhs = act.kronecker(&act) - DMatrix::identity(n * n, n * n);
    let vec_rhs = DVector::from_column_slice((-rhs).as_slice());
    let lu = lhs.lu();
    let sol = lu
        .solve(&vec_rhs)
        .ok_or_else(|| Error::LyapunovFailed("singular Kronecker system".into()))?;
    let p = symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice()));
    if p.clone().cholesky().is_none() {
        return Err(Error::LyapunovFailed("solution is not positive definite".into()));
    }
    Ok(p)
}

/// Relative Frobenius residual of the Lyapunov equality.
pub fn lyapunov_equality_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    beta: f64,
) -> f64 {
    let acl = a + b * k;
    let m = acl.transpose() * p * &acl - p + (q + k.transpose() * r * k) * beta;
    m.norm() / p.norm()
}

/// Largest eigenvalue of `A_cl^T P A_cl - P + beta (Q + K^T R K)`.
pub fn lyapunov_inequality_max_eig(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    beta: f64,
) -> f64 {
    let acl = a + b * k;
    max_sym_eigenvalue(&(acl.transpose() * p * &acl - p + (q + k.transpose() * r * k) * beta))
}

/// `A = df/dx(0,0)` by central differences and `B` from the exact affine input response.
pub fn linearize(model: &dyn Dynamics) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let m = model.input_dim();
    let zx = vec![0.0; n];
    let zu = vec![0.0; m];
    let a = fd_state_jacobian(model, &zx, &zu);
    let f0 = model.step(&zx, &zu);
    let mut b = DMatrix::zeros(n, m);
    for k in 0..m {
        let mut e = zu.clone();
        e[k] = 1.0;
        let fk = model.step(&zx, &e);
        for i in 0..n {
            b[(i, k)] = fk[i] - f0[i];
        }
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminalConfig {
    pub beta: f64,
    /// Input weight used only for the LQR gain; the stage cost keeps its own `R`.
    pub gain_input_weight: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for TerminalConfig {
    fn default() -> Self {
        TerminalConfig { beta: 1.5, gain_input_weight: 1.0, samples: 10_000, seed: 0 }
    }
}

/// Sampled checks at one level; counts of each failure kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub samples: usize,
    pub containment_violations: usize,
    pub input_violations: usize,
    pub decrease_violations: usize,
    pub invariance_violations: usize,
    /// Largest `V_f(f(x, Kx)) - V_f(x) + l(x, Kx)` seen.
    pub worst_decrease: f64,
}

impl LevelCheck {
    pub fn passed(&self) -> bool {
        self.containment_violations == 0 && self.input_violations == 0 && self.decrease_violations == 0
    }
}

/// Samples split evenly between the `P`-ellipsoid boundary and its interior, for unit level.
pub fn unit_level_samples(p: &DMatrix<f64>, samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = p.nrows();
    let chol = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("P must be positive definite".into()))?;
    let lt = chol.l().transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples {
        let mut z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zn = z.norm();
        if zn == 0.0 {
            z[0] = 1.0;
        } else {
            z /= zn;
        }
        let radius = if i % 2 == 0 { 1.0 } else { rng.random::<f64>().powf(1.0 / n as f64) };
        // x = L^-T z gives x^T P x = |z|^2.
        let x = lt
            .solve_upper_triangular(&(z * radius))
            .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?;
        out.push(x.iter().copied().collect());
    }
    Ok(out)
}

/// Checks containment, input admissibility and the decrease on samples scaled to level `c`.
#[allow(clippy::too_many_arguments)]
pub fn check_level(
    model: &dyn Dynamics,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    terminal_box: &AxisBox,
    input_box: &AxisBox,
    c: f64,
    unit_samples: &[Vec<f64>],
    offset: Option<&[f64]>,
) -> LevelCheck {
    let scale = c.sqrt();
    let partial = unit_samples
        .par_iter()
        .map(|s| {
            let x: Vec<f64> = s.iter().map(|v| v * scale).collect();
            let u: Vec<f64> = (k * DVector::from_column_slice(&x)).iter().copied().collect();
            let mut next = model.step(&x, &u);
            if let Some(o) = offset {
                for (v, o) in next.iter_mut().zip(o) {
                    *v -= o;
                }
            }
            let vx = quad(p, &x);
            let vn = quad(p, &next);
            let stage = quad(q, &x) + quad(r, &u);
            let slack = vn - vx + stage;
            LevelCheck {
                samples: 1,
                containment_violations: usize::from(!terminal_box.contains(&x)),
                input_violations: usize::from(!input_box.contains(&u)),
                decrease_violations: usize::from(slack > 0.0),
                invariance_violations: usize::from(vn > c),
                worst_decrease: slack,
            }
        })
        .reduce(
            || LevelCheck { worst_decrease: f64::NEG_INFINITY, ..Default::default() },
            |a, b| LevelCheck {
                samples: a.samples + b.samples,
                containment_violations: a.containment_violations + b.containment_violations,
                input_violations: a.input_violations + b.input_violations,
                decrease_violations: a.decrease_violations + b.decrease_violations,
                invariance_violations: a.invariance_violations + b.invariance_violations,
                worst_decrease: a.worst_decrease.max(b.worst_decrease),
            },
        );
    partial
}

/// Largest level whose ellipsoid fits the box and maps into the input box under `K`.
pub fn initial_level(p: &DMatrix<f64>, k: &DMatrix<f64>, terminal_box: &AxisBox, input_box: &AxisBox) -> Result<f64> {
    let pinv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("P is singular".into()))?;
    let mut c = f64::INFINITY;
    for i in 0..p.nrows() {
        let reach = (-terminal_box.lo[i]).min(terminal_box.hi[i]);
        if reach <= 0.0 {
            return Err(Error::TerminalSetCollapsed("terminal box does not contain the origin in its interior".into()));
        }
        c = c.min(reach * reach / pinv[(i, i)]);
    }
    let kpk = k * &pinv * k.transpose();
    for j in 0..k.nrows() {
        let reach = (-input_box.lo[j]).min(input_box.hi[j]);
        if kpk[(j, j)] > 0.0 {
            c = c.min(reach * reach / kpk[(j, j)]);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c0: f64,
    pub c: f64,
    pub shrinks: usize,
    pub check: LevelCheck,
}

/// Shrinks `c` geometrically from the closed-form containment level until all sampled checks pass.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_level_c(
    model: &dyn Dynamics,
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    state_box: &AxisBox,
    input_box: &AxisBox,
    eta: f64,
    lbar: f64,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<Calibration> {
    let radius = cbar(horizon, lbar)? * eta;
    let terminal_box = state_box
        .tightened(radius)
        .ok_or_else(|| Error::TerminalSetCollapsed(format!("tightened terminal box empty at N={horizon}")))?;
    let c0 = initial_level(p, k, &terminal_box, input_box)?;
    let units = unit_level_samples(p, samples, seed)?;
    let offset = origin_offset(model);
    let mut c = c0;
    for shrinks in 0..=MAX_SHRINKS {
        let check = check_level(model, k, p, q, r, &terminal_box, input_box, c, &units, offset.as_deref());
        if check.passed() {
            return Ok(Calibration { c0, c, shrinks, check });
        }
        c *= SHRINK;
    }
    Err(Error::TerminalSetCollapsed(format!("no admissible level after {MAX_SHRINKS} shrinks from {c0:.3e}")))
}

/// `f_eps(0, 0)` when it exceeds the origin tolerance.
pub fn origin_offset(model: &dyn Dynamics) -> Option<Vec<f64>> {
    let f0 = model.step(&vec![0.0; model.state_dim()], &vec![0.0; model.input_dim()]);
    (norm(&f0) > ORIGIN_TOLERANCE).then_some(f0)
}

/// Full design: linearize, LQR gain, Lyapunov `P`, calibrated level.
#[allow(clippy::too_many_arguments)]
pub fn design_terminal(
    model: &dyn Dynamics,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    state_box: &AxisBox,
    input_box: &AxisBox,
    eta: f64,
    lbar: f64,
    horizon: usize,
    config: &TerminalConfig,
) -> Result<(TerminalIngredients, Calibration)> {
    let (a, b) = linearize(model);
    let m = b.ncols();
    let rk = DMatrix::identity(m, m) * config.gain_input_weight;
    let k = lqr_gain(&a, &b, q, &rk)?;
    let p = solve_terminal_p(&a, &b, &k, q, r, config.beta)?;
    let cal = calibrate_level_c(
        model, &k, &p, q, r, state_box, input_box, eta, lbar, horizon, config.samples, config.seed,
    )?;
    let ing = TerminalIngredients {
        a,
        b,
        k,
        p,
        beta: config.beta,
        c: cal.c,
        seed: config.seed,
        samples: config.samples,
        offset_corrected: origin_offset(model).is_some(),
    };
    Ok((ing, cal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::LinearPlant;
    use approx::assert_abs_diff_eq;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_dynamics_need_no_feedback() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::identity(2, 2);
        let k = lqr_gain(&a, &b, &q, &m1(1.0)).unwrap();
        assert_eq!(k, DMatrix::zeros(1, 2));
        assert_eq!(solve_dare(&a, &b, &q, &m1(1.0)).unwrap(), q);
    }

    #[test]
    fn scalar_cheap_control_is_deadbeat() {
        let k = lqr_gain(&m1(2.0), &m1(1.0), &m1(1.0), &m1(1e-9)).unwrap();
        assert_abs_diff_eq!(k[(0, 0)], -2.0, epsilon = 1e-6);
    }

    #[test]
    fn riccati_fixed_point_is_stationary() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.05, -0.05, 1.005]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 0.05]);
        let q = DMatrix::identity(2, 2);
        let p = solve_dare(&a, &b, &q, &m1(1.0)).unwrap();
        let again = riccati_step(&a, &b, &q, &m1(1.0), &p).unwrap();
        assert!((&again - &p).norm() <= 1e-10 * p.norm());
        let k = lqr_gain(&a, &b, &q, &m1(1.0)).unwrap();
        assert!(spectral_radius(&(&a + &b * &k)) < 1.0);
    }

    #[test]
    fn lyapunov_examples() {
        let q = m1(1.0);
        let r = m1(1.0);
        // a_cl = 0.5 with k = 0
        let p = solve_terminal_p(&m1(0.5), &m1(1.0), &m1(0.0), &q, &r, 2.0).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 2.0 / 0.75, epsilon = 1e-12);
        // nilpotent closed loop
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let k = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let q2 = DMatrix::identity(2, 2);
        let p2 = solve_terminal_p(&DMatrix::zeros(2, 2), &b, &k, &q2, &r, 1.5).unwrap();
        assert!((p2 - &q2 * 1.5).norm() < 1e-14);
        let p3 = solve_terminal_p(&(a * 0.3), &b, &k, &q2, &r, 1.5).unwrap();
        assert!(lyapunov_equality_residual(&(DMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.0, 0.0])), &b, &k, &p3, &q2, &r, 1.5) <= 1e-10);
    }

    #[test]
    fn terminal_cost_and_controller() {
        let ing = TerminalIngredients {
            a: DMatrix::identity(2, 2),
            b: DMatrix::zeros(2, 1),
            k: DMatrix::from_row_slice(1, 2, &[-1.0, -2.0]),
            p: DMatrix::identity(2, 2),
            beta: 1.5,
            c: 1.0,
            seed: 0,
            samples: 0,
            offset_corrected: false,
        };
        assert_eq!(terminal_cost(&ing, &[0.0, 0.0]), 0.0);
        assert_eq!(terminal_controller(&ing, &[0.0, 0.0]), vec![0.0]);
        assert_eq!(terminal_cost(&ing, &[3.0, 4.0]), 25.0);
        assert_abs_diff_eq!(terminal_cost(&ing, &[0.6, 0.8]), 0.25 * terminal_cost(&ing, &[1.2, 1.6]), epsilon = 1e-15);
    }

    #[test]
    fn linear_model_keeps_first_level() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.005, 0.1]);
        let lin = LinearPlant::new(a, b).with_boxes(
            AxisBox::symmetric(2, 1.0),
            AxisBox::symmetric(2, 1.0),
            AxisBox::symmetric(1, 1e6),
        );
        let q = DMatrix::identity(2, 2);
        let r = m1(0.1);
        let cfg = TerminalConfig { beta: 1.01, gain_input_weight: 0.1, samples: 2000, seed: 3 };
        let (ing, cal) = design_terminal(&lin, &q, &r, &lin.state_box, &lin.input_box, 0.0, 1.0, 1, &cfg).unwrap();
        assert_eq!(cal.shrinks, 0);
        assert_eq!(ing.c, cal.c0);
        assert_eq!(cal.check.invariance_violations, 0);
        // a larger tightening radius never enlarges the level
        let (ing2, _) = design_terminal(&lin, &q, &r, &lin.state_box, &lin.input_box, 0.3, 1.0, 1, &cfg).unwrap();
        assert!(ing2.c <= ing.c);
    }
}
