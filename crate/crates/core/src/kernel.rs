//! Wendland radial basis kernels, kernel matrices and their factorization.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::points::{dist, Points};

/// Number of jitter escalations attempted before a kernel matrix is declared singular.
const JITTER_RETRIES: usize = 3;
const JITTER_GROWTH: f64 = 100.0;

/// Parameters of a compactly supported Wendland kernel `k(x, y) = phi(|x - y| / sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub dim: usize,
    pub smoothness: u32,
    pub support_radius: f64,
    /// Diagonal regularization relative to the mean diagonal of the kernel matrix.
    pub jitter: f64,
}

impl KernelSpec {
    pub fn new(dim: usize) -> Self {
        KernelSpec { dim, smoothness: 1, support_radius: 1.0, jitter: 1e-10 }
    }

    pub fn with_support_radius(mut self, sigma: f64) -> Self {
        self.support_radius = sigma;
        self
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("kernel dimension must be >= 1".into()));
        }
        if self.smoothness != 1 {
            return Err(Error::UnsupportedKernelOrder(self.smoothness));
        }
        if !(self.support_radius > 0.0) || !self.support_radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "support radius must be positive, got {}",
                self.support_radius
            )));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {}", self.jitter)));
        }
        Ok(())
    }

    /// Kernel value at zero distance.
    pub fn peak(&self) -> f64 {
        0.05
    }

    #[inline]
    fn phi_unchecked(&self, r: f64) -> f64 {
        let s = r / self.support_radius;
        if s >= 1.0 {
            0.0
        } else {
            let t = 1.0 - s;
            let t2 = t * t;
            0.05 * t2 * t2 * (4.0 * s + 1.0)
        }
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.phi_unchecked(dist(x, y))
    }

    /// `k(x, y) - k(0, y)`, accurate relative to `|x|` when `x` is small.
    ///
    /// Inside the support the difference is `(s_x - s_0)` times the divided
    /// difference of `phi(s) = (1 - 10 s^2 + 20 s^3 - 15 s^4 + 4 s^5) / 20`, and
    /// `s_x - s_0` is formed from `|x|^2 - 2 x.y` instead of subtracting radii.
    #[inline]
    pub(crate) fn diff_from_origin_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let rx = dist(x, y);
        let r0 = crate::points::norm(y);
        let sigma = self.support_radius;
        let (a, b) = (rx / sigma, r0 / sigma);
        if a >= 1.0 || b >= 1.0 {
            return self.phi_unchecked(rx) - self.phi_unchecked(r0);
        }
        let denom = rx + r0;
        if denom == 0.0 {
            return 0.0;
        }
        let num: f64 = x.iter().zip(y).map(|(p, q)| p * (p - 2.0 * q)).sum();
        let ds = num / (denom * sigma);
        let (a2, b2, ab) = (a * a, b * b, a * b);
        let q = -10.0 * (a + b) + 20.0 * (a2 + ab + b2) - 15.0 * (a + b) * (a2 + b2)
            + 4.0 * (a2 * a2 + a2 * ab + a2 * b2 + ab * b2 + b2 * b2);
        0.05 * ds * q
    }

    /// Accumulates `weight * grad_x k(x, y)` into `out`.
    ///
    /// For the (n,1) Wendland function the gradient is `-(1 - s)^3 (x - y) / sigma^2`,
    /// which is continuous at `x = y`.
    #[inline]
    pub(crate) fn add_grad_unchecked(&self, x: &[f64], y: &[f64], weight: f64, out: &mut [f64]) {
        let s = dist(x, y) / self.support_radius;
        if s >= 1.0 {
            return;
        }
        let t = 1.0 - s;
        let c = -weight * t * t * t / (self.support_radius * self.support_radius);
        for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
            *o += c * (a - b);
        }
    }
}

/// The radial profile `phi_{n,1}(r / sigma)`.
pub fn wendland_phi(r: f64, spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    if !(r >= 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be non-negative, got {r}")));
    }
    Ok(spec.phi_unchecked(r))
}

pub fn kernel_eval(x: &[f64], y: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    check_dim(spec.dim, x.len())?;
    check_dim(spec.dim, y.len())?;
    Ok(spec.eval_unchecked(x, y))
}

/// Matrix with entries `k(X_i, Y_j)`.
pub fn kernel_matrix(xs: &Points, ys: &Points, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptyPointSet("kernel matrix needs nonempty point lists"));
    }
    check_dim(spec.dim, xs.dim())?;
    check_dim(spec.dim, ys.dim())?;
    let cols = ys.len();
    let rows: Vec<f64> = (0..xs.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let x = xs.point(i);
            (0..cols).map(move |j| spec.eval_unchecked(x, ys.point(j)))
        })
        .collect();
    Ok(DMatrix::from_row_slice(xs.len(), cols, &rows))
}

/// Canonical feature vector `(k(x, X_1), ..., k(x, X_d))`.
pub fn kernel_features(x: &[f64], nodes: &Points, spec: &KernelSpec) -> Result<DVector<f64>> {
    spec.validate()?;
    check_dim(spec.dim, x.len())?;
    check_dim(spec.dim, nodes.dim())?;
    Ok(DVector::from_iterator(
        nodes.len(),
        nodes.iter().map(|y| spec.eval_unchecked(x, y)),
    ))
}

/// Cholesky factor of `K + jitter * I`.
#[derive(Debug, Clone)]
pub struct KernelMatrixFactorization {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
    nodes: Option<(Points, KernelSpec)>,
}

impl KernelMatrixFactorization {
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn size(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn nodes(&self) -> Option<&Points> {
        self.nodes.as_ref().map(|(p, _)| p)
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.size(), b.len())?;
        Ok(self.chol.solve(b))
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.size(), b.nrows())?;
        Ok(self.chol.solve(b))
    }

    pub(crate) fn attach_nodes(mut self, nodes: Points, spec: KernelSpec) -> Self {
        self.nodes = Some((nodes, spec));
        self
    }
}

/// Factorizes a symmetric positive definite matrix with relative diagonal jitter.
///
/// The initial jitter is `jitter_rel * trace(K) / d`; on failure it is escalated
/// by a factor of 100 up to three times.
pub fn factorize_spd(k: &DMatrix<f64>, jitter_rel: f64) -> Result<KernelMatrixFactorization> {
    let d = k.nrows();
    if d == 0 {
        return Err(Error::EmptyPointSet("cannot factorize an empty matrix"));
    }
    check_dim(d, k.ncols())?;
    if !(jitter_rel >= 0.0) {
        return Err(Error::InvalidArgument(format!("jitter must be >= 0, got {jitter_rel}")));
    }
    let mean_diag = k.trace() / d as f64;
    let mut jitter = jitter_rel * mean_diag;
    for attempt in 0..=JITTER_RETRIES {
        let mut shifted = k.clone();
        for i in 0..d {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            let l = chol.l_dirty();
            if (0..d).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite()) {
                return Ok(KernelMatrixFactorization { chol, jitter, nodes: None });
            }
        }
        if attempt == JITTER_RETRIES {
            break;
        }
        jitter = if jitter > 0.0 {
            jitter * JITTER_GROWTH
        } else {
            1e-12 * mean_diag.abs().max(f64::MIN_POSITIVE)
        };
    }
    Err(Error::SingularKernelMatrix { jitter })
}

/// Factorizes the kernel matrix of `nodes` and keeps the nodes for interpolation.
pub fn factorize_nodes(nodes: &Points, spec: &KernelSpec) -> Result<KernelMatrixFactorization> {
    let k = kernel_matrix(nodes, nodes, spec)?;
    Ok(factorize_spd(&k, spec.jitter)?.attach_nodes(nodes.clone(), *spec))
}

/// Evaluates the kernel interpolant of `values` (given at the factorization nodes) at `x`.
pub fn interpolant_eval(
    fact: &KernelMatrixFactorization,
    values: &DVector<f64>,
    x: &[f64],
) -> Result<f64> {
    let (nodes, spec) = fact
        .nodes
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("factorization carries no node set".into()))?;
    check_dim(nodes.len(), values.len())?;
    let features = kernel_features(x, nodes, spec)?;
    Ok(values.dot(&fact.solve(&features)?))
}
