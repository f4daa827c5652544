//! Kernel EDMD surrogates for autonomous and control-affine dynamics.
//!
//! With coordinate observables `psi_l(x) = e_l^T x` the surrogate is
//!
//! ```text
//! f_eps(x, u) = psi_X^T (K0 + sum_k u_k Kk)^T k_X(x),   Kk = K_X^-1 K_{g_k(X)} K_X^-1
//! ```
//!
//! which is evaluated through the contracted coefficients `W_k = Kk^T psi_X`
//! (`d x n`), so a prediction costs one feature vector and `m + 1` dot products.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{CertifiedBounds, ORIGIN_TOLERANCE};
use crate::dataset::{Cluster, ClusterDataset};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{factorize_nodes, kernel_matrix, KernelMatrixFactorization, KernelSpec};
use crate::plant::{DifferentiableDynamics, Dynamics};
use crate::points::{norm, Points};

/// Relative singular value cutoff of the cluster regressions.
const REGRESSION_CUTOFF: f64 = 1e-10;

/// Least-squares fit `H_i = [g0(x_i) | G(x_i)]` of `x+ = H_i [1; u]` on one cluster.
///
/// With `pi_at_origin` the drift column is pinned to zero and only the input
/// columns are regressed.
pub fn local_regression(cluster: &Cluster, pi_at_origin: bool) -> Result<DMatrix<f64>> {
    let count = cluster.triplets.len();
    if count == 0 {
        return Err(Error::EmptyPointSet("cluster has no samples"));
    }
    let n = cluster.state_dim();
    let m = cluster.input_dim();
    let offset = usize::from(pi_at_origin);
    let rows = m + 1 - offset;
    let mut x_plus = DMatrix::zeros(n, count);
    let mut v = DMatrix::zeros(rows, count);
    for (j, t) in cluster.triplets.iter().enumerate() {
        check_dim(n, t.x_plus.len())?;
        check_dim(m, t.u.len())?;
        x_plus.set_column(j, &DVector::from_column_slice(&t.x_plus));
        if !pi_at_origin {
            v[(0, j)] = 1.0;
        }
        for k in 0..m {
            v[(k + 1 - offset, j)] = t.u[k];
        }
    }
    let mut h = DMatrix::zeros(n, m + 1);
    if rows == 0 {
        return Ok(h);
    }
    if count < rows {
        return Err(Error::DegenerateRegression { sigma_min: 0.0 });
    }
    let svd = v.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > REGRESSION_CUTOFF * s_max.max(1.0)) {
        return Err(Error::DegenerateRegression { sigma_min: s_min });
    }
    let pinv = svd
        .pseudo_inverse(REGRESSION_CUTOFF * s_max)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let fit = &x_plus * pinv;
    h.columns_mut(offset, rows).copy_from(&fit);
    Ok(h)
}

/// A fitted kEDMD surrogate; immutable after construction.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    spec: KernelSpec,
    nodes: Points,
    factorization: KernelMatrixFactorization,
    vertex_images: Vec<Points>,
    /// `W_k`, row-major `d x n`, for `k in 0..=m`.
    coefficients: Vec<Vec<f64>>,
    /// `k(0, x_j)` for every node.
    origin_features: Vec<f64>,
    /// Drift at the origin as summed from the coefficients.
    raw_origin_drift: Vec<f64>,
    /// Drift value the evaluation is anchored to: zero for the PI variant.
    anchor: Vec<f64>,
    pi_variant: bool,
    pub seed: Option<u64>,
    pub dataset_hash: Option<String>,
    pub cluster_radius: Option<f64>,
}

impl SurrogateModel {
    /// Builds the model from cluster points and estimated vertex images `g_k(X)`, `k = 0..=m`.
    pub fn from_vertex_images(
        spec: KernelSpec,
        nodes: Points,
        vertex_images: Vec<Points>,
        pi_variant: bool,
    ) -> Result<Self> {
        spec.validate()?;
        if nodes.is_empty() {
            return Err(Error::EmptyPointSet("surrogate needs at least one node"));
        }
        check_dim(spec.dim, nodes.dim())?;
        if vertex_images.is_empty() {
            return Err(Error::InvalidArgument("at least the drift images are required".into()));
        }
        for img in &vertex_images {
            check_dim(nodes.len(), img.len())?;
            check_dim(nodes.dim(), img.dim())?;
        }
        let factorization = factorize_nodes(&nodes, &spec)?;
        let n = nodes.dim();
        let d = nodes.len();
        let psi = DMatrix::from_row_slice(d, n, nodes.as_flat());
        let alpha = factorization.solve_matrix(&psi)?;
        let alpha_rows: Vec<f64> = (0..d).flat_map(|i| (0..n).map(move |l| (i, l))).map(|(i, l)| alpha[(i, l)]).collect();

        let coefficients = vertex_images
            .iter()
            .map(|img| {
                // K_{g(X)} alpha: the interpolated coordinates evaluated at each image point.
                let rows: Vec<f64> = (0..d)
                    .into_par_iter()
                    .flat_map_iter(|i| {
                        let g = img.point(i);
                        let mut acc = vec![0.0; n];
                        for j in 0..d {
                            let w = spec.eval_unchecked(g, nodes.point(j));
                            if w != 0.0 {
                                for l in 0..n {
                                    acc[l] += w * alpha_rows[j * n + l];
                                }
                            }
                        }
                        acc
                    })
                    .collect();
                let kg_alpha = DMatrix::from_row_slice(d, n, &rows);
                let w = factorization.solve_matrix(&kg_alpha)?;
                Ok((0..d).flat_map(|i| (0..n).map(move |l| (i, l))).map(|(i, l)| w[(i, l)]).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;

        let origin = vec![0.0; n];
        let origin_features: Vec<f64> = nodes.iter().map(|y| spec.eval_unchecked(&origin, y)).collect();
        let mut raw_origin_drift = vec![0.0; n];
        for (j, w) in origin_features.iter().enumerate() {
            for l in 0..n {
                raw_origin_drift[l] += w * coefficients[0][j * n + l];
            }
        }
        let anchor = if pi_variant {
            let err = norm(&raw_origin_drift);
            if err > ORIGIN_TOLERANCE {
                return Err(Error::NotProportional { error: err });
            }
            origin.clone()
        } else {
            raw_origin_drift.clone()
        };

        Ok(SurrogateModel {
            spec,
            nodes,
            factorization,
            vertex_images,
            coefficients,
            origin_features,
            raw_origin_drift,
            anchor,
            pi_variant,
            seed: None,
            dataset_hash: None,
            cluster_radius: None,
        })
    }

    pub fn kernel_spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn nodes(&self) -> &Points {
        &self.nodes
    }

    pub fn vertex_images(&self) -> &[Points] {
        &self.vertex_images
    }

    pub fn factorization(&self) -> &KernelMatrixFactorization {
        &self.factorization
    }

    pub fn is_pi_variant(&self) -> bool {
        self.pi_variant
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Explicit propagation matrix `K_X^-1 K_{g_k(X)} K_X^-1` (`d x d`).
    pub fn propagation_matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        let img = self
            .vertex_images
            .get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("no vertex image {k}")))?;
        let kg = kernel_matrix(img, &self.nodes, &self.spec)?;
        let left = self.factorization.solve_matrix(&kg)?;
        let right = self.factorization.solve_matrix(&left.transpose())?;
        Ok(right.transpose())
    }

    /// Whether `x` lies within one support radius of some node.
    pub fn in_support(&self, x: &[f64]) -> bool {
        self.nodes.iter().any(|y| crate::points::dist(x, y) < self.spec.support_radius)
    }

    fn check_args(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_dim(self.nodes.dim(), x.len())?;
        check_dim(self.input_dim(), u.len())
    }

    pub fn predict(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_args(x, u)?;
        Ok(self.eval(x, u))
    }

    /// Drift at the origin before anchoring; zero up to rounding for the PI variant.
    pub fn raw_origin_drift(&self) -> &[f64] {
        &self.raw_origin_drift
    }

    /// `f(0) + sum_j W_0[j] (k(x, x_j) - k(0, x_j)) + sum_k u_k W_k^T k_X(x)`.
    ///
    /// The drift is summed as a difference from the origin so that its rounding
    /// error scales with `|x|`; the coefficients alternate in sign and a plain
    /// sum leaves an absolute noise floor near `1e-12`.
    fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.nodes.dim();
        let mut out = self.anchor.clone();
        let mut row = vec![0.0; n];
        for j in 0..self.nodes.len() {
            let y = self.nodes.point(j);
            let w = self.spec.eval_unchecked(x, y);
            if w == 0.0 && self.origin_features[j] == 0.0 {
                continue;
            }
            let dw = self.spec.diff_from_origin_unchecked(x, y);
            let w0 = &self.coefficients[0][j * n..(j + 1) * n];
            self.input_row(j, u, &mut row);
            for l in 0..n {
                out[l] += dw * w0[l] + w * row[l];
            }
        }
        out
    }

    /// Row `j` of `sum_k u_k W_k`.
    #[inline]
    fn input_row(&self, j: usize, u: &[f64], row: &mut [f64]) {
        let n = row.len();
        row.iter_mut().for_each(|r| *r = 0.0);
        for (k, uk) in u.iter().enumerate() {
            let wk = &self.coefficients[k + 1][j * n..(j + 1) * n];
            for l in 0..n {
                row[l] += uk * wk[l];
            }
        }
    }

    /// `(df/dx, df/du)` with `df/dx` from central differences on `predict`
    /// (step `1e-6 max(1, |x|)`) and `df/du` read off the affine input terms.
    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.jacobians_with_step(x, u, 1e-6 * norm(x).max(1.0))
    }

    pub fn jacobians_with_step(&self, x: &[f64], u: &[f64], h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_args(x, u)?;
        let n = x.len();
        let mut a = DMatrix::zeros(n, n);
        let mut xp = x.to_vec();
        for j in 0..n {
            xp[j] = x[j] + h;
            let fp = self.eval(&xp, u);
            xp[j] = x[j] - h;
            let fm = self.eval(&xp, u);
            xp[j] = x[j];
            for i in 0..n {
                a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        Ok((a, self.input_matrix_at(x)))
    }

    /// Column `k` is `W_k^T k_X(x)`.
    pub fn input_matrix_at(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.nodes.dim();
        let m = self.input_dim();
        let mut b = DMatrix::zeros(n, m);
        for j in 0..self.nodes.len() {
            let w = self.spec.eval_unchecked(x, self.nodes.point(j));
            if w == 0.0 {
                continue;
            }
            for k in 0..m {
                let wk = &self.coefficients[k + 1][j * n..(j + 1) * n];
                for l in 0..n {
                    b[(l, k)] += w * wk[l];
                }
            }
        }
        b
    }

    /// Successor together with exact Jacobians from the kernel gradient.
    pub fn eval_with_jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let n = self.nodes.dim();
        let m = self.input_dim();
        let mut out = vec![0.0; n];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        let mut row = vec![0.0; n];
        let mut grad = vec![0.0; n];
        out.copy_from_slice(&self.anchor);
        for j in 0..self.nodes.len() {
            let y = self.nodes.point(j);
            let w = self.spec.eval_unchecked(x, y);
            if w == 0.0 && self.origin_features[j] == 0.0 {
                continue;
            }
            let dw = self.spec.diff_from_origin_unchecked(x, y);
            let w0 = &self.coefficients[0][j * n..(j + 1) * n];
            self.input_row(j, u, &mut row);
            grad.iter_mut().for_each(|g| *g = 0.0);
            self.spec.add_grad_unchecked(x, y, 1.0, &mut grad);
            for l in 0..n {
                out[l] += dw * w0[l] + w * row[l];
                let full = w0[l] + row[l];
                for c in 0..n {
                    a[(l, c)] += full * grad[c];
                }
            }
            for k in 0..m {
                let wk = &self.coefficients[k + 1][j * n..(j + 1) * n];
                for l in 0..n {
                    b[(l, k)] += w * wk[l];
                }
            }
        }
        (out, a, b)
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            kernel_spec: self.spec,
            nodes: self.nodes.clone(),
            vertex_images: self.vertex_images.clone(),
            pi_variant: self.pi_variant,
            seed: self.seed,
            dataset_hash: self.dataset_hash.clone(),
            cluster_radius: self.cluster_radius,
            certified_bounds: None,
            provenance: None,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let mut model = SurrogateModel::from_vertex_images(
            doc.kernel_spec,
            doc.nodes.clone(),
            doc.vertex_images.clone(),
            doc.pi_variant,
        )?;
        model.seed = doc.seed;
        model.dataset_hash = doc.dataset_hash.clone();
        model.cluster_radius = doc.cluster_radius;
        Ok(model)
    }
}

impl Dynamics for SurrogateModel {
    fn state_dim(&self) -> usize {
        self.nodes.dim()
    }
    fn input_dim(&self) -> usize {
        self.coefficients.len() - 1
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.eval(x, u)
    }
}

impl DifferentiableDynamics for SurrogateModel {
    fn step_with_jacobians(&self, x: &[f64], u: &[f64]) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        self.eval_with_jacobians(x, u)
    }
}

/// Serialized model. Propagation coefficients are recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kernel_spec: KernelSpec,
    pub nodes: Points,
    pub vertex_images: Vec<Points>,
    pub pi_variant: bool,
    pub seed: Option<u64>,
    pub dataset_hash: Option<String>,
    #[serde(default)]
    pub cluster_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified_bounds: Option<CertifiedBounds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Fits the control-affine surrogate; with `pi_variant` the drift at the origin cluster is pinned to zero.
pub fn fit_control_affine(dataset: &ClusterDataset, spec: &KernelSpec, pi_variant: bool) -> Result<SurrogateModel> {
    let first = dataset.clusters.first().ok_or(Error::EmptyPointSet("dataset has no clusters"))?;
    let n = first.state_dim();
    let m = first.input_dim();
    check_dim(spec.dim, n)?;
    let pinned = pi_variant && first.center.iter().all(|&v| v == 0.0);
    if pi_variant && !pinned {
        return Err(Error::InvalidArgument("PI fit needs the origin as first cluster point".into()));
    }
    let fits: Vec<DMatrix<f64>> = dataset
        .clusters
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            check_dim(n, c.state_dim())?;
            check_dim(m, c.input_dim())?;
            local_regression(c, pinned && i == 0)
        })
        .collect::<Result<_>>()?;
    let d = dataset.clusters.len();
    let vertex_images = (0..=m)
        .map(|k| {
            let mut pts = Points::with_capacity(n, d);
            for h in &fits {
                let col: Vec<f64> = h.column(k).iter().copied().collect();
                pts.push(&col)?;
            }
            Ok(pts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = SurrogateModel::from_vertex_images(*spec, dataset.centers(), vertex_images, pi_variant)?;
    model.seed = Some(dataset.seed);
    model.cluster_radius = Some(dataset.radius());
    Ok(model)
}

/// Autonomous kEDMD: a single propagation matrix from the images `f(X)`.
pub fn fit_autonomous(nodes: &Points, images: &Points, spec: &KernelSpec) -> Result<SurrogateModel> {
    SurrogateModel::from_vertex_images(*spec, nodes.clone(), vec![images.clone()], false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_cluster_dataset, Triplet};
    use crate::padua::build_observation_grid;
    use crate::plant::{ControlAffine, VanDerPol};
    use crate::sets::AxisBox;
    use approx::assert_abs_diff_eq;

    fn exact_cluster(plant: &VanDerPol, center: [f64; 2], inputs: &[f64]) -> Cluster {
        Cluster {
            center: center.to_vec(),
            radius: 0.0,
            triplets: inputs
                .iter()
                .map(|&u| Triplet { x: center.to_vec(), u: vec![u], x_plus: plant.step(&center, &[u]) })
                .collect(),
        }
    }

    #[test]
    fn regression_recovers_van_der_pol_vertex_values() {
        let plant = VanDerPol::default();
        let c = exact_cluster(&plant, [1.0, 1.0], &[-1.5, -0.2, 0.4, 1.9]);
        let h = local_regression(&c, false).unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 1.05, epsilon = 1e-10);
        assert_abs_diff_eq!(h[(1, 0)], 0.95, epsilon = 1e-10);
        assert_abs_diff_eq!(h[(0, 1)], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(h[(1, 1)], 0.05, epsilon = 1e-10);
    }

    #[test]
    fn pi_regression_pins_origin_drift() {
        let plant = VanDerPol::default();
        let ds = build_cluster_dataset(&plant, &Points::from_rows(&[[0.0, 0.0]]).unwrap(), 0.01, 25, 3).unwrap();
        let h = local_regression(&ds.clusters[0], true).unwrap();
        assert_eq!(h[(0, 0)], 0.0);
        assert_eq!(h[(1, 0)], 0.0);
        assert_abs_diff_eq!(h[(0, 1)], 0.0, epsilon = 1e-3);
        assert_abs_diff_eq!(h[(1, 1)], 0.05, epsilon = 1e-3);
    }

    #[test]
    fn degenerate_regression_is_reported() {
        let plant = VanDerPol::default();
        let c = exact_cluster(&plant, [0.5, 0.5], &[0.3, 0.3, 0.3]);
        assert!(matches!(local_regression(&c, false), Err(Error::DegenerateRegression { .. })));
    }

    #[test]
    fn single_origin_cluster_preserves_equilibrium() {
        let plant = VanDerPol::default();
        let nodes = Points::from_rows(&[[0.0, 0.0]]).unwrap();
        let ds = build_cluster_dataset(&plant, &nodes, 0.0, 4, 0).unwrap();
        let model = fit_control_affine(&ds, &KernelSpec::new(2), true).unwrap();
        assert_eq!(model.predict(&[0.0, 0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        let k0 = model.propagation_matrix(0).unwrap();
        assert_eq!(k0.shape(), (1, 1));
    }

    #[test]
    fn identity_map_is_reproduced_at_nodes() {
        let spec = KernelSpec::new(2);
        let nodes = build_observation_grid(6, &AxisBox::symmetric(2, 1.0)).unwrap();
        let model = fit_autonomous(&nodes, &nodes, &spec).unwrap();
        for x in nodes.iter() {
            let y = model.predict(x, &[]).unwrap();
            assert_abs_diff_eq!(y[0], x[0], epsilon = 1e-8);
            assert_abs_diff_eq!(y[1], x[1], epsilon = 1e-8);
        }
    }

    #[test]
    fn node_permutation_is_reproduced() {
        let spec = KernelSpec::new(2);
        let nodes = build_observation_grid(5, &AxisBox::symmetric(2, 1.0)).unwrap();
        let d = nodes.len();
        let perm: Vec<usize> = (0..d).map(|j| (j * 7 + 3) % d).collect();
        let mut images = Points::new(2);
        for &l in &perm {
            images.push(nodes.point(l)).unwrap();
        }
        let model = fit_autonomous(&nodes, &images, &spec).unwrap();
        for j in 0..d {
            let y = model.predict(nodes.point(j), &[]).unwrap();
            let target = nodes.point(perm[j]);
            assert_abs_diff_eq!(y[0], target[0], epsilon = 1e-8);
            assert_abs_diff_eq!(y[1], target[1], epsilon = 1e-8);
        }
    }

    #[test]
    fn propagation_matrix_satisfies_defining_identity() {
        let plant = VanDerPol::default();
        let nodes = build_observation_grid(6, &plant.sampling_box).unwrap();
        let ds = build_cluster_dataset(&plant, &nodes, 0.01, 6, 9).unwrap();
        let spec = KernelSpec::new(2).with_support_radius(1.2);
        let model = fit_control_affine(&ds, &spec, true).unwrap();
        let kx = kernel_matrix(&nodes, &nodes, &spec).unwrap();
        for k in 0..2 {
            let khat = model.propagation_matrix(k).unwrap();
            let kg = kernel_matrix(&model.vertex_images()[k], &nodes, &spec).unwrap();
            let resid = (&kx * &khat * &kx - &kg).norm() / kg.norm();
            assert!(resid <= 1e-8, "residual {resid}");
        }
        // the contracted coefficients reproduce psi_X^T Khat^T k_X(x)
        let x = [0.3, -0.4];
        let psi = DMatrix::from_row_slice(nodes.len(), 2, nodes.as_flat());
        let feat = crate::kernel::kernel_features(&x, &nodes, &spec).unwrap();
        let k0 = model.propagation_matrix(0).unwrap();
        let k1 = model.propagation_matrix(1).unwrap();
        let u = 0.7;
        let explicit = psi.transpose() * (k0 + k1 * u).transpose() * feat;
        let y = model.predict(&x, &[u]).unwrap();
        assert_abs_diff_eq!(y[0], explicit[0], epsilon = 1e-9);
        assert_abs_diff_eq!(y[1], explicit[1], epsilon = 1e-9);
    }

    #[test]
    fn exact_recovery_on_affine_plant() {
        let plant = VanDerPol::default();
        let nodes = build_observation_grid(8, &plant.sampling_box).unwrap();
        let ds = build_cluster_dataset(&plant, &nodes, 0.0, 5, 2).unwrap();
        for c in &ds.clusters {
            let h = local_regression(c, false).unwrap();
            let g0 = plant.drift(&c.center);
            let g = plant.input_matrix(&c.center);
            let mut expect = DMatrix::zeros(2, 2);
            expect.set_column(0, &DVector::from_vec(g0));
            expect.set_column(1, &g.column(0));
            assert!((h - expect).norm() <= 1e-9);
        }
    }

    #[test]
    fn jacobians_agree_between_routes() {
        let plant = VanDerPol::default();
        let nodes = build_observation_grid(10, &plant.sampling_box).unwrap();
        let ds = build_cluster_dataset(&plant, &nodes, 0.005, 6, 4).unwrap();
        let model = fit_control_affine(&ds, &KernelSpec::new(2), true).unwrap();
        for (x, u) in [([0.2, -0.1], 0.4), ([-1.1, 0.7], -1.3), ([0.0, 0.0], 0.0)] {
            let (a_fd, b_fd) = model.jacobians(&x, &[u]).unwrap();
            let (y, a, b) = model.eval_with_jacobians(&x, &[u]);
            assert_eq!(y, model.predict(&x, &[u]).unwrap());
            assert!((a_fd - a).amax() < 1e-7);
            assert!((b_fd - &b).amax() < 1e-15);
            let y1 = model.predict(&x, &[u + 1.0]).unwrap();
            assert_abs_diff_eq!(y1[1] - y[1], b[(1, 0)], epsilon = 1e-14);
        }
    }

    #[test]
    fn model_document_round_trip() {
        let plant = VanDerPol::default();
        let nodes = build_observation_grid(5, &plant.sampling_box).unwrap();
        let ds = build_cluster_dataset(&plant, &nodes, 0.01, 4, 11).unwrap();
        let model = fit_control_affine(&ds, &KernelSpec::new(2), true).unwrap();
        let json = serde_json::to_string(&model.to_document()).unwrap();
        let doc: ModelDocument = serde_json::from_str(&json).unwrap();
        let back = SurrogateModel::from_document(&doc).unwrap();
        let x = [0.37, -0.21];
        assert_eq!(back.predict(&x, &[0.5]).unwrap(), model.predict(&x, &[0.5]).unwrap());
    }
}
