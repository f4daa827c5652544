//! Clustered data around virtual observation points.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::plant::Plant;
use crate::points::{dist, norm, Points};
use crate::sets::AxisBox;

const INPUT_RETRIES: usize = 100;
const STATE_REJECTION_LIMIT: usize = 100_000;
/// Minimal singular value of the regression matrix accepted at generation.
pub const MIN_REGRESSION_SINGULAR_VALUE: f64 = 1e-6;

/// One sample `(x, u, x+)`; serialized as `[x, u, x_plus]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_plus: Vec<f64>,
}

impl Serialize for Triplet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (&self.x, &self.u, &self.x_plus).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Triplet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (x, u, x_plus) = <(Vec<f64>, Vec<f64>, Vec<f64>)>::deserialize(d)?;
        Ok(Triplet { x, u, x_plus })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub center: Vec<f64>,
    pub radius: f64,
    pub triplets: Vec<Triplet>,
}

impl Cluster {
    pub fn input_dim(&self) -> usize {
        self.triplets.first().map_or(0, |t| t.u.len())
    }

    pub fn state_dim(&self) -> usize {
        self.center.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDataset {
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    pub clusters: Vec<Cluster>,
    pub seed: u64,
    pub plant_id: String,
    /// Successors that left the sampling domain (kept, only counted).
    #[serde(default)]
    pub successors_outside_domain: usize,
}

impl ClusterDataset {
    pub fn centers(&self) -> Points {
        let rows: Vec<&[f64]> = self.clusters.iter().map(|c| c.center.as_slice()).collect();
        Points::from_rows(&rows).expect("dataset has at least one cluster")
    }

    pub fn state_dim(&self) -> usize {
        self.clusters.first().map_or(0, Cluster::state_dim)
    }

    pub fn input_dim(&self) -> usize {
        self.clusters.first().map_or(0, Cluster::input_dim)
    }

    pub fn triplet_count(&self) -> usize {
        self.clusters.iter().map(|c| c.triplets.len()).sum()
    }

    pub fn radius(&self) -> f64 {
        self.clusters.iter().map(|c| c.radius).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Checks the structural data requirements: first node at the origin, distinct nodes,
    /// samples inside their balls, and a full-rank regression matrix per cluster.
    pub fn validate(&self) -> Result<()> {
        let first = self.clusters.first().ok_or(Error::EmptyPointSet("dataset has no clusters"))?;
        if first.center.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidArgument("first cluster point must be the origin".into()));
        }
        let centers = self.centers();
        for i in 0..centers.len() {
            for j in 0..i {
                if centers.point(i) == centers.point(j) {
                    return Err(Error::InvalidArgument(format!("cluster points {j} and {i} coincide")));
                }
            }
        }
        for (i, c) in self.clusters.iter().enumerate() {
            for t in &c.triplets {
                if dist(&t.x, &c.center) > c.radius * (1.0 + 1e-12) + 1e-15 {
                    return Err(Error::InvalidCluster { cluster: i });
                }
            }
            let s = smallest_singular_value(&regression_matrix(c));
            if s < MIN_REGRESSION_SINGULAR_VALUE {
                return Err(Error::DegenerateInputSampling { cluster: i });
            }
        }
        Ok(())
    }
}

/// `V_i = [1 ... 1; u_1 ... u_{d_i}]`, of size `(m + 1) x d_i`.
pub fn regression_matrix(cluster: &Cluster) -> DMatrix<f64> {
    let m = cluster.input_dim();
    let mut v = DMatrix::zeros(m + 1, cluster.triplets.len());
    for (j, t) in cluster.triplets.iter().enumerate() {
        v[(0, j)] = 1.0;
        for k in 0..m {
            v[(k + 1, j)] = t.u[k];
        }
    }
    v
}

pub(crate) fn smallest_singular_value(v: &DMatrix<f64>) -> f64 {
    if v.nrows() > v.ncols() {
        return 0.0;
    }
    v.singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

fn distance_to_box(x: &[f64], b: &AxisBox) -> f64 {
    x.iter()
        .zip(b.lo.iter().zip(&b.hi))
        .map(|(v, (lo, hi))| {
            let e = (lo - v).max(0.0).max(v - hi);
            e * e
        })
        .sum::<f64>()
        .sqrt()
}

fn sample_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    if radius == 0.0 {
        return center.to_vec();
    }
    let n = center.len();
    let dir: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let len = norm(&dir);
    let r = radius * rng.random::<f64>().powf(1.0 / n as f64);
    center.iter().zip(&dir).map(|(c, d)| c + r * d / len).collect()
}

fn sample_in_box(rng: &mut ChaCha8Rng, b: &AxisBox) -> Vec<f64> {
    b.lo.iter().zip(&b.hi).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
}

fn cluster_rng(seed: u64, cluster: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cluster as u64);
    rng
}

/// Samples `samples` triplets per cluster: states uniform in `B_r(x_i) ∩ Ω`,
/// inputs uniform in the input box, successors from the plant.
pub fn build_cluster_dataset<P: Plant + ?Sized>(
    plant: &P,
    centers: &Points,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<ClusterDataset> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    if centers.is_empty() {
        return Err(Error::EmptyPointSet("no cluster points"));
    }
    crate::error::check_dim(n, centers.dim())?;
    if centers.point(0).iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidArgument("first cluster point must be the origin".into()));
    }
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument(format!("cluster radius must be >= 0, got {radius}")));
    }
    if samples < m + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least m + 1 = {} samples per cluster, got {samples}",
            m + 1
        )));
    }
    let omega = plant.sampling_box();
    let input_box = plant.input_box();

    let clusters: Vec<(Cluster, usize)> = (0..centers.len())
        .into_par_iter()
        .map(|i| {
            let center = centers.point(i);
            if distance_to_box(center, omega) > radius {
                return Err(Error::InvalidCluster { cluster: i });
            }
            let mut rng = cluster_rng(seed, i);
            let mut xs = Vec::with_capacity(samples);
            let mut tries = 0;
            while xs.len() < samples {
                let x = sample_in_ball(&mut rng, center, radius);
                if omega.contains(&x) {
                    xs.push(x);
                } else {
                    tries += 1;
                    if tries > STATE_REJECTION_LIMIT || radius == 0.0 {
                        return Err(Error::InvalidCluster { cluster: i });
                    }
                }
            }
            for _ in 0..INPUT_RETRIES {
                let triplets: Vec<Triplet> = xs
                    .iter()
                    .map(|x| {
                        let u = sample_in_box(&mut rng, input_box);
                        let x_plus = plant.step(x, &u);
                        Triplet { x: x.clone(), u, x_plus }
                    })
                    .collect();
                let cluster = Cluster { center: center.to_vec(), radius, triplets };
                if smallest_singular_value(&regression_matrix(&cluster)) >= MIN_REGRESSION_SINGULAR_VALUE {
                    let outside = cluster.triplets.iter().filter(|t| !omega.contains(&t.x_plus)).count();
                    return Ok((cluster, outside));
                }
            }
            Err(Error::DegenerateInputSampling { cluster: i })
        })
        .collect::<Result<_>>()?;

    let successors_outside_domain = clusters.iter().map(|(_, o)| o).sum();
    Ok(ClusterDataset {
        kernel: None,
        clusters: clusters.into_iter().map(|(c, _)| c).collect(),
        seed,
        plant_id: plant.id(),
        successors_outside_domain,
    })
}

/// Grid estimate of `sup_{x in domain} min_i |x - x_i|`, a lower bound on the fill distance.
pub fn fill_distance(nodes: &Points, domain: &AxisBox, resolution: f64) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::EmptyPointSet("fill distance of an empty node set"));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
    }
    crate::error::check_dim(domain.dim(), nodes.dim())?;
    let steps = domain
        .lo
        .iter()
        .zip(&domain.hi)
        .map(|(a, b)| ((b - a) / resolution - 1e-9).ceil().max(0.0) as usize + 1)
        .max()
        .unwrap_or(1);
    let grid = domain.grid(steps);
    Ok(grid
        .par_iter()
        .map(|x| nodes.iter().map(|y| dist(x, y)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::padua::build_observation_grid;
    use crate::plant::{Dynamics, VanDerPol};
    use approx::assert_abs_diff_eq;

    fn small_grid() -> Points {
        build_observation_grid(4, &AxisBox::symmetric(2, 2.0)).unwrap()
    }

    #[test]
    fn zero_radius_samples_at_centers() {
        let plant = VanDerPol::default();
        let nodes = small_grid();
        let ds = build_cluster_dataset(&plant, &nodes, 0.0, 5, 7).unwrap();
        for (i, c) in ds.clusters.iter().enumerate() {
            assert_eq!(c.center, nodes.point(i));
            assert!(c.triplets.iter().all(|t| t.x == c.center));
        }
    }

    #[test]
    fn successors_are_plant_evaluations() {
        let plant = VanDerPol::default();
        let ds = build_cluster_dataset(&plant, &small_grid(), 0.05, 6, 1).unwrap();
        for c in &ds.clusters {
            for t in &c.triplets {
                assert_eq!(t.x_plus, plant.step(&t.x, &t.u));
                assert!(dist(&t.x, &c.center) <= 0.05);
                assert!(plant.sampling_box.contains(&t.x));
                assert!(plant.input_box.contains(&t.u));
            }
        }
        ds.validate().unwrap();
    }

    #[test]
    fn seeds_are_reproducible() {
        let plant = VanDerPol::default();
        let nodes = small_grid();
        let a = build_cluster_dataset(&plant, &nodes, 0.01, 4, 42).unwrap();
        let b = build_cluster_dataset(&plant, &nodes, 0.01, 4, 42).unwrap();
        let c = build_cluster_dataset(&plant, &nodes, 0.01, 4, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.clusters[3].triplets, c.clusters[3].triplets);
        assert_eq!(a.centers(), c.centers());
    }

    #[test]
    fn study_dataset_size() {
        let plant = VanDerPol::default();
        let nodes = build_observation_grid(25, &plant.sampling_box).unwrap();
        let r = 2f64.sqrt() / nodes.len() as f64;
        assert_abs_diff_eq!(r, 0.004018, epsilon = 1e-6);
        let ds = build_cluster_dataset(&plant, &nodes, r, 25, 0).unwrap();
        assert_eq!(ds.triplet_count(), 8800);
    }

    #[test]
    fn regression_matrix_examples() {
        let c = Cluster {
            center: vec![0.0, 0.0],
            radius: 0.0,
            triplets: [1.0, -1.0, 0.0]
                .iter()
                .map(|&u| Triplet { x: vec![0.0, 0.0], u: vec![u], x_plus: vec![0.0, 0.0] })
                .collect(),
        };
        let v = regression_matrix(&c);
        assert_eq!(v, DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, -1.0, 0.0]));
        assert!(smallest_singular_value(&v) > 0.5);

        let mut flat = c.clone();
        for t in &mut flat.triplets {
            t.u = vec![0.7];
        }
        assert!(smallest_singular_value(&regression_matrix(&flat)) < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        let plant = VanDerPol::default();
        let nodes = small_grid();
        assert!(build_cluster_dataset(&plant, &nodes, 0.01, 1, 0).is_err());
        let far = Points::from_rows(&[[0.0, 0.0], [5.0, 5.0]]).unwrap();
        assert!(matches!(
            build_cluster_dataset(&plant, &far, 0.1, 3, 0),
            Err(Error::InvalidCluster { cluster: 1 })
        ));
        let shifted = Points::from_rows(&[[0.1, 0.0]]).unwrap();
        assert!(build_cluster_dataset(&plant, &shifted, 0.1, 3, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let plant = VanDerPol::default();
        let ds = build_cluster_dataset(&plant, &small_grid(), 0.01, 3, 5).unwrap();
        let s = ds.to_json().unwrap();
        assert!(s.contains("\"triplets\":[[["));
        assert_eq!(ClusterDataset::from_json(&s).unwrap(), ds);
    }

    #[test]
    fn fill_distance_examples() {
        let omega = AxisBox::symmetric(2, 2.0);
        let centre = Points::from_rows(&[[0.0, 0.0]]).unwrap();
        let h = fill_distance(&centre, &omega, 0.05).unwrap();
        assert_abs_diff_eq!(h, 2.0 * 2f64.sqrt(), epsilon = 1e-12);

        let grid = Points::from_rows(&omega.grid(11)).unwrap();
        assert_abs_diff_eq!(fill_distance(&grid, &omega, 0.4).unwrap(), 0.0, epsilon = 1e-12);

        let coarse = small_grid();
        let fine = build_observation_grid(12, &omega).unwrap();
        let mut both = coarse.clone();
        for p in fine.iter() {
            both.push(p).unwrap();
        }
        assert!(fill_distance(&both, &omega, 0.05).unwrap() <= fill_distance(&coarse, &omega, 0.05).unwrap());
        assert!(fill_distance(&Points::new(2), &omega, 0.1).is_err());
    }
}
