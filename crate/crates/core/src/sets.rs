//! Axis-aligned boxes and their Pontryagin difference with Euclidean balls.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidBox(format!(
                "bounds of length {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidBox(format!("lo {lo:?} exceeds hi {hi:?}")));
        }
        Ok(AxisBox { lo, hi })
    }

    /// `[-a, a]^n`.
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        AxisBox { lo: vec![-half_width; dim], hi: vec![half_width; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Contains `x` with every coordinate at least `margin` inside the faces.
    pub fn contains_with_margin(&self, x: &[f64], margin: f64) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *a + margin <= *v && *v <= *b - margin)
    }

    /// Signed distance to the nearest face; negative outside.
    pub fn margin(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (a, b))| (v - a).min(b - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains_origin_interior(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(a, b)| *a < 0.0 && 0.0 < *b)
    }

    pub fn is_subset_of(&self, other: &AxisBox) -> bool {
        self.dim() == other.dim()
            && self.lo.iter().zip(&other.lo).all(|(a, b)| a >= b)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| a <= b)
    }

    /// Pontryagin difference with the Euclidean ball of `radius`; `None` if it is empty.
    pub fn tightened(&self, radius: f64) -> Option<AxisBox> {
        assert!(radius >= 0.0, "tightening radius must be non-negative");
        let lo: Vec<f64> = self.lo.iter().map(|a| a + radius).collect();
        let hi: Vec<f64> = self.hi.iter().map(|b| b - radius).collect();
        if lo.iter().zip(&hi).all(|(a, b)| a <= b) {
            Some(AxisBox { lo, hi })
        } else {
            None
        }
    }

    /// Uniform grid with `steps` points per axis, endpoints included, in lexicographic order.
    pub fn grid(&self, steps: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| linspace(self.lo[i], self.hi[i], steps))
            .collect();
        cartesian(&axes)
    }

    /// Cell-centre grid: `cells` equal cells per axis, one point at each centre.
    pub fn cell_centres(&self, cells: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = (0..self.dim())
            .map(|i| {
                let h = (self.hi[i] - self.lo[i]) / cells as f64;
                (0..cells).map(|k| self.lo[i] + (k as f64 + 0.5) * h).collect()
            })
            .collect();
        cartesian(&axes)
    }

    /// Clamps `x` into the box.
    pub fn project(&self, x: &mut [f64]) {
        for ((v, a), b) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*a, *b);
        }
    }
}

pub(crate) fn linspace(a: f64, b: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => vec![],
        1 => vec![0.5 * (a + b)],
        _ => {
            let last = (steps - 1) as f64;
            (0..steps)
                .map(|k| {
                    let t = k as f64 / last;
                    a * (1.0 - t) + b * t
                })
                .collect()
        }
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for v in axis {
                let mut p = prefix.clone();
                p.push(*v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}
