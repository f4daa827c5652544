//! Padua points on rectangles and the virtual observation grid built from them.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::points::{norm, Points};
use crate::sets::AxisBox;

/// Number of Padua points of a given degree, `(deg + 1)(deg + 2) / 2`.
pub fn padua_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Padua points of degree `degree`, mapped affinely from `[-1, 1]^2` onto `domain`.
///
/// Uses the first family `(cos(j pi / n), cos(k pi / (n + 1)))` with `j + k` even.
pub fn padua_points(degree: usize, domain: &AxisBox) -> Result<Points> {
    if domain.dim() != 2 {
        return Err(Error::InvalidBox(format!(
            "Padua points need a 2-D box, got dimension {}",
            domain.dim()
        )));
    }
    if degree == 0 {
        return Err(Error::InvalidArgument("Padua degree must be >= 1".into()));
    }
    let n = degree as f64;
    let centre = [0.5 * (domain.lo[0] + domain.hi[0]), 0.5 * (domain.lo[1] + domain.hi[1])];
    let half = [0.5 * (domain.hi[0] - domain.lo[0]), 0.5 * (domain.hi[1] - domain.lo[1])];
    let mut pts = Points::with_capacity(2, padua_count(degree));
    for j in 0..=degree {
        let a = (j as f64 * PI / n).cos();
        for k in (0..=degree + 1).filter(|k| (j + k) % 2 == 0) {
            let b = (k as f64 * PI / (n + 1.0)).cos();
            pts.push(&[centre[0] + half[0] * a, centre[1] + half[1] * b])?;
        }
    }
    Ok(pts)
}

/// Padua points with the origin prepended as the first node.
pub fn build_observation_grid(degree: usize, domain: &AxisBox) -> Result<Points> {
    if !domain.contains(&[0.0, 0.0]) {
        return Err(Error::InvalidBox("observation grid domain must contain the origin".into()));
    }
    let padua = padua_points(degree, domain)?;
    let mut grid = Points::with_capacity(2, padua.len() + 1);
    grid.push(&[0.0, 0.0])?;
    for p in padua.iter().filter(|p| norm(p) > 1e-12) {
        grid.push(p)?;
    }
    Ok(grid)
}

/// Inverts `padua_count(deg) + 1 = d`.
pub fn degree_for_grid_size(d: usize) -> Result<usize> {
    let mut deg = 1;
    while padua_count(deg) + 1 < d {
        deg += 1;
    }
    if padua_count(deg) + 1 == d {
        return Ok(deg);
    }
    let above = padua_count(deg) + 1;
    let below = if deg > 1 { padua_count(deg - 1) + 1 } else { 0 };
    Err(Error::UnrealizableGridSize { d, below, above })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::dist;

    #[test]
    fn counts() {
        let b = AxisBox::symmetric(2, 1.0);
        assert_eq!(padua_points(1, &b).unwrap().len(), 3);
        for deg in 1..=60 {
            assert_eq!(padua_points(deg, &b).unwrap().len(), padua_count(deg));
        }
    }

    #[test]
    fn study_grid_sizes() {
        let omega = AxisBox::symmetric(2, 2.0);
        let g = build_observation_grid(25, &omega).unwrap();
        assert_eq!(g.len(), 352);
        assert_eq!(g.point(0), &[0.0, 0.0]);
        assert_eq!(build_observation_grid(50, &omega).unwrap().len(), 1327);
        let g1 = build_observation_grid(1, &omega).unwrap();
        assert_eq!(g1.len(), 4);
        assert_eq!(g1.point(0), &[0.0, 0.0]);
        assert_eq!(degree_for_grid_size(352).unwrap(), 25);
        assert_eq!(degree_for_grid_size(1327).unwrap(), 50);
    }

    #[test]
    fn unrealizable_size_reports_neighbours() {
        match degree_for_grid_size(353) {
            Err(Error::UnrealizableGridSize { below, above, .. }) => {
                assert_eq!(below, 352);
                assert_eq!(above, padua_count(26) + 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn points_distinct_and_inside() {
        let b = AxisBox::new(vec![-2.0, -1.0], vec![2.0, 3.0]).unwrap();
        let p = padua_points(12, &b).unwrap();
        for i in 0..p.len() {
            assert!(b.contains(p.point(i)));
            for j in 0..i {
                assert!(dist(p.point(i), p.point(j)) > 1e-9);
            }
        }
    }

    #[test]
    fn origin_coinciding_with_padua_point_is_dropped() {
        // Shift the box so that the Padua point (cos 0, cos 0) = corner (1, 1) maps to the origin.
        let b = AxisBox::new(vec![-2.0, -2.0], vec![0.0, 0.0]).unwrap();
        let g = build_observation_grid(3, &b).unwrap();
        assert_eq!(g.len(), padua_count(3));
        assert_eq!(g.point(0), &[0.0, 0.0]);
    }

    #[test]
    fn rejects_non_planar_boxes() {
        assert!(padua_points(3, &AxisBox::symmetric(3, 1.0)).is_err());
    }
}
