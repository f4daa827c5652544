//! Constraint tightening against the propagated model error.

use crate::error::{Error, Result};
use crate::sets::AxisBox;

/// Horizons are never searched beyond this.
pub const HORIZON_CAP: usize = 100;

/// `sum_{i<k} L^i`, the error amplification after `k` predicted steps.
pub fn cbar(k: usize, lbar: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidArgument("cbar needs k >= 1".into()));
    }
    let mut sum = 0.0;
    let mut pow = 1.0;
    for _ in 0..k {
        sum += pow;
        pow *= lbar;
    }
    Ok(sum)
}

/// `S` shrunk by `cbar(k) eta`, or `None` if empty.
pub fn tightened_box(state: &AxisBox, k: usize, eta: f64, lbar: f64) -> Result<Option<AxisBox>> {
    Ok(state.tightened(cbar(k, lbar)? * eta))
}

/// Largest `N <= HORIZON_CAP` with every box `S - B(cbar(k) eta)`, `k = 1..=N`, nonempty.
pub fn max_horizon_box_rule(state: &AxisBox, eta: f64, lbar: f64) -> usize {
    let mut n = 0;
    while n < HORIZON_CAP {
        match tightened_box(state, n + 1, eta, lbar) {
            Ok(Some(_)) => n += 1,
            _ => break,
        }
    }
    n
}

/// Box rule combined with a terminal-set survival test `survives(N, terminal_box)`.
///
/// Returns the largest `N` up to the box-rule limit for which the test passes,
/// or 0 if none does.
pub fn max_feasible_horizon<F>(state: &AxisBox, eta: f64, lbar: f64, mut survives: Option<F>) -> usize
where
    F: FnMut(usize, &AxisBox) -> bool,
{
    let box_limit = max_horizon_box_rule(state, eta, lbar);
    let Some(test) = survives.as_mut() else {
        return box_limit;
    };
    (1..=box_limit)
        .rev()
        .find(|&n| match tightened_box(state, n, eta, lbar) {
            Ok(Some(b)) => test(n, &b),
            _ => false,
        })
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cbar_examples() {
        assert_eq!(cbar(1, 2.27).unwrap(), 1.0);
        assert_abs_diff_eq!(cbar(2, 2.27).unwrap(), 3.27, epsilon = 1e-12);
        assert_abs_diff_eq!(cbar(4, 2.27).unwrap(), 1.0 + 2.27 + 5.1529 + 11.697083, epsilon = 1e-9);
        assert!(cbar(0, 2.0).is_err());
    }

    #[test]
    fn horizon_examples() {
        let s = AxisBox::symmetric(2, 1.9);
        assert_eq!(max_horizon_box_rule(&s, 0.05, 2.27), 4);
        assert_eq!(max_horizon_box_rule(&s, 0.005, 1.75), 10);
        assert_eq!(max_horizon_box_rule(&s, 1e-300, 1.0), HORIZON_CAP);
        assert_eq!(max_horizon_box_rule(&s, 10.0, 1.0), 0);
    }

    #[test]
    fn survival_rule_never_exceeds_box_rule() {
        let s = AxisBox::symmetric(2, 1.9);
        // Require the terminal box to keep half-width at least 0.3.
        let n = max_feasible_horizon(&s, 0.005, 1.75, Some(|_, b: &AxisBox| b.hi[0] >= 0.3));
        assert_eq!(n, 9);
        let none: Option<fn(usize, &AxisBox) -> bool> = None;
        assert_eq!(max_feasible_horizon(&s, 0.005, 1.75, none), 10);
    }

    #[test]
    fn tightened_boxes_are_nested() {
        let s = AxisBox::symmetric(2, 1.9);
        let mut prev = s.clone();
        for k in 1..=4 {
            let b = tightened_box(&s, k, 0.05, 2.27).unwrap().unwrap();
            assert!(b.is_subset_of(&prev));
            prev = b;
        }
        assert!(tightened_box(&s, 5, 0.05, 2.27).unwrap().is_none());
    }
}
