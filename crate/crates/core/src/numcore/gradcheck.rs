//! Central-difference gradient checking.

use rand::seq::index;
use rand::Rng;

/// Outcome of a [`finite_diff_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / (|analytic| + 1e-12)` over checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate at which the maximum was attained.
    pub worst_coord: usize,
    pub checked: usize,
}

/// Compares `analytic` against central differences of `value` at `point`
/// for each coordinate in `coords`.
pub fn finite_diff_check<F>(
    mut value: F,
    point: &[f64],
    analytic: &[f64],
    coords: &[usize],
    h: f64,
) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "gradient length mismatch");
    let mut x = point.to_vec();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_coord: coords.first().copied().unwrap_or(0),
        checked: 0,
    };
    for &i in coords {
        let orig = x[i];
        x[i] = orig + h;
        let up = value(&x);
        x[i] = orig - h;
        let down = value(&x);
        x[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-12);
        if rel > worst.max_rel_error || worst.checked == 0 {
            worst.max_rel_error = rel;
            worst.worst_coord = i;
        }
        worst.checked += 1;
    }
    worst
}

/// `count` distinct coordinates out of `len`, or all of them if `len <= count`.
pub fn sample_coords<R: Rng + ?Sized>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut v = index::sample(rng, len, count).into_vec();
    v.sort_unstable();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_one() {
        let r = finite_diff_check(|x| x[0] * x[0], &[1.0], &[2.0], &[0], 1e-5);
        assert!(r.max_rel_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let r = finite_diff_check(|x| x[0] * x[1], &[2.0, 3.0], &[3.0, 1.0], &[0, 1], 1e-5);
        assert_eq!(r.worst_coord, 1);
        assert!((r.max_rel_error - 1.0).abs() < 1e-6);
    }
}
