//! Kneedle knee detection on a descending importance curve.
//!
//! With ranks and scores min-max normalized, the difference to the chord is
//! `y_d = y_n - (1 - x_n)`. A curve lying above its chord (flat top, then a
//! cliff) is treated as concave and its knee is the last high point; one
//! lying below (sharp drop, then a tail) is convex and its knee is the first
//! low point. The orientation with the larger peak wins.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Concave,
    Convex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knee {
    /// 1-based rank of the knee point.
    pub rank: usize,
    pub shape: Shape,
    /// Number of top-ranked features above the knee: `rank` for concave
    /// curves, `rank - 1` for convex ones.
    pub cutoff: usize,
    /// Value of the oriented difference curve at the knee.
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum KneeError {
    #[error("a knee needs at least 3 points")]
    TooFewPoints,
    #[error("no knee: the difference curve has no local maximum above threshold")]
    NoKnee,
}

/// Kneedle with sensitivity `s` on scores sorted in descending order.
pub fn knee_point(sorted_desc: &[f64], s: f64) -> Result<Knee, KneeError> {
    let n = sorted_desc.len();
    if n < 3 {
        return Err(KneeError::TooFewPoints);
    }
    let (lo, hi) = sorted_desc.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 0.0) || !hi.is_finite() || !lo.is_finite() {
        return Err(KneeError::NoKnee);
    }
    let step = 1.0 / (n - 1) as f64;
    let yd: Vec<f64> = sorted_desc
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - lo) / (hi - lo) - (1.0 - i as f64 * step))
        .collect();
    let concave = best_knee(&yd, s, step);
    let neg: Vec<f64> = yd.iter().map(|v| -v).collect();
    let convex = best_knee(&neg, s, step);
    let pick = match (concave, convex) {
        (Some(a), Some(b)) => {
            if b.1 > a.1 {
                (b, Shape::Convex)
            } else {
                (a, Shape::Concave)
            }
        }
        (Some(a), None) => (a, Shape::Concave),
        (None, Some(b)) => (b, Shape::Convex),
        (None, None) => return Err(KneeError::NoKnee),
    };
    let ((idx, height), shape) = pick;
    let rank = idx + 1;
    let cutoff = match shape {
        Shape::Concave => rank,
        Shape::Convex => rank - 1,
    };
    Ok(Knee { rank, shape, cutoff, height })
}

/// Highest local maximum of `d` that is confirmed by a later drop below its
/// threshold `d[i] - s * step` before the next local maximum.
fn best_knee(d: &[f64], s: f64, step: f64) -> Option<(usize, f64)> {
    let n = d.len();
    let maxima: Vec<usize> = (1..n - 1).filter(|&i| d[i] > d[i - 1] && d[i] >= d[i + 1] && d[i] > 1e-12).collect();
    let mut best: Option<(usize, f64)> = None;
    for (k, &i) in maxima.iter().enumerate() {
        let threshold = d[i] - s * step;
        let until = maxima.get(k + 1).copied().unwrap_or(n);
        let confirmed = (i + 1..until).any(|j| d[j] < threshold);
        if confirmed && best.is_none_or(|(_, h)| d[i] > h) {
            best = Some((i, d[i]));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_derived_cliff() {
        let k = knee_point(&[10.0, 9.5, 9.0, 2.0, 1.8, 1.6], 1.0).unwrap();
        assert_eq!(k.cutoff, 3);
        // both readings agree on the cut; the convex bend is deeper
        assert_eq!(k.shape, Shape::Convex);
        assert_eq!(k.rank, 4);
        assert!((k.height - 0.3524).abs() < 1e-3);
    }

    #[test]
    fn flat_top_cliff_is_concave() {
        let k = knee_point(&[10.0, 9.9, 9.8, 9.7, 1.0, 0.0], 1.0).unwrap();
        assert_eq!(k.shape, Shape::Concave);
        assert_eq!((k.rank, k.cutoff), (4, 4));
    }

    #[test]
    fn l_shaped_curve_is_convex() {
        let k = knee_point(&[0.2, 0.18, 0.15, 0.12, 0.06, 0.05, 0.05, 0.05, 0.04, 0.04], 1.0).unwrap();
        assert_eq!(k.shape, Shape::Convex);
        assert_eq!(k.cutoff, 4);
    }

    #[test]
    fn straight_line_and_constant_have_no_knee() {
        assert_eq!(knee_point(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 1.0), Err(KneeError::NoKnee));
        assert_eq!(knee_point(&[0.0; 6], 1.0), Err(KneeError::NoKnee));
        assert_eq!(knee_point(&[1.0, 0.0], 1.0), Err(KneeError::TooFewPoints));
    }

    proptest! {
        #[test]
        fn affine_invariance(mut v in proptest::collection::vec(0.0f64..10.0, 3..15), c in 0.01f64..100.0, b in -50.0f64..50.0) {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let a = knee_point(&v, 1.0);
            let w: Vec<f64> = v.iter().map(|x| c * x + b).collect();
            let k = knee_point(&w, 1.0);
            match (a, k) {
                (Ok(a), Ok(k)) => {
                    prop_assert_eq!(a.rank, k.rank);
                    prop_assert_eq!(a.cutoff, k.cutoff);
                }
                (Err(x), Err(y)) => prop_assert_eq!(x, y),
                _ => prop_assert!(false, "affine map changed knee existence"),
            }
        }

        #[test]
        fn cutoff_within_range(mut v in proptest::collection::vec(0.0f64..1.0, 3..30)) {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if let Ok(k) = knee_point(&v, 1.0) {
                prop_assert!(k.rank >= 2 && k.rank < v.len());
                prop_assert!(k.cutoff >= 1 && k.cutoff < v.len());
            }
        }
    }
}
