//! Concave binarity penalty and its tangent majorizer.

use crate::error::{invalid, Result};

fn check_unit(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => invalid(format!("selector value {v} outside [0,1]")),
        None => Ok(()),
    }
}

/// `sum y (1 - y)`: zero exactly on binary points.
pub fn penalty(y: &[f64]) -> Result<f64> {
    check_unit(y)?;
    Ok(y.iter().map(|v| v * (1.0 - v)).sum())
}

/// Tangent of the penalty at `y_prev`, evaluated at `y`. Since the penalty is concave
/// the tangent lies above it everywhere.
pub fn linearized_penalty(y: &[f64], y_prev: &[f64]) -> Result<f64> {
    if y.len() != y_prev.len() {
        return invalid("selector vectors differ in length");
    }
    check_unit(y)?;
    check_unit(y_prev)?;
    Ok(y.iter()
        .zip(y_prev)
        .map(|(y, p)| (1.0 - 2.0 * p) * y + p * p)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_points_have_zero_penalty() {
        assert_eq!(penalty(&[0.0, 1.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(penalty(&[0.5]).unwrap(), 0.25);
        assert!(penalty(&[1.5]).is_err());
    }

    #[test]
    fn tangent_touches_at_anchor() {
        let y = [0.2, 0.7, 0.1];
        assert!((linearized_penalty(&y, &y).unwrap() - penalty(&y).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn binary_anchor_gives_sign_pattern() {
        // anchor 1 -> contributes 1 - y, anchor 0 -> contributes y
        let y = [0.3, 0.8, 0.5];
        let prev = [1.0, 0.0, 1.0];
        let expected = (1.0 - 0.3) + 0.8 + (1.0 - 0.5);
        assert!((linearized_penalty(&y, &prev).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_or_out_of_range() {
        assert!(linearized_penalty(&[0.1], &[0.1, 0.2]).is_err());
        assert!(linearized_penalty(&[-0.1], &[0.1]).is_err());
    }

    proptest! {
        #[test]
        fn penalty_matches_direct_sum(y in prop::collection::vec(0.0f64..=1.0, 0..20)) {
            let mut direct = 0.0;
            for v in &y {
                direct += v - v * v;
            }
            prop_assert!((penalty(&y).unwrap() - direct).abs() <= 1e-12);
        }

        #[test]
        fn tangent_majorizes(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..20)) {
            let (y, prev): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(penalty(&y).unwrap() <= linearized_penalty(&y, &prev).unwrap() + 1e-12);
        }
    }
}
