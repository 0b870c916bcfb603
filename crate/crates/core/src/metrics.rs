//! Distance between estimated and true subspaces.

use crate::error::{Result, SdrError};
use crate::linalg;
use crate::preprocess::Basis;

/// Largest singular value of `B₀B₀ᵀ - B̂B̂ᵀ`; 0 for identical subspaces and 1
/// when one of them contains a direction orthogonal to the other.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ErrorScore(f64);

impl ErrorScore {
    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn estimation_error(b_true: &Basis, b_est: &Basis) -> Result<ErrorScore> {
    if b_true.p() != b_est.p() || b_true.q() != b_est.q() {
        return Err(SdrError::Shape {
            expected: "bases of equal p and q",
            found: "different shapes",
        });
    }
    Ok(ErrorScore(projection_distance(b_true.matrix(), b_est.matrix())))
}

/// Spectral norm of the difference of the two column-space projections.
pub(crate) fn projection_distance(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    let diff = a * a.transpose() - b * b.transpose();
    linalg::sym_spectral_norm(&diff).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn unit(p: usize, v: &[f64]) -> Basis {
        Basis::from_columns(&DMatrix::from_column_slice(p, v.len() / p, v)).unwrap()
    }

    #[test]
    fn examples() {
        let e1 = unit(2, &[1.0, 0.0]);
        let e2 = unit(2, &[0.0, 1.0]);
        assert_eq!(estimation_error(&e1, &e1).unwrap().value(), 0.0);
        assert_relative_eq!(estimation_error(&e1, &e2).unwrap().value(), 1.0, epsilon = 1e-12);
        let tilted = unit(2, &[libm::cos(core::f64::consts::PI / 6.0), 0.5]);
        assert_relative_eq!(estimation_error(&e1, &tilted).unwrap().value(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = unit(3, &[1.0, 0.0, 0.0]);
        let b = unit(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(estimation_error(&a, &b).is_err());
    }

    fn random_basis(p: usize, q: usize, seed: &[f64]) -> Basis {
        let m = DMatrix::from_fn(p, q, |i, j| seed[(i * q + j) % seed.len()] + (i as f64 * 0.37 + j as f64 * 1.3).sin());
        Basis::from_columns(&m).unwrap()
    }

    proptest! {
        #[test]
        fn symmetric_rotation_invariant_and_bounded(
            seed_a in proptest::collection::vec(-1.0f64..1.0, 12),
            seed_b in proptest::collection::vec(-1.0f64..1.0, 12),
            theta in 0.0f64..core::f64::consts::TAU,
        ) {
            let a = random_basis(5, 2, &seed_a);
            let b = random_basis(5, 2, &seed_b);
            let ab = estimation_error(&a, &b).unwrap().value();
            let ba = estimation_error(&b, &a).unwrap().value();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
            let (c, s) = (libm::cos(theta), libm::sin(theta));
            let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
            let rotated = Basis::new(b.matrix() * r).unwrap();
            let rot = estimation_error(&a, &rotated).unwrap().value();
            prop_assert!((rot - ab).abs() < 1e-10);
            prop_assert!(estimation_error(&b, &rotated).unwrap().value() < 1e-10);
        }

        #[test]
        fn rank_one_is_abs_sine(theta in 0.0f64..core::f64::consts::PI) {
            let a = unit(3, &[1.0, 0.0, 0.0]);
            let b = unit(3, &[libm::cos(theta), libm::sin(theta), 0.0]);
            let got = estimation_error(&a, &b).unwrap().value();
            prop_assert!((got - libm::sin(theta).abs()).abs() < 1e-10);
        }
    }
}
