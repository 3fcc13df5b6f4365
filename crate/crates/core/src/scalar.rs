//! Scalar abstraction shared by the scoring math.
//!
//! Rank, harmonic-mean and utility arithmetic only need a field with an
//! order, so they run over [`Scalar`] and accept exact rationals as well as
//! floats. Anything that needs a square root (cosine similarity) asks for
//! [`Real`] instead.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num};

/// An ordered numeric field: `f32`, `f64`, or `Ratio<i64>`.
pub trait Scalar: Num + PartialOrd + Copy + FromPrimitive + Debug {
    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    fn is_negative_value(self) -> bool {
        self < Self::zero()
    }

    fn clamp_unit(self) -> Self {
        if self < Self::zero() {
            Self::zero()
        } else if self > Self::one() {
            Self::one()
        } else {
            self
        }
    }
}

impl<T> Scalar for T where T: Num + PartialOrd + Copy + FromPrimitive + Debug {}

/// A floating-point [`Scalar`].
pub trait Real: Scalar + Float {}

impl<T> Real for T where T: Scalar + Float {}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn clamp_unit_works_for_floats_and_rationals() {
        assert_eq!(1.7f64.clamp_unit(), 1.0);
        assert_eq!((-0.2f32).clamp_unit(), 0.0);
        let half = Ratio::new(1i64, 2);
        assert_eq!(half.clamp_unit(), half);
        assert_eq!(Ratio::new(5i64, 2).clamp_unit(), Ratio::from_integer(1));
    }

    #[test]
    fn two_is_two() {
        assert_eq!(<f64 as Scalar>::two(), 2.0);
        assert_eq!(<Ratio<i64> as Scalar>::two(), Ratio::from_integer(2));
    }
}
