use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Real scalar usable by the numerical kernels.
pub trait Scalar:
    Float + FromPrimitive + NumCast + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant; panics only if the target cannot represent finite values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + NumCast + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
}

/// Entrywise maximum absolute value.
pub fn max_abs<S: Scalar>(v: &[S]) -> S {
    v.iter().fold(S::zero(), |acc, x| acc.max(x.abs()))
}
