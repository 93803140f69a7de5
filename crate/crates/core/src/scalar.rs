//! Scalar abstraction for the probability-vector kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable by the transient solvers: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` rate, time, or probability into this scalar.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 value representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Largest value of `rate * dt` handled by a single uniformization sweep.
    ///
    /// Keeps `exp(-rate * dt)` far from underflow for the type.
    const MAX_SWEEP_EXPONENT: f64;
}

impl Scalar for f32 {
    const MAX_SWEEP_EXPONENT: f64 = 8.0;
}

impl Scalar for f64 {
    const MAX_SWEEP_EXPONENT: f64 = 16.0;
}

/// Sums a slice with Neumaier compensation so the result does not depend
/// on how the terms happened to be produced.
pub fn compensated_sum<S: Scalar>(xs: &[S]) -> S {
    let mut sum = S::zero();
    let mut comp = S::zero();
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp = comp + ((sum - t) + x);
        } else {
            comp = comp + ((x - t) + sum);
        }
        sum = t;
    }
    sum + comp
}
