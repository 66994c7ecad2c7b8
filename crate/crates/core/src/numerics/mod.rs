//! Dense numeric kernel shared by the quantiser and the SSL losses.

mod adam;
mod gradcheck;
mod matrix;
mod rng;
mod softmax;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::finite_difference_check;
pub use matrix::Matrix;
pub use rng::{streams, Rng};
pub use softmax::{cross_entropy, log_softmax, softmax, softmax_in_place};

/// Floating-point scalar the whole crate is generic over.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Squared euclidean distance.
#[inline]
pub fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Index of the largest entry, lowest index on ties. `None` for an empty slice.
pub fn argmax<T: Real>(xs: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

pub(crate) fn check_finite<T: Real>(xs: &[T], what: &str) -> crate::Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(crate::Error::InvalidInput(format!(
            "{what}: non-finite value at position {i}"
        ))),
        None => Ok(()),
    }
}
