//! Numeric abstraction for scoring and evaluation math.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive};

/// Floating-point type usable for BM25 weights and evaluation metrics.
pub trait Scalar: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("counts are representable")
    }

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal is representable")
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Display + Default + Send + Sync + 'static {}
