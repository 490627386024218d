//! Scalar abstraction for lattice fields.
//!
//! Geometry and stencil code is written once against [`Real`] so that the
//! same operators serve `f64` (all solvers and Monte Carlo) and `f32`
//! (cheap storage for large probe fields).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar usable as a field value.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` constant.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
