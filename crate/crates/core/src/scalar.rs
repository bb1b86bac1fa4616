use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the reconstruction math is generic over: f32 or f64.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum<Self> + Debug + Display + Default + Send + Sync + 'static
{
    fn from_f64_(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }
    fn to_f64_(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
