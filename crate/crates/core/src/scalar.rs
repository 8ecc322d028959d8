//! Scalar abstraction shared by the linear-algebra, state and inequality modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Real scalar the Fock-space machinery is written against (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless for integers below 2^24 (`f32`) or 2^53 (`f64`).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 is representable")
    }

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count is representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Cplx<T> = Complex<T>;

#[inline]
pub fn cplx<T: Real>(re: T, im: T) -> Cplx<T> {
    Complex::new(re, im)
}

#[inline]
pub fn real<T: Real>(re: T) -> Cplx<T> {
    Complex::new(re, T::zero())
}

/// `ln n!` accumulated from logarithms so large arguments never overflow.
pub fn ln_factorial<T: Real>(n: usize) -> T {
    (2..=n).map(|k| T::from_count(k).ln()).sum()
}

/// `ln C(n, k)`; caller guarantees `k <= n`.
pub fn ln_binomial<T: Real>(n: usize, k: usize) -> T {
    ln_factorial::<T>(n) - ln_factorial::<T>(k) - ln_factorial::<T>(n - k)
}

/// Table of `ln k!` for `k = 0..len`.
pub fn ln_factorial_table<T: Real>(len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(len);
    let mut acc = T::zero();
    for k in 0..len {
        if k > 1 {
            acc += T::from_count(k).ln();
        }
        out.push(acc);
    }
    out
}

/// `base^exp` with the convention `0^0 = 1`.
#[inline]
pub fn powu<T: Real>(base: T, exp: usize) -> T {
    if exp == 0 {
        T::one()
    } else {
        base.powi(exp as i32)
    }
}
