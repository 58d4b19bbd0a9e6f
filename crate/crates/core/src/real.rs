//! Scalar abstraction over the two working precisions.
//!
//! Accumulation always happens in the tensor's own precision; nothing in
//! this module widens intermediate sums.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

/// Working precision of a tensor or gradient bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    Double,
}

impl Precision {
    /// Dtype code used by the binary tensor dump.
    pub fn dtype_code(self) -> u8 {
        match self {
            Precision::Single => 0,
            Precision::Double => 1,
        }
    }

    pub fn from_dtype_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Precision::Single),
            1 => Some(Precision::Double),
            _ => None,
        }
    }

    pub fn byte_width(self) -> usize {
        match self {
            Precision::Single => 4,
            Precision::Double => 8,
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::Single => f.write_str("single"),
            Precision::Double => f.write_str("double"),
        }
    }
}

/// A float cell supporting atomic read-modify-write addition.
pub trait AtomicReal<T>: Send + Sync {
    fn new(value: T) -> Self;
    /// Atomically adds `value` and returns the previous contents.
    fn fetch_add(&self, value: T) -> T;
    fn load(&self) -> T;
}

/// Floating-point scalar used by every kernel in the crate.
pub trait Real:
    Copy
    + Debug
    + Display
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + MulAssign
    + Sum
{
    const PRECISION: Precision;
    const ZERO: Self;
    const ONE: Self;

    type Atomic: AtomicReal<Self>;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    /// Sign with `sign(0) = 0`, the midpoint subgradient of `|u|`.
    #[inline]
    fn sign_or_zero(self) -> Self {
        if self > Self::ZERO {
            Self::ONE
        } else if self < Self::ZERO {
            -Self::ONE
        } else {
            Self::ZERO
        }
    }

    /// `self·a + b` with a single rounding.
    fn mul_add(self, a: Self, b: Self) -> Self;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

/// Runs `f` in a context compiled with hardware fused multiply-add when the
/// CPU supports it. `mul_add` is exactly rounded either way, so results are
/// bitwise identical; only speed differs.
#[inline(always)]
pub fn with_fma<R>(f: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "fma")]
        unsafe fn fused<R>(f: impl FnOnce() -> R) -> R {
            f()
        }
        if std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { fused(f) };
        }
    }
    f()
}

macro_rules! atomic_float {
    ($name:ident, $float:ty, $bits:ty) => {
        /// Float stored as raw bits, with CAS-loop addition.
        #[derive(Debug)]
        pub struct $name($bits);

        impl AtomicReal<$float> for $name {
            #[inline]
            fn new(value: $float) -> Self {
                Self(<$bits>::new(value.to_bits()))
            }

            #[inline]
            fn fetch_add(&self, value: $float) -> $float {
                let prev = self
                    .0
                    .fetch_update(Ordering::AcqRel, Ordering::Acquire, |bits| {
                        Some((<$float>::from_bits(bits) + value).to_bits())
                    })
                    .unwrap_or_else(|bits| bits);
                <$float>::from_bits(prev)
            }

            #[inline]
            fn load(&self) -> $float {
                <$float>::from_bits(self.0.load(Ordering::Acquire))
            }
        }
    };
}

atomic_float!(AtomicF32, f32, AtomicU32);
atomic_float!(AtomicF64, f64, AtomicU64);

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    type Atomic = AtomicF32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn abs(self) -> Self {
        f32::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline]
    fn mul_add(self, a: Self, b: Self) -> Self {
        f32::mul_add(self, a, b)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte slice"))
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    type Atomic = AtomicF64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn mul_add(self, a: Self, b: Self) -> Self {
        f64::mul_add(self, a, b)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte slice"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(0.0f64.sign_or_zero(), 0.0);
        assert_eq!((-0.0f64).sign_or_zero(), 0.0);
        assert_eq!(3.5f32.sign_or_zero(), 1.0);
        assert_eq!((-1e-30f64).sign_or_zero(), -1.0);
    }

    #[test]
    fn atomic_add_returns_previous() {
        let cell = AtomicF32::new(1.5);
        assert_eq!(cell.fetch_add(2.0), 1.5);
        assert_eq!(cell.load(), 3.5);
        let cell = AtomicF64::new(-1.0);
        cell.fetch_add(0.25);
        assert_eq!(cell.load(), -0.75);
    }

    #[test]
    fn dtype_codes() {
        assert_eq!(Precision::Single.dtype_code(), 0);
        assert_eq!(Precision::from_dtype_code(1), Some(Precision::Double));
        assert_eq!(Precision::from_dtype_code(7), None);
    }
}
