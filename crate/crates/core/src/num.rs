//! Scalar abstraction shared by the trainer, the tagger and the serializers.
//!
//! Everything numeric in the crate is generic over [`Real`]. `f64` is used by
//! the gradient and oracle tests, `f32` by the production trainer and the
//! on-disk formats.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + NumCast
    + Default
    + Debug
    + Display
    + LowerExp
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lock-free cell used for unsynchronized shared updates.
    type Atomic: AtomicReal<Self>;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        NumCast::from(self).expect("finite cast")
    }

    fn as_f32(self) -> f32 {
        NumCast::from(self).expect("finite cast")
    }

    fn widen(x: f32) -> Self {
        <Self as NumCast>::from(x).expect("f32 representable")
    }
}

/// A scalar cell with relaxed load/store semantics.
///
/// Concurrent `add` calls may lose updates; that is the contract of
/// asynchronous SGD workers.
pub trait AtomicReal<F>: Send + Sync {
    fn new(value: F) -> Self;
    fn get(&self) -> F;
    fn set(&self, value: F);

    fn add(&self, delta: F)
    where
        F: Real,
    {
        self.set(self.get() + delta);
    }
}

pub struct AtomicF32(AtomicU32);
pub struct AtomicF64(AtomicU64);

impl AtomicReal<f32> for AtomicF32 {
    fn new(value: f32) -> Self {
        AtomicF32(AtomicU32::new(value.to_bits()))
    }
    fn get(&self) -> f32 {
        f32::from_bits(self.0.load(Ordering::Relaxed))
    }
    fn set(&self, value: f32) {
        self.0.store(value.to_bits(), Ordering::Relaxed)
    }
}

impl AtomicReal<f64> for AtomicF64 {
    fn new(value: f64) -> Self {
        AtomicF64(AtomicU64::new(value.to_bits()))
    }
    fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Relaxed))
    }
    fn set(&self, value: f64) {
        self.0.store(value.to_bits(), Ordering::Relaxed)
    }
}

impl Real for f32 {
    type Atomic = AtomicF32;
}

impl Real for f64 {
    type Atomic = AtomicF64;
}

/// Logistic function.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
pub fn log_sigmoid<F: Real>(x: F) -> F {
    // ln σ(x) = -softplus(-x)
    if x >= F::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Numerically stable `ln Σ exp(xs)`. Empty input gives `-inf`.
pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let max = xs.iter().copied().fold(F::neg_infinity(), F::max);
    if max == F::neg_infinity() {
        return max;
    }
    let sum: F = xs.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy<F: Real>(alpha: F, x: &[F], y: &mut [F]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm<F: Real>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine<F: Real>(a: &[F], b: &[F]) -> F {
    let na = norm(a);
    let nb = norm(b);
    if na == F::zero() || nb == F::zero() {
        return F::zero();
    }
    dot(a, b) / (na * nb)
}
