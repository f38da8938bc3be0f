//! Scalar and elementwise nonlinearities.

use core::sync::atomic::{AtomicBool, Ordering};

use crate::tensor::{Scalar, Tensor};

static CORRUPT_DSILU: AtomicBool = AtomicBool::new(false);

/// Fault-injection hook for the self-check harness: when enabled, [`dsilu_scalar`]
/// returns a perturbed derivative so that every gradient check downstream of it
/// fails. Process-global; never enable it from a test that shares a process with
/// other gradient tests.
#[doc(hidden)]
pub fn set_dsilu_fault(enabled: bool) {
    CORRUPT_DSILU.store(enabled, Ordering::SeqCst);
}

#[doc(hidden)]
pub fn dsilu_fault_enabled() -> bool {
    CORRUPT_DSILU.load(Ordering::Relaxed)
}

/// Logistic function, evaluated without overflow for either sign.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu_scalar(x: f64) -> f64 {
    x * sigmoid_scalar(x)
}

/// `d/dx [x·σ(x)] = σ(x)·(1 + x·(1 − σ(x)))`.
#[inline]
pub fn dsilu_scalar(x: f64) -> f64 {
    let s = sigmoid_scalar(x);
    let d = s * (1.0 + x * (1.0 - s));
    if dsilu_fault_enabled() {
        d + 0.25
    } else {
        d
    }
}

/// The same derivative written in terms of the activation value,
/// `SiLU(x) + σ(x)·(1 − SiLU(x))`.
#[inline]
pub fn dsilu_from_activation(x: f64) -> f64 {
    let s = sigmoid_scalar(x);
    let a = x * s;
    a + s * (1.0 - a)
}

#[inline]
pub fn relu_scalar(x: f64) -> f64 {
    x.max(0.0)
}

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map_f64(sigmoid_scalar)
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map_f64(silu_scalar)
}

pub fn dsilu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map_f64(dsilu_scalar)
}
