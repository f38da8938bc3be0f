//! Dense, unoptimized feed-forward formulations.
//!
//! Everything here materializes its intermediates and serves as the oracle that
//! the blockwise kernel and the multi-head wrappers are tested against.

use crate::activation::{gelu_scalar, relu_scalar, silu, silu_scalar};
use crate::error::{dim_err, Result};
use crate::ledger::MemoryLedger;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    Relu,
    Gelu,
    #[default]
    Silu,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Relu => relu_scalar(x),
            Nonlinearity::Gelu => gelu_scalar(x),
            Nonlinearity::Silu => silu_scalar(x),
        }
    }
}

/// Two-layer position-wise FFN, `φ(X·W1ᵀ)·W2` with both weights `d_ff×d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct VanillaFfnParams<T: Scalar = f64> {
    pub w1: Tensor<T>,
    pub w2: Tensor<T>,
    pub nonlinearity: Nonlinearity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwiGluParams<T: Scalar = f64> {
    /// `d_model×d_ff`
    pub w_up: Tensor<T>,
    /// `d_model×d_ff`
    pub w_gate: Tensor<T>,
    /// `d_ff×d_model`
    pub w_down: Tensor<T>,
}

impl<T: Scalar> SwiGluParams<T> {
    pub fn d_model(&self) -> usize {
        self.w_up.shape()[0]
    }

    pub fn d_ff(&self) -> usize {
        self.w_up.shape()[1]
    }

    pub fn validate(&self) -> Result<(usize, usize)> {
        let (d_model, d_ff) = self.w_up.dims2("swiglu")?;
        if self.w_gate.shape() != self.w_up.shape() {
            return Err(dim_err("swiglu", self.w_gate.shape(), self.w_up.shape()));
        }
        if self.w_down.shape() != [d_ff, d_model] {
            return Err(dim_err("swiglu", self.w_down.shape(), &[d_ff, d_model]));
        }
        Ok((d_model, d_ff))
    }
}

/// Softmax attention over learnable keys and values, both `d_ff×d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PkvParams<T: Scalar = f64> {
    pub keys: Tensor<T>,
    pub values: Tensor<T>,
}

impl<T: Scalar> PkvParams<T> {
    /// Logit scale `1/√d_h`.
    pub fn scale(&self) -> f64 {
        1.0 / libm::sqrt(self.keys.shape()[1] as f64)
    }
}

pub fn vanilla_ffn<T: Scalar>(x: &Tensor<T>, p: &VanillaFfnParams<T>) -> Result<Tensor<T>> {
    let (_, d_model) = x.dims2("vanilla_ffn")?;
    let (d_ff, w1_in) = p.w1.dims2("vanilla_ffn")?;
    if w1_in != d_model {
        return Err(dim_err("vanilla_ffn", x.shape(), p.w1.shape()));
    }
    if p.w2.shape() != [d_ff, d_model] {
        return Err(dim_err("vanilla_ffn", p.w1.shape(), p.w2.shape()));
    }
    let phi = p.nonlinearity;
    x.matmul_nt(&p.w1)?.map_f64(|v| phi.apply(v)).matmul(&p.w2)
}

/// `((X·W_up) ⊙ SiLU(X·W_gate))·W_down`.
pub fn swiglu_forward<T: Scalar>(x: &Tensor<T>, p: &SwiGluParams<T>) -> Result<Tensor<T>> {
    swiglu_forward_tracked(x, p, &mut MemoryLedger::new())
}

/// [`swiglu_forward`] with its intermediates registered in `ledger`.
///
/// Counting policy: the gate pre-activation, the up projection and their
/// product are three live `L×d_ff` buffers while the `L×d_model` output is
/// written; the output is handed off (freed) at the end.
pub fn swiglu_forward_tracked<T: Scalar>(
    x: &Tensor<T>,
    p: &SwiGluParams<T>,
    ledger: &mut MemoryLedger,
) -> Result<Tensor<T>> {
    let (l, d_model_x) = x.dims2("swiglu")?;
    let (d_model, d_ff) = p.validate()?;
    if d_model_x != d_model {
        return Err(dim_err("swiglu", x.shape(), p.w_up.shape()));
    }
    ledger.alloc("swiglu.gate_preact", l * d_ff);
    let gate = x.matmul(&p.w_gate)?;
    ledger.alloc("swiglu.up", l * d_ff);
    let up = x.matmul(&p.w_up)?;
    ledger.alloc("swiglu.product", l * d_ff);
    let product = silu(&gate).mul(&up)?;
    ledger.alloc("swiglu.output", l * d_model);
    let out = product.matmul(&p.w_down)?;
    ledger.free("swiglu.gate_preact", l * d_ff);
    ledger.free("swiglu.up", l * d_ff);
    ledger.free("swiglu.product", l * d_ff);
    ledger.free("swiglu.output", l * d_model);
    Ok(out)
}

/// Key-value form of a gated FFN: `(SiLU(Q·Kᵀ) ⊙ (Q·Uᵀ))·V`, with `K`, `U`, `V`
/// all `d_ff×d` and `Q` of shape `L×d`.
pub fn ffn_tilde<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    u: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (_, d) = q.dims2("ffn_tilde")?;
    let (_, dk) = k.dims2("ffn_tilde")?;
    if u.shape() != k.shape() {
        return Err(dim_err("ffn_tilde", k.shape(), u.shape()));
    }
    if v.shape() != k.shape() {
        return Err(dim_err("ffn_tilde", k.shape(), v.shape()));
    }
    if dk != d {
        return Err(dim_err("ffn_tilde", q.shape(), k.shape()));
    }
    let gate = silu(&q.matmul_nt(k)?);
    let up = q.matmul_nt(u)?;
    gate.mul(&up)?.matmul(v)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(z: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, n) = z.dims2("softmax_rows")?;
    let mut out = z.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let mut sum = 0.0;
        let mut exps = alloc::vec::Vec::with_capacity(n);
        for v in row.iter() {
            let e = libm::exp(v.to_f64() - max);
            sum += e;
            exps.push(e);
        }
        for (v, e) in row.iter_mut().zip(exps) {
            *v = T::from_f64(e / sum);
        }
    }
    Ok(out)
}

/// `softmax_rows(Q·Kᵀ/√d_h)·V`.
pub fn pkv_forward<T: Scalar>(q: &Tensor<T>, p: &PkvParams<T>) -> Result<Tensor<T>> {
    let (_, d_h) = q.dims2("pkv_forward")?;
    let (_, dk) = p.keys.dims2("pkv_forward")?;
    if dk != d_h {
        return Err(dim_err("pkv_forward", q.shape(), p.keys.shape()));
    }
    if p.values.shape() != p.keys.shape() {
        return Err(dim_err("pkv_forward", p.keys.shape(), p.values.shape()));
    }
    let logits = q.matmul_nt(&p.keys)?.scale(p.scale());
    softmax_rows(&logits)?.matmul(&p.values)
}
