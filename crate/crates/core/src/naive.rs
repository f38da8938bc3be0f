//! Naive multi-head FFN: every head runs its own key-value FFN over the full
//! intermediate width and all intermediates are materialized at once.

use alloc::vec;

use crate::activation::silu_scalar;
use crate::error::{dim_err, Result};
use crate::heads::{concat_heads, split_heads, HeadLayout};
use crate::ledger::MemoryLedger;
use crate::model::head_slice;
use crate::reference::{pkv_forward, PkvParams};
use crate::tensor::{gemm_nn, gemm_nt, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveMhffnParams<T: Scalar = f64> {
    /// `d_model×d_model`
    pub w_in: Tensor<T>,
    /// `H×d_ff×d_h`
    pub keys: Tensor<T>,
    /// `H×d_ff×d_h`
    pub ups: Tensor<T>,
    /// `H×d_ff×d_h`
    pub values: Tensor<T>,
    /// `d_model×d_model`
    pub w_out: Tensor<T>,
}

impl<T: Scalar> NaiveMhffnParams<T> {
    pub fn layout(&self) -> Result<HeadLayout> {
        let (h, _, d_h) = self.keys.dims3("mhffn")?;
        HeadLayout::from_head_dim(h, d_h)
    }

    pub fn d_ff(&self) -> usize {
        self.keys.shape()[1]
    }

    pub fn validate(&self) -> Result<HeadLayout> {
        let layout = self.layout()?;
        for t in [&self.ups, &self.values] {
            if t.shape() != self.keys.shape() {
                return Err(dim_err("mhffn", self.keys.shape(), t.shape()));
            }
        }
        let d = layout.d_model();
        for w in [&self.w_in, &self.w_out] {
            if w.shape() != [d, d] {
                return Err(dim_err("mhffn", w.shape(), &[d, d]));
            }
        }
        Ok(layout)
    }
}

/// `concat_h(S)·W_out` with `S[:, h, :] = ffn_tilde(Q[:, h, :]; Kʰ, Uʰ, Vʰ)` and
/// `Q = split_h(X·W_in)`.
pub fn mhffn_forward<T: Scalar>(x: &Tensor<T>, p: &NaiveMhffnParams<T>) -> Result<Tensor<T>> {
    mhffn_forward_tracked(x, p, &mut MemoryLedger::counting_only())
}

pub fn mhffn_forward_tracked<T: Scalar>(
    x: &Tensor<T>,
    p: &NaiveMhffnParams<T>,
    ledger: &mut MemoryLedger,
) -> Result<Tensor<T>> {
    let layout = p.validate()?;
    let q = split_heads(&x.matmul(&p.w_in)?, layout)?;
    let s = mhffn_core_tracked(&q, &p.keys, &p.ups, &p.values, ledger)?;
    concat_heads(&s)?.matmul(&p.w_out)
}

/// Head-batched core on `Q: L×H×d_h`, returning `S: L×H×d_h`.
///
/// Counting policy: the SiLU pre-activation, the up projection and their
/// product are materialized for all heads (three `L×H×d_ff` buffers) and stay
/// live until the V multiplication has written the `L×H×d_h` output.
pub fn mhffn_core_tracked<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    ups: &Tensor<T>,
    values: &Tensor<T>,
    ledger: &mut MemoryLedger,
) -> Result<Tensor<T>> {
    let (l, h, d_h) = q.dims3("mhffn_core")?;
    let (kh, d_ff, kd) = keys.dims3("mhffn_core")?;
    if kh != h || kd != d_h {
        return Err(dim_err("mhffn_core", q.shape(), keys.shape()));
    }
    for t in [ups, values] {
        if t.shape() != keys.shape() {
            return Err(dim_err("mhffn_core", keys.shape(), t.shape()));
        }
    }
    let per_head = l * d_ff;
    let inter = h * per_head;

    // Head-major copies of Q so every head is a contiguous L×d_h matrix.
    let mut q_heads = vec![T::default(); l * h * d_h];
    for li in 0..l {
        for hi in 0..h {
            let src = &q.data()[(li * h + hi) * d_h..(li * h + hi + 1) * d_h];
            q_heads[(hi * l + li) * d_h..(hi * l + li + 1) * d_h].copy_from_slice(src);
        }
    }

    ledger.alloc("naive.gate_preact", inter);
    let mut gate = vec![T::default(); inter];
    ledger.alloc("naive.up", inter);
    let mut up = vec![T::default(); inter];
    for hi in 0..h {
        let qh = &q_heads[hi * l * d_h..(hi + 1) * l * d_h];
        let span = hi * per_head..(hi + 1) * per_head;
        gemm_nt(qh, keys.block(&[hi])?, &mut gate[span.clone()], l, d_h, d_ff);
        gemm_nt(qh, ups.block(&[hi])?, &mut up[span], l, d_h, d_ff);
    }
    ledger.alloc("naive.product", inter);
    let product: alloc::vec::Vec<T> = gate
        .iter()
        .zip(&up)
        .map(|(g, u)| T::from_f64(silu_scalar(g.to_f64()) * u.to_f64()))
        .collect();

    ledger.alloc("naive.output", l * h * d_h);
    let mut s = Tensor::zeros(&[l, h, d_h]);
    let mut head_out = vec![T::default(); l * d_h];
    for hi in 0..h {
        head_out.iter_mut().for_each(|v| *v = T::default());
        gemm_nn(
            &product[hi * per_head..(hi + 1) * per_head],
            values.block(&[hi])?,
            &mut head_out,
            l,
            d_ff,
            d_h,
        );
        for li in 0..l {
            s.block_mut(&[li, hi])?
                .copy_from_slice(&head_out[li * d_h..(li + 1) * d_h]);
        }
    }
    ledger.free("naive.gate_preact", inter);
    ledger.free("naive.up", inter);
    ledger.free("naive.product", inter);
    ledger.free("naive.output", l * h * d_h);
    Ok(s)
}

/// Parametric key-value baseline with the naive multi-head wiring: each head
/// attends over its own learnable keys and values instead of running a gated FFN.
#[derive(Debug, Clone, PartialEq)]
pub struct PkvMultiHeadParams<T: Scalar = f64> {
    /// `d_model×d_model`
    pub w_in: Tensor<T>,
    /// `H×d_ff×d_h`
    pub keys: Tensor<T>,
    /// `H×d_ff×d_h`
    pub values: Tensor<T>,
    /// `d_model×d_model`
    pub w_out: Tensor<T>,
}

impl<T: Scalar> PkvMultiHeadParams<T> {
    pub fn validate(&self) -> Result<HeadLayout> {
        let (h, _, d_h) = self.keys.dims3("pkv_multihead")?;
        let layout = HeadLayout::from_head_dim(h, d_h)?;
        if self.values.shape() != self.keys.shape() {
            return Err(dim_err("pkv_multihead", self.keys.shape(), self.values.shape()));
        }
        let d = layout.d_model();
        for w in [&self.w_in, &self.w_out] {
            if w.shape() != [d, d] {
                return Err(dim_err("pkv_multihead", w.shape(), &[d, d]));
            }
        }
        Ok(layout)
    }
}

pub fn pkv_multihead_forward<T: Scalar>(x: &Tensor<T>, p: &PkvMultiHeadParams<T>) -> Result<Tensor<T>> {
    let layout = p.validate()?;
    let q = split_heads(&x.matmul(&p.w_in)?, layout)?;
    let (l, h, d_h) = q.dims3("pkv_multihead")?;
    let mut s = Tensor::<T>::zeros(&[l, h, d_h]);
    for hi in 0..h {
        let head = PkvParams {
            keys: p.keys.sub_tensor(&[hi])?,
            values: p.values.sub_tensor(&[hi])?,
        };
        let y = pkv_forward(&head_slice(&q, hi)?, &head)?;
        for li in 0..l {
            s.block_mut(&[li, hi])?.copy_from_slice(y.block(&[li])?);
        }
    }
    concat_heads(&s)?.matmul(&p.w_out)
}

/// The literal footprint expression `(L·H + d_model)·d_ff`.
pub fn mhffn_activation_count(l: usize, heads: usize, d_ff: usize, d_model: usize) -> usize {
    (l * heads + d_model) * d_ff
}

/// The alternative naive-cost expression `(d_ff·H + d_model)·L`, reported next
/// to [`mhffn_activation_count`]; the two differ in the cross term.
pub fn mhffn_io_count(l: usize, heads: usize, d_ff: usize, d_model: usize) -> usize {
    (d_ff * heads + d_model) * l
}
