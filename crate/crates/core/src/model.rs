//! Gated multi-head FFN: per head, a sigmoid-normalized mixture of `E` private
//! key-value FFN sub-networks.
//!
//! [`flashmhf_forward_reference`] materializes every intermediate and is the
//! oracle for the blockwise path in [`crate::kernel`].

use alloc::format;

use crate::activation::sigmoid_scalar;
use crate::error::{dim_err, Error, Result};
use crate::heads::{concat_heads, split_heads, HeadLayout};
use crate::init::{normal_tensor, INITIALIZER_RANGE};
use crate::reference::ffn_tilde;
use crate::tensor::{gemm_nn, Scalar, Tensor};

pub const DEFAULT_GATE_EPS: f64 = 1e-6;

/// Sub-network width for a head of width `d_h`: `(8/3)·d_h` rounded up to a
/// multiple of 64.
pub fn subnet_dim(head_dim: usize) -> usize {
    (8 * head_dim).div_ceil(3 * 64) * 64
}

/// Intermediate-to-head width ratio `d_ff / d_h` of a single-pathway head.
pub fn ffn_head_ratio(d_ff: usize, head_dim: usize) -> f64 {
    d_ff as f64 / head_dim as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlashDims {
    pub layout: HeadLayout,
    pub experts: usize,
    pub expert_dim: usize,
    pub eps: f64,
}

impl FlashDims {
    /// Sizing-rule constructor: `d_e = subnet_dim(d_model / heads)`.
    pub fn new(d_model: usize, heads: usize, experts: usize) -> Result<Self> {
        let layout = HeadLayout::new(d_model, heads)?;
        Self::with_expert_dim(layout, experts, subnet_dim(layout.head_dim()))
    }

    /// Explicit `(E, d_e)` override.
    pub fn with_expert_dim(layout: HeadLayout, experts: usize, expert_dim: usize) -> Result<Self> {
        if experts == 0 || expert_dim == 0 {
            return Err(Error::Config(format!(
                "experts ({experts}) and expert_dim ({expert_dim}) must be positive"
            )));
        }
        Ok(Self {
            layout,
            experts,
            expert_dim,
            eps: DEFAULT_GATE_EPS,
        })
    }

    /// Single head spanning the whole model width: a dense mixture of experts.
    pub fn dense_moe(d_model: usize, experts: usize) -> Result<Self> {
        Self::new(d_model, 1, experts)
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        self.eps = eps;
        Ok(self)
    }

    pub fn heads(&self) -> usize {
        self.layout.heads()
    }

    pub fn head_dim(&self) -> usize {
        self.layout.head_dim()
    }

    pub fn d_model(&self) -> usize {
        self.layout.d_model()
    }

    pub fn d_ff(&self) -> usize {
        self.experts * self.expert_dim
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        let d = self.d_model();
        2 * d * d + 3 * self.heads() * self.d_ff() * self.head_dim()
            + self.heads() * self.head_dim() * self.experts
    }
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("gate eps must be positive, got {eps}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlashMhfParams<T: Scalar = f64> {
    /// `d_model×d_model`
    pub w_in: Tensor<T>,
    /// `H×E×d_e×d_h`
    pub keys: Tensor<T>,
    /// `H×E×d_e×d_h`
    pub ups: Tensor<T>,
    /// `H×E×d_e×d_h`
    pub values: Tensor<T>,
    /// `H×d_h×E`
    pub w_gate: Tensor<T>,
    /// `d_model×d_model`
    pub w_out: Tensor<T>,
}

/// Role tags in serialization order.
pub const PARAM_ROLES: [&str; 6] = ["w_in", "keys", "ups", "values", "w_gate", "w_out"];

impl<T: Scalar> FlashMhfParams<T> {
    pub fn validate(&self, dims: &FlashDims) -> Result<()> {
        let d = dims.d_model();
        let sub = [dims.heads(), dims.experts, dims.expert_dim, dims.head_dim()];
        let expected: [(&Tensor<T>, &[usize]); 6] = [
            (&self.w_in, &[d, d]),
            (&self.keys, &sub),
            (&self.ups, &sub),
            (&self.values, &sub),
            (&self.w_gate, &[dims.heads(), dims.head_dim(), dims.experts]),
            (&self.w_out, &[d, d]),
        ];
        for (t, shape) in expected {
            if t.shape() != shape {
                return Err(dim_err("flashmhf_params", t.shape(), shape));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor<T>); 6] {
        [
            ("w_in", &self.w_in),
            ("keys", &self.keys),
            ("ups", &self.ups),
            ("values", &self.values),
            ("w_gate", &self.w_gate),
            ("w_out", &self.w_out),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor<T>); 6] {
        [
            ("w_in", &mut self.w_in),
            ("keys", &mut self.keys),
            ("ups", &mut self.ups),
            ("values", &mut self.values),
            ("w_gate", &mut self.w_gate),
            ("w_out", &mut self.w_out),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> FlashMhfParams<U> {
        FlashMhfParams {
            w_in: self.w_in.cast(),
            keys: self.keys.cast(),
            ups: self.ups.cast(),
            values: self.values.cast(),
            w_gate: self.w_gate.cast(),
            w_out: self.w_out.cast(),
        }
    }
}

/// Every weight i.i.d. `N(0, 0.02²)`, one stream per role tag.
pub fn init_params<T: Scalar>(dims: &FlashDims, seed: u64) -> FlashMhfParams<T> {
    init_params_with_std(dims, seed, INITIALIZER_RANGE)
}

pub fn init_params_with_std<T: Scalar>(dims: &FlashDims, seed: u64, std: f64) -> FlashMhfParams<T> {
    let d = dims.d_model();
    let sub = [dims.heads(), dims.experts, dims.expert_dim, dims.head_dim()];
    FlashMhfParams {
        w_in: normal_tensor(&[d, d], std, seed, "w_in"),
        keys: normal_tensor(&sub, std, seed, "keys"),
        ups: normal_tensor(&sub, std, seed, "ups"),
        values: normal_tensor(&sub, std, seed, "values"),
        w_gate: normal_tensor(&[dims.heads(), dims.head_dim(), dims.experts], std, seed, "w_gate"),
        w_out: normal_tensor(&[d, d], std, seed, "w_out"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput<T: Scalar = f64> {
    /// `L×H×E`
    pub logits: Tensor<T>,
    /// `L×H×E`, `σ(P)/(Σσ(P) + eps)` per row.
    pub weights: Tensor<T>,
}

/// `P[:, h, :] = Q[:, h, :]·Wʰ`, `R = σ(P) / (Σ_e σ(P) + eps)`.
pub fn gate_forward<T: Scalar>(q: &Tensor<T>, w_gate: &Tensor<T>, eps: f64) -> Result<GateOutput<T>> {
    check_eps(eps)?;
    let (l, h, d_h) = q.dims3("gate_forward")?;
    let (gh, gd, e) = w_gate.dims3("gate_forward")?;
    if gh != h || gd != d_h {
        return Err(dim_err("gate_forward", q.shape(), w_gate.shape()));
    }
    let mut logits = Tensor::<T>::zeros(&[l, h, e]);
    for li in 0..l {
        for hi in 0..h {
            let qrow = q.block(&[li, hi])?;
            let out = logits.block_mut(&[li, hi])?;
            gemm_nn(qrow, w_gate.block(&[hi])?, out, 1, d_h, e);
        }
    }
    let weights = normalize_gate(&logits, eps);
    Ok(GateOutput { logits, weights })
}

pub(crate) fn normalize_gate<T: Scalar>(logits: &Tensor<T>, eps: f64) -> Tensor<T> {
    let e = *logits.shape().last().expect("rank-3 logits");
    let mut weights = logits.clone();
    for row in weights.data_mut().chunks_mut(e) {
        let sig: alloc::vec::Vec<f64> = row.iter().map(|p| sigmoid_scalar(p.to_f64())).collect();
        let denom = sig.iter().sum::<f64>() + eps;
        for (r, s) in row.iter_mut().zip(sig) {
            *r = T::from_f64(s / denom);
        }
    }
    weights
}

/// Dense forward: `concat_h(S)·W_out` with
/// `S[l, h, :] = Σ_e R[l, h, e]·ffn_tilde(Q[l, h, :]; K_eʰ, U_eʰ, V_eʰ)`.
///
/// `gate_override` (an `L×H×E` tensor) replaces the computed gate weights and
/// exists for tests only.
pub fn flashmhf_forward_reference<T: Scalar>(
    x: &Tensor<T>,
    p: &FlashMhfParams<T>,
    dims: &FlashDims,
    gate_override: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let q = project_in(x, p, dims)?;
    let weights = match gate_override {
        Some(r) => {
            let (l, h) = (q.shape()[0], dims.heads());
            if r.shape() != [l, h, dims.experts] {
                return Err(dim_err("gate_override", r.shape(), &[l, h, dims.experts]));
            }
            r.clone()
        }
        None => gate_forward(&q, &p.w_gate, dims.eps)?.weights,
    };
    let s = mixture_reference(&q, &p.keys, &p.ups, &p.values, &weights)?;
    concat_heads(&s)?.matmul(&p.w_out)
}

/// `Q = split_h(X·W_in)` after checking every parameter shape.
pub fn project_in<T: Scalar>(x: &Tensor<T>, p: &FlashMhfParams<T>, dims: &FlashDims) -> Result<Tensor<T>> {
    p.validate(dims)?;
    let (_, d) = x.dims2("flashmhf_forward")?;
    if d != dims.d_model() {
        return Err(dim_err("flashmhf_forward", x.shape(), p.w_in.shape()));
    }
    split_heads(&x.matmul(&p.w_in)?, dims.layout)
}

/// Dense per-head mixture on `Q: L×H×d_h`, returning `S: L×H×d_h`.
pub fn mixture_reference<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    ups: &Tensor<T>,
    values: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (l, h, d_h) = q.dims3("mixture_reference")?;
    let (kh, e, _, kd) = keys.dims4("mixture_reference")?;
    if kh != h || kd != d_h {
        return Err(dim_err("mixture_reference", q.shape(), keys.shape()));
    }
    if weights.shape() != [l, h, e] {
        return Err(dim_err("mixture_reference", weights.shape(), &[l, h, e]));
    }
    let mut s = Tensor::<T>::zeros(&[l, h, d_h]);
    for hi in 0..h {
        let qh = head_slice(q, hi)?;
        for ei in 0..e {
            let sub = ffn_tilde(
                &qh,
                &keys.sub_tensor(&[hi, ei])?,
                &ups.sub_tensor(&[hi, ei])?,
                &values.sub_tensor(&[hi, ei])?,
            )?;
            for li in 0..l {
                let r = weights.get(&[li, hi, ei])?.to_f64();
                let row = &sub.data()[li * d_h..(li + 1) * d_h];
                for (o, v) in s.block_mut(&[li, hi])?.iter_mut().zip(row) {
                    *o = T::from_f64(o.to_f64() + r * v.to_f64());
                }
            }
        }
    }
    Ok(s)
}

/// `Q[:, h, :]` as an owned `L×d_h` matrix.
pub fn head_slice<T: Scalar>(q: &Tensor<T>, head: usize) -> Result<Tensor<T>> {
    let (l, _, d_h) = q.dims3("head_slice")?;
    let mut out = Tensor::zeros(&[l, d_h]);
    for li in 0..l {
        out.block_mut(&[li])?.copy_from_slice(q.block(&[li, head])?);
    }
    Ok(out)
}
