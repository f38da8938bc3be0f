//! Hand-derived backward passes and the central-difference oracle.
//!
//! [`flashmhf_backward`] chains the two blockwise backward kernels with the
//! gate, head-split and projection glue. [`flashmhf_backward_dense`] computes
//! the same gradients from fully materialized intermediates and is used as a
//! second route in tests. Baseline backward passes (SwiGLU, naive multi-head,
//! parametric KV) support the toy training comparison.

use alloc::format;

use crate::activation::{dsilu_scalar, sigmoid_scalar, silu, silu_scalar};
use crate::error::{dim_err, Error, Result};
use crate::heads::{concat_heads, split_heads};
use crate::kernel::{sramffn_backward_dkuv, sramffn_backward_dq_dr, sramffn_forward, TileSpec};
use crate::ledger::MemoryLedger;
use crate::model::{check_eps, gate_forward, head_slice, project_in, FlashDims, FlashMhfParams};
use crate::naive::{NaiveMhffnParams, PkvMultiHeadParams};
use crate::reference::{softmax_rows, SwiGluParams};
use crate::tensor::{Scalar, Tensor};

/// Gradients for every FlashMHF parameter plus the input; each field mirrors
/// the shape of the tensor it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T: Scalar = f64> {
    pub dx: Tensor<T>,
    pub dw_in: Tensor<T>,
    pub dkeys: Tensor<T>,
    pub dups: Tensor<T>,
    pub dvalues: Tensor<T>,
    pub dw_gate: Tensor<T>,
    pub dw_out: Tensor<T>,
}

impl<T: Scalar> GradBundle<T> {
    /// Parameter gradients in [`crate::model::PARAM_ROLES`] order.
    pub fn params(&self) -> [(&'static str, &Tensor<T>); 6] {
        [
            ("w_in", &self.dw_in),
            ("keys", &self.dkeys),
            ("ups", &self.dups),
            ("values", &self.dvalues),
            ("w_gate", &self.dw_gate),
            ("w_out", &self.dw_out),
        ]
    }
}

/// Backward of `R = σ(P) / (Σσ(P) + eps)` along the last axis:
/// `dP_f = σ_f(1−σ_f)·[dR_f/(S+eps) − Σ_e dR_e·σ_e/(S+eps)²]`.
pub fn gate_backward<T: Scalar>(logits: &Tensor<T>, dr: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    check_eps(eps)?;
    if logits.shape() != dr.shape() {
        return Err(dim_err("gate_backward", logits.shape(), dr.shape()));
    }
    let e = *logits.shape().last().expect("tensors have rank ≥ 1");
    let mut dp = Tensor::zeros(logits.shape());
    let rows = logits.data().chunks(e).zip(dr.data().chunks(e));
    for ((p_row, dr_row), out) in rows.zip(dp.data_mut().chunks_mut(e)) {
        let sig: alloc::vec::Vec<f64> = p_row.iter().map(|p| sigmoid_scalar(p.to_f64())).collect();
        let denom = sig.iter().sum::<f64>() + eps;
        let weighted: f64 = dr_row.iter().zip(&sig).map(|(d, s)| d.to_f64() * s).sum();
        let common = weighted / (denom * denom);
        for ((o, s), d) in out.iter_mut().zip(&sig).zip(dr_row) {
            *o = T::from_f64(s * (1.0 - s) * (d.to_f64() / denom - common));
        }
    }
    Ok(dp)
}

/// Full analytic backward through the blockwise kernels.
pub fn flashmhf_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &FlashMhfParams<T>,
    dims: &FlashDims,
    d_out: &Tensor<T>,
    tiles: TileSpec,
) -> Result<GradBundle<T>> {
    flashmhf_backward_gated(x, p, dims, d_out, tiles, None)
}

/// [`flashmhf_backward`] with an optional fixed gate. With an override the
/// gate weights are constants: `dR` is discarded and `dW_gate` is zero.
pub fn flashmhf_backward_gated<T: Scalar>(
    x: &Tensor<T>,
    p: &FlashMhfParams<T>,
    dims: &FlashDims,
    d_out: &Tensor<T>,
    tiles: TileSpec,
    gate_override: Option<&Tensor<T>>,
) -> Result<GradBundle<T>> {
    let q = project_in(x, p, dims)?;
    if d_out.shape() != x.shape() {
        return Err(dim_err("flashmhf_backward", d_out.shape(), x.shape()));
    }
    let (l, h, e) = (x.shape()[0], dims.heads(), dims.experts);
    let gate = gate_forward(&q, &p.w_gate, dims.eps)?;
    let weights = match gate_override {
        Some(r) if r.shape() != [l, h, e] => {
            return Err(dim_err("gate_override", r.shape(), &[l, h, e]))
        }
        Some(r) => r.clone(),
        None => gate.weights.clone(),
    };

    let mut ledger = MemoryLedger::counting_only();
    let s = sramffn_forward(&q, &p.keys, &p.ups, &p.values, &weights, tiles, &mut ledger)?;
    let dw_out = concat_heads(&s)?.matmul_tn(d_out)?;
    let ds = split_heads(&d_out.matmul_nt(&p.w_out)?, dims.layout)?;

    let dqdr = sramffn_backward_dq_dr(&q, &p.keys, &p.ups, &p.values, &weights, &ds, tiles, &mut ledger)?;
    let dkuv = sramffn_backward_dkuv(&q, &p.keys, &p.ups, &p.values, &weights, &ds, tiles, &mut ledger)?;

    finish_backward(x, p, dims, &q, &gate.logits, dqdr.dq, &dqdr.dr, gate_override.is_none())
        .map(|(dx, dw_in, dw_gate)| GradBundle {
            dx,
            dw_in,
            dkeys: dkuv.dk,
            dups: dkuv.du,
            dvalues: dkuv.dv,
            dw_gate,
            dw_out,
        })
}

/// Gate and input-projection glue shared by both backward routes. Returns
/// `(dX, dW_in, dW_gate)`.
#[allow(clippy::too_many_arguments)]
fn finish_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &FlashMhfParams<T>,
    dims: &FlashDims,
    q: &Tensor<T>,
    logits: &Tensor<T>,
    mut dq: Tensor<T>,
    dr: &Tensor<T>,
    through_gate: bool,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (l, h, d_h, e) = (q.shape()[0], dims.heads(), dims.head_dim(), dims.experts);
    let mut dw_gate = Tensor::<T>::zeros(&[h, d_h, e]);
    if through_gate {
        let dp = gate_backward(logits, dr, dims.eps)?;
        for hi in 0..h {
            let wg = p.w_gate.sub_tensor(&[hi])?;
            let dp_h = head_slice(&dp, hi)?;
            // dQ_h += dP_h·Wʰᵀ
            let extra = dp_h.matmul_nt(&wg)?;
            for li in 0..l {
                let row = &extra.data()[li * d_h..(li + 1) * d_h];
                for (o, v) in dq.block_mut(&[li, hi])?.iter_mut().zip(row) {
                    *o = T::from_f64(o.to_f64() + v.to_f64());
                }
            }
            let g = head_slice(q, hi)?.matmul_tn(&dp_h)?;
            dw_gate.block_mut(&[hi])?.copy_from_slice(g.data());
        }
    }
    let dq_cat = concat_heads(&dq)?;
    let dw_in = x.matmul_tn(&dq_cat)?;
    let dx = dq_cat.matmul_nt(&p.w_in)?;
    Ok((dx, dw_in, dw_gate))
}

/// Same gradients as [`flashmhf_backward_gated`], computed from fully
/// materialized `L×d_e` intermediates per `(head, sub-network)`.
pub fn flashmhf_backward_dense<T: Scalar>(
    x: &Tensor<T>,
    p: &FlashMhfParams<T>,
    dims: &FlashDims,
    d_out: &Tensor<T>,
    gate_override: Option<&Tensor<T>>,
) -> Result<GradBundle<T>> {
    let q = project_in(x, p, dims)?;
    if d_out.shape() != x.shape() {
        return Err(dim_err("flashmhf_backward_dense", d_out.shape(), x.shape()));
    }
    let (l, h, d_h, e, d_e) = (x.shape()[0], dims.heads(), dims.head_dim(), dims.experts, dims.expert_dim);
    let gate = gate_forward(&q, &p.w_gate, dims.eps)?;
    let weights = gate_override.cloned().unwrap_or_else(|| gate.weights.clone());
    if weights.shape() != [l, h, e] {
        return Err(dim_err("gate_override", weights.shape(), &[l, h, e]));
    }

    let ds = split_heads(&d_out.matmul_nt(&p.w_out)?, dims.layout)?;
    let mut s = Tensor::<T>::zeros(&[l, h, d_h]);
    let mut dq = Tensor::<T>::zeros(&[l, h, d_h]);
    let mut dr = Tensor::<T>::zeros(&[l, h, e]);
    let sub = [h, e, d_e, d_h];
    let (mut dk, mut du, mut dv) = (Tensor::zeros(&sub), Tensor::zeros(&sub), Tensor::zeros(&sub));

    for hi in 0..h {
        let qh = head_slice(&q, hi)?;
        let dsh = head_slice(&ds, hi)?;
        for ei in 0..e {
            let k = p.keys.sub_tensor(&[hi, ei])?;
            let u = p.ups.sub_tensor(&[hi, ei])?;
            let v = p.values.sub_tensor(&[hi, ei])?;
            let r = Tensor::<T>::from_fn(&[l, 1], |li| weights.data()[(li * h + hi) * e + ei]);
            let m = qh.matmul_nt(&k)?;
            let n = qh.matmul_nt(&u)?;
            let a = silu(&m).mul(&n)?;
            let y = a.matmul(&v)?;
            let da = dsh.matmul_nt(&v)?;
            let mut a_weighted = a.clone();
            let mut dm = Tensor::<T>::zeros(&[l, d_e]);
            let mut dn = Tensor::<T>::zeros(&[l, d_e]);
            for li in 0..l {
                let rw = r.data()[li].to_f64();
                let yrow = &y.data()[li * d_h..(li + 1) * d_h];
                for (o, v) in s.block_mut(&[li, hi])?.iter_mut().zip(yrow) {
                    *o = T::from_f64(o.to_f64() + rw * v.to_f64());
                }
                let dsrow = &dsh.data()[li * d_h..(li + 1) * d_h];
                let dr_val: f64 = dsrow.iter().zip(yrow).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
                dr.data_mut()[(li * h + hi) * e + ei] = T::from_f64(dr_val);
                for c in 0..d_e {
                    let i = li * d_e + c;
                    let (mv, nv, dav) = (m.data()[i].to_f64(), n.data()[i].to_f64(), da.data()[i].to_f64());
                    dm.data_mut()[i] = T::from_f64(dav * rw * nv * dsilu_scalar(mv));
                    dn.data_mut()[i] = T::from_f64(dav * rw * silu_scalar(mv));
                    a_weighted.data_mut()[i] = T::from_f64(rw * a.data()[i].to_f64());
                }
            }
            let dq_h = dm.matmul(&k)?.add(&dn.matmul(&u)?)?;
            for li in 0..l {
                let row = &dq_h.data()[li * d_h..(li + 1) * d_h];
                for (o, v) in dq.block_mut(&[li, hi])?.iter_mut().zip(row) {
                    *o = T::from_f64(o.to_f64() + v.to_f64());
                }
            }
            dk.block_mut(&[hi, ei])?.copy_from_slice(dm.matmul_tn(&qh)?.data());
            du.block_mut(&[hi, ei])?.copy_from_slice(dn.matmul_tn(&qh)?.data());
            dv.block_mut(&[hi, ei])?.copy_from_slice(a_weighted.matmul_tn(&dsh)?.data());
        }
    }
    let dw_out = concat_heads(&s)?.matmul_tn(d_out)?;
    let (dx, dw_in, dw_gate) = finish_backward(
        x,
        p,
        dims,
        &q,
        &gate.logits,
        dq,
        &dr,
        gate_override.is_none(),
    )?;
    Ok(GradBundle {
        dx,
        dw_in,
        dkeys: dk,
        dups: du,
        dvalues: dv,
        dw_gate,
        dw_out,
    })
}

/// Central differences of `Σ f(x)` with respect to every coordinate of `arg`.
pub fn finite_diff<F>(f: F, arg: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    finite_diff_scalar(|t| f(t).map(|y| y.sum()), arg, h)
}

/// Central differences of a scalar-valued function.
pub fn finite_diff_scalar<F>(f: F, arg: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut grad = Tensor::zeros(arg.shape());
    let mut probe = arg.clone();
    for i in 0..arg.len() {
        let x0 = arg.data()[i];
        probe.data_mut()[i] = x0 + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = x0 - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = x0;
        let g = (plus - minus) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::Numeric {
                what: "finite_diff",
                index: i,
            });
        }
        grad.data_mut()[i] = g;
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwiGluGrads<T: Scalar = f64> {
    pub dx: Tensor<T>,
    pub dw_up: Tensor<T>,
    pub dw_gate: Tensor<T>,
    pub dw_down: Tensor<T>,
}

pub fn swiglu_backward<T: Scalar>(x: &Tensor<T>, p: &SwiGluParams<T>, dy: &Tensor<T>) -> Result<SwiGluGrads<T>> {
    p.validate()?;
    let g = x.matmul(&p.w_gate)?;
    let up = x.matmul(&p.w_up)?;
    let a = silu(&g).mul(&up)?;
    let dw_down = a.matmul_tn(dy)?;
    let da = dy.matmul_nt(&p.w_down)?;
    let mut dg = da.clone();
    let mut dup = da.clone();
    for i in 0..da.len() {
        let (gv, uv, dav) = (g.data()[i].to_f64(), up.data()[i].to_f64(), da.data()[i].to_f64());
        dg.data_mut()[i] = T::from_f64(dav * uv * dsilu_scalar(gv));
        dup.data_mut()[i] = T::from_f64(dav * silu_scalar(gv));
    }
    Ok(SwiGluGrads {
        dx: dg.matmul_nt(&p.w_gate)?.add(&dup.matmul_nt(&p.w_up)?)?,
        dw_up: x.matmul_tn(&dup)?,
        dw_gate: x.matmul_tn(&dg)?,
        dw_down,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveGrads<T: Scalar = f64> {
    pub dx: Tensor<T>,
    pub dw_in: Tensor<T>,
    pub dkeys: Tensor<T>,
    pub dups: Tensor<T>,
    pub dvalues: Tensor<T>,
    pub dw_out: Tensor<T>,
}

/// Naive multi-head backward, run through the blockwise kernels as a single
/// sub-network per head with unit gate weights.
pub fn mhffn_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &NaiveMhffnParams<T>,
    d_out: &Tensor<T>,
    tiles: TileSpec,
) -> Result<NaiveGrads<T>> {
    let layout = p.validate()?;
    if d_out.shape() != x.shape() {
        return Err(dim_err("mhffn_backward", d_out.shape(), x.shape()));
    }
    let (h, d_ff, d_h) = (layout.heads(), p.d_ff(), layout.head_dim());
    let sub = [h, 1, d_ff, d_h];
    let keys = p.keys.clone().reshape(&sub)?;
    let ups = p.ups.clone().reshape(&sub)?;
    let values = p.values.clone().reshape(&sub)?;
    let q = split_heads(&x.matmul(&p.w_in)?, layout)?;
    let l = q.shape()[0];
    let ones = Tensor::full(&[l, h, 1], T::from_f64(1.0));
    let mut ledger = MemoryLedger::counting_only();
    let s = sramffn_forward(&q, &keys, &ups, &values, &ones, tiles, &mut ledger)?;
    let dw_out = concat_heads(&s)?.matmul_tn(d_out)?;
    let ds = split_heads(&d_out.matmul_nt(&p.w_out)?, layout)?;
    let dq = sramffn_backward_dq_dr(&q, &keys, &ups, &values, &ones, &ds, tiles, &mut ledger)?.dq;
    let g = sramffn_backward_dkuv(&q, &keys, &ups, &values, &ones, &ds, tiles, &mut ledger)?;
    let dq_cat = concat_heads(&dq)?;
    let flat = [h, d_ff, d_h];
    Ok(NaiveGrads {
        dx: dq_cat.matmul_nt(&p.w_in)?,
        dw_in: x.matmul_tn(&dq_cat)?,
        dkeys: g.dk.reshape(&flat)?,
        dups: g.du.reshape(&flat)?,
        dvalues: g.dv.reshape(&flat)?,
        dw_out,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PkvGrads<T: Scalar = f64> {
    pub dx: Tensor<T>,
    pub dw_in: Tensor<T>,
    pub dkeys: Tensor<T>,
    pub dvalues: Tensor<T>,
    pub dw_out: Tensor<T>,
}

pub fn pkv_multihead_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &PkvMultiHeadParams<T>,
    d_out: &Tensor<T>,
) -> Result<PkvGrads<T>> {
    let layout = p.validate()?;
    if d_out.shape() != x.shape() {
        return Err(dim_err("pkv_multihead_backward", d_out.shape(), x.shape()));
    }
    let (h, d_h) = (layout.heads(), layout.head_dim());
    let scale = 1.0 / libm::sqrt(d_h as f64);
    let q = split_heads(&x.matmul(&p.w_in)?, layout)?;
    let ds = split_heads(&d_out.matmul_nt(&p.w_out)?, layout)?;
    let l = q.shape()[0];
    let mut s = Tensor::<T>::zeros(&[l, h, d_h]);
    let mut dq = Tensor::<T>::zeros(&[l, h, d_h]);
    let mut dkeys = Tensor::<T>::zeros(p.keys.shape());
    let mut dvalues = Tensor::<T>::zeros(p.keys.shape());
    for hi in 0..h {
        let k = p.keys.sub_tensor(&[hi])?;
        let v = p.values.sub_tensor(&[hi])?;
        let qh = head_slice(&q, hi)?;
        let dsh = head_slice(&ds, hi)?;
        let attn = softmax_rows(&qh.matmul_nt(&k)?.scale(scale))?;
        let y = attn.matmul(&v)?;
        let dattn = dsh.matmul_nt(&v)?;
        let n = attn.shape()[1];
        let mut dz = attn.clone();
        for (li, row) in dz.data_mut().chunks_mut(n).enumerate() {
            let pa = &attn.data()[li * n..(li + 1) * n];
            let dpa = &dattn.data()[li * n..(li + 1) * n];
            let dot: f64 = pa.iter().zip(dpa).map(|(a, b)| a.to_f64() * b.to_f64()).sum();
            for ((o, a), b) in row.iter_mut().zip(pa).zip(dpa) {
                *o = T::from_f64(scale * a.to_f64() * (b.to_f64() - dot));
            }
        }
        let dq_h = dz.matmul(&k)?;
        for li in 0..l {
            s.block_mut(&[li, hi])?.copy_from_slice(y.block(&[li])?);
            dq.block_mut(&[li, hi])?.copy_from_slice(dq_h.block(&[li])?);
        }
        dkeys.block_mut(&[hi])?.copy_from_slice(dz.matmul_tn(&qh)?.data());
        dvalues.block_mut(&[hi])?.copy_from_slice(attn.matmul_tn(&dsh)?.data());
    }
    let dq_cat = concat_heads(&dq)?;
    Ok(PkvGrads {
        dx: dq_cat.matmul_nt(&p.w_in)?,
        dw_in: x.matmul_tn(&dq_cat)?,
        dkeys,
        dvalues,
        dw_out: concat_heads(&s)?.matmul_tn(d_out)?,
    })
}

/// Scratch for callers that want a zeroed bundle of the right shapes.
pub fn zero_bundle<T: Scalar>(p: &FlashMhfParams<T>, x: &Tensor<T>) -> GradBundle<T> {
    GradBundle {
        dx: Tensor::zeros_like(x),
        dw_in: Tensor::zeros_like(&p.w_in),
        dkeys: Tensor::zeros_like(&p.keys),
        dups: Tensor::zeros_like(&p.ups),
        dvalues: Tensor::zeros_like(&p.values),
        dw_gate: Tensor::zeros_like(&p.w_gate),
        dw_out: Tensor::zeros_like(&p.w_out),
    }
}
