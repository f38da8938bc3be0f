//! Blockwise fused FFN kernel.
//!
//! The forward pass never materializes the `L×d_ff` intermediate. For each
//! grid cell `(head, sequence block)` an accumulator of `block_seq×d_h` starts
//! at zero and every `(sub-network, intermediate tile)` pair adds
//! `(SiLU(Q·K_tileᵀ) ⊙ (Q·U_tileᵀ) ⊙ r)·V_tile` into it. The two backward
//! kernels recompute `M = Q·K_tileᵀ` and `N = Q·U_tileᵀ` from the saved inputs
//! instead of storing them.
//!
//! Tiles past the sequence tail or past `d_e` are masked: rows and columns
//! beyond the valid range are neither loaded nor stored, which is equivalent to
//! zero padding. The ledger is charged the full padded tile size, as an SRAM
//! tile would be.
//!
//! Cells execute serially; each cell's scratch is charged to a sub-ledger that
//! is merged into the caller's ledger after the cell finishes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::activation::{dsilu_scalar, sigmoid_scalar};
use crate::error::{dim_err, Error, Result};
use crate::heads::concat_heads;
use crate::ledger::{
    backward_dkuv_cell_elements, backward_dq_dr_cell_elements, forward_cell_elements, MemoryLedger,
};
use crate::model::{gate_forward, project_in, FlashDims, FlashMhfParams};
use crate::tensor::{Scalar, Tensor};

/// Blocking parameters: sequence rows per cell and intermediate rows per tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileSpec {
    pub block_seq: usize,
    pub block_inter: usize,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            block_seq: 64,
            block_inter: 64,
        }
    }
}

impl TileSpec {
    pub fn new(block_seq: usize, block_inter: usize) -> Result<Self> {
        if block_seq == 0 || block_inter == 0 {
            return Err(Error::Config(format!(
                "tile sizes must be positive, got block_seq={block_seq} block_inter={block_inter}"
            )));
        }
        Ok(Self {
            block_seq,
            block_inter,
        })
    }

    /// Number of forward / dQ-dR grid cells.
    pub fn seq_cells(&self, seq_len: usize, heads: usize) -> usize {
        heads * seq_len.div_ceil(self.block_seq)
    }
}

/// Validated extents shared by the three kernels.
#[derive(Debug, Clone, Copy)]
struct Extents {
    l: usize,
    h: usize,
    d_h: usize,
    e: usize,
    d_e: usize,
}

fn check_inputs<T: Scalar>(
    op: &'static str,
    q: &Tensor<T>,
    keys: &Tensor<T>,
    ups: &Tensor<T>,
    values: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<Extents> {
    let (l, h, d_h) = q.dims3(op)?;
    let (kh, e, d_e, kd) = keys.dims4(op)?;
    if kh != h || kd != d_h {
        return Err(dim_err(op, q.shape(), keys.shape()));
    }
    for t in [ups, values] {
        if t.shape() != keys.shape() {
            return Err(dim_err(op, keys.shape(), t.shape()));
        }
    }
    if weights.shape() != [l, h, e] {
        return Err(dim_err(op, weights.shape(), &[l, h, e]));
    }
    Ok(Extents { l, h, d_h, e, d_e })
}

/// Masked load of rows `s0..s0+rows` of head `h` from an `L×H×d` tensor.
fn load_rows<T: Scalar>(src: &Tensor<T>, h: usize, s0: usize, rows: usize, dst: &mut [T]) {
    let (_, heads, d) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    for r in 0..rows {
        let at = ((s0 + r) * heads + h) * d;
        dst[r * d..(r + 1) * d].copy_from_slice(&src.data()[at..at + d]);
    }
}

/// `out[r, c] = Σ_j a[r, j]·b[c, j]` over the valid `rows×cols` window, stored
/// with row stride `ld`.
#[inline]
fn tile_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], rows: usize, cols: usize, d: usize, ld: usize) {
    for r in 0..rows {
        let ar = &a[r * d..(r + 1) * d];
        for c in 0..cols {
            let br = &b[c * d..(c + 1) * d];
            let dot: f64 = ar.iter().zip(br).map(|(x, y)| x.to_f64() * y.to_f64()).sum();
            out[r * ld + c] = T::from_f64(dot);
        }
    }
}

/// Blockwise forward. `q: L×H×d_h`, `keys/ups/values: H×E×d_e×d_h`,
/// `weights: L×H×E` (already normalized; not checked). Returns `S: L×H×d_h`.
pub fn sramffn_forward<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    ups: &Tensor<T>,
    values: &Tensor<T>,
    weights: &Tensor<T>,
    tiles: TileSpec,
    ledger: &mut MemoryLedger,
) -> Result<Tensor<T>> {
    let x = check_inputs("sramffn_forward", q, keys, ups, values, weights)?;
    let (bs, bi) = (tiles.block_seq, tiles.block_inter);
    let out_len = x.l * x.h * x.d_h;
    ledger.alloc("forward.output", out_len);
    let mut out = Tensor::<T>::zeros(&[x.l, x.h, x.d_h]);

    let mut q_blk = vec![T::default(); bs * x.d_h];
    let mut acc = vec![0.0f64; bs * x.d_h];
    let mut m_tile = vec![T::default(); bs * bi];
    let mut n_tile = vec![T::default(); bs * bi];

    for h in 0..x.h {
        for s0 in (0..x.l).step_by(bs) {
            let rows = bs.min(x.l - s0);
            let mut cell = MemoryLedger::new();
            cell.alloc("forward.acc", bs * x.d_h);
            cell.alloc("forward.m_tile", bs * bi);
            cell.alloc("forward.n_tile", bs * bi);

            load_rows(q, h, s0, rows, &mut q_blk);
            acc.iter_mut().for_each(|v| *v = 0.0);
            for e in 0..x.e {
                let k = keys.block(&[h, e])?;
                let u = ups.block(&[h, e])?;
                let v = values.block(&[h, e])?;
                for m0 in (0..x.d_e).step_by(bi) {
                    let cols = bi.min(x.d_e - m0);
                    let span = m0 * x.d_h..(m0 + cols) * x.d_h;
                    tile_nt(&q_blk, &k[span.clone()], &mut m_tile, rows, cols, x.d_h, bi);
                    tile_nt(&q_blk, &u[span.clone()], &mut n_tile, rows, cols, x.d_h, bi);
                    let v_tile = &v[span];
                    for r in 0..rows {
                        let rw = weights.data()[((s0 + r) * x.h + h) * x.e + e].to_f64();
                        let acc_row = &mut acc[r * x.d_h..(r + 1) * x.d_h];
                        for c in 0..cols {
                            let mv = m_tile[r * bi + c].to_f64();
                            let a = mv * sigmoid_scalar(mv) * n_tile[r * bi + c].to_f64();
                            // A overwrites N in place.
                            let a = T::from_f64(a * rw);
                            n_tile[r * bi + c] = a;
                            let a = a.to_f64();
                            for (o, vv) in acc_row.iter_mut().zip(&v_tile[c * x.d_h..(c + 1) * x.d_h]) {
                                *o += a * vv.to_f64();
                            }
                        }
                    }
                }
            }
            for r in 0..rows {
                let dst = out.block_mut(&[s0 + r, h])?;
                for (o, a) in dst.iter_mut().zip(&acc[r * x.d_h..(r + 1) * x.d_h]) {
                    *o = T::from_f64(*a);
                }
            }
            cell.free("forward.n_tile", bs * bi);
            cell.free("forward.m_tile", bs * bi);
            cell.free("forward.acc", bs * x.d_h);
            debug_assert_eq!(cell.peak(), forward_cell_elements(tiles, x.d_h));
            ledger.absorb_serial(&cell);
        }
    }
    ledger.free("forward.output", out_len);
    Ok(out)
}

/// Gradients of the blockwise forward with respect to `Q` and the gate weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DqDr<T: Scalar = f64> {
    /// `L×H×d_h`
    pub dq: Tensor<T>,
    /// `L×H×E`
    pub dr: Tensor<T>,
}

/// dQ/dR backward: one grid cell per `(head, sequence block)`, accumulating
/// over sub-networks and intermediate tiles.
#[allow(clippy::too_many_arguments)]
pub fn sramffn_backward_dq_dr<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    ups: &Tensor<T>,
    values: &Tensor<T>,
    weights: &Tensor<T>,
    ds: &Tensor<T>,
    tiles: TileSpec,
    ledger: &mut MemoryLedger,
) -> Result<DqDr<T>> {
    let x = check_inputs("sramffn_backward_dq_dr", q, keys, ups, values, weights)?;
    if ds.shape() != q.shape() {
        return Err(dim_err("sramffn_backward_dq_dr", ds.shape(), q.shape()));
    }
    let (bs, bi, d_h) = (tiles.block_seq, tiles.block_inter, x.d_h);
    let outputs = x.l * x.h * d_h + x.l * x.h * x.e;
    ledger.alloc("dq_dr.outputs", outputs);
    let mut dq = Tensor::<T>::zeros(&[x.l, x.h, d_h]);
    let mut dr = Tensor::<T>::zeros(&[x.l, x.h, x.e]);

    let mut q_blk = vec![T::default(); bs * d_h];
    let mut ds_blk = vec![T::default(); bs * d_h];
    let mut dq_acc = vec![0.0f64; bs * d_h];
    let mut dr_rows = vec![0.0f64; bs];
    let mut m_tile = vec![T::default(); bs * bi];
    let mut n_tile = vec![T::default(); bs * bi];
    let mut da_tile = vec![T::default(); bs * bi];

    for h in 0..x.h {
        for s0 in (0..x.l).step_by(bs) {
            let rows = bs.min(x.l - s0);
            let mut cell = MemoryLedger::new();
            cell.alloc("dq_dr.dq_acc", bs * d_h);
            cell.alloc("dq_dr.dr_rows", bs);
            cell.alloc("dq_dr.m_tile", bs * bi);
            cell.alloc("dq_dr.n_tile", bs * bi);
            cell.alloc("dq_dr.da_tile", bs * bi);

            load_rows(q, h, s0, rows, &mut q_blk);
            load_rows(ds, h, s0, rows, &mut ds_blk);
            dq_acc.iter_mut().for_each(|v| *v = 0.0);
            for e in 0..x.e {
                dr_rows.iter_mut().for_each(|v| *v = 0.0);
                let k = keys.block(&[h, e])?;
                let u = ups.block(&[h, e])?;
                let v = values.block(&[h, e])?;
                for m0 in (0..x.d_e).step_by(bi) {
                    let cols = bi.min(x.d_e - m0);
                    let span = m0 * d_h..(m0 + cols) * d_h;
                    let (k_tile, u_tile) = (&k[span.clone()], &u[span.clone()]);
                    tile_nt(&q_blk, k_tile, &mut m_tile, rows, cols, d_h, bi);
                    tile_nt(&q_blk, u_tile, &mut n_tile, rows, cols, d_h, bi);
                    tile_nt(&ds_blk, &v[span], &mut da_tile, rows, cols, d_h, bi);
                    for r in 0..rows {
                        let rw = weights.data()[((s0 + r) * x.h + h) * x.e + e].to_f64();
                        for c in 0..cols {
                            let i = r * bi + c;
                            let (mv, nv, da) =
                                (m_tile[i].to_f64(), n_tile[i].to_f64(), da_tile[i].to_f64());
                            let silu = mv * sigmoid_scalar(mv);
                            dr_rows[r] += da * silu * nv;
                            // dM and dN overwrite M and N.
                            m_tile[i] = T::from_f64(da * rw * nv * dsilu_scalar(mv));
                            n_tile[i] = T::from_f64(da * silu * rw);
                        }
                        let acc_row = &mut dq_acc[r * d_h..(r + 1) * d_h];
                        for c in 0..cols {
                            let (dm, dn) = (m_tile[r * bi + c].to_f64(), n_tile[r * bi + c].to_f64());
                            let kr = &k_tile[c * d_h..(c + 1) * d_h];
                            let ur = &u_tile[c * d_h..(c + 1) * d_h];
                            for ((o, kv), uv) in acc_row.iter_mut().zip(kr).zip(ur) {
                                *o += dm * kv.to_f64() + dn * uv.to_f64();
                            }
                        }
                    }
                }
                for r in 0..rows {
                    dr.data_mut()[((s0 + r) * x.h + h) * x.e + e] = T::from_f64(dr_rows[r]);
                }
            }
            for r in 0..rows {
                let dst = dq.block_mut(&[s0 + r, h])?;
                for (o, a) in dst.iter_mut().zip(&dq_acc[r * d_h..(r + 1) * d_h]) {
                    *o = T::from_f64(*a);
                }
            }
            cell.free("dq_dr.da_tile", bs * bi);
            cell.free("dq_dr.n_tile", bs * bi);
            cell.free("dq_dr.m_tile", bs * bi);
            cell.free("dq_dr.dr_rows", bs);
            cell.free("dq_dr.dq_acc", bs * d_h);
            debug_assert_eq!(cell.peak(), backward_dq_dr_cell_elements(tiles, d_h));
            ledger.absorb_serial(&cell);
        }
    }
    ledger.free("dq_dr.outputs", outputs);
    Ok(DqDr { dq, dr })
}

/// Gradients of the blockwise forward with respect to the sub-network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DKuv<T: Scalar = f64> {
    pub dk: Tensor<T>,
    pub du: Tensor<T>,
    pub dv: Tensor<T>,
}

/// dK/dU/dV backward: one grid cell per `(head, sub-network, intermediate
/// tile)`, accumulating over all sequence blocks in order.
#[allow(clippy::too_many_arguments)]
pub fn sramffn_backward_dkuv<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    ups: &Tensor<T>,
    values: &Tensor<T>,
    weights: &Tensor<T>,
    ds: &Tensor<T>,
    tiles: TileSpec,
    ledger: &mut MemoryLedger,
) -> Result<DKuv<T>> {
    let blocks = q.shape().first().map_or(0, |&l| l.div_ceil(tiles.block_seq));
    let order: Vec<usize> = (0..blocks).collect();
    sramffn_backward_dkuv_ordered(q, keys, ups, values, weights, ds, tiles, &order, ledger)
}

/// [`sramffn_backward_dkuv`] visiting the sequence blocks in `seq_block_order`
/// (a permutation of `0..ceil(L / block_seq)`).
#[allow(clippy::too_many_arguments)]
pub fn sramffn_backward_dkuv_ordered<T: Scalar>(
    q: &Tensor<T>,
    keys: &Tensor<T>,
    ups: &Tensor<T>,
    values: &Tensor<T>,
    weights: &Tensor<T>,
    ds: &Tensor<T>,
    tiles: TileSpec,
    seq_block_order: &[usize],
    ledger: &mut MemoryLedger,
) -> Result<DKuv<T>> {
    let x = check_inputs("sramffn_backward_dkuv", q, keys, ups, values, weights)?;
    if ds.shape() != q.shape() {
        return Err(dim_err("sramffn_backward_dkuv", ds.shape(), q.shape()));
    }
    let (bs, bi, d_h) = (tiles.block_seq, tiles.block_inter, x.d_h);
    let blocks = x.l.div_ceil(bs);
    let mut seen = vec![false; blocks];
    for &b in seq_block_order {
        if b >= blocks || core::mem::replace(&mut seen[b], true) {
            return Err(Error::Config(format!(
                "sequence block order {seq_block_order:?} is not a permutation of 0..{blocks}"
            )));
        }
    }
    if seq_block_order.len() != blocks {
        return Err(Error::Config(format!(
            "sequence block order has {} entries, expected {blocks}",
            seq_block_order.len()
        )));
    }

    let outputs = 3 * keys.len();
    ledger.alloc("dkuv.outputs", outputs);
    let mut dk = Tensor::<T>::zeros(keys.shape());
    let mut du = Tensor::<T>::zeros(keys.shape());
    let mut dv = Tensor::<T>::zeros(keys.shape());

    let mut q_blk = vec![T::default(); bs * d_h];
    let mut ds_blk = vec![T::default(); bs * d_h];
    let mut dk_acc = vec![0.0f64; bi * d_h];
    let mut du_acc = vec![0.0f64; bi * d_h];
    let mut dv_acc = vec![0.0f64; bi * d_h];
    let mut m_tile = vec![T::default(); bs * bi];
    let mut n_tile = vec![T::default(); bs * bi];
    let mut da_tile = vec![T::default(); bs * bi];

    for h in 0..x.h {
        for e in 0..x.e {
            let k = keys.block(&[h, e])?;
            let u = ups.block(&[h, e])?;
            let v = values.block(&[h, e])?;
            for m0 in (0..x.d_e).step_by(bi) {
                let cols = bi.min(x.d_e - m0);
                let span = m0 * d_h..(m0 + cols) * d_h;
                let mut cell = MemoryLedger::new();
                cell.alloc("dkuv.acc", 3 * bi * d_h);
                cell.alloc("dkuv.m_tile", bs * bi);
                cell.alloc("dkuv.n_tile", bs * bi);
                cell.alloc("dkuv.da_tile", bs * bi);
                dk_acc.iter_mut().for_each(|v| *v = 0.0);
                du_acc.iter_mut().for_each(|v| *v = 0.0);
                dv_acc.iter_mut().for_each(|v| *v = 0.0);

                for &blk in seq_block_order {
                    let s0 = blk * bs;
                    let rows = bs.min(x.l - s0);
                    load_rows(q, h, s0, rows, &mut q_blk);
                    load_rows(ds, h, s0, rows, &mut ds_blk);
                    tile_nt(&q_blk, &k[span.clone()], &mut m_tile, rows, cols, d_h, bi);
                    tile_nt(&q_blk, &u[span.clone()], &mut n_tile, rows, cols, d_h, bi);
                    tile_nt(&ds_blk, &v[span.clone()], &mut da_tile, rows, cols, d_h, bi);
                    for r in 0..rows {
                        let rw = weights.data()[((s0 + r) * x.h + h) * x.e + e].to_f64();
                        for c in 0..cols {
                            let i = r * bi + c;
                            let (mv, nv, da) =
                                (m_tile[i].to_f64(), n_tile[i].to_f64(), da_tile[i].to_f64());
                            let silu = mv * sigmoid_scalar(mv);
                            let n_weighted = rw * nv;
                            // dM, dN and A overwrite M, N and dA.
                            m_tile[i] = T::from_f64(da * n_weighted * dsilu_scalar(mv));
                            n_tile[i] = T::from_f64(da * silu * rw);
                            da_tile[i] = T::from_f64(silu * n_weighted);
                        }
                    }
                    for r in 0..rows {
                        let qr = &q_blk[r * d_h..(r + 1) * d_h];
                        let dsr = &ds_blk[r * d_h..(r + 1) * d_h];
                        for c in 0..cols {
                            let i = r * bi + c;
                            let (dm, dn, a) =
                                (m_tile[i].to_f64(), n_tile[i].to_f64(), da_tile[i].to_f64());
                            let row = c * d_h..(c + 1) * d_h;
                            for (j, (qv, dsv)) in qr.iter().zip(dsr).enumerate() {
                                dk_acc[row.start + j] += dm * qv.to_f64();
                                du_acc[row.start + j] += dn * qv.to_f64();
                                dv_acc[row.start + j] += a * dsv.to_f64();
                            }
                        }
                    }
                }
                for (dst, acc) in [(&mut dk, &dk_acc), (&mut du, &du_acc), (&mut dv, &dv_acc)] {
                    let out = &mut dst.block_mut(&[h, e])?[span.clone()];
                    for (o, a) in out.iter_mut().zip(&acc[..cols * d_h]) {
                        *o = T::from_f64(*a);
                    }
                }
                cell.free("dkuv.da_tile", bs * bi);
                cell.free("dkuv.n_tile", bs * bi);
                cell.free("dkuv.m_tile", bs * bi);
                cell.free("dkuv.acc", 3 * bi * d_h);
                debug_assert_eq!(cell.peak(), backward_dkuv_cell_elements(tiles, d_h));
                ledger.absorb_serial(&cell);
            }
        }
    }
    ledger.free("dkuv.outputs", outputs);
    Ok(DKuv { dk, du, dv })
}

/// Production forward of the full module through the blockwise kernel. Only
/// the kernel's working set is charged to `ledger`.
pub fn flashmhf_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &FlashMhfParams<T>,
    dims: &FlashDims,
    tiles: TileSpec,
    ledger: &mut MemoryLedger,
) -> Result<Tensor<T>> {
    let q = project_in(x, p, dims)?;
    let gate = gate_forward(&q, &p.w_gate, dims.eps)?;
    let s = sramffn_forward(&q, &p.keys, &p.ups, &p.values, &gate.weights, tiles, ledger)?;
    concat_heads(&s)?.matmul(&p.w_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{
        backward_dkuv_closed_form, backward_dq_dr_closed_form, peak_closed_form, CountShape, Method,
    };
    use crate::model::mixture_reference;
    use crate::tensor::{max_rel_error, normwise_rel_error};
    use crate::testutil::{normal_tensor, Lcg};

    struct Case {
        q: Tensor,
        k: Tensor,
        u: Tensor,
        v: Tensor,
        r: Tensor,
    }

    fn case(rng: &mut Lcg, l: usize, h: usize, e: usize, d_e: usize, d_h: usize) -> Case {
        let sub = [h, e, d_e, d_h];
        Case {
            q: normal_tensor(rng, &[l, h, d_h]),
            k: normal_tensor(rng, &sub),
            u: normal_tensor(rng, &sub),
            v: normal_tensor(rng, &sub),
            r: normal_tensor(rng, &[l, h, e]).map(|p| 1.0 / (1.0 + libm::exp(-p)) / e as f64),
        }
    }

    fn forward(c: &Case, tiles: TileSpec) -> Tensor {
        sramffn_forward(&c.q, &c.k, &c.u, &c.v, &c.r, tiles, &mut MemoryLedger::new()).unwrap()
    }

    #[test]
    fn single_tile_matches_dense() {
        let mut rng = Lcg::new(1);
        let c = case(&mut rng, 5, 2, 3, 4, 3);
        let got = forward(&c, TileSpec::new(5, 12).unwrap());
        let want = mixture_reference(&c.q, &c.k, &c.u, &c.v, &c.r).unwrap();
        assert!(normwise_rel_error(&got, &want).unwrap() < 1e-12);
    }

    #[test]
    fn masked_tails_match_dense() {
        let mut rng = Lcg::new(2);
        let c = case(&mut rng, 7, 2, 3, 5, 4);
        let want = mixture_reference(&c.q, &c.k, &c.u, &c.v, &c.r).unwrap();
        for tiles in [(4, 2), (1, 1), (3, 5), (8, 64), (7, 15)] {
            let got = forward(&c, TileSpec::new(tiles.0, tiles.1).unwrap());
            assert!(normwise_rel_error(&got, &want).unwrap() < 1e-10, "{tiles:?}");
        }
    }

    #[test]
    fn single_precision_within_tolerance() {
        let mut rng = Lcg::new(3);
        let c = case(&mut rng, 7, 2, 3, 5, 4);
        let want = mixture_reference(&c.q, &c.k, &c.u, &c.v, &c.r).unwrap();
        let got = sramffn_forward(
            &c.q.cast::<f32>(),
            &c.k.cast(),
            &c.u.cast(),
            &c.v.cast(),
            &c.r.cast(),
            TileSpec::new(4, 2).unwrap(),
            &mut MemoryLedger::new(),
        )
        .unwrap();
        assert!(normwise_rel_error(&got, &want).unwrap() < 2e-3);
    }

    #[test]
    fn forward_ledger_matches_closed_form() {
        let mut rng = Lcg::new(4);
        let (l, h, e, d_e, d_h) = (13, 3, 2, 7, 4);
        let c = case(&mut rng, l, h, e, d_e, d_h);
        let tiles = TileSpec::new(4, 3).unwrap();
        let shape = CountShape {
            seq_len: l,
            heads: h,
            experts: e,
            expert_dim: d_e,
            head_dim: d_h,
            d_model: h * d_h,
            tiles,
        };
        let limit = peak_closed_form(&shape, Method::FlashMhf, 1);
        let mut ledger = MemoryLedger::with_limit(limit);
        sramffn_forward(&c.q, &c.k, &c.u, &c.v, &c.r, tiles, &mut ledger).unwrap();
        assert_eq!(ledger.peak(), limit);
        assert_eq!(ledger.replay_peak(), limit);
        assert_eq!(ledger.live(), 0);

        let mut ledger = MemoryLedger::new();
        let ds = normal_tensor(&mut rng, &[l, h, d_h]);
        sramffn_backward_dq_dr(&c.q, &c.k, &c.u, &c.v, &c.r, &ds, tiles, &mut ledger).unwrap();
        assert_eq!(ledger.peak(), backward_dq_dr_closed_form(&shape));
        assert_eq!(ledger.live(), 0);
        let mut ledger = MemoryLedger::new();
        sramffn_backward_dkuv(&c.q, &c.k, &c.u, &c.v, &c.r, &ds, tiles, &mut ledger).unwrap();
        assert_eq!(ledger.peak(), backward_dkuv_closed_form(&shape));
        assert_eq!(ledger.live(), 0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Lcg::new(5);
        let c = case(&mut rng, 4, 2, 2, 3, 2);
        let ds = Tensor::zeros(&[4, 2, 2]);
        let tiles = TileSpec::new(3, 2).unwrap();
        let g = sramffn_backward_dq_dr(&c.q, &c.k, &c.u, &c.v, &c.r, &ds, tiles, &mut MemoryLedger::new())
            .unwrap();
        assert_eq!(g.dq, Tensor::zeros(&[4, 2, 2]));
        assert_eq!(g.dr, Tensor::zeros(&[4, 2, 2]));
        let g = sramffn_backward_dkuv(&c.q, &c.k, &c.u, &c.v, &c.r, &ds, tiles, &mut MemoryLedger::new())
            .unwrap();
        for t in [g.dk, g.du, g.dv] {
            assert_eq!(t, Tensor::zeros(&[2, 2, 3, 2]));
        }
    }

    #[test]
    fn backward_tiling_invariance() {
        let mut rng = Lcg::new(6);
        let (l, h, e, d_e, d_h) = (5, 2, 3, 6, 3);
        let c = case(&mut rng, l, h, e, d_e, d_h);
        let ds = normal_tensor(&mut rng, &[l, h, d_h]);
        let run = |t: TileSpec| {
            let mut ledger = MemoryLedger::new();
            (
                sramffn_backward_dq_dr(&c.q, &c.k, &c.u, &c.v, &c.r, &ds, t, &mut ledger).unwrap(),
                sramffn_backward_dkuv(&c.q, &c.k, &c.u, &c.v, &c.r, &ds, t, &mut ledger).unwrap(),
            )
        };
        let (base_q, base_k) = run(TileSpec::new(l, e * d_e).unwrap());
        for t in [(1, 1), (4, 2), (2, 5)] {
            let (gq, gk) = run(TileSpec::new(t.0, t.1).unwrap());
            assert!(max_rel_error(&gq.dq, &base_q.dq).unwrap() < 1e-10);
            assert!(max_rel_error(&gq.dr, &base_q.dr).unwrap() < 1e-10);
            assert!(max_rel_error(&gk.dk, &base_k.dk).unwrap() < 1e-10);
            assert!(max_rel_error(&gk.du, &base_k.du).unwrap() < 1e-10);
            assert!(max_rel_error(&gk.dv, &base_k.dv).unwrap() < 1e-10);
        }
    }

    #[test]
    fn dkuv_order_invariance_and_permutation_check() {
        let mut rng = Lcg::new(7);
        let c = case(&mut rng, 9, 1, 2, 3, 2);
        let ds = normal_tensor(&mut rng, &[9, 1, 2]);
        let tiles = TileSpec::new(2, 2).unwrap();
        let fwd = sramffn_backward_dkuv_ordered(
            &c.q, &c.k, &c.u, &c.v, &c.r, &ds, tiles, &[0, 1, 2, 3, 4], &mut MemoryLedger::new(),
        )
        .unwrap();
        let rev = sramffn_backward_dkuv_ordered(
            &c.q, &c.k, &c.u, &c.v, &c.r, &ds, tiles, &[4, 2, 0, 3, 1], &mut MemoryLedger::new(),
        )
        .unwrap();
        assert!(max_rel_error(&fwd.dk, &rev.dk).unwrap() < 1e-10);
        assert!(max_rel_error(&fwd.du, &rev.du).unwrap() < 1e-10);
        assert!(max_rel_error(&fwd.dv, &rev.dv).unwrap() < 1e-10);
        let bad = sramffn_backward_dkuv_ordered(
            &c.q, &c.k, &c.u, &c.v, &c.r, &ds, tiles, &[0, 1, 1, 3, 4], &mut MemoryLedger::new(),
        );
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn shape_errors() {
        let mut rng = Lcg::new(8);
        let c = case(&mut rng, 3, 2, 2, 3, 2);
        let bad_r = Tensor::zeros(&[3, 2, 3]);
        let t = TileSpec::default();
        assert!(matches!(
            sramffn_forward(&c.q, &c.k, &c.u, &c.v, &bad_r, t, &mut MemoryLedger::new()),
            Err(Error::Dimension { .. })
        ));
        let bad_ds = Tensor::zeros(&[3, 2, 3]);
        assert!(sramffn_backward_dq_dr(&c.q, &c.k, &c.u, &c.v, &c.r, &bad_ds, t, &mut MemoryLedger::new())
            .is_err());
        assert!(TileSpec::new(0, 4).is_err());
    }
}
