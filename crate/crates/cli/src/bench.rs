//! Memory and wall-time sweep over the scaled long-sequence grid.
//!
//! Every timed forward runs with a fresh ledger whose peak is compared against
//! the closed form of its method; a mismatch marks the record `fail`. Naive
//! multi-head cells whose closed-form peak exceeds the element budget are not
//! run and are reported as `oom`.

use std::io::Write;
use std::time::{Duration, Instant};

use flashmhf_core::init::normal_tensor;
use flashmhf_core::kernel::flashmhf_forward;
use flashmhf_core::ledger::{peak_closed_form, CountShape, Method};
use flashmhf_core::model::{init_params_with_std, FlashDims};
use flashmhf_core::naive::{mhffn_forward_tracked, NaiveMhffnParams};
use flashmhf_core::reference::{swiglu_forward_tracked, SwiGluParams};
use flashmhf_core::{HeadLayout, MemoryLedger, Precision, Result, Scalar, Tensor, TileSpec};
use serde::{Deserialize, Serialize};

/// Full-size grid: sequence lengths and widths before scaling.
pub const BASE_SEQ_LENS: [usize; 9] = [192, 384, 768, 1536, 1920, 2880, 4032, 8064, 16128];
pub const BASE_EXPERT_DIM: usize = 384;
pub const BASE_HEAD_DIM: usize = 128;
pub const GRID_HEADS: usize = 16;
pub const GRID_EXPERTS: usize = 22;

pub const CSV_HEADER: &str = "method,L,d_model,H,E,d_e,d_h,block_seq,block_inter,wall_ms,peak_elements,status";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Fail,
    Oom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub method: String,
    #[serde(rename = "L")]
    pub l: usize,
    pub d_model: usize,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "E")]
    pub e: usize,
    pub d_e: usize,
    pub d_h: usize,
    pub block_seq: usize,
    pub block_inter: usize,
    pub wall_ms: f64,
    pub peak_elements: usize,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub reps: usize,
    pub warmups: usize,
    pub naive_budget: usize,
    pub precision: Precision,
    pub seed: u64,
}

/// The grid with `L` and every width divided by `scale` (floored, at least 1).
/// `batch` sequences are folded into each cell's row count.
pub fn scaled_grid(scale: usize, batch: usize, tiles: TileSpec) -> Vec<CountShape> {
    let div = |v: usize| (v / scale.max(1)).max(1);
    let d_h = div(BASE_HEAD_DIM);
    BASE_SEQ_LENS
        .iter()
        .map(|&l| CountShape {
            seq_len: div(l) * batch,
            heads: GRID_HEADS,
            experts: GRID_EXPERTS,
            expert_dim: div(BASE_EXPERT_DIM),
            head_dim: d_h,
            d_model: GRID_HEADS * d_h,
            tiles,
        })
        .collect()
}

fn record(method: Method, s: &CountShape, wall_ms: f64, peak: usize, status: Status) -> BenchRecord {
    BenchRecord {
        method: method.name().to_string(),
        l: s.seq_len,
        d_model: s.d_model,
        h: s.heads,
        e: s.experts,
        d_e: s.expert_dim,
        d_h: s.head_dim,
        block_seq: s.tiles.block_seq,
        block_inter: s.tiles.block_inter,
        wall_ms,
        peak_elements: peak,
        status,
    }
}

/// Inputs and weights for one method at one grid point.
pub enum Workload<T: Scalar> {
    SwiGlu(Tensor<T>, SwiGluParams<T>),
    Naive(Tensor<T>, NaiveMhffnParams<T>),
    Flash(Tensor<T>, flashmhf_core::FlashMhfParams<T>, FlashDims, TileSpec),
}

impl<T: Scalar> Workload<T> {
    pub fn new(method: Method, s: &CountShape, seed: u64) -> Result<Self> {
        let std = flashmhf_core::init::INITIALIZER_RANGE;
        let (d, d_ff) = (s.d_model, s.d_ff());
        let x = normal_tensor(&[s.seq_len, d], 1.0, seed, "bench.x");
        let sub = [s.heads, d_ff, s.head_dim];
        Ok(match method {
            Method::SwiGlu => Workload::SwiGlu(
                x,
                SwiGluParams {
                    w_up: normal_tensor(&[d, d_ff], std, seed, "bench.up"),
                    w_gate: normal_tensor(&[d, d_ff], std, seed, "bench.gate"),
                    w_down: normal_tensor(&[d_ff, d], std, seed, "bench.down"),
                },
            ),
            Method::NaiveMhffn => Workload::Naive(
                x,
                NaiveMhffnParams {
                    w_in: normal_tensor(&[d, d], std, seed, "bench.w_in"),
                    keys: normal_tensor(&sub, std, seed, "bench.keys"),
                    ups: normal_tensor(&sub, std, seed, "bench.ups"),
                    values: normal_tensor(&sub, std, seed, "bench.values"),
                    w_out: normal_tensor(&[d, d], std, seed, "bench.w_out"),
                },
            ),
            Method::FlashMhf => {
                let layout = HeadLayout::from_head_dim(s.heads, s.head_dim)?;
                let dims = FlashDims::with_expert_dim(layout, s.experts, s.expert_dim)?;
                Workload::Flash(x, init_params_with_std(&dims, seed, std), dims, s.tiles)
            }
        })
    }

    /// One forward under `ledger`.
    pub fn run(&self, ledger: &mut MemoryLedger) -> Result<Tensor<T>> {
        match self {
            Workload::SwiGlu(x, p) => swiglu_forward_tracked(x, p, ledger),
            Workload::Naive(x, p) => mhffn_forward_tracked(x, p, ledger),
            Workload::Flash(x, p, dims, tiles) => flashmhf_forward(x, p, dims, *tiles, ledger),
        }
    }
}

/// Peak and live-at-end of a single forward.
pub fn measure_peak<T: Scalar>(method: Method, s: &CountShape, seed: u64) -> Result<(usize, usize)> {
    let work = Workload::<T>::new(method, s, seed)?;
    let mut ledger = MemoryLedger::new();
    work.run(&mut ledger)?;
    Ok((ledger.peak(), ledger.live()))
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

pub fn run_cell<T: Scalar>(method: Method, s: &CountShape, settings: &BenchSettings) -> Result<BenchRecord> {
    let expected = peak_closed_form(s, method, 1);
    if method == Method::NaiveMhffn && expected > settings.naive_budget {
        return Ok(record(method, s, 0.0, expected, Status::Oom));
    }
    let work = Workload::<T>::new(method, s, settings.seed)?;
    let mut status = Status::Ok;
    let mut times = Vec::with_capacity(settings.reps);
    let mut peak = 0;
    for rep in 0..settings.warmups + settings.reps.max(1) {
        let mut ledger = MemoryLedger::new();
        let start = Instant::now();
        let out = work.run(&mut ledger)?;
        let elapsed = start.elapsed();
        std::hint::black_box(&out);
        peak = ledger.peak();
        if peak != expected || ledger.live() != 0 || !out.all_finite() {
            status = Status::Fail;
        }
        if rep >= settings.warmups {
            times.push(elapsed);
        }
    }
    // Microsecond resolution, never zero.
    let wall_ms = ((median(times).as_secs_f64() * 1e6).round() / 1e3).max(1e-3);
    Ok(record(method, s, wall_ms, peak, status))
}

pub fn run_bench(grid: &[CountShape], settings: &BenchSettings, mut progress: impl FnMut(&BenchRecord)) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for method in Method::ALL {
        for s in grid {
            let rec = match settings.precision {
                Precision::Single => run_cell::<f32>(method, s, settings)?,
                Precision::Double => run_cell::<f64>(method, s, settings)?,
            };
            progress(&rec);
            out.push(rec);
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(w: W, records: &[BenchRecord]) -> csv::Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(CSV_HEADER.split(','))?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> CountShape {
        CountShape { seq_len: 9, heads: 2, experts: 3, expert_dim: 5, head_dim: 4, d_model: 8, tiles: TileSpec::new(4, 4).unwrap() }
    }

    fn settings() -> BenchSettings {
        BenchSettings { reps: 5, warmups: 2, naive_budget: 1 << 20, precision: Precision::Double, seed: 3 }
    }

    #[test]
    fn default_grid_matches_scaled_shapes() {
        let g = scaled_grid(16, 1, TileSpec::default());
        let ls: Vec<usize> = g.iter().map(|s| s.seq_len).collect();
        assert_eq!(ls, [12, 24, 48, 96, 120, 180, 252, 504, 1008]);
        assert!(g.iter().all(|s| s.expert_dim == 24 && s.head_dim == 8 && s.d_model == 128 && s.heads == 16));
        assert_eq!(scaled_grid(16, 8, TileSpec::default())[0].seq_len, 96);
    }

    #[test]
    fn cells_pass_their_ledger_assertions() {
        for method in Method::ALL {
            let rec = run_cell::<f64>(method, &tiny(), &settings()).unwrap();
            assert_eq!(rec.status, Status::Ok, "{method:?}");
            assert!(rec.wall_ms > 0.0);
            assert_eq!(rec.peak_elements, peak_closed_form(&tiny(), method, 1));
            let single = run_cell::<f32>(method, &tiny(), &settings()).unwrap();
            assert_eq!(single.peak_elements, rec.peak_elements);
        }
    }

    #[test]
    fn naive_over_budget_is_oom() {
        let s = BenchSettings { naive_budget: 10, ..settings() };
        let rec = run_cell::<f64>(Method::NaiveMhffn, &tiny(), &s).unwrap();
        assert_eq!(rec.status, Status::Oom);
        assert_eq!(run_cell::<f64>(Method::SwiGlu, &tiny(), &s).unwrap().status, Status::Ok);
    }

    #[test]
    fn csv_column_order() {
        let rec = run_cell::<f64>(Method::FlashMhf, &tiny(), &settings()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        assert!(row.starts_with("flashmhf,9,8,2,3,5,4,4,4,"), "{row}");
        assert!(row.ends_with(&format!(",{},ok", rec.peak_elements)), "{row}");
    }
}
