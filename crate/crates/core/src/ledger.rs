//! Activation-memory accounting.
//!
//! A [`MemoryLedger`] counts live intermediate scalar slots, not bytes. Each
//! forward path registers the buffers it materializes and releases them when
//! they die; inputs and parameters are never counted. Outputs are counted while
//! they are written and released ("handed off") when the call returns, so a
//! finished computation always leaves `live() == 0`.

use alloc::vec::Vec;

use crate::kernel::TileSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Alloc,
    Free,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerEvent {
    pub kind: EventKind,
    pub elements: usize,
    pub label: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct MemoryLedger {
    live: usize,
    peak: usize,
    limit: Option<usize>,
    record_events: bool,
    events: Vec<LedgerEvent>,
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self {
            record_events: true,
            ..Self::default()
        }
    }

    /// Ledger that panics as soon as the live count exceeds `limit`.
    pub fn with_limit(limit: usize) -> Self {
        Self {
            limit: Some(limit),
            ..Self::new()
        }
    }

    /// Counts only; the event log stays empty.
    pub fn counting_only() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, label: &'static str, elements: usize) {
        self.live += elements;
        self.peak = self.peak.max(self.live);
        if let Some(limit) = self.limit {
            assert!(
                self.live <= limit,
                "ledger limit exceeded by {label}: {} live > {limit}",
                self.live
            );
        }
        if self.record_events {
            self.events.push(LedgerEvent {
                kind: EventKind::Alloc,
                elements,
                label,
            });
        }
    }

    /// # Panics
    /// If more elements are freed than are live.
    pub fn free(&mut self, label: &'static str, elements: usize) {
        self.live = self
            .live
            .checked_sub(elements)
            .unwrap_or_else(|| panic!("ledger underflow freeing {elements} for {label}"));
        if self.record_events {
            self.events.push(LedgerEvent {
                kind: EventKind::Free,
                elements,
                label,
            });
        }
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn events(&self) -> &[LedgerEvent] {
        &self.events
    }

    /// Replays the event log and returns the running maximum. Equals
    /// [`peak`](Self::peak) for a ledger that recorded from the start.
    pub fn replay_peak(&self) -> usize {
        let mut live = 0usize;
        let mut peak = 0usize;
        for e in &self.events {
            match e.kind {
                EventKind::Alloc => {
                    live += e.elements;
                    peak = peak.max(live);
                }
                EventKind::Free => live -= e.elements,
            }
        }
        peak
    }

    /// Appends a sub-ledger that ran after everything currently recorded.
    pub fn absorb_serial(&mut self, cell: &MemoryLedger) {
        self.peak = self.peak.max(self.live + cell.peak);
        self.live += cell.live;
        if let Some(limit) = self.limit {
            assert!(
                self.peak <= limit,
                "ledger limit exceeded by sub-ledger: {} > {limit}",
                self.peak
            );
        }
        if self.record_events {
            self.events.extend(cell.events.iter().cloned());
        }
    }

    /// Peak when `cells` run concurrently on `workers` units on top of the
    /// currently live elements: the `workers` largest cell peaks coexist.
    pub fn concurrent_peak(&self, cells: &[MemoryLedger], workers: usize) -> usize {
        let mut peaks: Vec<usize> = cells.iter().map(|c| c.peak).collect();
        peaks.sort_unstable_by(|a, b| b.cmp(a));
        self.peak
            .max(self.live + peaks.iter().take(workers.max(1)).sum::<usize>())
    }
}

/// The three forward paths whose activation footprints are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    SwiGlu,
    NaiveMhffn,
    FlashMhf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::FlashMhf, Method::NaiveMhffn, Method::SwiGlu];

    pub fn name(self) -> &'static str {
        match self {
            Method::SwiGlu => "swiglu",
            Method::NaiveMhffn => "naive_mhffn",
            Method::FlashMhf => "flashmhf",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Shape symbols shared by the closed-form counts. The SwiGLU and naive
/// baselines use an intermediate width of `experts · expert_dim` (per head for
/// the naive path), which gives all three methods the same FFN parameter count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountShape {
    pub seq_len: usize,
    pub heads: usize,
    pub experts: usize,
    pub expert_dim: usize,
    pub head_dim: usize,
    pub d_model: usize,
    pub tiles: TileSpec,
}

impl CountShape {
    pub fn d_ff(&self) -> usize {
        self.experts * self.expert_dim
    }
}

/// Working set of one forward grid cell: accumulator plus the two
/// `block_seq×block_inter` tiles (M, and N which is overwritten by A).
pub fn forward_cell_elements(tiles: TileSpec, head_dim: usize) -> usize {
    tiles.block_seq * (2 * tiles.block_inter + head_dim)
}

/// Working set of one dQ/dR grid cell: dQ accumulator, dR row vector and three
/// tiles (M/dM, N/dN, dA).
pub fn backward_dq_dr_cell_elements(tiles: TileSpec, head_dim: usize) -> usize {
    tiles.block_seq * head_dim + tiles.block_seq + 3 * tiles.block_seq * tiles.block_inter
}

/// Working set of one dK/dU/dV grid cell: three `block_inter×d_h` accumulators
/// and three tiles (M/dM, N/dN, dA/A).
pub fn backward_dkuv_cell_elements(tiles: TileSpec, head_dim: usize) -> usize {
    3 * tiles.block_inter * head_dim + 3 * tiles.block_seq * tiles.block_inter
}

/// Peak live elements of each method's forward under the counting policy, with
/// `cells_live` grid cells resident at once for the blockwise path (1 for the
/// serial schedule).
///
/// * swiglu: `3·L·d_ff + L·d_model`
/// * naive_mhffn: `3·L·H·d_ff + L·d_model` (gate pre-activation, up projection
///   and product for every head, plus the head outputs)
/// * flashmhf: `L·d_model + cells_live·block_seq·(2·block_inter + d_h)`
pub fn peak_closed_form(shape: &CountShape, method: Method, cells_live: usize) -> usize {
    let l = shape.seq_len;
    match method {
        Method::SwiGlu => 3 * l * shape.d_ff() + l * shape.d_model,
        Method::NaiveMhffn => 3 * l * shape.heads * shape.d_ff() + l * shape.d_model,
        Method::FlashMhf => {
            l * shape.d_model + cells_live * forward_cell_elements(shape.tiles, shape.head_dim)
        }
    }
}

/// Peak of the serial dQ/dR backward: outputs `dQ` and `dR` plus one cell.
pub fn backward_dq_dr_closed_form(shape: &CountShape) -> usize {
    let l = shape.seq_len;
    l * shape.heads * shape.head_dim
        + l * shape.heads * shape.experts
        + backward_dq_dr_cell_elements(shape.tiles, shape.head_dim)
}

/// Peak of the serial dK/dU/dV backward: the three gradient outputs plus one cell.
pub fn backward_dkuv_closed_form(shape: &CountShape) -> usize {
    3 * shape.heads * shape.experts * shape.expert_dim * shape.head_dim
        + backward_dkuv_cell_elements(shape.tiles, shape.head_dim)
}
