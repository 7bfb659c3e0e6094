//! Synthetic request streams.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{AddressMapping, DecodedAddress, Geometry, COLUMN_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRequest {
    /// Controller cycles since the previous request of the same source.
    pub gap: u64,
    pub source: u32,
    pub write: bool,
    pub address: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum TraceKind {
    /// Sequential columns, row after row.
    Stream,
    /// Uniform column-aligned addresses.
    #[default]
    Random,
    /// Bursts of accesses within one row.
    RowHit,
    /// Double-sided hammering of one victim row.
    Hammer,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::Stream => "stream",
            TraceKind::Random => "random",
            TraceKind::RowHit => "rowhit",
            TraceKind::Hammer => "hammer",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stream" => Some(TraceKind::Stream),
            "random" => Some(TraceKind::Random),
            "rowhit" => Some(TraceKind::RowHit),
            "hammer" => Some(TraceKind::Hammer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceParams {
    pub kind: TraceKind,
    pub count: usize,
    pub source: u32,
    pub gap: u64,
    pub write_ratio: f64,
    /// Accesses per row for [`TraceKind::RowHit`].
    pub burst: u32,
    pub seed: u64,
}

impl Default for TraceParams {
    fn default() -> Self {
        Self {
            kind: TraceKind::Random,
            count: 10_000,
            source: 0,
            gap: 4,
            write_ratio: 0.3,
            burst: 16,
            seed: 0,
        }
    }
}

/// Victim of a hammer trace: row 1 of subarray 0 when the subarray has at
/// least three rows, so both aggressors stay inside it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HammerTarget {
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub victim: u32,
}

/// Picks a seeded interior victim row.
pub fn hammer_target(g: &Geometry, seed: u64) -> HammerTarget {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rps = g.rows_per_subarray;
    let sa = rng.gen_range(0..g.subarrays_per_bank);
    let inner = if rps >= 3 {
        rng.gen_range(1..rps - 1)
    } else {
        0
    };
    HammerTarget {
        channel: rng.gen_range(0..g.channels),
        rank: rng.gen_range(0..g.ranks_per_channel),
        bank: rng.gen_range(0..g.banks_per_rank),
        victim: g.bank_row(sa, inner),
    }
}

fn address_of(
    g: &Geometry,
    mapping: AddressMapping,
    ch: u32,
    rank: u32,
    bank: u32,
    row: u32,
    col: u32,
) -> u64 {
    let at = DecodedAddress {
        channel: ch,
        rank,
        bank,
        subarray: g.subarray_of(row),
        row: g.row_in_subarray(row),
        column: col,
    };
    // Coordinates are produced in range above.
    g.encode(mapping, &at).unwrap_or(0)
}

/// Seeded synthetic trace. Hammer traces alternate between the two
/// neighbours of [`hammer_target`]`(g, seed)` and should be given a gap of
/// one tRC in controller cycles.
pub fn generate_trace(p: &TraceParams, g: &Geometry, mapping: AddressMapping) -> Vec<TraceRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed ^ 0x9e37_79b9_7f4a_7c15);
    let cap = g.capacity_bytes();
    let cols = cap / COLUMN_BYTES;
    let mut out = Vec::with_capacity(p.count);
    let write = |rng: &mut ChaCha8Rng| p.write_ratio > 0.0 && rng.gen::<f64>() < p.write_ratio;
    match p.kind {
        TraceKind::Stream => {
            let cpr = g.columns_per_row as u64;
            let mut col = rng.gen_range(0..cols) / cpr * cpr;
            for _ in 0..p.count {
                let w = write(&mut rng);
                out.push(TraceRequest {
                    gap: p.gap,
                    source: p.source,
                    write: w,
                    address: col * COLUMN_BYTES,
                });
                col = (col + 1) % cols;
            }
        }
        TraceKind::Random => {
            for _ in 0..p.count {
                let w = write(&mut rng);
                out.push(TraceRequest {
                    gap: p.gap,
                    source: p.source,
                    write: w,
                    address: rng.gen_range(0..cols) * COLUMN_BYTES,
                });
            }
        }
        TraceKind::RowHit => {
            let cpr = g.columns_per_row as u64;
            let burst = p.burst.max(1) as usize;
            let mut base = 0;
            for i in 0..p.count {
                if i % burst == 0 {
                    base = rng.gen_range(0..cols) / cpr * cpr;
                }
                let w = write(&mut rng);
                out.push(TraceRequest {
                    gap: p.gap,
                    source: p.source,
                    write: w,
                    address: (base + rng.gen_range(0..cpr)) * COLUMN_BYTES,
                });
            }
        }
        TraceKind::Hammer => {
            let t = hammer_target(g, p.seed);
            let rows = g.rows_per_bank();
            let lo = t.victim.saturating_sub(1);
            let hi = (t.victim + 1).min(rows - 1);
            for i in 0..p.count {
                let row = if i % 2 == 0 { lo } else { hi };
                out.push(TraceRequest {
                    gap: p.gap,
                    source: p.source,
                    write: false,
                    address: address_of(g, mapping, t.channel, t.rank, t.bank, row, 0),
                });
            }
        }
    }
    out
}
