//! Staggered periodic refresh generation.

use crate::time::Ps;

/// Emits one refresh request per bank every `tREFW / rows_per_bank`,
/// offsetting bank `b` of each rank by `b / banks_per_rank` of a period.
///
/// Request `i` of window `w` for bank `b` is due at
/// `w*W + floor((i*B + b) * W / (rows*B))`, evaluated exactly, so each bank
/// receives exactly `rows` requests per window even when the period is not
/// a whole number of picoseconds.
#[derive(Debug, Clone)]
pub struct PeriodicGenerator {
    window: Ps,
    rows: u64,
    banks_per_rank: u64,
}

impl PeriodicGenerator {
    pub fn new(window: Ps, rows_per_bank: u32, banks_per_rank: u32) -> Self {
        Self {
            window,
            rows: rows_per_bank.max(1) as u64,
            banks_per_rank: banks_per_rank.max(1) as u64,
        }
    }

    /// Exact period as a float, for reporting.
    pub fn period_ps(&self) -> f64 {
        self.window as f64 / self.rows as f64
    }

    /// Exact inter-bank offset as a float, for reporting.
    pub fn bank_offset_ps(&self) -> f64 {
        self.period_ps() / self.banks_per_rank as f64
    }

    pub fn rows_per_window(&self) -> u64 {
        self.rows
    }

    /// Due time of the `n`-th request (counted from zero across windows) of
    /// the bank with in-rank index `bank`.
    pub fn due(&self, bank_in_rank: u32, n: u64) -> Ps {
        let w = n / self.rows;
        let i = n % self.rows;
        let b = self.banks_per_rank as u128;
        let num = (i as u128 * b + bank_in_rank as u128) * self.window as u128;
        let den = self.rows as u128 * b;
        w * self.window + (num / den) as Ps
    }

    /// Window a request index belongs to.
    pub fn window_of(&self, n: u64) -> u64 {
        n / self.rows
    }

    /// Start of bank `bank_in_rank`'s `w`-th window, which is also the due
    /// time of its first request in that window.
    pub fn window_start(&self, bank_in_rank: u32, w: u64) -> Ps {
        self.due(bank_in_rank, w * self.rows)
    }
}
