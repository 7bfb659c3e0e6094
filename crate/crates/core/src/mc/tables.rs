//! Controller-side refresh bookkeeping.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::isolation::IsolationMap;
use crate::time::Ps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RefreshKind {
    /// Slot left unused. Never stored in a live table.
    Invalid,
    /// Part of the regular sweep; the row is picked when performed.
    Periodic { window: u64 },
    /// Requested by the RowHammer defense for a specific victim.
    Preventive { victim: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshRequest {
    /// Unique per controller, in generation order.
    pub id: u64,
    pub deadline: Ps,
    /// Bank index within the channel.
    pub bank: u32,
    pub kind: RefreshKind,
    pub created: Ps,
}

impl RefreshRequest {
    pub fn is_preventive(&self) -> bool {
        matches!(self.kind, RefreshKind::Preventive { .. })
    }

    /// Scan order: earlier deadline first, preventive before periodic on
    /// ties, then generation order.
    pub fn scan_key(&self) -> (Ps, u8, u64) {
        (
            self.deadline,
            if self.is_preventive() { 0 } else { 1 },
            self.id,
        )
    }
}

/// Pending refreshes of one rank.
#[derive(Debug, Clone)]
pub struct RefreshTable {
    entries: Vec<RefreshRequest>,
    capacity: usize,
    max_occupancy: usize,
}

impl RefreshTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: Vec::with_capacity(capacity),
            capacity,
            max_occupancy: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_occupancy(&self) -> usize {
        self.max_occupancy
    }

    /// Inserts keeping scan order. The caller makes room first.
    pub fn insert(&mut self, r: RefreshRequest) {
        debug_assert!(r.kind != RefreshKind::Invalid);
        let pos = self
            .entries
            .partition_point(|e| e.scan_key() < r.scan_key());
        self.entries.insert(pos, r);
        self.max_occupancy = self.max_occupancy.max(self.entries.len());
    }

    pub fn remove(&mut self, id: u64) -> Option<RefreshRequest> {
        let pos = self.entries.iter().position(|e| e.id == id)?;
        Some(self.entries.remove(pos))
    }

    /// Entries in scan order.
    pub fn iter(&self) -> impl Iterator<Item = &RefreshRequest> {
        self.entries.iter()
    }

    pub fn first(&self) -> Option<&RefreshRequest> {
        self.entries.first()
    }
}

/// Per-bank queue of preventive victims.
#[derive(Debug, Clone)]
pub struct PrFifo {
    items: VecDeque<(u64, u32)>,
    capacity: usize,
}

impl PrFifo {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    /// `(request id, victim row)` at the head.
    pub fn head(&self) -> Option<(u64, u32)> {
        self.items.front().copied()
    }

    pub fn push(&mut self, id: u64, victim: u32) {
        self.items.push_back((id, victim));
    }

    pub fn pop(&mut self) -> Option<(u64, u32)> {
        self.items.pop_front()
    }
}

/// Next row to refresh in each subarray of each bank, and how many rows of
/// each subarray the current and previous windows have covered.
#[derive(Debug, Clone)]
pub struct RefPtrTable {
    subarrays: u32,
    rows_per_subarray: u32,
    next: Vec<u32>,
    window: Vec<u64>,
    counts: Vec<u32>,
    prev_counts: Vec<u32>,
}

impl RefPtrTable {
    pub fn new(banks: u32, subarrays: u32, rows_per_subarray: u32) -> Self {
        let n = (banks * subarrays) as usize;
        Self {
            subarrays,
            rows_per_subarray,
            next: vec![0; n],
            window: vec![0; banks as usize],
            counts: vec![0; n],
            prev_counts: vec![rows_per_subarray; n],
        }
    }

    fn idx(&self, bank: u32, sa: u32) -> usize {
        (bank * self.subarrays + sa) as usize
    }

    fn roll(&mut self, bank: u32, window: u64) {
        let cur = self.window[bank as usize];
        if window <= cur {
            return;
        }
        let r = self.idx(bank, 0)..self.idx(bank, 0) + self.subarrays as usize;
        if window == cur + 1 {
            self.prev_counts[r.clone()].copy_from_slice(&self.counts[r.clone()]);
        } else {
            self.prev_counts[r.clone()].fill(self.rows_per_subarray);
        }
        self.counts[r].fill(0);
        self.window[bank as usize] = window;
    }

    /// Rows of `sa` refreshed for `window` so far.
    pub fn count(&mut self, bank: u32, sa: u32, window: u64) -> u32 {
        self.roll(bank, window);
        let cur = self.window[bank as usize];
        let i = self.idx(bank, sa);
        if window == cur {
            self.counts[i]
        } else if window + 1 == cur {
            self.prev_counts[i]
        } else {
            self.rows_per_subarray
        }
    }

    pub fn next_row(&self, bank: u32, sa: u32) -> u32 {
        sa * self.rows_per_subarray + self.next[self.idx(bank, sa)]
    }

    /// Subarray to refresh next for `window`: among those `allowed`, the one
    /// with the fewest rows covered, lowest index on ties. Subarrays already
    /// complete for the window are skipped.
    pub fn pick<F>(&mut self, bank: u32, window: u64, allowed: F) -> Option<u32>
    where
        F: Fn(u32) -> bool,
    {
        let mut best: Option<(u32, u32)> = None;
        for sa in 0..self.subarrays {
            if !allowed(sa) {
                continue;
            }
            let c = self.count(bank, sa, window);
            if c >= self.rows_per_subarray {
                continue;
            }
            if best.is_none_or(|(_, bc)| c < bc) {
                best = Some((sa, c));
            }
        }
        best.map(|(sa, _)| sa)
    }

    /// Least-covered subarray regardless of completeness.
    pub fn pick_least(&mut self, bank: u32, window: u64) -> u32 {
        let mut best = (0, u32::MAX);
        for sa in 0..self.subarrays {
            let c = self.count(bank, sa, window);
            if c < best.1 {
                best = (sa, c);
            }
        }
        best.0
    }

    /// Records a refresh of `sa`'s next row for `window`; returns the row.
    pub fn advance(&mut self, bank: u32, sa: u32, window: u64) -> u32 {
        self.roll(bank, window);
        let row = self.next_row(bank, sa);
        let i = self.idx(bank, sa);
        self.next[i] = (self.next[i] + 1) % self.rows_per_subarray;
        if window == self.window[bank as usize] {
            self.counts[i] += 1;
        } else if window + 1 == self.window[bank as usize] {
            self.prev_counts[i] += 1;
        }
        row
    }
}

/// The controller's copy of the isolation map, optionally with injected
/// faults.
#[derive(Debug, Clone)]
pub struct SubarrayPairsTable {
    map: IsolationMap,
}

impl SubarrayPairsTable {
    pub fn new(map: IsolationMap) -> Self {
        Self { map }
    }

    /// Flips the entry for each listed pair.
    pub fn inject_faults(&mut self, pairs: &[(u32, u32)]) {
        for &(i, j) in pairs {
            let v = self.map.isolated(i, j);
            // Reflexive or out-of-range pairs cannot be represented; skip them.
            let _ = self.map.set_pair(i, j, !v);
        }
    }

    pub fn isolated(&self, i: u32, j: u32) -> bool {
        self.map.isolated(i, j)
    }

    pub fn map(&self) -> &IsolationMap {
        &self.map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(id: u64, deadline: Ps, kind: RefreshKind) -> RefreshRequest {
        RefreshRequest {
            id,
            deadline,
            bank: 0,
            kind,
            created: 0,
        }
    }

    #[test]
    fn table_scan_order() {
        let mut t = RefreshTable::new(68);
        t.insert(req(1, 100, RefreshKind::Periodic { window: 0 }));
        t.insert(req(2, 50, RefreshKind::Periodic { window: 0 }));
        t.insert(req(3, 100, RefreshKind::Preventive { victim: 3 }));
        let ids: Vec<u64> = t.iter().map(|e| e.id).collect();
        assert_eq!(ids, [2, 3, 1]);
        assert_eq!(t.remove(3).unwrap().id, 3);
        assert_eq!(t.max_occupancy(), 3);
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn fifo_order() {
        let mut f = PrFifo::new(2);
        f.push(1, 10);
        f.push(2, 20);
        assert!(f.is_full());
        assert_eq!(f.pop(), Some((1, 10)));
        assert_eq!(f.head(), Some((2, 20)));
    }

    #[test]
    fn refptr_balances_and_rolls() {
        let mut r = RefPtrTable::new(1, 4, 2);
        assert_eq!(r.pick(0, 0, |_| true), Some(0));
        assert_eq!(r.advance(0, 0, 0), 0);
        assert_eq!(r.pick(0, 0, |_| true), Some(1));
        assert_eq!(r.pick(0, 0, |sa| sa >= 2), Some(2));
        r.advance(0, 0, 0);
        // Subarray 0 is complete for window 0.
        assert_eq!(r.pick(0, 0, |sa| sa == 0), None);
        assert_eq!(r.next_row(0, 0), 0);
        // A late entry of window 0 still sees window 0's counts after the roll.
        assert_eq!(r.pick(0, 1, |sa| sa == 0), Some(0));
        assert_eq!(r.count(0, 0, 0), 2);
        assert_eq!(r.count(0, 1, 0), 0);
        r.advance(0, 1, 0);
        assert_eq!(r.count(0, 1, 0), 1);
    }

    #[test]
    fn spt_fault_injection() {
        let mut s = SubarrayPairsTable::new(IsolationMap::adjacent_share(4).unwrap());
        assert!(!s.isolated(0, 1));
        s.inject_faults(&[(0, 1), (2, 2)]);
        assert!(s.isolated(0, 1) && s.isolated(1, 0));
    }
}
