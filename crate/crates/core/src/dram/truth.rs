//! Electrical ground truth: what each row really holds, how hard it has been
//! hammered, and when it was last fully restored.

use alloc::vec;
use alloc::vec::Vec;

use bitflags::bitflags;

use crate::time::{ns, Ps};

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct RowFlags: u8 {
        /// Data destroyed by sharing sense amplifiers or the bank I/O, or by
        /// closing a wordline before sensing completed.
        const CORRUPTED = 1 << 0;
        /// Wordline held for less than tRAS before the bank was precharged.
        const PARTIAL_RESTORE = 1 << 1;
        /// Hammer count reached the RowHammer threshold since the last restore.
        const BIT_FLIP = 1 << 2;
        /// Not restored within its retention window.
        const RETENTION_EXPIRED = 1 << 3;
    }
}

impl RowFlags {
    /// Flags that alter stored data.
    pub const DAMAGE: RowFlags = RowFlags::CORRUPTED
        .union(RowFlags::PARTIAL_RESTORE)
        .union(RowFlags::BIT_FLIP);
}

/// XOR applied to a row's pattern byte the first time it is damaged.
pub const DAMAGE_XOR: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowState {
    pub data: u8,
    pub hammer_count: u32,
    pub last_restore: Ps,
    pub flags: RowFlags,
}

impl Default for RowState {
    fn default() -> Self {
        Self {
            data: 0,
            hammer_count: 0,
            last_restore: 0,
            flags: RowFlags::empty(),
        }
    }
}

/// Timing windows inside which an ACT-PRE-ACT sequence leaves two rows open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElectricalWindows {
    /// Minimum first-ACT to PRE delay for the sense amplifiers to be enabled.
    pub sense_enable_min: Ps,
    /// Maximum PRE to second-ACT delay before the first wordline drops.
    pub wordline_disable_max: Ps,
    /// Minimum PRE to second-ACT delay for the first row's local row buffer
    /// to be disconnected from the bank I/O.
    pub bankio_disconnect_min: Ps,
}

impl Default for ElectricalWindows {
    fn default() -> Self {
        Self {
            sense_enable_min: ns(3),
            wordline_disable_max: ns(4) + 500,
            bankio_disconnect_min: ns(3),
        }
    }
}

/// When rows must have been restored, per bank.
///
/// Bank `b`'s refresh window `k` spans `[k*window + phase[b], (k+1)*window +
/// phase[b])`. Every row of the bank must carry a restore timestamp inside
/// that span once `grace` has elapsed past its end; rows that do not are
/// flagged [`RowFlags::RETENTION_EXPIRED`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetentionSchedule {
    pub window: Ps,
    pub phase: Vec<Ps>,
    pub grace: Ps,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TruthCounters {
    pub corrupted: u64,
    pub partial_restores: u64,
    pub bit_flips: u64,
    pub retention_expired: u64,
    pub restores: u64,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    banks: u32,
    rows_per_bank: u32,
    rows_per_subarray: u32,
    rows: Vec<RowState>,
    n_rh: u32,
    windows: ElectricalWindows,
    retention: Option<RetentionSchedule>,
    audited_windows: Vec<u64>,
    next_audit: Ps,
    counters: TruthCounters,
}

impl GroundTruth {
    pub fn new(
        banks: u32,
        rows_per_bank: u32,
        rows_per_subarray: u32,
        n_rh: u32,
        windows: ElectricalWindows,
    ) -> Self {
        Self {
            banks,
            rows_per_bank,
            rows_per_subarray,
            rows: vec![RowState::default(); banks as usize * rows_per_bank as usize],
            n_rh: n_rh.max(1),
            windows,
            retention: None,
            audited_windows: vec![0; banks as usize],
            next_audit: Ps::MAX,
            counters: TruthCounters::default(),
        }
    }

    pub fn set_retention(&mut self, schedule: RetentionSchedule) {
        self.audited_windows = vec![0; self.banks as usize];
        self.retention = Some(schedule);
        self.next_audit = self.compute_next_audit();
    }

    pub fn windows(&self) -> &ElectricalWindows {
        &self.windows
    }

    pub fn n_rh(&self) -> u32 {
        self.n_rh
    }

    pub fn counters(&self) -> TruthCounters {
        self.counters
    }

    pub fn banks(&self) -> u32 {
        self.banks
    }

    pub fn rows_per_bank(&self) -> u32 {
        self.rows_per_bank
    }

    #[inline]
    fn idx(&self, bank: u32, row: u32) -> usize {
        bank as usize * self.rows_per_bank as usize + row as usize
    }

    pub fn row(&self, bank: u32, row: u32) -> &RowState {
        &self.rows[self.idx(bank, row)]
    }

    pub fn rows_of_bank(&self, bank: u32) -> &[RowState] {
        let start = self.idx(bank, 0);
        &self.rows[start..start + self.rows_per_bank as usize]
    }

    /// Test-harness write: stores `data`, clears all flags and counts the
    /// row as freshly restored.
    pub fn initialize_row(&mut self, bank: u32, row: u32, data: u8, now: Ps) {
        let i = self.idx(bank, row);
        self.rows[i] = RowState {
            data,
            hammer_count: 0,
            last_restore: now,
            flags: RowFlags::empty(),
        };
    }

    /// Column write through the bank I/O.
    pub fn write(&mut self, bank: u32, row: u32, data: u8) {
        let i = self.idx(bank, row);
        self.rows[i].data = data;
    }

    pub fn read(&self, bank: u32, row: u32) -> u8 {
        self.rows[self.idx(bank, row)].data
    }

    /// Sets `flag`; the first damaging flag also flips the stored pattern.
    pub fn mark(&mut self, bank: u32, row: u32, flag: RowFlags) {
        let i = self.idx(bank, row);
        let r = &mut self.rows[i];
        if r.flags.contains(flag) {
            return;
        }
        if RowFlags::DAMAGE.intersects(flag) && !r.flags.intersects(RowFlags::DAMAGE) {
            r.data ^= DAMAGE_XOR;
        }
        r.flags |= flag;
        if flag.contains(RowFlags::CORRUPTED) {
            self.counters.corrupted += 1;
        }
        if flag.contains(RowFlags::PARTIAL_RESTORE) {
            self.counters.partial_restores += 1;
        }
        if flag.contains(RowFlags::BIT_FLIP) {
            self.counters.bit_flips += 1;
        }
        if flag.contains(RowFlags::RETENTION_EXPIRED) {
            self.counters.retention_expired += 1;
        }
    }

    /// Closes a row whose wordline was held for `hold`. A hold of at least
    /// `t_ras` restores the row; anything shorter flags it as partially
    /// restored. Returns whether the restore was complete.
    pub fn restore_row(&mut self, bank: u32, row: u32, now: Ps, hold: Ps, t_ras: Ps) -> bool {
        if hold < t_ras {
            self.mark(bank, row, RowFlags::PARTIAL_RESTORE);
            return false;
        }
        let i = self.idx(bank, row);
        let r = &mut self.rows[i];
        r.hammer_count = 0;
        r.last_restore = now;
        self.counters.restores += 1;
        true
    }

    /// Accounts one activation of `row` against its two in-subarray
    /// neighbours and returns the victims that crossed the threshold.
    pub fn register_hammer(&mut self, bank: u32, row: u32) -> Vec<u32> {
        let mut flipped = Vec::new();
        let sub_start = row - row % self.rows_per_subarray;
        let sub_end = sub_start + self.rows_per_subarray;
        let below = row.checked_sub(1).filter(|&v| v >= sub_start);
        let above = Some(row + 1).filter(|&v| v < sub_end);
        for victim in [below, above].into_iter().flatten() {
            let i = self.idx(bank, victim);
            self.rows[i].hammer_count = self.rows[i].hammer_count.saturating_add(1);
            if self.rows[i].hammer_count >= self.n_rh
                && !self.rows[i].flags.contains(RowFlags::BIT_FLIP)
            {
                self.mark(bank, victim, RowFlags::BIT_FLIP);
                flipped.push(victim);
            }
        }
        flipped
    }

    fn compute_next_audit(&self) -> Ps {
        let Some(s) = &self.retention else {
            return Ps::MAX;
        };
        (0..self.banks as usize)
            .map(|b| {
                let phase = s.phase.get(b).copied().unwrap_or(0);
                (self.audited_windows[b] + 1) * s.window + phase + s.grace
            })
            .min()
            .unwrap_or(Ps::MAX)
    }

    /// Audits every refresh window whose grace period ended at or before
    /// `now`. Returns the number of rows newly flagged.
    pub fn advance(&mut self, now: Ps) -> u64 {
        if now < self.next_audit {
            return 0;
        }
        let Some(s) = self.retention.clone() else {
            return 0;
        };
        let mut flagged = 0;
        for b in 0..self.banks {
            let phase = s.phase.get(b as usize).copied().unwrap_or(0);
            loop {
                let k = self.audited_windows[b as usize];
                let start = k * s.window + phase;
                let due = (k + 1) * s.window + phase + s.grace;
                if now < due {
                    break;
                }
                for row in 0..self.rows_per_bank {
                    if self.row(b, row).last_restore < start
                        && !self.row(b, row).flags.contains(RowFlags::RETENTION_EXPIRED)
                    {
                        self.mark(b, row, RowFlags::RETENTION_EXPIRED);
                        flagged += 1;
                    }
                }
                self.audited_windows[b as usize] += 1;
            }
        }
        self.next_audit = self.compute_next_audit();
        flagged
    }

    /// Number of refresh windows audited so far for `bank`.
    pub fn audited_windows(&self, bank: u32) -> u64 {
        self.audited_windows
            .get(bank as usize)
            .copied()
            .unwrap_or(0)
    }

    /// `(bank, subarray, row_in_subarray, state)` for every row.
    pub fn snapshot(&self) -> impl Iterator<Item = (u32, u32, u32, &RowState)> + '_ {
        let rps = self.rows_per_subarray;
        let rpb = self.rows_per_bank as usize;
        self.rows.iter().enumerate().map(move |(i, s)| {
            let bank = (i / rpb) as u32;
            let row = (i % rpb) as u32;
            (bank, row / rps, row % rps, s)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(n_rh: u32) -> GroundTruth {
        GroundTruth::new(2, 32, 8, n_rh, ElectricalWindows::default())
    }

    #[test]
    fn double_sided_hammer_flips_at_threshold() {
        let mut t = truth(1000);
        let victim = 4;
        let mut flips = Vec::new();
        for _ in 0..500 {
            flips.extend(t.register_hammer(0, victim - 1));
            flips.extend(t.register_hammer(0, victim + 1));
        }
        assert_eq!(t.row(0, victim).hammer_count, 1000);
        assert!(flips.contains(&victim));
        assert!(t.row(0, victim).flags.contains(RowFlags::BIT_FLIP));
    }

    #[test]
    fn restore_resets_count() {
        let mut t = truth(1000);
        let victim = 4;
        for i in 0..999 {
            t.register_hammer(0, if i % 2 == 0 { victim - 1 } else { victim + 1 });
        }
        assert!(t.restore_row(0, victim, 10, 32_000, 32_000));
        assert_eq!(t.row(0, victim).hammer_count, 0);
        for i in 0..999 {
            let f = t.register_hammer(0, if i % 2 == 0 { victim - 1 } else { victim + 1 });
            assert!(!f.contains(&victim));
        }
        assert!(t.register_hammer(0, victim - 1).contains(&victim));
    }

    #[test]
    fn subarray_edges_have_one_neighbour() {
        let mut t = truth(10);
        // Row 7 is the last row of subarray 0; row 8 the first of subarray 1.
        t.register_hammer(0, 7);
        assert_eq!(t.row(0, 6).hammer_count, 1);
        assert_eq!(t.row(0, 8).hammer_count, 0);
        t.register_hammer(0, 8);
        assert_eq!(t.row(0, 7).hammer_count, 0);
        assert_eq!(t.row(0, 9).hammer_count, 1);
        t.register_hammer(0, 0);
        assert_eq!(t.row(0, 1).hammer_count, 1);
    }

    #[test]
    fn short_hold_is_partial_and_damages_once() {
        let mut t = truth(10);
        t.initialize_row(1, 3, 0xAA, 0);
        assert!(!t.restore_row(1, 3, 100, 31_000, 32_000));
        assert!(t.row(1, 3).flags.contains(RowFlags::PARTIAL_RESTORE));
        assert_eq!(t.read(1, 3), 0xAA ^ DAMAGE_XOR);
        t.mark(1, 3, RowFlags::CORRUPTED);
        assert_eq!(t.read(1, 3), 0xAA ^ DAMAGE_XOR);
        assert_eq!(t.counters().partial_restores, 1);
    }

    #[test]
    fn retention_audit_flags_unrefreshed_rows() {
        let mut t = truth(10);
        t.set_retention(RetentionSchedule {
            window: 1000,
            phase: vec![0, 500],
            grace: 10,
        });
        for row in 0..32 {
            if row != 5 {
                t.restore_row(0, row, 1200, 50, 40);
            }
            t.restore_row(1, row, 600, 50, 40);
        }
        // Window 0 of bank 0 ([0, 1000)) holds the initial state.
        assert_eq!(t.advance(1010), 0);
        assert_eq!(t.advance(1510), 0);
        assert_eq!(t.audited_windows(1), 1);
        assert_eq!(t.advance(2009), 0);
        assert_eq!(t.advance(2010), 1);
        assert!(t.row(0, 5).flags.contains(RowFlags::RETENTION_EXPIRED));
        assert_eq!(t.audited_windows(1), 1);
    }
}
