//! Planning and validating ACT-PRE-ACT sequences, and their latency.

use alloc::vec::Vec;

use crate::dram::{Command, ElectricalWindows};
use crate::geometry::Geometry;
use crate::isolation::IsolationMap;
use crate::time::Ps;
use crate::timing::TimingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Both rows are refreshed; nothing goes through the bank I/O.
    RefreshRefresh,
    /// The second row is read or written while the first is refreshed.
    RefreshAccess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HiraConfig {
    /// First ACT to PRE.
    pub t1: Ps,
    /// PRE to second ACT.
    pub t2: Ps,
    pub purpose: Purpose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    /// The first row's sense amplifiers must be enabled before the PRE.
    SenseEnabled,
    /// The first wordline must still be up when the second ACT arrives.
    WordlineHeld,
    /// The first row's local row buffer must be off the bank I/O before the
    /// second row connects to it.
    BankIoDisconnected,
    /// The two subarrays must share no bitline or sense amplifier.
    Isolated,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HiraError {
    #[error("rows are in different banks ({0} and {1})")]
    DifferentBanks(u32, u32),
    #[error("t1 and t2 must be positive and no longer than tRC")]
    OutOfRange,
}

impl HiraConfig {
    pub fn new(t1: Ps, t2: Ps, purpose: Purpose) -> Self {
        Self { t1, t2, purpose }
    }

    pub fn check(&self, tp: &TimingParams) -> Result<(), HiraError> {
        if self.t1 == 0 || self.t2 == 0 || self.t1 > tp.t_rc || self.t2 > tp.t_rc {
            return Err(HiraError::OutOfRange);
        }
        Ok(())
    }
}

/// A bank row identified by its bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BankRow {
    pub bank: u32,
    pub row: u32,
}

/// Returns every violated condition, in declaration order; empty means the
/// sequence opens both rows reliably.
pub fn validate_hira(
    cfg: &HiraConfig,
    map: &IsolationMap,
    geometry: &Geometry,
    row_a: BankRow,
    row_b: BankRow,
    windows: &ElectricalWindows,
) -> Result<Vec<Condition>, HiraError> {
    if row_a.bank != row_b.bank {
        return Err(HiraError::DifferentBanks(row_a.bank, row_b.bank));
    }
    let mut v = Vec::new();
    if cfg.t1 < windows.sense_enable_min {
        v.push(Condition::SenseEnabled);
    }
    if cfg.t2 > windows.wordline_disable_max {
        v.push(Condition::WordlineHeld);
    }
    if cfg.purpose == Purpose::RefreshAccess && cfg.t2 < windows.bankio_disconnect_min {
        v.push(Condition::BankIoDisconnected);
    }
    if !map.isolated(
        geometry.subarray_of(row_a.row),
        geometry.subarray_of(row_b.row),
    ) {
        v.push(Condition::Isolated);
    }
    Ok(v)
}

/// Command offsets of one sequence, relative to the first ACT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiraPlan {
    pub steps: [(Command, Ps); 3],
    /// Earliest RD/WR to the second row.
    pub column_ready: Ps,
    /// Earliest PRE that fully restores both rows.
    pub close_earliest: Ps,
}

impl HiraPlan {
    pub fn new(cfg: &HiraConfig, tp: &TimingParams, row_a: u32, row_b: u32) -> Self {
        let second = cfg.t1 + cfg.t2;
        Self {
            steps: [
                (Command::Act { row: row_a }, 0),
                (Command::Pre, cfg.t1),
                (Command::Act { row: row_b }, second),
            ],
            column_ready: second + tp.t_rcd,
            close_earliest: second + tp.t_ras,
        }
    }
}

/// Time to refresh two rows with one sequence: `t1 + t2 + tRAS`. The
/// closing precharge is not counted.
pub fn two_row_refresh_latency(cfg: &HiraConfig, tp: &TimingParams) -> Ps {
    cfg.t1 + cfg.t2 + tp.t_ras
}

/// Two back-to-back nominal refreshes: `tRAS + tRP + tRAS`.
pub fn baseline_two_row_refresh_latency(tp: &TimingParams) -> Ps {
    tp.t_ras + tp.t_rp + tp.t_ras
}

pub fn latency_reduction(cfg: &HiraConfig, tp: &TimingParams) -> f64 {
    1.0 - two_row_refresh_latency(cfg, tp) as f64 / baseline_two_row_refresh_latency(tp) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::ns;

    fn geometry() -> Geometry {
        Geometry {
            subarrays_per_bank: 8,
            rows_per_subarray: 64,
            ..Geometry::default()
        }
    }

    #[test]
    fn latency_figures() {
        let tp = TimingParams::ddr4();
        let c = HiraConfig::new(ns(3), ns(3), Purpose::RefreshRefresh);
        assert_eq!(two_row_refresh_latency(&c, &tp), ns(38));
        assert_eq!(baseline_two_row_refresh_latency(&tp), ns(78) + 250);
        assert!((latency_reduction(&c, &tp) - 0.514).abs() < 1e-3);
        let c = HiraConfig::new(4_500, 4_500, Purpose::RefreshRefresh);
        assert_eq!(two_row_refresh_latency(&c, &tp), ns(41));
        let nominal = HiraConfig::new(tp.t_ras, tp.t_rp, Purpose::RefreshRefresh);
        assert_eq!(latency_reduction(&nominal, &tp), 0.0);
        let alt = tp.with_t_rp(ns(14) + 500);
        assert_eq!(baseline_two_row_refresh_latency(&alt), ns(78) + 500);
        assert!(HiraConfig::new(0, 0, Purpose::RefreshRefresh)
            .check(&tp)
            .is_err());
    }

    #[test]
    fn validation_lists_all_failures() {
        let g = geometry();
        let map = IsolationMap::adjacent_share(8).unwrap();
        let w = ElectricalWindows::default();
        let a = BankRow { bank: 0, row: 10 };
        let b = BankRow { bank: 0, row: 200 };
        let ok = HiraConfig::new(ns(3), ns(3), Purpose::RefreshAccess);
        assert!(validate_hira(&ok, &map, &g, a, b, &w).unwrap().is_empty());
        let c1 = HiraConfig::new(1_500, ns(3), Purpose::RefreshAccess);
        assert_eq!(
            validate_hira(&c1, &map, &g, a, b, &w).unwrap(),
            [Condition::SenseEnabled]
        );
        let same = BankRow { bank: 0, row: 20 };
        assert_eq!(
            validate_hira(&ok, &map, &g, a, same, &w).unwrap(),
            [Condition::Isolated]
        );
        let bad = HiraConfig::new(1_500, ns(2), Purpose::RefreshAccess);
        assert_eq!(
            validate_hira(&bad, &map, &g, a, same, &w).unwrap(),
            [
                Condition::SenseEnabled,
                Condition::BankIoDisconnected,
                Condition::Isolated
            ]
        );
        let rr = HiraConfig::new(ns(3), ns(2), Purpose::RefreshRefresh);
        assert!(validate_hira(&rr, &map, &g, a, b, &w).unwrap().is_empty());
        assert_eq!(
            validate_hira(&ok, &map, &g, a, BankRow { bank: 1, row: 200 }, &w),
            Err(HiraError::DifferentBanks(0, 1))
        );
    }

    #[test]
    fn plan_offsets() {
        let tp = TimingParams::ddr4();
        let p = HiraPlan::new(
            &HiraConfig::new(ns(3), ns(3), Purpose::RefreshAccess),
            &tp,
            1,
            2,
        );
        assert_eq!(p.steps[1], (Command::Pre, ns(3)));
        assert_eq!(p.steps[2].1, ns(6));
        assert_eq!(p.column_ready, ns(6) + tp.t_rcd);
        assert_eq!(p.close_earliest, ns(38));
    }
}
