use hira_core::characterization::{run_coverage, run_threshold, strided_rows, DEFAULT_PATTERNS};
use hira_core::dram::{ChipConfig, ElectricalWindows};
use hira_core::hira::{validate_hira, BankRow, Condition, HiraConfig, HiraPlan, Purpose};
use hira_core::time::ns;
use hira_core::{Chip, Command, Geometry, IsolationMap, TimingParams};

fn geometry() -> Geometry {
    Geometry {
        channels: 1,
        ranks_per_channel: 1,
        banks_per_rank: 2,
        subarrays_per_bank: 8,
        rows_per_subarray: 32,
        columns_per_row: 32,
    }
}

fn chip(n_rh: u32) -> Chip {
    Chip::new(ChipConfig {
        geometry: geometry(),
        timing: TimingParams::ddr4(),
        windows: ElectricalWindows::default(),
        n_rh_true: n_rh,
        isolation: IsolationMap::adjacent_share(8).unwrap(),
    })
    .unwrap()
}

#[test]
fn plan_offsets() {
    let tp = TimingParams::ddr4();
    let cfg = HiraConfig::new(ns(3), ns(3), Purpose::RefreshAccess);
    let plan = HiraPlan::new(&cfg, &tp, 5, 100);
    assert_eq!(plan.steps[0], (Command::Act { row: 5 }, 0));
    assert_eq!(plan.steps[1], (Command::Pre, ns(3)));
    assert_eq!(plan.steps[2], (Command::Act { row: 100 }, ns(6)));
    assert_eq!(plan.column_ready, ns(6) + tp.t_rcd);
    assert_eq!(plan.close_earliest, ns(6) + tp.t_ras);
}

#[test]
fn validation_lists_every_broken_condition() {
    let g = geometry();
    let map = IsolationMap::adjacent_share(8).unwrap();
    let w = ElectricalWindows::default();
    let a = BankRow { bank: 0, row: 0 };
    let same = BankRow { bank: 0, row: 40 };
    let far = BankRow { bank: 0, row: 100 };
    let ok = HiraConfig::new(ns(3), ns(3), Purpose::RefreshRefresh);
    assert!(validate_hira(&ok, &map, &g, a, far, &w).unwrap().is_empty());
    let bad = HiraConfig::new(ns(1), ns(6), Purpose::RefreshRefresh);
    assert_eq!(
        validate_hira(&bad, &map, &g, a, same, &w).unwrap(),
        vec![
            Condition::SenseEnabled,
            Condition::WordlineHeld,
            Condition::Isolated
        ]
    );
    assert!(validate_hira(&ok, &map, &g, a, BankRow { bank: 1, row: 100 }, &w).is_err());
}

#[test]
fn coverage_follows_isolation() {
    let mut c = chip(u32::MAX);
    let rows = strided_rows(256, 32, 0);
    let cfg = HiraConfig::new(ns(3), ns(3), Purpose::RefreshRefresh);
    let r = run_coverage(&mut c, 0, &cfg, &rows, &DEFAULT_PATTERNS).unwrap();
    // Adjacent subarrays share sense amplifiers; everything else pairs.
    for (i, &a) in rows.iter().enumerate() {
        for &b in &r.partners[i] {
            assert!((a / 32).abs_diff(b / 32) > 1, "{a} {b}");
        }
        let n = rows
            .iter()
            .filter(|&&b| (a / 32).abs_diff(b / 32) > 1)
            .count();
        assert_eq!(r.partners[i].len(), n);
    }
    let short = HiraConfig::new(ns(1), ns(3), Purpose::RefreshRefresh);
    let r = run_coverage(&mut c, 0, &short, &rows, &DEFAULT_PATTERNS).unwrap();
    assert!(r.coverage().all(|(_, x)| x == 0.0));
}

#[test]
fn refresh_mid_attack_doubles_threshold() {
    let mut c = chip(100);
    let cfg = HiraConfig::new(ns(3), ns(3), Purpose::RefreshRefresh);
    assert_eq!(run_threshold(&mut c, 0, 40, None, 0x55).unwrap(), 100);
    assert_eq!(
        run_threshold(&mut c, 0, 40, Some((140, &cfg)), 0x55).unwrap(),
        200
    );
}
