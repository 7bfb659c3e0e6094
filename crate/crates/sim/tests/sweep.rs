use hira_sim::config::{ExperimentConfig, Mode};
use hira_sim::io::{read_table, SWEEP_HEADER};
use hira_sim::sweep::{apply, run_sweep, write_sweep, Axis, Variant, SWEEP_COLUMNS};

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.geometry.banks = 4;
    c.geometry.subarrays = 4;
    c.geometry.rows_per_subarray = 16;
    c.workload.count = 2000;
    c.run.duration_us = Some(200.0);
    c
}

#[test]
fn variant_names_round_trip() {
    for v in [
        Variant::BASELINE,
        Variant::hira(0),
        Variant::hira(8),
        Variant::hira_preventive(2),
    ] {
        assert_eq!(Variant::parse(&v.name()), Some(v));
    }
    assert_eq!(Variant::parse("hira"), None);
    assert_eq!(Variant::defaults(Axis::NRh)[1].mode, Mode::HiraPreventive);
}

#[test]
fn capacity_holds_window_and_scales_rfc() {
    let base = small();
    let c = apply(Axis::Capacity, 256, &base);
    assert_eq!(c.geometry().rows_per_bank(), 256);
    assert_eq!(c.timing_params().t_refw, base.timing_params().t_refw);
    assert!((c.timing.t_rfc_ns - 4.0 * base.timing.t_rfc_ns).abs() < 1e-9);
}

#[test]
fn sweep_rows_cover_every_point() {
    let rows = run_sweep(
        Axis::Slack,
        &[0, 4],
        &[Variant::BASELINE, Variant::hira(2)],
        &small(),
    );
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let m = r.result.as_ref().unwrap();
        assert!(
            m.violations().is_empty(),
            "{}: {:?}",
            r.variant,
            m.violations()
        );
        assert!(m.weighted_speedup.is_some());
    }
    let mut buf = Vec::new();
    write_sweep(&mut buf, Axis::Slack, &rows).unwrap();
    assert!(buf.starts_with(SWEEP_HEADER.as_bytes()));
    let (cols, body) = read_table(&buf[..]).unwrap();
    assert_eq!(cols, SWEEP_COLUMNS);
    assert_eq!(body.len(), 4);
}

#[test]
fn bad_point_is_reported_not_fatal() {
    let rows = run_sweep(Axis::Ranks, &[0, 1], &[Variant::BASELINE], &small());
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().find(|r| r.value == 0).unwrap().result.is_err());
    assert!(rows.iter().find(|r| r.value == 1).unwrap().result.is_ok());
}
