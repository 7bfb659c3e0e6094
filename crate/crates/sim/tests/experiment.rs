use std::fs;
use std::io::BufReader;

use hira_core::mc::EventKind;
use hira_sim::config::{ExperimentConfig, IsolationStrategy, Kind, Mode};
use hira_sim::experiment::{prepare, references, run_experiment, run_prepared};
use hira_sim::io;

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.geometry.banks = 4;
    c.geometry.subarrays = 4;
    c.geometry.rows_per_subarray = 16;
    c.workload.count = 2000;
    c.run.duration_us = Some(200.0);
    c
}

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("hira-exp-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn default_config_runs_clean() {
    let o = run_experiment(&ExperimentConfig::default()).unwrap();
    let m = &o.metrics;
    assert!(m.violations().is_empty(), "{:?}", m.violations());
    let n = m.normalized().unwrap();
    assert!(n > 0.5 && n <= 1.0 + 1e-9, "{n}");
    assert!(m.hira_ra > 0);
    assert_eq!(m.refs, 0);
}

#[test]
fn runs_are_deterministic() {
    let c = small();
    let a = run_experiment(&c).unwrap().metrics;
    let b = run_experiment(&c).unwrap().metrics;
    assert_eq!(a, b);
}

#[test]
fn baseline_issues_ref_and_no_concurrent_activations() {
    let mut c = small();
    c.scheduler.mode = Mode::Baseline;
    let m = run_experiment(&c).unwrap().metrics;
    assert!(m.violations().is_empty(), "{:?}", m.violations());
    assert!(m.refs > 0);
    assert_eq!(m.hira_ra + m.hira_rr, 0);
    assert_eq!(m.periodic_generated, 0);
}

#[test]
fn references_are_never_slower_than_refreshing_runs() {
    let c = small();
    let p = prepare(&c).unwrap();
    let r = references(&p).unwrap();
    for mode in [Mode::Baseline, Mode::Hira] {
        let mut cv = c.clone();
        cv.scheduler.mode = mode;
        let m = run_prepared(&prepare(&cv).unwrap(), Some(&r))
            .unwrap()
            .metrics;
        let ws = m.weighted_speedup.unwrap();
        assert!(ws <= r.ideal_weighted_speedup() + 1e-9, "{mode:?}: {ws}");
    }
}

#[test]
fn para_with_solved_probability() {
    let mut c = small();
    c.para.enabled = true;
    c.para.n_rh = Some(128);
    c.chip.n_rh = 128;
    let o = run_experiment(&c).unwrap();
    let p = o.metrics.p_th.unwrap();
    assert!(p > 0.0 && p < 1.0, "{p}");
    assert!(o.metrics.preventive_generated > 0);
    assert!(
        o.metrics.violations().is_empty(),
        "{:?}",
        o.metrics.violations()
    );
}

#[test]
fn hammer_without_para_flips_bits() {
    let mut c = small();
    c.geometry.banks = 1;
    c.chip.n_rh = 64;
    c.workload.kind = Kind::Hammer;
    c.workload.sources = 1;
    c.workload.gap = 0;
    c.run.references = false;
    c.run.mlp = 1;
    let m = run_experiment(&c).unwrap().metrics;
    assert!(m.bit_flips > 0);
    assert!(!m.violations().is_empty());
}

#[test]
fn event_log_matches_counters() {
    let mut c = small();
    let path = scratch("events.csv");
    c.output.event_log = Some(path.clone());
    let o = run_experiment(&c).unwrap();
    let events: Vec<_> = o.report.events.iter().flatten().copied().collect();
    let hira = events
        .iter()
        .filter(|e| matches!(e.kind, EventKind::HiraRa | EventKind::HiraRr))
        .count() as u64;
    assert_eq!(hira, o.metrics.hira_ra + o.metrics.hira_rr);
    let mut buf = Vec::new();
    io::write_events(&mut buf, &events).unwrap();
    assert_eq!(io::read_events(&buf[..]).unwrap(), events);
}

#[test]
fn trace_and_isolation_files_are_used() {
    let trace = scratch("t0.trace");
    fs::write(&trace, "# two reads\n10 R 0x0\n10 W 0x4000\n").unwrap();
    let iso = scratch("iso.txt");
    let map = hira_core::IsolationMap::target_coverage(4, 16, 0.5, 9).unwrap();
    let mut text = Vec::new();
    io::write_isolation(&mut text, &map).unwrap();
    fs::write(&iso, &text).unwrap();
    let back = io::read_isolation(BufReader::new(&text[..])).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(back.isolated(i, j), map.isolated(i, j));
        }
    }

    let mut c = small();
    c.workload.traces = vec![trace];
    c.isolation.strategy = IsolationStrategy::File;
    c.isolation.path = Some(iso);
    c.run.loop_traces = false;
    c.run.duration_us = None;
    let m = run_experiment(&c).unwrap().metrics;
    assert_eq!(m.sources.len(), 1);
    assert_eq!(m.sources[0].served, 2);
}

#[test]
fn missing_trace_file_is_an_error() {
    let mut c = small();
    c.workload.traces = vec!["/nonexistent/x.trace".into()];
    let e = prepare(&c).err().unwrap().to_string();
    assert!(e.contains("/nonexistent/x.trace"), "{e}");
}

#[test]
fn metrics_csv_has_header() {
    let m = run_experiment(&small()).unwrap().metrics;
    let mut buf = Vec::new();
    m.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(io::METRICS_HEADER));
    assert!(text.contains("weighted_speedup"));
}
