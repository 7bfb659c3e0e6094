use std::path::PathBuf;
use std::process::{Command, Output};

fn hira(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hira"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("hira-cli-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

const SMALL: [&str; 8] = [
    "--set",
    "geometry.banks=2",
    "--set",
    "geometry.rows_per_subarray=16",
    "--set",
    "run.duration_us=100",
    "--set",
    "workload.count=1000",
];

#[test]
fn para_solve_prints_table() {
    let o = hira(&["para-solve", "--n-rh", "64,1024", "--slack", "0"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("# hira-para v1"));
    assert!(s.contains("N_RH,slack_multiple,p_th"));
    assert!(s.contains("1024,0,0.0663"), "{s}");
}

#[test]
fn simulate_writes_outputs() {
    let d = dir();
    let ev = d.join("ev.csv");
    let snap = d.join("snap.csv");
    let mut args = vec!["simulate"];
    args.extend(SMALL);
    let (e, s) = (ev.to_str().unwrap(), snap.to_str().unwrap());
    args.extend(["--events", e, "--snapshot", s]);
    let o = hira(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("weighted_speedup"));
    assert!(std::fs::read_to_string(&ev)
        .unwrap()
        .starts_with("# hira-events v1"));
    let snap = std::fs::read_to_string(&snap).unwrap();
    assert!(snap.contains("channel,bank,subarray,row,hammer_count"));
}

#[test]
fn print_config_round_trips() {
    let d = dir();
    let o = hira(&[
        "simulate",
        "--print-config",
        "--set",
        "scheduler.slack_multiple=4",
    ]);
    assert!(o.status.success());
    let p = d.join("c.toml");
    std::fs::write(&p, stdout(&o)).unwrap();
    let o2 = hira(&["simulate", p.to_str().unwrap(), "--print-config"]);
    assert_eq!(stdout(&o), stdout(&o2));
}

#[test]
fn bad_override_fails() {
    let o = hira(&["simulate", "--set", "bogus.x=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
}

#[test]
fn invalid_config_reports_line() {
    let p = dir().join("bad.toml");
    std::fs::write(&p, "[geometry]\nbanks = 4\nrows_per_subarray = \"x\"\n").unwrap();
    let o = hira(&["simulate", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3:"));
}

#[test]
fn coverage_and_threshold_run() {
    let o = hira(&["coverage", "--t1", "1.5,3", "--t2", "3", "--sample", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("bank,t1_ns,t2_ns,row,coverage"));
    let o = hira(&["threshold", "--victims", "4", "--n-rh", "256"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mean threshold ratio 2.0000"));
}

#[test]
fn sweep_runs() {
    let mut args = vec![
        "sweep",
        "--axis",
        "slack",
        "--values",
        "0,2",
        "--variants",
        "baseline,hira-2",
    ];
    args.extend(SMALL);
    let o = hira(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 2 + 4);
}
