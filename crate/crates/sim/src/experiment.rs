//! One configured simulation plus the reference runs it is normalised
//! against.

use std::fs::File;
use std::io::{BufReader, Write};

use hira_core::dram::{ChipConfig, ChipConfigError};
use hira_core::isolation::{IsolationError, IsolationMap};
use hira_core::mc::SchedulerConfig;
use hira_core::para::{solve_p_th, ParaError, ParaParams};
use hira_core::system::{run_system, SystemConfig, SystemError, SystemReport};
use hira_core::time::{cycles_ceil, Ps};
use hira_core::workload::{generate_trace, TraceKind, TraceParams, TraceRequest};

use crate::config::{ps, ConfigError, ExperimentConfig, IsolationStrategy};
use crate::io::{self, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Isolation(#[from] IsolationError),
    #[error(transparent)]
    Chip(#[from] ChipConfigError),
    #[error("solving the preventive refresh probability: {0}")]
    Para(#[from] ParaError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("{path}: {err}")]
    File { path: String, err: std::io::Error },
}

/// Everything a run needs, resolved from the configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub system: SystemConfig,
    pub traces: Vec<Vec<TraceRequest>>,
    /// Preventive refresh probability in use, if any.
    pub p_th: Option<f64>,
}

fn open(path: &std::path::Path) -> Result<BufReader<File>, ExperimentError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|err| ExperimentError::File {
            path: path.display().to_string(),
            err,
        })
}

pub fn isolation_map(cfg: &ExperimentConfig) -> Result<IsolationMap, ExperimentError> {
    let g = cfg.geometry();
    let iso = &cfg.isolation;
    Ok(match iso.strategy {
        IsolationStrategy::AdjacentShare => IsolationMap::adjacent_share(g.subarrays_per_bank)?,
        IsolationStrategy::TargetCoverage => IsolationMap::target_coverage(
            g.subarrays_per_bank,
            g.rows_per_subarray,
            iso.coverage,
            iso.seed,
        )?,
        IsolationStrategy::File => {
            // Presence checked by validation.
            let path = iso.path.as_deref().unwrap_or(std::path::Path::new(""));
            io::read_isolation(open(path)?)?
        }
    })
}

/// Solver inputs matching the configured window and slack.
pub fn para_params(cfg: &ExperimentConfig, n_rh: u64) -> ParaParams {
    let t = cfg.timing_params();
    ParaParams {
        n_rh,
        t_refw: t.t_refw,
        t_rc: t.t_rc,
        slack: cfg.slack(),
        target: cfg.para.target,
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    cfg.validate()?;
    let g = cfg.geometry();
    let timing = cfg.timing_params();
    let s = &cfg.scheduler;
    let p_th = if cfg.para.enabled {
        Some(match (cfg.para.p_th, cfg.para.n_rh) {
            (Some(p), _) => p,
            (None, Some(n)) => solve_p_th(&para_params(cfg, n))?.p_th,
            (None, None) => unreachable!("rejected by validation"),
        })
    } else {
        None
    };
    let sched = SchedulerConfig {
        mode: s.mode.into(),
        periodic_refresh: s.periodic_refresh,
        slack_multiple: s.slack_multiple,
        para: p_th,
        seed: s.seed,
        t1: ps(s.t1_ns),
        t2: ps(s.t2_ns),
        tck: s.tck_ps,
        table_capacity: s.table_capacity,
        fifo_capacity: s.fifo_capacity,
        refresh_access: s.refresh_access,
        refresh_refresh: s.refresh_refresh,
        spt_faults: s.spt_faults.iter().map(|[a, b]| (*a, *b)).collect(),
        log_events: cfg.output.event_log.is_some(),
        audit_retention: s.audit_retention,
    };
    let system = SystemConfig {
        chip: ChipConfig {
            geometry: g,
            timing,
            windows: cfg.chip.windows(),
            n_rh_true: cfg.chip.n_rh,
            isolation: isolation_map(cfg)?,
        },
        sched,
        mapping: cfg.workload.mapping.into(),
        mlp: cfg.run.mlp,
        duration: cfg.run.duration_us.map(|d| ps(d * 1000.0)),
        loop_traces: cfg.run.loop_traces,
    };
    let wl = &cfg.workload;
    let traces = if wl.traces.is_empty() {
        (0..wl.sources)
            .map(|i| {
                let kind = wl.kind.for_source(i);
                let gap = if kind == TraceKind::Hammer && wl.gap == 0 {
                    cycles_ceil(timing.t_rc, s.tck_ps)
                } else {
                    wl.gap
                };
                generate_trace(
                    &TraceParams {
                        kind,
                        count: wl.count,
                        source: i as u32,
                        gap,
                        write_ratio: wl.write_ratio,
                        burst: wl.burst,
                        seed: wl.seed.wrapping_add(i as u64),
                    },
                    &g,
                    system.mapping,
                )
            })
            .collect()
    } else {
        let mut v = Vec::new();
        for (i, p) in wl.traces.iter().enumerate() {
            v.push(io::read_trace(open(p)?, i as u32)?);
        }
        v
    };
    Ok(Prepared {
        system,
        traces,
        p_th,
    })
}

/// No-refresh runs: all sources together and each source alone.
#[derive(Debug, Clone)]
pub struct References {
    pub ideal: SystemReport,
    pub solo: Vec<SystemReport>,
}

impl References {
    pub fn ideal_weighted_speedup(&self) -> f64 {
        self.ideal.weighted_speedup(&self.solo)
    }
}

fn ideal_config(p: &Prepared) -> SystemConfig {
    let mut sys = p.system.clone();
    sys.sched.periodic_refresh = false;
    sys.sched.para = None;
    sys.sched.log_events = false;
    sys
}

pub fn references(p: &Prepared) -> Result<References, ExperimentError> {
    let sys = ideal_config(p);
    let ideal = run_system(&sys, &p.traces)?;
    let solo = p
        .traces
        .iter()
        .map(|t| run_system(&sys, std::slice::from_ref(t)))
        .collect::<Result<_, _>>()?;
    Ok(References { ideal, solo })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceMetrics {
    pub issued: u64,
    pub served: u64,
    pub in_flight: u64,
    /// Served requests per cycle.
    pub throughput: f64,
    pub mean_latency_ns: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub cycles: u64,
    pub sources: Vec<SourceMetrics>,
    /// Relative to each source's solo no-refresh run.
    pub weighted_speedup: Option<f64>,
    /// Weighted speedup of the no-refresh run of the same traces.
    pub ideal_weighted_speedup: Option<f64>,
    pub p_th: Option<f64>,
    pub mean_latency_ns: f64,
    pub bus_occupancy: f64,
    pub row_hit_rate: f64,
    pub hira_ra: u64,
    pub hira_rr: u64,
    pub standalone_periodic: u64,
    pub standalone_preventive: u64,
    pub refs: u64,
    pub periodic_generated: u64,
    pub preventive_generated: u64,
    pub tfaw_stall_cycles: u64,
    pub fifo_stall_cycles: u64,
    pub table_max_occupancy: usize,
    pub table_overflows: u64,
    pub deadline_violations: u64,
    pub max_start_lateness_ps: Ps,
    pub plan_violations: u64,
    pub command_errors: u64,
    pub first_error: Option<String>,
    pub corrupted: u64,
    pub partial_restores: u64,
    pub bit_flips: u64,
    pub retention_expired: u64,
    pub flagged_rows: u64,
}

impl MetricsReport {
    pub fn from_report(r: &SystemReport, refs: Option<&References>, p_th: Option<f64>) -> Self {
        let m = &r.mc;
        let served: u64 = r.sources.iter().map(|s| s.served).sum();
        Self {
            cycles: r.cycles,
            sources: r
                .sources
                .iter()
                .enumerate()
                .map(|(i, s)| SourceMetrics {
                    issued: s.issued,
                    served: s.served,
                    in_flight: s.in_flight(),
                    throughput: r.throughput(i),
                    mean_latency_ns: s.mean_latency() / 1000.0,
                })
                .collect(),
            weighted_speedup: refs.map(|x| r.weighted_speedup(&x.solo)),
            ideal_weighted_speedup: refs.map(References::ideal_weighted_speedup),
            p_th,
            mean_latency_ns: m.mean_latency() / 1000.0,
            bus_occupancy: m.bus_occupancy(),
            row_hit_rate: if served == 0 {
                0.0
            } else {
                m.row_hits as f64 / m.served as f64
            },
            hira_ra: m.hira_ra,
            hira_rr: m.hira_rr,
            standalone_periodic: m.standalone_periodic,
            standalone_preventive: m.standalone_preventive,
            refs: m.refs,
            periodic_generated: m.periodic_generated,
            preventive_generated: m.preventive_generated,
            tfaw_stall_cycles: m.tfaw_stall_cycles,
            fifo_stall_cycles: m.fifo_stall_cycles,
            table_max_occupancy: m.table_max_occupancy,
            table_overflows: m.table_overflows,
            deadline_violations: m.deadline_violations,
            max_start_lateness_ps: m.max_start_lateness,
            plan_violations: m.plan_violations,
            command_errors: m.command_errors,
            first_error: m.first_error.as_ref().map(|e| e.to_string()),
            corrupted: r.truth.corrupted,
            partial_restores: r.truth.partial_restores,
            bit_flips: r.truth.bit_flips,
            retention_expired: r.truth.retention_expired,
            flagged_rows: r.flagged_rows,
        }
    }

    /// Weighted speedup relative to the no-refresh run (1.0 for that run).
    pub fn normalized(&self) -> Option<f64> {
        match (self.weighted_speedup, self.ideal_weighted_speedup) {
            (Some(w), Some(i)) if i > 0.0 => Some(w / i),
            _ => None,
        }
    }

    pub fn total_throughput(&self) -> f64 {
        self.sources.iter().map(|s| s.throughput).sum()
    }

    /// Invariant breaches; empty for a passing run.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |n: u64, what: &str| {
            if n > 0 {
                v.push(format!("{n} {what}"));
            }
        };
        check(self.deadline_violations, "refresh deadline violations");
        check(self.retention_expired, "rows missed their refresh window");
        check(self.corrupted, "row corruptions");
        check(self.partial_restores, "partial restores");
        check(self.bit_flips, "RowHammer bit flips");
        check(self.plan_violations, "invalid concurrent-activation plans");
        check(self.command_errors, "commands rejected by the chip");
        if let Some(e) = &self.first_error {
            v.push(format!("first rejected command: {e}"));
        }
        v
    }

    pub fn rows(&self) -> Vec<(String, String)> {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = vec![
            ("cycles".into(), self.cycles.to_string()),
            ("weighted_speedup".into(), f(self.weighted_speedup)),
            (
                "ideal_weighted_speedup".into(),
                f(self.ideal_weighted_speedup),
            ),
            ("normalized_weighted_speedup".into(), f(self.normalized())),
            (
                "p_th".into(),
                self.p_th.map(|p| format!("{p:.6e}")).unwrap_or_default(),
            ),
            (
                "mean_latency_ns".into(),
                format!("{:.3}", self.mean_latency_ns),
            ),
            ("bus_occupancy".into(), format!("{:.6}", self.bus_occupancy)),
            ("row_hit_rate".into(), format!("{:.6}", self.row_hit_rate)),
            ("hira_refresh_access".into(), self.hira_ra.to_string()),
            ("hira_refresh_refresh".into(), self.hira_rr.to_string()),
            (
                "standalone_periodic".into(),
                self.standalone_periodic.to_string(),
            ),
            (
                "standalone_preventive".into(),
                self.standalone_preventive.to_string(),
            ),
            ("refs".into(), self.refs.to_string()),
            (
                "periodic_generated".into(),
                self.periodic_generated.to_string(),
            ),
            (
                "preventive_generated".into(),
                self.preventive_generated.to_string(),
            ),
            (
                "tfaw_stall_cycles".into(),
                self.tfaw_stall_cycles.to_string(),
            ),
            (
                "fifo_stall_cycles".into(),
                self.fifo_stall_cycles.to_string(),
            ),
            (
                "table_max_occupancy".into(),
                self.table_max_occupancy.to_string(),
            ),
            ("table_overflows".into(), self.table_overflows.to_string()),
            (
                "deadline_violations".into(),
                self.deadline_violations.to_string(),
            ),
            (
                "max_start_lateness_ps".into(),
                self.max_start_lateness_ps.to_string(),
            ),
            ("plan_violations".into(), self.plan_violations.to_string()),
            ("command_errors".into(), self.command_errors.to_string()),
            ("corrupted".into(), self.corrupted.to_string()),
            ("partial_restores".into(), self.partial_restores.to_string()),
            ("bit_flips".into(), self.bit_flips.to_string()),
            (
                "retention_expired".into(),
                self.retention_expired.to_string(),
            ),
        ];
        for (i, s) in self.sources.iter().enumerate() {
            out.push((format!("source{i}.issued"), s.issued.to_string()));
            out.push((format!("source{i}.served"), s.served.to_string()));
            out.push((format!("source{i}.in_flight"), s.in_flight.to_string()));
            out.push((
                format!("source{i}.throughput"),
                format!("{:.6}", s.throughput),
            ));
            out.push((
                format!("source{i}.mean_latency_ns"),
                format!("{:.3}", s.mean_latency_ns),
            ));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), FormatError> {
        io::write_table(
            w,
            io::METRICS_HEADER,
            &["metric", "value"],
            self.rows().into_iter().map(|(k, v)| vec![k, v]),
        )
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub metrics: MetricsReport,
    pub report: SystemReport,
}

pub fn run_prepared(p: &Prepared, refs: Option<&References>) -> Result<Outcome, ExperimentError> {
    let report = run_system(&p.system, &p.traces)?;
    Ok(Outcome {
        metrics: MetricsReport::from_report(&report, refs, p.p_th),
        report,
    })
}

/// Runs the configured simulation and, if requested, its references.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let p = prepare(cfg)?;
    let refs = if cfg.run.references {
        Some(references(&p)?)
    } else {
        None
    };
    run_prepared(&p, refs.as_ref())
}
