//! Closed-loop multi-source driver over one controller per channel.

use alloc::vec::Vec;

use crate::dram::{Chip, ChipConfig, ChipConfigError, TruthCounters};
use crate::geometry::{AddressMapping, GeometryError};
use crate::mc::{ConfigError, Controller, Event, McStats, MemRequest, SchedulerConfig};
use crate::time::Ps;
use crate::workload::TraceRequest;

#[derive(Debug, Clone)]
pub struct SystemConfig {
    /// Geometry includes the channel count; every channel gets its own chip.
    pub chip: ChipConfig,
    pub sched: SchedulerConfig,
    pub mapping: AddressMapping,
    /// Outstanding requests allowed per source.
    pub mlp: usize,
    /// Stop after this much simulated time; `None` runs every trace to
    /// completion.
    pub duration: Option<Ps>,
    /// Restart a trace from its beginning when it runs out.
    pub loop_traces: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SystemError {
    #[error(transparent)]
    Chip(#[from] ChipConfigError),
    #[error(transparent)]
    Scheduler(#[from] ConfigError),
    #[error("source {source_id}, request {index}: {err}")]
    Address {
        source_id: usize,
        index: usize,
        err: GeometryError,
    },
    #[error("looping traces need a duration")]
    Unbounded,
    #[error("memory-level parallelism must be positive")]
    Mlp,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SourceStats {
    pub issued: u64,
    pub served: u64,
    pub total_latency: u128,
}

impl SourceStats {
    pub fn in_flight(&self) -> u64 {
        self.issued - self.served
    }

    pub fn mean_latency(&self) -> f64 {
        if self.served == 0 {
            0.0
        } else {
            self.total_latency as f64 / self.served as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SystemReport {
    pub cycles: u64,
    pub tck: Ps,
    pub sources: Vec<SourceStats>,
    /// All channels merged.
    pub mc: McStats,
    pub channels: Vec<McStats>,
    pub truth: TruthCounters,
    /// Rows carrying any damage or retention flag at the end.
    pub flagged_rows: u64,
    /// Per-channel event logs, if logging was enabled.
    pub events: Vec<Vec<Event>>,
    /// Final chip state of every channel.
    pub chips: Vec<Chip>,
}

impl SystemReport {
    /// Served requests per cycle of source `i`.
    pub fn throughput(&self, i: usize) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.sources[i].served as f64 / self.cycles as f64
        }
    }

    /// Sum of each source's throughput relative to its entry in `solo`
    /// (one single-source report per source). Sources that served nothing
    /// on their own are skipped.
    pub fn weighted_speedup(&self, solo: &[SystemReport]) -> f64 {
        (0..self.sources.len())
            .filter_map(|i| {
                let alone = solo.get(i)?.throughput(0);
                (alone > 0.0).then(|| self.throughput(i) / alone)
            })
            .sum()
    }
}

struct Source<'a> {
    trace: &'a [TraceRequest],
    next: usize,
    ready: u64,
    outstanding: usize,
    exhausted: bool,
    stats: SourceStats,
}

impl Source<'_> {
    fn can_issue(&self, mlp: usize) -> bool {
        !self.exhausted && self.outstanding < mlp
    }
}

pub fn run_system(
    cfg: &SystemConfig,
    traces: &[Vec<TraceRequest>],
) -> Result<SystemReport, SystemError> {
    if cfg.mlp == 0 {
        return Err(SystemError::Mlp);
    }
    if cfg.loop_traces && cfg.duration.is_none() {
        return Err(SystemError::Unbounded);
    }
    let g = cfg.chip.geometry;
    let tck = cfg.sched.tck;
    let mut ctrls = Vec::with_capacity(g.channels as usize);
    for _ in 0..g.channels {
        ctrls.push(Controller::new(
            Chip::new(cfg.chip.clone())?,
            cfg.sched.clone(),
        )?);
    }
    let mut srcs: Vec<Source> = traces
        .iter()
        .map(|t| Source {
            trace: t,
            next: 0,
            ready: t.first().map_or(0, |r| r.gap),
            outstanding: 0,
            exhausted: t.is_empty(),
            stats: SourceStats::default(),
        })
        .collect();
    let end = cfg.duration.map(|d| d / tck);
    let mut id = 0u64;
    let mut c = 0u64;
    loop {
        if end.is_some_and(|e| c >= e) {
            break;
        }
        let now = c * tck;
        for ctrl in ctrls.iter_mut() {
            while let Some(done) = ctrl.pop_completion(now) {
                let s = &mut srcs[done.source as usize];
                s.outstanding -= 1;
                s.stats.served += 1;
                s.stats.total_latency += done.latency as u128;
            }
        }
        for (si, s) in srcs.iter_mut().enumerate() {
            while s.can_issue(cfg.mlp) && s.ready <= c {
                let r = s.trace[s.next];
                let d = g
                    .decode(cfg.mapping, r.address)
                    .map_err(|err| SystemError::Address {
                        source_id: si,
                        index: s.next,
                        err,
                    })?;
                id += 1;
                ctrls[d.channel as usize].enqueue(MemRequest {
                    id,
                    source: si as u32,
                    write: r.write,
                    rank: d.rank,
                    bank: d.bank,
                    row: g.bank_row(d.subarray, d.row),
                    column: d.column,
                    arrival: now,
                });
                s.stats.issued += 1;
                s.outstanding += 1;
                s.next += 1;
                if s.next == s.trace.len() {
                    if cfg.loop_traces {
                        s.next = 0;
                    } else {
                        s.exhausted = true;
                    }
                }
                if !s.exhausted {
                    s.ready = c + s.trace[s.next].gap;
                }
            }
        }
        for ctrl in ctrls.iter_mut() {
            ctrl.skip_to(c);
            if ctrl.next_wakeup() == Some(c) {
                ctrl.tick();
            }
        }
        let drained = srcs.iter().all(|s| s.exhausted && s.outstanding == 0);
        if end.is_none() && drained && ctrls.iter().all(|k| k.queued() == 0) {
            c += 1;
            break;
        }
        // Next cycle where anything can happen.
        let mut next: Option<u64> = None;
        let mut consider = |x: u64| next = Some(next.map_or(x, |n: u64| n.min(x)));
        for ctrl in &ctrls {
            if let Some(w) = ctrl.next_wakeup() {
                consider(w.max(c + 1));
            }
            if let Some(t) = ctrl.next_completion() {
                consider(t.div_ceil(tck).max(c + 1));
            }
        }
        for s in &srcs {
            if s.can_issue(cfg.mlp) {
                consider(s.ready.max(c + 1));
            }
        }
        match (next, end) {
            (Some(n), Some(e)) => c = n.min(e),
            (Some(n), None) => c = n,
            (None, Some(e)) => c = e,
            (None, None) => {
                c += 1;
                break;
            }
        }
    }
    let cycles = end.unwrap_or(c);
    let mut report = SystemReport {
        cycles,
        tck,
        sources: srcs.iter().map(|s| s.stats).collect(),
        ..SystemReport::default()
    };
    for mut ctrl in ctrls {
        ctrl.skip_to(cycles);
        ctrl.chip_mut().advance(cycles * tck);
        let st = ctrl.stats();
        report.mc.merge(&st);
        report.channels.push(st);
        let t = ctrl.chip().truth().counters();
        report.truth.corrupted += t.corrupted;
        report.truth.partial_restores += t.partial_restores;
        report.truth.bit_flips += t.bit_flips;
        report.truth.retention_expired += t.retention_expired;
        report.truth.restores += t.restores;
        report.flagged_rows += ctrl
            .chip()
            .truth()
            .snapshot()
            .filter(|(.., r)| !r.flags.is_empty())
            .count() as u64;
        report.events.push(ctrl.take_events());
        report.chips.push(ctrl.into_chip());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::ElectricalWindows;
    use crate::geometry::Geometry;
    use crate::isolation::IsolationMap;
    use crate::mc::RefreshMode;
    use crate::time::us;
    use crate::timing::TimingParams;
    use crate::workload::{generate_trace, TraceKind, TraceParams};

    fn cfg(channels: u32, sched: SchedulerConfig, duration: Option<Ps>) -> SystemConfig {
        let geometry = Geometry {
            channels,
            ranks_per_channel: 1,
            banks_per_rank: 4,
            subarrays_per_bank: 8,
            rows_per_subarray: 16,
            columns_per_row: 64,
        };
        let mut timing = TimingParams::ddr4();
        timing.t_refw = geometry.rows_per_bank() as u64 / 8 * timing.t_refi;
        SystemConfig {
            chip: ChipConfig {
                geometry,
                timing,
                windows: ElectricalWindows::default(),
                n_rh_true: 1_000_000,
                isolation: IsolationMap::adjacent_share(8).unwrap(),
            },
            sched,
            mapping: AddressMapping::RowInterleaved,
            mlp: 4,
            duration,
            loop_traces: duration.is_some(),
        }
    }

    fn traces(c: &SystemConfig, n: usize, kind: TraceKind) -> Vec<Vec<TraceRequest>> {
        (0..n)
            .map(|s| {
                generate_trace(
                    &TraceParams {
                        kind,
                        count: 2000,
                        source: s as u32,
                        seed: s as u64,
                        ..TraceParams::default()
                    },
                    &c.chip.geometry,
                    c.mapping,
                )
            })
            .collect()
    }

    #[test]
    fn finite_traces_are_fully_served() {
        let c = cfg(2, SchedulerConfig::default(), None);
        let t = traces(&c, 3, TraceKind::Random);
        let r = run_system(&c, &t).unwrap();
        for s in &r.sources {
            assert_eq!(s.issued, 2000);
            assert_eq!(s.served, 2000);
        }
        assert_eq!(r.mc.command_errors, 0);
        assert_eq!(r.flagged_rows, 0);
        assert!(r.channels.iter().all(|ch| ch.served > 0));
    }

    #[test]
    fn fixed_duration_conserves_requests() {
        let c = cfg(1, SchedulerConfig::default(), Some(us(300)));
        let t = traces(&c, 2, TraceKind::RowHit);
        let r = run_system(&c, &t).unwrap();
        assert_eq!(r.cycles, us(300) / 750);
        for s in &r.sources {
            assert!(s.in_flight() <= 4);
            assert!(s.served > 0);
        }
        assert_eq!(r.mc.deadline_violations, 0);
        assert_eq!(r.flagged_rows, 0, "{:?}", r.truth);
    }

    #[test]
    fn empty_run_has_zero_metrics() {
        let c = cfg(1, SchedulerConfig::default(), None);
        let r = run_system(&c, &[Vec::new()]).unwrap();
        assert_eq!(r.sources[0], SourceStats::default());
        assert_eq!(r.mc.served, 0);
    }

    #[test]
    fn deterministic() {
        let sched = SchedulerConfig {
            para: Some(0.05),
            log_events: true,
            ..SchedulerConfig::default()
        };
        let c = cfg(1, sched, Some(us(200)));
        let t = traces(&c, 2, TraceKind::Random);
        let a = run_system(&c, &t).unwrap();
        let b = run_system(&c, &t).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.mc, b.mc);
    }

    #[test]
    fn refresh_costs_throughput() {
        let ideal = SchedulerConfig {
            periodic_refresh: false,
            ..SchedulerConfig::default()
        };
        let base = SchedulerConfig {
            mode: RefreshMode::BaselineRef,
            ..SchedulerConfig::default()
        };
        let ci = cfg(1, ideal, Some(us(400)));
        let cb = cfg(1, base, Some(us(400)));
        let t = traces(&ci, 2, TraceKind::Random);
        let ri = run_system(&ci, &t).unwrap();
        let rb = run_system(&cb, &t).unwrap();
        assert!(
            ri.sources.iter().map(|s| s.served).sum::<u64>()
                > rb.sources.iter().map(|s| s.served).sum::<u64>()
        );
    }
}
