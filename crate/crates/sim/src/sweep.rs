//! Parameter sweeps comparing rank-level REF against concurrent refresh.

use std::io::Write;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, Mode};
use crate::experiment::{prepare, references, run_prepared, MetricsReport};
use crate::io::{self, FormatError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Rows per bank. The refresh window is held at the base
    /// configuration's and tRFC grows with the rows each REF covers, so
    /// doubling the rows doubles the refresh work.
    Capacity,
    /// RowHammer threshold; enables PARA with a solved probability.
    NRh,
    Channels,
    Ranks,
    /// Slack multiple of the concurrent-refresh variant.
    Slack,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::Capacity => "capacity",
            Axis::NRh => "n_rh",
            Axis::Channels => "channels",
            Axis::Ranks => "ranks",
            Axis::Slack => "slack",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "capacity" => Axis::Capacity,
            "n_rh" | "nrh" => Axis::NRh,
            "channels" => Axis::Channels,
            "ranks" => Axis::Ranks,
            "slack" => Axis::Slack,
            _ => return None,
        })
    }
}

/// Base configuration with `axis` set to `value`. Mode and slack are left
/// to the caller except on the slack axis.
pub fn apply(axis: Axis, value: u64, base: &ExperimentConfig) -> ExperimentConfig {
    let mut c = base.clone();
    match axis {
        Axis::Capacity => {
            let rows0 = base.geometry().rows_per_bank() as f64;
            let t = base.timing_params();
            c.geometry.rows_per_subarray = (value / base.geometry.subarrays as u64).max(1) as u32;
            let rows = c.geometry().rows_per_bank() as f64;
            c.timing.t_refw_us = Some(t.t_refw as f64 / 1e6);
            c.timing.t_rfc_ns = base.timing.t_rfc_ns * rows / rows0;
        }
        Axis::NRh => {
            c.chip.n_rh = value.min(u32::MAX as u64) as u32;
            c.para.enabled = true;
            c.para.n_rh = Some(value);
            c.para.p_th = None;
        }
        Axis::Channels => c.geometry.channels = value as u32,
        Axis::Ranks => c.geometry.ranks = value as u32,
        Axis::Slack => c.scheduler.slack_multiple = value,
    }
    c
}

/// One compared configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub mode: Mode,
    pub slack_multiple: u64,
}

impl Variant {
    pub const BASELINE: Variant = Variant {
        mode: Mode::Baseline,
        slack_multiple: 0,
    };

    pub fn hira(n: u64) -> Self {
        Variant {
            mode: Mode::Hira,
            slack_multiple: n,
        }
    }

    /// Rank-level REF plus PARA preventive refreshes paired with
    /// concurrent activation.
    pub fn hira_preventive(n: u64) -> Self {
        Variant {
            mode: Mode::HiraPreventive,
            slack_multiple: n,
        }
    }

    pub fn name(&self) -> String {
        match self.mode {
            Mode::Baseline => "baseline".into(),
            Mode::Hira => format!("hira-{}", self.slack_multiple),
            Mode::HiraPreventive => format!("ref+hira-{}", self.slack_multiple),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "baseline" {
            return Some(Variant::BASELINE);
        }
        if let Some(n) = s.strip_prefix("ref+hira-") {
            return n.parse().ok().map(Variant::hira_preventive);
        }
        s.strip_prefix("hira-")?.parse().ok().map(Variant::hira)
    }

    /// Baseline and slacks 0, 2, 4 and 8; preventive-only pairing on the
    /// RowHammer-threshold axis.
    pub fn defaults(axis: Axis) -> Vec<Variant> {
        let hira = if axis == Axis::NRh {
            Variant::hira_preventive
        } else {
            Variant::hira
        };
        let mut v = vec![Variant::BASELINE];
        v.extend([0, 2, 4, 8].map(hira));
        v
    }

    fn apply(&self, axis: Axis, c: &mut ExperimentConfig) {
        c.scheduler.mode = self.mode;
        if axis != Axis::Slack || self.mode == Mode::Baseline {
            c.scheduler.slack_multiple = self.slack_multiple;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: u64,
    pub variant: String,
    pub result: Result<MetricsReport, String>,
}

/// Runs every `(value, variant)` point in parallel. A failing point is
/// reported in its row and does not stop the others.
pub fn run_sweep(
    axis: Axis,
    values: &[u64],
    variants: &[Variant],
    base: &ExperimentConfig,
) -> Vec<SweepRow> {
    values
        .par_iter()
        .flat_map_iter(|&value| {
            let c = apply(axis, value, base);
            // References depend only on traces and geometry.
            let refs = prepare(&c)
                .and_then(|p| references(&p))
                .map_err(|e| e.to_string());
            let rows: Vec<SweepRow> = variants
                .par_iter()
                .map(|v| {
                    let mut cv = c.clone();
                    v.apply(axis, &mut cv);
                    let result = refs.clone().and_then(|r| {
                        prepare(&cv)
                            .and_then(|p| run_prepared(&p, Some(&r)))
                            .map(|o| o.metrics)
                            .map_err(|e| e.to_string())
                    });
                    SweepRow {
                        value,
                        variant: v.name(),
                        result,
                    }
                })
                .collect();
            rows
        })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 16] = [
    "axis",
    "value",
    "variant",
    "weighted_speedup",
    "normalized_weighted_speedup",
    "throughput",
    "mean_latency_ns",
    "p_th",
    "periodic_generated",
    "preventive_generated",
    "hira_refresh_access",
    "hira_refresh_refresh",
    "standalone",
    "refs",
    "violations",
    "error",
];

pub fn write_sweep<W: Write>(w: W, axis: Axis, rows: &[SweepRow]) -> Result<(), FormatError> {
    let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    io::write_table(
        w,
        io::SWEEP_HEADER,
        &SWEEP_COLUMNS,
        rows.iter().map(|r| {
            let mut out = vec![
                axis.as_str().to_string(),
                r.value.to_string(),
                r.variant.clone(),
            ];
            match &r.result {
                Ok(m) => out.extend([
                    f(m.weighted_speedup),
                    f(m.normalized()),
                    format!("{:.6}", m.total_throughput()),
                    format!("{:.3}", m.mean_latency_ns),
                    m.p_th.map(|p| format!("{p:.6e}")).unwrap_or_default(),
                    m.periodic_generated.to_string(),
                    m.preventive_generated.to_string(),
                    m.hira_ra.to_string(),
                    m.hira_rr.to_string(),
                    (m.standalone_periodic + m.standalone_preventive).to_string(),
                    m.refs.to_string(),
                    m.violations().join("; "),
                    String::new(),
                ]),
                Err(e) => {
                    out.extend(std::iter::repeat_n(String::new(), 12));
                    out.push(e.clone());
                }
            }
            out
        }),
    )
}
