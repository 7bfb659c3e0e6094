//! Experiment configuration, read from TOML.
//!
//! Every key is optional; an empty file gives a 16-bank desk-scale DDR4
//! channel running the concurrent-refresh scheduler with a slack of two
//! row cycles. Times are given in nanoseconds (or microseconds where the
//! key says so) and converted to whole picoseconds.

use std::path::PathBuf;

use hira_core::dram::ElectricalWindows;
use hira_core::geometry::AddressMapping;
use hira_core::mc::{RefreshMode, SchedulerConfig};
use hira_core::para::DEFAULT_TARGET;
use hira_core::time::Ps;
use hira_core::workload::TraceKind;
use hira_core::{Geometry, TimingParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{message}")]
    Parse {
        line: Option<usize>,
        message: String,
    },
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometrySection,
    pub timing: TimingSection,
    pub chip: ChipSection,
    pub scheduler: SchedulerSection,
    pub para: ParaSection,
    pub isolation: IsolationSection,
    pub workload: WorkloadSection,
    pub run: RunSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub channels: u32,
    pub ranks: u32,
    pub banks: u32,
    pub subarrays: u32,
    pub rows_per_subarray: u32,
    pub columns: u32,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            channels: 1,
            ranks: 1,
            banks: 16,
            subarrays: 8,
            rows_per_subarray: 64,
            columns: 128,
        }
    }
}

impl GeometrySection {
    pub fn to_geometry(&self) -> Geometry {
        Geometry {
            channels: self.channels,
            ranks_per_channel: self.ranks,
            banks_per_rank: self.banks,
            subarrays_per_bank: self.subarrays,
            rows_per_subarray: self.rows_per_subarray,
            columns_per_row: self.columns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingSection {
    pub t_rcd_ns: f64,
    pub t_ras_ns: f64,
    pub t_rp_ns: f64,
    pub t_rfc_ns: f64,
    pub t_refi_ns: f64,
    pub t_faw_ns: f64,
    pub t_cl_ns: f64,
    pub t_burst_ns: f64,
    /// Explicit refresh window. Without it the window is either the DDR4
    /// 64 ms or, with `desk_scale`, shrunk to `rows_per_bank / 8` refresh
    /// intervals so that every REF still covers eight rows.
    pub t_refw_us: Option<f64>,
    pub desk_scale: bool,
}

impl Default for TimingSection {
    fn default() -> Self {
        Self {
            t_rcd_ns: 14.25,
            t_ras_ns: 32.0,
            t_rp_ns: 14.25,
            t_rfc_ns: 350.0,
            t_refi_ns: 7800.0,
            t_faw_ns: 30.0,
            t_cl_ns: 14.25,
            t_burst_ns: 3.333,
            t_refw_us: None,
            desk_scale: true,
        }
    }
}

/// Nanoseconds to picoseconds, rounded.
pub fn ps(ns: f64) -> Ps {
    (ns * 1000.0).round().max(0.0) as Ps
}

impl TimingSection {
    pub fn to_timing(&self, rows_per_bank: u32) -> TimingParams {
        let t_ras = ps(self.t_ras_ns);
        let t_rp = ps(self.t_rp_ns);
        let t_refi = ps(self.t_refi_ns);
        let t_refw = match self.t_refw_us {
            Some(us) => ps(us * 1000.0),
            None if self.desk_scale => (rows_per_bank as u64 / 8).max(2) * t_refi,
            None => TimingParams::ddr4().t_refw,
        };
        TimingParams {
            t_rcd: ps(self.t_rcd_ns),
            t_ras,
            t_rp,
            t_rc: t_ras + t_rp,
            t_rfc: ps(self.t_rfc_ns),
            t_refi,
            t_refw,
            t_faw: ps(self.t_faw_ns),
            t_cl: ps(self.t_cl_ns),
            t_burst: ps(self.t_burst_ns),
        }
    }

    fn values(&self) -> [(&'static str, f64); 8] {
        [
            ("timing.t_rcd_ns", self.t_rcd_ns),
            ("timing.t_ras_ns", self.t_ras_ns),
            ("timing.t_rp_ns", self.t_rp_ns),
            ("timing.t_rfc_ns", self.t_rfc_ns),
            ("timing.t_refi_ns", self.t_refi_ns),
            ("timing.t_faw_ns", self.t_faw_ns),
            ("timing.t_cl_ns", self.t_cl_ns),
            ("timing.t_burst_ns", self.t_burst_ns),
        ]
    }
}

/// Properties of the simulated chip that the controller does not see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChipSection {
    /// Hammer count at which a victim row flips.
    pub n_rh: u32,
    pub sense_enable_min_ns: f64,
    pub wordline_disable_max_ns: f64,
    pub bankio_disconnect_min_ns: f64,
}

impl Default for ChipSection {
    fn default() -> Self {
        Self {
            n_rh: 1_000_000,
            sense_enable_min_ns: 3.0,
            wordline_disable_max_ns: 4.5,
            bankio_disconnect_min_ns: 3.0,
        }
    }
}

impl ChipSection {
    pub fn windows(&self) -> ElectricalWindows {
        ElectricalWindows {
            sense_enable_min: ps(self.sense_enable_min_ns),
            wordline_disable_max: ps(self.wordline_disable_max_ns),
            bankio_disconnect_min: ps(self.bankio_disconnect_min_ns),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    Hira,
    /// REF for periodic refresh, concurrent activation for preventive.
    HiraPreventive,
}

impl From<Mode> for RefreshMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Baseline => RefreshMode::BaselineRef,
            Mode::Hira => RefreshMode::Hira,
            Mode::HiraPreventive => RefreshMode::HiraPreventive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSection {
    pub mode: Mode,
    pub periodic_refresh: bool,
    /// Refresh slack in row cycles.
    pub slack_multiple: u64,
    pub t1_ns: f64,
    pub t2_ns: f64,
    pub tck_ps: u64,
    pub table_capacity: usize,
    pub fifo_capacity: usize,
    pub refresh_access: bool,
    pub refresh_refresh: bool,
    pub seed: u64,
    /// Subarray pairs whose isolation entry is flipped in the controller.
    pub spt_faults: Vec<[u32; 2]>,
    pub audit_retention: bool,
}

impl Default for SchedulerSection {
    fn default() -> Self {
        let d = SchedulerConfig::default();
        Self {
            mode: Mode::Hira,
            periodic_refresh: d.periodic_refresh,
            slack_multiple: d.slack_multiple,
            t1_ns: d.t1 as f64 / 1000.0,
            t2_ns: d.t2 as f64 / 1000.0,
            tck_ps: d.tck,
            table_capacity: d.table_capacity,
            fifo_capacity: d.fifo_capacity,
            refresh_access: d.refresh_access,
            refresh_refresh: d.refresh_refresh,
            seed: d.seed,
            spt_faults: Vec::new(),
            audit_retention: d.audit_retention,
        }
    }
}

/// Probabilistic preventive refresh. With `p_th` unset the probability is
/// solved from `n_rh` and `target` for the configured window and slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaSection {
    pub enabled: bool,
    pub p_th: Option<f64>,
    pub n_rh: Option<u64>,
    pub target: f64,
}

impl Default for ParaSection {
    fn default() -> Self {
        Self {
            enabled: false,
            p_th: None,
            n_rh: None,
            target: DEFAULT_TARGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IsolationStrategy {
    AdjacentShare,
    TargetCoverage,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsolationSection {
    pub strategy: IsolationStrategy,
    pub coverage: f64,
    pub seed: u64,
    pub path: Option<PathBuf>,
}

impl Default for IsolationSection {
    fn default() -> Self {
        Self {
            strategy: IsolationStrategy::AdjacentShare,
            coverage: 0.32,
            seed: 0,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mapping {
    RowInterleaved,
    BankInterleaved,
}

impl From<Mapping> for AddressMapping {
    fn from(m: Mapping) -> Self {
        match m {
            Mapping::RowInterleaved => AddressMapping::RowInterleaved,
            Mapping::BankInterleaved => AddressMapping::BankInterleaved,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Stream,
    Random,
    Rowhit,
    Hammer,
    Mixed,
}

impl Kind {
    /// Generator for source `i`; `Mixed` rotates through the three benign
    /// kinds.
    pub fn for_source(self, i: usize) -> TraceKind {
        match self {
            Kind::Stream => TraceKind::Stream,
            Kind::Random => TraceKind::Random,
            Kind::Rowhit => TraceKind::RowHit,
            Kind::Hammer => TraceKind::Hammer,
            Kind::Mixed => [TraceKind::Random, TraceKind::Stream, TraceKind::RowHit][i % 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub sources: usize,
    pub kind: Kind,
    pub count: usize,
    /// Cycles between consecutive requests of one source; hammer traces
    /// use one row cycle when this is zero.
    pub gap: u64,
    pub write_ratio: f64,
    pub burst: u32,
    pub seed: u64,
    pub mapping: Mapping,
    /// Trace files, one per source; overrides the generator.
    pub traces: Vec<PathBuf>,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self {
            sources: 4,
            kind: Kind::Mixed,
            count: 20_000,
            gap: 30,
            write_ratio: 0.3,
            burst: 16,
            seed: 0,
            mapping: Mapping::RowInterleaved,
            traces: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Simulated time; unset runs every trace to completion.
    pub duration_us: Option<f64>,
    pub mlp: usize,
    pub loop_traces: bool,
    /// Also run the no-refresh reference and per-source solo runs needed
    /// for weighted speedup.
    pub references: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            duration_us: Some(1000.0),
            mlp: 4,
            loop_traces: true,
            references: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub event_log: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.span().map(|s| line_of(text, s.start)),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry.to_geometry()
    }

    pub fn timing_params(&self) -> TimingParams {
        self.timing.to_timing(self.geometry().rows_per_bank())
    }

    pub fn slack(&self) -> Ps {
        self.scheduler.slack_multiple * self.timing_params().t_rc
    }

    /// Every constraint violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let g = self.geometry();
        if let Err(e) = g.validate() {
            v.push(format!("geometry: {e}"));
        }
        for (name, x) in self.timing.values() {
            if !(x.is_finite() && x > 0.0) {
                v.push(format!("{name} must be positive, got {x}"));
            }
        }
        if self
            .timing
            .t_refw_us
            .is_some_and(|x| !(x.is_finite() && x > 0.0))
        {
            v.push("timing.t_refw_us must be positive".into());
        }
        if v.is_empty() {
            if let Err(e) = self.timing_params().validate() {
                v.push(format!("timing: {e}"));
            }
        }
        let w = &self.chip;
        for (name, x) in [
            ("chip.sense_enable_min_ns", w.sense_enable_min_ns),
            ("chip.wordline_disable_max_ns", w.wordline_disable_max_ns),
            ("chip.bankio_disconnect_min_ns", w.bankio_disconnect_min_ns),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                v.push(format!("{name} must be non-negative"));
            }
        }
        if w.n_rh == 0 {
            v.push("chip.n_rh must be positive".into());
        }
        let s = &self.scheduler;
        if s.tck_ps == 0 {
            v.push("scheduler.tck_ps must be positive".into());
        }
        if !(s.t1_ns > 0.0 && s.t2_ns > 0.0) {
            v.push("scheduler.t1_ns and t2_ns must be positive".into());
        }
        if s.table_capacity == 0 || s.fifo_capacity == 0 {
            v.push("scheduler.table_capacity and fifo_capacity must be positive".into());
        }
        for [i, j] in &s.spt_faults {
            if *i >= g.subarrays_per_bank || *j >= g.subarrays_per_bank || i == j {
                v.push(format!("scheduler.spt_faults: invalid pair ({i}, {j})"));
            }
        }
        let p = &self.para;
        if let Some(x) = p.p_th {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("para.p_th must lie in [0, 1], got {x}"));
            }
        }
        if p.enabled && p.p_th.is_none() && p.n_rh.is_none() {
            v.push("para: solving p_th needs para.n_rh (or give para.p_th)".into());
        }
        if !(p.target > 0.0 && p.target < 1.0) {
            v.push("para.target must lie in (0, 1)".into());
        }
        let iso = &self.isolation;
        if !(0.0..=1.0).contains(&iso.coverage) {
            v.push("isolation.coverage must lie in [0, 1]".into());
        }
        if iso.strategy == IsolationStrategy::File && iso.path.is_none() {
            v.push("isolation.path is required with strategy = \"file\"".into());
        }
        let wl = &self.workload;
        if wl.sources == 0 && wl.traces.is_empty() {
            v.push("workload.sources must be positive".into());
        }
        if !(0.0..=1.0).contains(&wl.write_ratio) {
            v.push("workload.write_ratio must lie in [0, 1]".into());
        }
        let r = &self.run;
        if r.mlp == 0 {
            v.push("run.mlp must be positive".into());
        }
        if let Some(d) = r.duration_us {
            if !(d.is_finite() && d >= 0.0) {
                v.push("run.duration_us must be non-negative".into());
            }
        } else if r.loop_traces {
            v.push("run.loop_traces needs run.duration_us".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }

    /// Applies a `section.key=value` override, re-parsing through TOML so
    /// that the same types and checks apply.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse {
                line: None,
                message: format!("override `{assignment}` is not of the form section.key=value"),
            })?;
        let (section, field) = key
            .trim()
            .split_once('.')
            .ok_or_else(|| ConfigError::Parse {
                line: None,
                message: format!("override key `{key}` needs a section"),
            })?;
        let mut doc: toml::Table =
            toml::from_str(&self.to_toml()).map_err(|e| ConfigError::Parse {
                line: None,
                message: e.to_string(),
            })?;
        let value = value.trim();
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        doc.entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse {
                line: None,
                message: format!("`{section}` is not a section"),
            })?
            .insert(field.to_string(), parsed);
        *self = ExperimentConfig::parse(&toml::to_string(&doc).unwrap_or_default())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let c = ExperimentConfig::parse("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.geometry().banks_per_rank, 16);
        assert_eq!(c.scheduler.mode, Mode::Hira);
        assert_eq!(c.scheduler.slack_multiple, 2);
        assert_eq!(c.timing_params().t_rc, 46_250);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.para.enabled = true;
        c.para.p_th = Some(0.25);
        c.output.metrics = Some("m.csv".into());
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn overrides() {
        let mut c = ExperimentConfig::default();
        c.set("scheduler.slack_multiple=4").unwrap();
        assert_eq!(c.slack(), 4 * 46_250);
        c.set("scheduler.mode=baseline").unwrap();
        assert_eq!(c.scheduler.mode, Mode::Baseline);
        assert!(c.set("scheduler.nope=1").is_err());
        assert!(c.set("no_section=1").is_err());
    }
}
