//! Memory controller with refresh scheduling that hides refreshes behind
//! concurrent row activations in the same bank.

mod controller;
pub mod periodic;
pub mod tables;

pub use controller::Controller;
pub use periodic::PeriodicGenerator;
pub use tables::{
    PrFifo, RefPtrTable, RefreshKind, RefreshRequest, RefreshTable, SubarrayPairsTable,
};

use alloc::vec::Vec;

use crate::dram::{CommandError, ElectricalWindows};
use crate::time::{ns, Ps};

/// How periodic refresh is performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RefreshMode {
    /// Rank-level REF every tREFI.
    BaselineRef,
    /// Per-bank refresh requests with deadlines, paired with accesses or
    /// with each other where the subarrays allow it.
    #[default]
    Hira,
    /// Rank-level REF for periodic refresh; preventive refreshes go
    /// through the refresh table and are paired like in [`Self::Hira`].
    HiraPreventive,
}

impl RefreshMode {
    pub fn periodic_by_ref(&self) -> bool {
        *self != RefreshMode::Hira
    }

    /// Whether refreshes may be paired with other activations.
    pub fn concurrent(&self) -> bool {
        *self != RefreshMode::BaselineRef
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub mode: RefreshMode,
    /// `false` turns periodic refresh off entirely (the no-refresh ideal).
    pub periodic_refresh: bool,
    /// Refresh slack as a multiple of tRC (HiRA-N uses N).
    pub slack_multiple: u64,
    /// Probability of a preventive refresh per demand activation.
    pub para: Option<f64>,
    pub seed: u64,
    /// First ACT to PRE of a concurrent activation.
    pub t1: Ps,
    /// PRE to second ACT.
    pub t2: Ps,
    /// Command clock period; one command per cycle per channel.
    pub tck: Ps,
    /// Refresh table entries per rank.
    pub table_capacity: usize,
    /// Preventive-refresh FIFO entries per bank.
    pub fifo_capacity: usize,
    /// Pair a refresh with a demand activation.
    pub refresh_access: bool,
    /// Pair two refreshes.
    pub refresh_refresh: bool,
    /// Subarray pairs whose isolation bit is flipped in the controller's copy.
    pub spt_faults: Vec<(u32, u32)>,
    pub log_events: bool,
    /// Audit every row's restore time once per refresh window.
    pub audit_retention: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            mode: RefreshMode::Hira,
            periodic_refresh: true,
            slack_multiple: 2,
            para: None,
            seed: 0,
            t1: ns(3),
            t2: ns(3),
            tck: 750,
            table_capacity: 68,
            fifo_capacity: 4,
            refresh_access: true,
            refresh_refresh: true,
            spt_faults: Vec::new(),
            log_events: false,
            audit_retention: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("preventive refresh probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("command clock period must be positive")]
    ClockPeriod,
    #[error("t1 and t2 must be positive and no longer than tRC")]
    HiraTiming,
    #[error("refresh table and FIFO capacities must be positive")]
    Capacity,
}

impl SchedulerConfig {
    pub fn validate(&self, t_rc: Ps) -> Result<(), ConfigError> {
        if let Some(p) = self.para {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Probability(p));
            }
        }
        if self.tck == 0 {
            return Err(ConfigError::ClockPeriod);
        }
        if self.t1 == 0 || self.t2 == 0 || self.t1 > t_rc || self.t2 > t_rc {
            return Err(ConfigError::HiraTiming);
        }
        if self.table_capacity == 0 || self.fifo_capacity == 0 {
            return Err(ConfigError::Capacity);
        }
        Ok(())
    }

    /// Whether the configured delays open both rows reliably under
    /// `windows`, with the bank I/O handed over safely for accesses.
    pub fn refresh_access_safe(&self, w: &ElectricalWindows) -> bool {
        self.t1 >= w.sense_enable_min
            && self.t2 <= w.wordline_disable_max
            && self.t2 >= w.bankio_disconnect_min
    }

    pub fn refresh_refresh_safe(&self, w: &ElectricalWindows) -> bool {
        self.t1 >= w.sense_enable_min && self.t2 <= w.wordline_disable_max
    }
}

/// A demand access, already decoded to this channel's coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemRequest {
    pub id: u64,
    pub source: u32,
    pub write: bool,
    pub rank: u32,
    /// Bank within the rank.
    pub bank: u32,
    /// Row within the bank.
    pub row: u32,
    pub column: u32,
    pub arrival: Ps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub id: u64,
    pub source: u32,
    pub at: Ps,
    pub latency: Ps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Act,
    Pre,
    Rd,
    Wr,
    Ref,
    /// Refresh overlapped with a demand activation.
    HiraRa,
    /// Two refreshes overlapped.
    HiraRr,
    RefreshStandalone,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Act => "ACT",
            EventKind::Pre => "PRE",
            EventKind::Rd => "RD",
            EventKind::Wr => "WR",
            EventKind::Ref => "REF",
            EventKind::HiraRa => "HIRA_RA",
            EventKind::HiraRr => "HIRA_RR",
            EventKind::RefreshStandalone => "REFRESH_STANDALONE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowRole {
    Demand,
    Periodic,
    Preventive,
}

impl RowRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowRole::Demand => "demand",
            RowRole::Periodic => "periodic",
            RowRole::Preventive => "preventive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: Ps,
    pub kind: EventKind,
    /// Bank index within the channel.
    pub bank: u32,
    pub row_a: Option<u32>,
    pub row_b: Option<u32>,
    pub role_a: Option<RowRole>,
    pub role_b: Option<RowRole>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct McStats {
    pub cycles: u64,
    /// Cycles in which a command was placed on the command bus.
    pub bus_busy_cycles: u64,
    pub acts: u64,
    pub pres: u64,
    pub reads: u64,
    pub writes: u64,
    pub refs: u64,
    pub hira_ra: u64,
    pub hira_rr: u64,
    pub standalone_periodic: u64,
    pub standalone_preventive: u64,
    pub periodic_generated: u64,
    pub preventive_generated: u64,
    /// Refreshes committed or performed after their deadline.
    pub deadline_violations: u64,
    /// Largest delay between a refresh's deadline and its first ACT.
    pub max_start_lateness: Ps,
    pub table_max_occupancy: usize,
    /// Entries force-committed because a rank's table was full.
    pub table_overflows: u64,
    pub fifo_stall_cycles: u64,
    pub tfaw_stall_cycles: u64,
    /// Pairs built although the controller's own validation rejected them.
    pub plan_violations: u64,
    /// Commands the chip rejected; any non-zero value is a scheduler bug.
    pub command_errors: u64,
    pub first_error: Option<CommandError>,
    pub served: u64,
    pub total_latency: u128,
    pub row_hits: u64,
}

impl McStats {
    pub fn mean_latency(&self) -> f64 {
        if self.served == 0 {
            0.0
        } else {
            self.total_latency as f64 / self.served as f64
        }
    }

    /// Adds another channel's counters; maxima are combined as maxima.
    pub fn merge(&mut self, o: &McStats) {
        self.cycles = self.cycles.max(o.cycles);
        self.bus_busy_cycles += o.bus_busy_cycles;
        self.acts += o.acts;
        self.pres += o.pres;
        self.reads += o.reads;
        self.writes += o.writes;
        self.refs += o.refs;
        self.hira_ra += o.hira_ra;
        self.hira_rr += o.hira_rr;
        self.standalone_periodic += o.standalone_periodic;
        self.standalone_preventive += o.standalone_preventive;
        self.periodic_generated += o.periodic_generated;
        self.preventive_generated += o.preventive_generated;
        self.deadline_violations += o.deadline_violations;
        self.max_start_lateness = self.max_start_lateness.max(o.max_start_lateness);
        self.table_max_occupancy = self.table_max_occupancy.max(o.table_max_occupancy);
        self.table_overflows += o.table_overflows;
        self.fifo_stall_cycles += o.fifo_stall_cycles;
        self.tfaw_stall_cycles += o.tfaw_stall_cycles;
        self.plan_violations += o.plan_violations;
        self.command_errors += o.command_errors;
        if self.first_error.is_none() {
            self.first_error = o.first_error.clone();
        }
        self.served += o.served;
        self.total_latency += o.total_latency;
        self.row_hits += o.row_hits;
    }

    pub fn bus_occupancy(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.bus_busy_cycles as f64 / self.cycles as f64
        }
    }
}
