//! The simulated DRAM chip: per-bank command state machines, timing
//! enforcement, and the electrical ground truth they drive.

pub mod electrical;
pub mod faw;
pub mod truth;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

pub use electrical::{classify, HiraOutcome};
pub use faw::FawWindow;
pub use truth::{
    ElectricalWindows, GroundTruth, RetentionSchedule, RowFlags, RowState, TruthCounters,
};

use crate::geometry::{Geometry, GeometryError};
use crate::isolation::{IsolationError, IsolationMap};
use crate::time::Ps;
use crate::timing::{TimingError, TimingParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Command {
    Act {
        row: u32,
    },
    Pre,
    Rd {
        col: u32,
    },
    Wr {
        col: u32,
        data: u8,
    },
    /// All-bank refresh of the rank that owns the addressed bank.
    Ref,
}

/// `Hira` marks a command as part of an engineered ACT-PRE-ACT sequence: a
/// PRE may cut tRAS short and the ACT following it may cut tRP short.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum IssueMode {
    #[default]
    Nominal,
    Hira,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BankState {
    #[default]
    Precharged,
    /// Row opened less than tRCD ago.
    Activating(u32),
    Active(u32),
    /// First row precharged early; a second ACT may follow.
    HiraWindow(u32),
    DualActive(u32, u32),
    /// Closed less than tRP ago.
    Precharging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constraint {
    Rcd,
    Ras,
    Rp,
    Rc,
    Rfc,
    Faw,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Rcd => "tRCD",
            Constraint::Ras => "tRAS",
            Constraint::Rp => "tRP",
            Constraint::Rc => "tRC",
            Constraint::Rfc => "tRFC",
            Constraint::Faw => "tFAW",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommandError {
    #[error(
        "{constraint} violated on bank {bank}: issued at {at} ps, earliest legal {earliest} ps"
    )]
    Timing {
        constraint: Constraint,
        bank: u32,
        at: Ps,
        earliest: Ps,
    },
    #[error("time went backwards: {at} ps after {last} ps")]
    TimeReversed { last: Ps, at: Ps },
    #[error("ACT to bank {bank} while two rows are open")]
    ActWhileDualActive { bank: u32 },
    #[error("ACT to bank {bank} while row {row} is open")]
    ActToOpenBank { bank: u32, row: u32 },
    #[error("column command to bank {bank} with no open row")]
    ColumnWithoutOpenRow { bank: u32 },
    #[error("REF while bank {bank} has an open row")]
    RefWithOpenBank { bank: u32 },
    #[error("bank {0} out of range")]
    BankOutOfRange(u32),
    #[error("row {0} out of range")]
    RowOutOfRange(u32),
    #[error("column {0} out of range")]
    ColumnOutOfRange(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChipConfigError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Isolation(#[from] IsolationError),
    #[error("isolation map covers {map} subarrays but banks have {geometry}")]
    MapSize { map: u32, geometry: u32 },
}

#[derive(Debug, Clone)]
pub struct ChipConfig {
    /// Only the per-channel fields are used; one chip models one channel.
    pub geometry: Geometry,
    pub timing: TimingParams,
    pub windows: ElectricalWindows,
    pub n_rh_true: u32,
    /// Shared by every bank of the chip.
    pub isolation: IsolationMap,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Response {
    pub state: BankState,
    pub hira: Option<HiraOutcome>,
    pub read: Option<u8>,
    /// Victim rows of the addressed bank that crossed the hammer threshold.
    pub flips: Vec<u32>,
    /// Rows restored in each bank by a REF.
    pub refreshed_rows: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChipStats {
    pub acts: u64,
    pub pres: u64,
    pub reads: u64,
    pub writes: u64,
    pub refs: u64,
    pub dual_open: u64,
    pub corrupted: u64,
    pub second_act_ignored: u64,
    pub first_row_closed: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Open {
    Closed,
    Single {
        row: u32,
        act_at: Ps,
    },
    Window {
        row_a: u32,
        act_a: Ps,
        pre_at: Ps,
    },
    Dual {
        row_a: u32,
        act_a: Ps,
        row_b: u32,
        act_b: Ps,
        bankio_shared: bool,
    },
}

#[derive(Debug, Clone)]
struct Bank {
    open: Open,
    last_act: Option<Ps>,
    last_pre: Option<Ps>,
    ref_ptr: u32,
}

#[derive(Debug, Clone, Default)]
struct Rank {
    faw: FawWindow,
    ref_until: Ps,
}

#[derive(Debug, Clone)]
pub struct Chip {
    geometry: Geometry,
    timing: TimingParams,
    isolation: IsolationMap,
    /// Fault injection: banks whose physical map differs from the shared one.
    bank_maps: Vec<Option<IsolationMap>>,
    banks: Vec<Bank>,
    ranks: Vec<Rank>,
    truth: GroundTruth,
    rows_per_ref: u32,
    now: Ps,
    stats: ChipStats,
}

impl Chip {
    pub fn new(cfg: ChipConfig) -> Result<Self, ChipConfigError> {
        cfg.geometry.validate()?;
        cfg.timing.validate()?;
        cfg.isolation.check()?;
        if cfg.isolation.subarrays() != cfg.geometry.subarrays_per_bank {
            return Err(ChipConfigError::MapSize {
                map: cfg.isolation.subarrays(),
                geometry: cfg.geometry.subarrays_per_bank,
            });
        }
        let g = cfg.geometry;
        let nbanks = g.banks_per_channel();
        let rows_per_bank = g.rows_per_bank();
        let refs = cfg.timing.refs_per_window().max(1);
        let rows_per_ref = (rows_per_bank as u64).div_ceil(refs).max(1) as u32;
        Ok(Self {
            geometry: g,
            timing: cfg.timing,
            isolation: cfg.isolation,
            bank_maps: vec![None; nbanks as usize],
            banks: vec![
                Bank {
                    open: Open::Closed,
                    last_act: None,
                    last_pre: None,
                    ref_ptr: 0,
                };
                nbanks as usize
            ],
            ranks: vec![Rank::default(); g.ranks_per_channel as usize],
            truth: GroundTruth::new(
                nbanks,
                rows_per_bank,
                g.rows_per_subarray,
                cfg.n_rh_true,
                cfg.windows,
            ),
            rows_per_ref,
            now: 0,
            stats: ChipStats::default(),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn isolation(&self) -> &IsolationMap {
        &self.isolation
    }

    /// Physical map of `bank`.
    pub fn bank_isolation(&self, bank: u32) -> &IsolationMap {
        self.bank_maps[bank as usize]
            .as_ref()
            .unwrap_or(&self.isolation)
    }

    /// Gives one bank a different physical map, breaking the chip-wide
    /// sharing that real devices exhibit. Used as a negative control.
    pub fn inject_bank_isolation(
        &mut self,
        bank: u32,
        map: IsolationMap,
    ) -> Result<(), ChipConfigError> {
        map.check()?;
        if map.subarrays() != self.geometry.subarrays_per_bank {
            return Err(ChipConfigError::MapSize {
                map: map.subarrays(),
                geometry: self.geometry.subarrays_per_bank,
            });
        }
        self.bank_maps[bank as usize] = Some(map);
        Ok(())
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    /// Backdoor access for test harnesses (initialisation, inspection).
    pub fn truth_mut(&mut self) -> &mut GroundTruth {
        &mut self.truth
    }

    pub fn stats(&self) -> ChipStats {
        self.stats
    }

    pub fn rows_per_ref(&self) -> u32 {
        self.rows_per_ref
    }

    pub fn banks(&self) -> u32 {
        self.banks.len() as u32
    }

    /// Time of the last accepted command.
    pub fn now(&self) -> Ps {
        self.now
    }

    pub fn set_retention(&mut self, schedule: RetentionSchedule) {
        self.truth.set_retention(schedule);
    }

    /// Runs retention audits due by `now`; returns rows newly flagged.
    pub fn advance(&mut self, now: Ps) -> u64 {
        self.truth.advance(now)
    }

    fn rank_of(&self, bank: u32) -> usize {
        (bank / self.geometry.banks_per_rank) as usize
    }

    pub fn state(&self, bank: u32, now: Ps) -> BankState {
        let b = &self.banks[bank as usize];
        match b.open {
            Open::Closed => match b.last_pre {
                Some(p) if now < p + self.timing.t_rp => BankState::Precharging,
                _ => BankState::Precharged,
            },
            Open::Single { row, act_at } => {
                if now < act_at + self.timing.t_rcd {
                    BankState::Activating(row)
                } else {
                    BankState::Active(row)
                }
            }
            Open::Window { row_a, .. } => BankState::HiraWindow(row_a),
            Open::Dual { row_a, row_b, .. } => BankState::DualActive(row_a, row_b),
        }
    }

    /// Row reachable through the bank I/O, if any.
    pub fn open_row(&self, bank: u32) -> Option<u32> {
        match self.banks[bank as usize].open {
            Open::Single { row, .. } => Some(row),
            Open::Dual { row_b, .. } => Some(row_b),
            _ => None,
        }
    }

    /// Whether column commands would currently corrupt a dual-open pair.
    pub fn bankio_shared(&self, bank: u32) -> bool {
        matches!(
            self.banks[bank as usize].open,
            Open::Dual {
                bankio_shared: true,
                ..
            }
        )
    }

    /// Validates and applies one command.
    pub fn issue(
        &mut self,
        bank: u32,
        cmd: Command,
        mode: IssueMode,
        now: Ps,
    ) -> Result<Response, CommandError> {
        if let Err(e) = self.check(bank, cmd, mode, now) {
            self.stats.rejected += 1;
            return Err(e);
        }
        let mut resp = match cmd {
            Command::Act { row } => self.apply_act(bank, row, mode, now),
            Command::Pre => self.apply_pre(bank, now),
            Command::Rd { col: _ } => self.apply_column(bank, None),
            Command::Wr { col: _, data } => self.apply_column(bank, Some(data)),
            Command::Ref => self.apply_refresh(self.rank_of(bank), now),
        };
        resp.state = self.state(bank, now);
        self.now = now;
        self.truth.advance(now);
        Ok(resp)
    }

    /// Whether `cmd` would be accepted at `now`, without changing anything.
    pub fn check(
        &self,
        bank: u32,
        cmd: Command,
        mode: IssueMode,
        now: Ps,
    ) -> Result<(), CommandError> {
        if now < self.now {
            return Err(CommandError::TimeReversed {
                last: self.now,
                at: now,
            });
        }
        if bank as usize >= self.banks.len() {
            return Err(CommandError::BankOutOfRange(bank));
        }
        let rank = self.rank_of(bank);
        if now < self.ranks[rank].ref_until {
            return Err(Self::timing_err(
                Constraint::Rfc,
                bank,
                now,
                self.ranks[rank].ref_until,
            ));
        }
        match cmd {
            Command::Act { row } => self.check_act(bank, row, mode, now),
            Command::Pre => self.check_pre(bank, mode, now),
            Command::Rd { col } | Command::Wr { col, .. } => self.check_column(bank, col, now),
            Command::Ref => self.check_refresh(rank, now),
        }
    }

    /// Whether ACTs at `times` on `rank` would all satisfy tFAW.
    pub fn faw_fits(&self, rank: u32, times: &[Ps]) -> bool {
        self.ranks[rank as usize].faw.fits(times, self.timing.t_faw)
    }

    /// End of the rank's current REF blackout.
    pub fn refresh_busy_until(&self, rank: u32) -> Ps {
        self.ranks[rank as usize].ref_until
    }

    fn timing_err(constraint: Constraint, bank: u32, at: Ps, earliest: Ps) -> CommandError {
        CommandError::Timing {
            constraint,
            bank,
            at,
            earliest,
        }
    }

    fn check_faw(&self, bank: u32, now: Ps) -> Result<(), CommandError> {
        self.ranks[self.rank_of(bank)]
            .faw
            .check(now, self.timing.t_faw)
            .map_err(|e| Self::timing_err(Constraint::Faw, bank, now, e))
    }

    fn check_act(&self, bank: u32, row: u32, mode: IssueMode, now: Ps) -> Result<(), CommandError> {
        if row >= self.geometry.rows_per_bank() {
            return Err(CommandError::RowOutOfRange(row));
        }
        let t = &self.timing;
        let b = &self.banks[bank as usize];
        match b.open {
            Open::Dual { .. } => return Err(CommandError::ActWhileDualActive { bank }),
            Open::Single { row: open, .. } => {
                return Err(CommandError::ActToOpenBank { bank, row: open })
            }
            Open::Window { .. } if mode == IssueMode::Hira => {}
            Open::Window { act_a, pre_at, .. } => {
                if now < pre_at + t.t_rp {
                    return Err(Self::timing_err(Constraint::Rp, bank, now, pre_at + t.t_rp));
                }
                if now < act_a + t.t_rc {
                    return Err(Self::timing_err(Constraint::Rc, bank, now, act_a + t.t_rc));
                }
            }
            Open::Closed => {
                if let Some(p) = b.last_pre {
                    if now < p + t.t_rp {
                        return Err(Self::timing_err(Constraint::Rp, bank, now, p + t.t_rp));
                    }
                }
                if let Some(a) = b.last_act {
                    if now < a + t.t_rc {
                        return Err(Self::timing_err(Constraint::Rc, bank, now, a + t.t_rc));
                    }
                }
            }
        }
        self.check_faw(bank, now)
    }

    fn check_pre(&self, bank: u32, mode: IssueMode, now: Ps) -> Result<(), CommandError> {
        if mode == IssueMode::Hira {
            return Ok(());
        }
        let t_ras = self.timing.t_ras;
        match self.banks[bank as usize].open {
            Open::Single { act_at, .. } | Open::Dual { act_b: act_at, .. }
                if now < act_at + t_ras =>
            {
                Err(Self::timing_err(Constraint::Ras, bank, now, act_at + t_ras))
            }
            _ => Ok(()),
        }
    }

    fn check_column(&self, bank: u32, col: u32, now: Ps) -> Result<(), CommandError> {
        if col >= self.geometry.columns_per_row {
            return Err(CommandError::ColumnOutOfRange(col));
        }
        let t_rcd = self.timing.t_rcd;
        match self.banks[bank as usize].open {
            Open::Single { act_at, .. } | Open::Dual { act_b: act_at, .. } => {
                if now < act_at + t_rcd {
                    Err(Self::timing_err(Constraint::Rcd, bank, now, act_at + t_rcd))
                } else {
                    Ok(())
                }
            }
            _ => Err(CommandError::ColumnWithoutOpenRow { bank }),
        }
    }

    fn check_refresh(&self, rank: usize, now: Ps) -> Result<(), CommandError> {
        let bpr = self.geometry.banks_per_rank;
        let first = rank as u32 * bpr;
        for bank in first..first + bpr {
            let b = &self.banks[bank as usize];
            let closed_at = match b.open {
                Open::Single { .. } | Open::Dual { .. } => {
                    return Err(CommandError::RefWithOpenBank { bank });
                }
                Open::Window { pre_at, .. } => Some(pre_at),
                Open::Closed => b.last_pre,
            };
            if let Some(p) = closed_at {
                if now < p + self.timing.t_rp {
                    return Err(Self::timing_err(
                        Constraint::Rp,
                        bank,
                        now,
                        p + self.timing.t_rp,
                    ));
                }
            }
        }
        Ok(())
    }

    fn record_act(&mut self, bank: u32, now: Ps) {
        let rank = self.rank_of(bank);
        self.ranks[rank].faw.record(now);
        self.banks[bank as usize].last_act = Some(now);
        self.stats.acts += 1;
    }

    /// Closes an unfinished ACT-PRE window as an early precharge.
    fn resolve_window(&mut self, bank: u32) {
        if let Open::Window {
            row_a,
            act_a,
            pre_at,
        } = self.banks[bank as usize].open
        {
            let t1 = pre_at - act_a;
            if t1 < self.truth.windows().sense_enable_min {
                self.truth.mark(bank, row_a, RowFlags::CORRUPTED);
            } else {
                self.truth
                    .restore_row(bank, row_a, pre_at, t1, self.timing.t_ras);
            }
            let b = &mut self.banks[bank as usize];
            b.open = Open::Closed;
            b.last_pre = Some(pre_at);
        }
    }

    fn apply_act(&mut self, bank: u32, row: u32, mode: IssueMode, now: Ps) -> Response {
        let t_ras = self.timing.t_ras;
        match self.banks[bank as usize].open {
            Open::Window {
                row_a,
                act_a,
                pre_at,
            } if mode == IssueMode::Hira => {
                let t1 = pre_at - act_a;
                let t2 = now - pre_at;
                let rps = self.geometry.rows_per_subarray;
                let isolated = self.bank_isolation(bank).isolated(row_a / rps, row / rps);
                let w = *self.truth.windows();
                let outcome = classify(&w, isolated, t1, t2);
                self.record_act(bank, now);
                let mut resp = Response {
                    hira: Some(outcome),
                    ..Response::default()
                };
                match outcome {
                    HiraOutcome::SecondActIgnored => {
                        self.stats.second_act_ignored += 1;
                        self.truth.mark(bank, row_a, RowFlags::CORRUPTED);
                        let bk = &mut self.banks[bank as usize];
                        bk.open = Open::Closed;
                        bk.last_pre = Some(pre_at);
                        // The dropped ACT never opened a row.
                        bk.last_act = Some(act_a);
                        return resp;
                    }
                    HiraOutcome::FirstRowClosed => {
                        self.stats.first_row_closed += 1;
                        self.truth.restore_row(bank, row_a, pre_at, t1, t_ras);
                        self.banks[bank as usize].open = Open::Single { row, act_at: now };
                    }
                    HiraOutcome::Corrupted => {
                        self.stats.corrupted += 1;
                        self.truth.mark(bank, row_a, RowFlags::CORRUPTED);
                        self.truth.mark(bank, row, RowFlags::CORRUPTED);
                        self.banks[bank as usize].open = Open::Single { row, act_at: now };
                    }
                    HiraOutcome::DualOpen => {
                        self.stats.dual_open += 1;
                        self.banks[bank as usize].open = Open::Dual {
                            row_a,
                            act_a,
                            row_b: row,
                            act_b: now,
                            bankio_shared: t2 < w.bankio_disconnect_min,
                        };
                    }
                }
                resp.flips = self.truth.register_hammer(bank, row);
                resp
            }
            _ => {
                self.resolve_window(bank);
                self.record_act(bank, now);
                self.banks[bank as usize].open = Open::Single { row, act_at: now };
                Response {
                    flips: self.truth.register_hammer(bank, row),
                    ..Response::default()
                }
            }
        }
    }

    fn apply_pre(&mut self, bank: u32, now: Ps) -> Response {
        let t_ras = self.timing.t_ras;
        match self.banks[bank as usize].open {
            Open::Closed | Open::Window { .. } => return Response::default(),
            Open::Single { row, act_at } => {
                let hold = now - act_at;
                if hold < t_ras {
                    // Only a flagged PRE gets here; the row may still be
                    // joined by a second ACT.
                    self.banks[bank as usize].open = Open::Window {
                        row_a: row,
                        act_a: act_at,
                        pre_at: now,
                    };
                } else {
                    self.truth.restore_row(bank, row, now, hold, t_ras);
                    self.banks[bank as usize].open = Open::Closed;
                }
            }
            Open::Dual {
                row_a,
                act_a,
                row_b,
                act_b,
                ..
            } => {
                self.truth.restore_row(bank, row_a, now, now - act_a, t_ras);
                self.truth.restore_row(bank, row_b, now, now - act_b, t_ras);
                self.banks[bank as usize].open = Open::Closed;
            }
        }
        self.banks[bank as usize].last_pre = Some(now);
        self.stats.pres += 1;
        Response::default()
    }

    fn apply_column(&mut self, bank: u32, write: Option<u8>) -> Response {
        let row = match self.banks[bank as usize].open {
            Open::Single { row, .. } => row,
            Open::Dual {
                row_a,
                row_b,
                bankio_shared,
                ..
            } => {
                if bankio_shared {
                    self.truth.mark(bank, row_a, RowFlags::CORRUPTED);
                    self.truth.mark(bank, row_b, RowFlags::CORRUPTED);
                }
                row_b
            }
            _ => unreachable!("column command validated against a closed bank"),
        };
        let mut resp = Response::default();
        match write {
            Some(d) => {
                self.truth.write(bank, row, d);
                self.stats.writes += 1;
            }
            None => {
                resp.read = Some(self.truth.read(bank, row));
                self.stats.reads += 1;
            }
        }
        resp
    }

    fn apply_refresh(&mut self, rank: usize, now: Ps) -> Response {
        let bpr = self.geometry.banks_per_rank;
        let first = rank as u32 * bpr;
        let t = self.timing;
        let rows = self.geometry.rows_per_bank();
        for bank in first..first + bpr {
            self.resolve_window(bank);
            let start = self.banks[bank as usize].ref_ptr;
            for k in 0..self.rows_per_ref {
                let row = (start + k) % rows;
                self.truth.restore_row(bank, row, now, t.t_ras, t.t_ras);
            }
            self.banks[bank as usize].ref_ptr = (start + self.rows_per_ref) % rows;
        }
        self.ranks[rank].ref_until = now + t.t_rfc;
        self.stats.refs += 1;
        Response {
            refreshed_rows: self.rows_per_ref,
            ..Response::default()
        }
    }
}
