use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::periodic::PeriodicGenerator;
use super::tables::{
    PrFifo, RefPtrTable, RefreshKind, RefreshRequest, RefreshTable, SubarrayPairsTable,
};
use super::{
    Completion, ConfigError, Event, EventKind, McStats, MemRequest, RefreshMode, RowRole,
    SchedulerConfig,
};
use crate::dram::{Chip, Command, IssueMode, RetentionSchedule};
use crate::geometry::Geometry;
use crate::hira::{validate_hira, BankRow, HiraConfig, Purpose};
use crate::time::Ps;
use crate::timing::TimingParams;

#[derive(Debug, Clone, Copy)]
struct Target {
    row: u32,
    role: RowRole,
    deadline: Ps,
}

#[derive(Debug, Clone, Copy)]
enum RefreshOp {
    Single(Target),
    Pair(Target, Target),
}

#[derive(Debug, Clone, Copy)]
struct Reserved {
    bank: u32,
    cmd: Command,
    mode: IssueMode,
    /// Clears the bank's macro lock once issued.
    ends_macro: bool,
}

enum DemandAction {
    Pre,
    Act,
}

/// Cycle-level single-channel controller driving a [`Chip`].
///
/// One command per `tck` cycle. Multi-command refresh sequences reserve
/// their later command-bus slots up front and lock the bank until done.
pub struct Controller {
    cfg: SchedulerConfig,
    chip: Chip,
    g: Geometry,
    t: TimingParams,
    k1: u64,
    k2: u64,
    kras: u64,
    slack: Ps,
    cycle: u64,
    queues: Vec<VecDeque<MemRequest>>,
    tables: Vec<RefreshTable>,
    fifos: Vec<PrFifo>,
    refptr: RefPtrTable,
    spt: SubarrayPairsTable,
    periodic: PeriodicGenerator,
    periodic_n: Vec<u64>,
    next_periodic: Ps,
    /// Case-2 scans run every tRC/2.
    next_scan: Ps,
    committed: Vec<VecDeque<RefreshOp>>,
    macro_busy: Vec<bool>,
    reserved: BTreeMap<u64, Reserved>,
    /// Future ACT times per rank, already promised by reservations.
    pending_acts: Vec<Vec<Ps>>,
    ref_next: Vec<Ps>,
    ref_owed: Vec<u32>,
    rr_ok: bool,
    ra_ok: bool,
    rng: ChaCha8Rng,
    next_id: u64,
    completions: BinaryHeap<Reverse<(Ps, u64, u32, Ps)>>,
    data_free: Ps,
    stats: McStats,
    demand_acts: u64,
    events: Vec<Event>,
}

fn cycles(t: Ps, tck: Ps) -> u64 {
    t.div_ceil(tck)
}

impl Controller {
    pub fn new(mut chip: Chip, cfg: SchedulerConfig) -> Result<Self, ConfigError> {
        let t = *chip.timing();
        cfg.validate(t.t_rc)?;
        let g = *chip.geometry();
        let nb = g.banks_per_channel() as usize;
        let ranks = g.ranks_per_channel as usize;
        let windows = *chip.truth().windows();
        let slack = cfg.slack_multiple * t.t_rc;
        let periodic = PeriodicGenerator::new(t.t_refw, g.rows_per_bank(), g.banks_per_rank);
        let mut spt = SubarrayPairsTable::new(chip.isolation().clone());
        spt.inject_faults(&cfg.spt_faults);

        if cfg.periodic_refresh && cfg.audit_retention {
            let phase = (0..nb as u32)
                .map(|b| {
                    if cfg.mode.periodic_by_ref() {
                        Self::ref_offset(&t, b / g.banks_per_rank, g.ranks_per_channel)
                    } else {
                        periodic.window_start(b % g.banks_per_rank, 0)
                    }
                })
                .collect();
            chip.set_retention(RetentionSchedule {
                window: t.t_refw,
                phase,
                grace: slack + 4 * t.t_rc + t.t_rfc,
            });
        }

        let ref_next = (0..ranks as u32)
            .map(|r| Self::ref_offset(&t, r, g.ranks_per_channel))
            .collect();
        Ok(Self {
            k1: cycles(cfg.t1, cfg.tck),
            k2: cycles(cfg.t2, cfg.tck),
            kras: cycles(t.t_ras, cfg.tck),
            slack,
            cycle: 0,
            queues: vec![VecDeque::new(); nb],
            tables: vec![RefreshTable::new(cfg.table_capacity); ranks],
            fifos: vec![PrFifo::new(cfg.fifo_capacity); nb],
            refptr: RefPtrTable::new(nb as u32, g.subarrays_per_bank, g.rows_per_subarray),
            spt,
            periodic,
            periodic_n: vec![0; nb],
            next_periodic: 0,
            next_scan: 0,
            committed: vec![VecDeque::new(); nb],
            macro_busy: vec![false; nb],
            reserved: BTreeMap::new(),
            pending_acts: vec![Vec::new(); ranks],
            ref_next,
            ref_owed: vec![0; ranks],
            rr_ok: cfg.refresh_refresh && cfg.refresh_refresh_safe(&windows),
            ra_ok: cfg.refresh_access && cfg.refresh_access_safe(&windows),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            next_id: 0,
            completions: BinaryHeap::new(),
            data_free: 0,
            stats: McStats::default(),
            demand_acts: 0,
            events: Vec::new(),
            g,
            t,
            chip,
            cfg,
        })
    }

    fn ref_offset(t: &TimingParams, rank: u32, ranks: u32) -> Ps {
        t.t_refi * rank as u64 / ranks.max(1) as u64
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.cfg
    }

    pub fn chip(&self) -> &Chip {
        &self.chip
    }

    pub fn into_chip(self) -> Chip {
        self.chip
    }

    pub fn chip_mut(&mut self) -> &mut Chip {
        &mut self.chip
    }

    pub fn now(&self) -> Ps {
        self.cycle * self.cfg.tck
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn stats(&self) -> McStats {
        let mut s = self.stats.clone();
        s.cycles = self.cycle;
        s.table_max_occupancy = self
            .tables
            .iter()
            .map(|t| t.max_occupancy())
            .max()
            .unwrap_or(0);
        s.row_hits = s.served.saturating_sub(self.demand_acts);
        s
    }

    /// Logged events so far (empty unless logging is enabled).
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        core::mem::take(&mut self.events)
    }

    /// Outstanding demand requests across all banks.
    pub fn queued(&self) -> usize {
        self.queues.iter().map(|q| q.len()).sum()
    }

    fn flat(&self, rank: u32, bank: u32) -> u32 {
        rank * self.g.banks_per_rank + bank
    }

    fn rank_of(&self, flat: u32) -> u32 {
        flat / self.g.banks_per_rank
    }

    pub fn enqueue(&mut self, req: MemRequest) {
        let b = self.flat(req.rank, req.bank) as usize;
        self.queues[b].push_back(req);
    }

    /// Next completion finished by `upto`, in completion order.
    pub fn pop_completion(&mut self, upto: Ps) -> Option<Completion> {
        match self.completions.peek() {
            Some(Reverse((at, _, _, _))) if *at <= upto => {
                let Reverse((at, id, source, latency)) = self.completions.pop()?;
                Some(Completion {
                    id,
                    source,
                    at,
                    latency,
                })
            }
            _ => None,
        }
    }

    pub fn next_completion(&self) -> Option<Ps> {
        self.completions.peek().map(|Reverse((at, ..))| *at)
    }

    /// Earliest cycle at which ticking can change anything; `None` if the
    /// controller will stay idle until new requests arrive.
    pub fn next_wakeup(&self) -> Option<u64> {
        let busy = self.queues.iter().any(|q| !q.is_empty())
            || self.committed.iter().any(|c| !c.is_empty())
            || self.ref_owed.iter().any(|&o| o > 0);
        if busy {
            return Some(self.cycle);
        }
        let tck = self.cfg.tck;
        let mut t: Option<u64> = self.reserved.keys().next().copied();
        let mut consider = |c: u64| t = Some(t.map_or(c, |x| x.min(c)));
        if self.cfg.periodic_refresh {
            if self.cfg.mode.periodic_by_ref() {
                for &r in &self.ref_next {
                    consider(cycles(r, tck));
                }
            } else {
                consider(cycles(self.next_periodic, tck));
            }
        }
        for tbl in &self.tables {
            if let Some(e) = tbl.first() {
                let due = e.deadline.saturating_sub(self.t.t_rc).max(self.next_scan);
                consider(cycles(due, tck));
            }
        }
        t.map(|c| c.max(self.cycle))
    }

    /// Jumps forward without issuing anything; callers use
    /// [`Self::next_wakeup`] to make sure nothing is skipped.
    pub fn skip_to(&mut self, cycle: u64) {
        if cycle > self.cycle {
            self.cycle = cycle;
        }
    }

    pub fn tick(&mut self) {
        let now = self.now();
        self.generate(now);
        if now >= self.next_scan {
            self.scan(now);
            self.next_scan = now + (self.t.t_rc / 2).max(1);
        }
        if self.issue_one(now) {
            self.stats.bus_busy_cycles += 1;
        }
        self.cycle += 1;
    }

    /// Ticks until `cycle`, skipping idle stretches.
    pub fn run_until(&mut self, cycle: u64) {
        while self.cycle < cycle {
            match self.next_wakeup() {
                Some(c) if c <= self.cycle => self.tick(),
                Some(c) => self.skip_to(c.min(cycle)),
                None => self.skip_to(cycle),
            }
        }
        self.chip.advance(self.now());
    }

    /// Runs until every queue, table and reservation is empty.
    pub fn drain(&mut self, limit: u64) {
        let stop = self.cycle + limit;
        while self.cycle < stop
            && (self.queued() > 0
                || !self.reserved.is_empty()
                || self.committed.iter().any(|c| !c.is_empty())
                || self.tables.iter().any(|t| !t.is_empty()))
        {
            match self.next_wakeup() {
                Some(c) if c > self.cycle => self.skip_to(c),
                _ => self.tick(),
            }
        }
    }

    fn log(&mut self, ev: Event) {
        if self.cfg.log_events {
            self.events.push(ev);
        }
    }

    fn send(&mut self, bank: u32, cmd: Command, mode: IssueMode, now: Ps) -> bool {
        match self.chip.issue(bank, cmd, mode, now) {
            Ok(_) => {
                let (kind, row) = match cmd {
                    Command::Act { row } => {
                        self.stats.acts += 1;
                        (EventKind::Act, Some(row))
                    }
                    Command::Pre => {
                        self.stats.pres += 1;
                        (EventKind::Pre, None)
                    }
                    Command::Rd { .. } => {
                        self.stats.reads += 1;
                        (EventKind::Rd, self.chip.open_row(bank))
                    }
                    Command::Wr { .. } => {
                        self.stats.writes += 1;
                        (EventKind::Wr, self.chip.open_row(bank))
                    }
                    Command::Ref => {
                        self.stats.refs += 1;
                        (EventKind::Ref, None)
                    }
                };
                self.log(Event {
                    time: now,
                    kind,
                    bank,
                    row_a: row,
                    row_b: None,
                    role_a: None,
                    role_b: None,
                });
                true
            }
            Err(e) => {
                self.stats.command_errors += 1;
                if self.stats.first_error.is_none() {
                    self.stats.first_error = Some(e);
                }
                false
            }
        }
    }

    fn new_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn generate(&mut self, now: Ps) {
        if !self.cfg.periodic_refresh {
            return;
        }
        if self.cfg.mode.periodic_by_ref() {
            for r in 0..self.ref_next.len() {
                while now >= self.ref_next[r] {
                    self.ref_owed[r] += 1;
                    self.ref_next[r] += self.t.t_refi;
                }
            }
            return;
        }
        if now < self.next_periodic {
            return;
        }
        let bpr = self.g.banks_per_rank;
        let mut next = Ps::MAX;
        for b in 0..self.periodic_n.len() as u32 {
            loop {
                let n = self.periodic_n[b as usize];
                let due = self.periodic.due(b % bpr, n);
                if due > now {
                    next = next.min(due);
                    break;
                }
                let window = self.periodic.window_of(n);
                self.periodic_n[b as usize] += 1;
                self.stats.periodic_generated += 1;
                let id = self.new_id();
                // Commands only issue on clock edges.
                let deadline = (due + self.slack).div_ceil(self.cfg.tck) * self.cfg.tck;
                self.insert_entry(
                    RefreshRequest {
                        id,
                        deadline,
                        bank: b,
                        kind: RefreshKind::Periodic { window },
                        created: due,
                    },
                    now,
                );
            }
        }
        self.next_periodic = next;
        // Entries generated with little slack cannot wait for the
        // next scan.
        self.scan(now);
    }

    fn insert_entry(&mut self, e: RefreshRequest, now: Ps) {
        let rank = self.rank_of(e.bank) as usize;
        if self.tables[rank].is_full() {
            self.stats.table_overflows += 1;
            if let Some(first) = self.tables[rank].first().map(|f| f.id) {
                self.commit(rank, first, now);
            }
        }
        self.tables[rank].insert(e);
    }

    /// Commits entries whose deadline is within one tRC, and the head of
    /// any full preventive FIFO.
    fn scan(&mut self, now: Ps) {
        for rank in 0..self.tables.len() {
            while let Some(id) = self.tables[rank]
                .first()
                .filter(|e| e.deadline <= now + self.t.t_rc)
                .map(|e| e.id)
            {
                self.commit(rank, id, now);
            }
        }
        for b in 0..self.fifos.len() {
            if self.fifos[b].is_full() {
                if let Some((id, _)) = self.fifos[b].head() {
                    let rank = self.rank_of(b as u32) as usize;
                    self.commit(rank, id, now);
                }
            }
        }
    }

    /// Resolves a table entry to the row it refreshes, consuming the
    /// matching FIFO slot or refresh pointer. `filter` restricts subarrays.
    fn resolve<F: Fn(u32) -> bool>(
        &mut self,
        e: &RefreshRequest,
        filter: F,
        strict: bool,
    ) -> Option<Target> {
        let rps = self.g.rows_per_subarray;
        let bank = e.bank;
        match e.kind {
            RefreshKind::Periodic { window } => {
                let sa = match self.refptr.pick(bank, window, &filter) {
                    Some(sa) => sa,
                    None if !strict => self.refptr.pick_least(bank, window),
                    None => return None,
                };
                let row = self.refptr.advance(bank, sa, window);
                Some(Target {
                    row,
                    role: RowRole::Periodic,
                    deadline: e.deadline,
                })
            }
            RefreshKind::Preventive { victim } => {
                let fifo = &mut self.fifos[bank as usize];
                if fifo.head() != Some((e.id, victim)) || (strict && !filter(victim / rps)) {
                    return None;
                }
                fifo.pop();
                Some(Target {
                    row: victim,
                    role: RowRole::Preventive,
                    deadline: e.deadline,
                })
            }
            RefreshKind::Invalid => None,
        }
    }

    /// Moves entry `id` into its bank's committed queue, pairing it with a
    /// second refresh of an isolated subarray when possible.
    fn commit(&mut self, rank: usize, id: u64, now: Ps) {
        let Some(e) = self.tables[rank].remove(id) else {
            return;
        };
        if e.deadline < now {
            self.stats.deadline_violations += 1;
        }
        let bank = e.bank;
        let first = match e.kind {
            // A preventive entry that is not at its FIFO head is committed
            // after the earlier ones.
            RefreshKind::Preventive { .. } => {
                while let Some((hid, _)) = self.fifos[bank as usize].head() {
                    if hid == e.id {
                        break;
                    }
                    self.commit(rank, hid, now);
                }
                self.resolve(&e, |_| true, false)
            }
            _ => self.resolve(&e, |_| true, false),
        };
        let Some(a) = first else {
            return;
        };
        let mut op = RefreshOp::Single(a);
        if self.rr_ok {
            let sa = a.row / self.g.rows_per_subarray;
            let cands: Vec<RefreshRequest> = self.tables[rank]
                .iter()
                .filter(|c| c.bank == bank)
                .copied()
                .collect();
            for c in cands {
                let iso: Vec<bool> = (0..self.g.subarrays_per_bank)
                    .map(|s| self.spt.isolated(sa, s))
                    .collect();
                if let Some(b) = self.resolve(&c, |s| iso[s as usize], true) {
                    self.tables[rank].remove(c.id);
                    if c.deadline < now {
                        self.stats.deadline_violations += 1;
                    }
                    self.check_plan(bank, a.row, b.row, Purpose::RefreshRefresh);
                    op = RefreshOp::Pair(a, b);
                    break;
                }
            }
        }
        self.committed[bank as usize].push_back(op);
    }

    fn check_plan(&mut self, bank: u32, a: u32, b: u32, purpose: Purpose) {
        let cfg = HiraConfig::new(self.cfg.t1, self.cfg.t2, purpose);
        let w = *self.chip.truth().windows();
        let ok = validate_hira(
            &cfg,
            self.spt.map(),
            &self.g,
            BankRow { bank, row: a },
            BankRow { bank, row: b },
            &w,
        )
        .map(|v| v.is_empty())
        .unwrap_or(false);
        if !ok {
            self.stats.plan_violations += 1;
        }
    }

    fn slots_free(&self, offsets: &[u64]) -> bool {
        offsets
            .iter()
            .all(|o| !self.reserved.contains_key(&(self.cycle + o)))
    }

    fn faw_ok(&self, rank: u32, acts: &[Ps]) -> bool {
        let mut times: Vec<Ps> = self.pending_acts[rank as usize].clone();
        times.extend_from_slice(acts);
        times.sort_unstable();
        self.chip.faw_fits(rank, &times)
    }

    fn reserve(&mut self, offset: u64, r: Reserved) {
        let c = self.cycle + offset;
        if let Command::Act { .. } = r.cmd {
            let rank = self.rank_of(r.bank) as usize;
            self.pending_acts[rank].push(c * self.cfg.tck);
        }
        self.reserved.insert(c, r);
    }

    fn issue_one(&mut self, now: Ps) -> bool {
        if let Some(r) = self.reserved.remove(&self.cycle) {
            if let Command::Act { .. } = r.cmd {
                let rank = self.rank_of(r.bank) as usize;
                if let Some(i) = self.pending_acts[rank].iter().position(|&t| t == now) {
                    self.pending_acts[rank].swap_remove(i);
                }
            }
            self.send(r.bank, r.cmd, r.mode, now);
            if r.ends_macro {
                self.macro_busy[r.bank as usize] = false;
            }
            return true;
        }
        if self.cfg.mode.periodic_by_ref() && self.try_ref(now) {
            return true;
        }
        if self.try_committed(now) {
            return true;
        }
        self.try_demand(now)
    }

    fn rank_banks(&self, rank: u32) -> core::ops::Range<u32> {
        let bpr = self.g.banks_per_rank;
        rank * bpr..(rank + 1) * bpr
    }

    fn try_ref(&mut self, now: Ps) -> bool {
        for rank in 0..self.ref_owed.len() as u32 {
            if self.ref_owed[rank as usize] == 0 {
                continue;
            }
            if self.rank_banks(rank).any(|b| self.macro_busy[b as usize]) {
                continue;
            }
            let first = rank * self.g.banks_per_rank;
            if self
                .chip
                .check(first, Command::Ref, IssueMode::Nominal, now)
                .is_ok()
            {
                self.send(first, Command::Ref, IssueMode::Nominal, now);
                self.ref_owed[rank as usize] -= 1;
                return true;
            }
            for b in self.rank_banks(rank) {
                if self.chip.open_row(b).is_some()
                    && self
                        .chip
                        .check(b, Command::Pre, IssueMode::Nominal, now)
                        .is_ok()
                {
                    self.send(b, Command::Pre, IssueMode::Nominal, now);
                    return true;
                }
            }
        }
        false
    }

    fn ref_blocked(&self, rank: u32) -> bool {
        self.ref_owed[rank as usize] > 0
    }

    fn try_committed(&mut self, now: Ps) -> bool {
        for b in 0..self.committed.len() as u32 {
            if self.committed[b as usize].is_empty() || self.macro_busy[b as usize] {
                continue;
            }
            let rank = self.rank_of(b);
            if self.ref_blocked(rank) {
                continue;
            }
            if self.chip.open_row(b).is_some() {
                if self
                    .chip
                    .check(b, Command::Pre, IssueMode::Nominal, now)
                    .is_ok()
                {
                    self.send(b, Command::Pre, IssueMode::Nominal, now);
                    return true;
                }
                continue;
            }
            if self.start_macro(b, now) {
                return true;
            }
        }
        false
    }

    fn note_lateness(&mut self, t: &Target, now: Ps) {
        if now > t.deadline {
            self.stats.max_start_lateness = self.stats.max_start_lateness.max(now - t.deadline);
        }
    }

    fn start_macro(&mut self, bank: u32, now: Ps) -> bool {
        let Some(&op) = self.committed[bank as usize].front() else {
            return false;
        };
        let rank = self.rank_of(bank);
        let tck = self.cfg.tck;
        let first = match op {
            RefreshOp::Single(a) | RefreshOp::Pair(a, _) => a.row,
        };
        if self
            .chip
            .check(bank, Command::Act { row: first }, IssueMode::Nominal, now)
            .is_err()
        {
            return false;
        }
        match op {
            RefreshOp::Single(a) => {
                if !self.slots_free(&[self.kras]) || !self.faw_ok(rank, &[now]) {
                    return false;
                }
                self.committed[bank as usize].pop_front();
                self.log(Event {
                    time: now,
                    kind: EventKind::RefreshStandalone,
                    bank,
                    row_a: Some(a.row),
                    row_b: None,
                    role_a: Some(a.role),
                    role_b: None,
                });
                self.send(bank, Command::Act { row: a.row }, IssueMode::Nominal, now);
                self.macro_busy[bank as usize] = true;
                self.reserve(
                    self.kras,
                    Reserved {
                        bank,
                        cmd: Command::Pre,
                        mode: IssueMode::Nominal,
                        ends_macro: true,
                    },
                );
                match a.role {
                    RowRole::Preventive => self.stats.standalone_preventive += 1,
                    _ => self.stats.standalone_periodic += 1,
                }
                self.note_lateness(&a, now);

                true
            }
            RefreshOp::Pair(a, b) => {
                let (k1, k2, kras) = (self.k1, self.k2, self.kras);
                if !self.slots_free(&[k1, k1 + k2, k1 + k2 + kras])
                    || !self.faw_ok(rank, &[now, now + (k1 + k2) * tck])
                {
                    return false;
                }
                self.committed[bank as usize].pop_front();
                self.log(Event {
                    time: now,
                    kind: EventKind::HiraRr,
                    bank,
                    row_a: Some(a.row),
                    row_b: Some(b.row),
                    role_a: Some(a.role),
                    role_b: Some(b.role),
                });
                self.send(bank, Command::Act { row: a.row }, IssueMode::Nominal, now);
                self.macro_busy[bank as usize] = true;
                self.reserve(
                    k1,
                    Reserved {
                        bank,
                        cmd: Command::Pre,
                        mode: IssueMode::Hira,
                        ends_macro: false,
                    },
                );
                self.reserve(
                    k1 + k2,
                    Reserved {
                        bank,
                        cmd: Command::Act { row: b.row },
                        mode: IssueMode::Hira,
                        ends_macro: false,
                    },
                );
                self.reserve(
                    k1 + k2 + kras,
                    Reserved {
                        bank,
                        cmd: Command::Pre,
                        mode: IssueMode::Nominal,
                        ends_macro: true,
                    },
                );
                self.stats.hira_rr += 1;
                self.note_lateness(&a, now);
                self.note_lateness(&b, now);

                true
            }
        }
    }

    fn try_demand(&mut self, now: Ps) -> bool {
        let hira = self.cfg.mode.concurrent();
        let para = self.cfg.para.is_some_and(|p| p > 0.0);
        let col_ok = self.data_free <= now + self.t.t_cl;
        let mut hit: Option<(Ps, u32, usize)> = None;
        let mut other: Option<(Ps, u32, DemandAction)> = None;
        let mut fifo_stall = false;
        let mut faw_stall = false;
        for b in 0..self.queues.len() as u32 {
            let q = &self.queues[b as usize];
            if q.is_empty() || self.macro_busy[b as usize] {
                continue;
            }
            let rank = self.rank_of(b);
            let locked = !self.committed[b as usize].is_empty() || self.ref_blocked(rank);
            match self.chip.open_row(b) {
                Some(open) => {
                    if let Some((i, r)) = q.iter().enumerate().find(|(_, r)| r.row == open) {
                        if col_ok && hit.as_ref().is_none_or(|h| r.arrival < h.0) {
                            let cmd = Command::Rd { col: r.column };
                            if self.chip.check(b, cmd, IssueMode::Nominal, now).is_ok() {
                                hit = Some((r.arrival, b, i));
                            }
                        }
                    } else if !locked {
                        let arr = q[0].arrival;
                        if other.as_ref().is_none_or(|o| arr < o.0)
                            && self
                                .chip
                                .check(b, Command::Pre, IssueMode::Nominal, now)
                                .is_ok()
                        {
                            other = Some((arr, b, DemandAction::Pre));
                        }
                    }
                }
                None => {
                    if locked {
                        continue;
                    }
                    if hira && para && self.fifos[b as usize].is_full() {
                        fifo_stall = true;
                        continue;
                    }
                    let r = q[0];
                    if other.as_ref().is_some_and(|o| r.arrival >= o.0) {
                        continue;
                    }
                    match self
                        .chip
                        .check(b, Command::Act { row: r.row }, IssueMode::Nominal, now)
                    {
                        Ok(()) => {
                            if self.faw_ok(rank, &[now]) {
                                other = Some((r.arrival, b, DemandAction::Act));
                            } else {
                                faw_stall = true;
                            }
                        }
                        Err(crate::dram::CommandError::Timing {
                            constraint: crate::dram::Constraint::Faw,
                            ..
                        }) => faw_stall = true,
                        Err(_) => {}
                    }
                }
            }
        }
        if fifo_stall {
            self.stats.fifo_stall_cycles += 1;
        }
        if let Some((_, b, i)) = hit {
            return self.serve(b, i, now);
        }
        if faw_stall {
            self.stats.tfaw_stall_cycles += 1;
        }
        match other {
            Some((_, b, DemandAction::Pre)) => self.send(b, Command::Pre, IssueMode::Nominal, now),
            Some((_, b, DemandAction::Act)) => {
                let row = self.queues[b as usize][0].row;
                if hira && self.ra_ok && self.refresh_access(b, row, now) {
                    return true;
                }
                self.demand_acts += 1;
                let ok = self.send(b, Command::Act { row }, IssueMode::Nominal, now);
                self.para_draw(b, row, now, now);
                ok
            }
            None => false,
        }
    }

    fn serve(&mut self, b: u32, i: usize, now: Ps) -> bool {
        let Some(r) = self.queues[b as usize].remove(i) else {
            return false;
        };
        let cmd = if r.write {
            Command::Wr {
                col: r.column,
                data: r.id as u8,
            }
        } else {
            Command::Rd { col: r.column }
        };
        let ok = self.send(b, cmd, IssueMode::Nominal, now);
        let done = now + self.t.t_cl + self.t.t_burst;
        self.data_free = done;
        let latency = done.saturating_sub(r.arrival);
        self.stats.served += 1;
        self.stats.total_latency += latency as u128;
        self.completions
            .push(Reverse((done, r.id, r.source, latency)));
        ok
    }

    /// Hides a pending refresh of `bank` behind the demand activation of
    /// `row`: ACT(refresh row), PRE, ACT(row).
    fn refresh_access(&mut self, bank: u32, row: u32, now: Ps) -> bool {
        let rank = self.rank_of(bank);
        let (k1, k2, tck) = (self.k1, self.k2, self.cfg.tck);
        let rps = self.g.rows_per_subarray;
        let sa = row / rps;
        let cands: Vec<RefreshRequest> = self.tables[rank as usize]
            .iter()
            .filter(|c| c.bank == bank)
            .copied()
            .collect();
        if cands.is_empty()
            || !self.slots_free(&[k1, k1 + k2])
            || !self.faw_ok(rank, &[now, now + (k1 + k2) * tck])
        {
            return false;
        }
        let iso: Vec<bool> = (0..self.g.subarrays_per_bank)
            .map(|s| self.spt.isolated(sa, s))
            .collect();
        for c in cands {
            let Some(target) = self.resolve(&c, |s| iso[s as usize], true) else {
                continue;
            };
            self.tables[rank as usize].remove(c.id);
            if c.deadline < now {
                self.stats.deadline_violations += 1;
            }
            self.check_plan(bank, target.row, row, Purpose::RefreshAccess);
            self.note_lateness(&target, now);
            self.log(Event {
                time: now,
                kind: EventKind::HiraRa,
                bank,
                row_a: Some(target.row),
                row_b: Some(row),
                role_a: Some(target.role),
                role_b: Some(RowRole::Demand),
            });
            self.send(
                bank,
                Command::Act { row: target.row },
                IssueMode::Nominal,
                now,
            );
            self.macro_busy[bank as usize] = true;
            self.reserve(
                k1,
                Reserved {
                    bank,
                    cmd: Command::Pre,
                    mode: IssueMode::Hira,
                    ends_macro: false,
                },
            );
            self.reserve(
                k1 + k2,
                Reserved {
                    bank,
                    cmd: Command::Act { row },
                    mode: IssueMode::Hira,
                    ends_macro: true,
                },
            );
            self.stats.hira_ra += 1;
            self.demand_acts += 1;

            self.para_draw(bank, row, now + (k1 + k2) * tck, now);
            return true;
        }
        false
    }

    /// One preventive-refresh draw for an activation of `row` at `at`.
    fn para_draw(&mut self, bank: u32, row: u32, at: Ps, now: Ps) {
        let Some(p) = self.cfg.para else {
            return;
        };
        if p <= 0.0 {
            return;
        }
        let u: f64 = self.rng.gen();
        let rps = self.g.rows_per_subarray;
        let base = row - row % rps;
        let victim = if u < p / 2.0 {
            row.checked_sub(1).filter(|&v| v >= base)
        } else if u < p {
            Some(row + 1).filter(|&v| v < base + rps)
        } else {
            None
        };
        let Some(victim) = victim else {
            return;
        };
        self.stats.preventive_generated += 1;
        match self.cfg.mode {
            RefreshMode::Hira | RefreshMode::HiraPreventive => {
                let id = self.new_id();
                self.fifos[bank as usize].push(id, victim);
                self.insert_entry(
                    RefreshRequest {
                        id,
                        deadline: at + self.slack,
                        bank,
                        kind: RefreshKind::Preventive { victim },
                        created: at,
                    },
                    now,
                );
                self.scan(now);
            }
            RefreshMode::BaselineRef => {
                self.committed[bank as usize].push_back(RefreshOp::Single(Target {
                    row: victim,
                    role: RowRole::Preventive,
                    deadline: at,
                }));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::{ChipConfig, ElectricalWindows, RowFlags};
    use crate::isolation::IsolationMap;
    use crate::time::{ns, us};

    fn desk_chip(ranks: u32) -> Chip {
        let geometry = Geometry {
            channels: 1,
            ranks_per_channel: ranks,
            banks_per_rank: 4,
            subarrays_per_bank: 8,
            rows_per_subarray: 16,
            columns_per_row: 64,
        };
        let rows = geometry.rows_per_bank() as u64;
        let mut timing = TimingParams::ddr4();
        timing.t_refw = rows / 8 * timing.t_refi;
        Chip::new(ChipConfig {
            geometry,
            timing,
            windows: ElectricalWindows::default(),
            n_rh_true: 100_000,
            isolation: IsolationMap::adjacent_share(8).unwrap(),
        })
        .unwrap()
    }

    fn req(id: u64, bank: u32, row: u32, arrival: Ps) -> MemRequest {
        MemRequest {
            id,
            source: 0,
            write: id.is_multiple_of(3),
            rank: 0,
            bank,
            row,
            column: (id % 64) as u32,
            arrival,
        }
    }

    fn clean(c: &Controller) -> bool {
        c.chip()
            .truth()
            .snapshot()
            .all(|(.., s)| s.flags.is_empty())
    }

    fn run(mode: RefreshMode, para: Option<f64>, windows: u64) -> Controller {
        run_slack(mode, para, windows, 2)
    }

    fn run_slack(
        mode: RefreshMode,
        para: Option<f64>,
        windows: u64,
        slack_multiple: u64,
    ) -> Controller {
        let chip = desk_chip(1);
        let w = chip.timing().t_refw;
        let mut c = Controller::new(
            chip,
            SchedulerConfig {
                mode,
                para,
                slack_multiple,
                log_events: true,
                ..SchedulerConfig::default()
            },
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let end = w * windows + us(20);
        let mut t = 0;
        let mut id = 0;
        while t < end {
            id += 1;
            c.enqueue(req(id, rng.gen_range(0..4), rng.gen_range(0..128), t));
            t += ns(40);
            c.run_until(t / 750);
        }
        c.run_until(end / 750 + 10);
        c
    }

    fn idle(slack_multiple: u64, windows: u64) -> Controller {
        let chip = desk_chip(1);
        let w = chip.timing().t_refw;
        let mut c = Controller::new(
            chip,
            SchedulerConfig {
                slack_multiple,
                log_events: true,
                ..SchedulerConfig::default()
            },
        )
        .unwrap();
        c.run_until((w * windows + us(20)) / 750);
        c
    }

    #[test]
    fn hira_mode_keeps_all_rows_fresh() {
        let c = run(RefreshMode::Hira, None, 3);
        let s = c.stats();
        assert_eq!(s.command_errors, 0, "{:?}", s.first_error);
        assert_eq!(s.plan_violations, 0);
        assert!(clean(&c));
        assert!(c.chip().truth().audited_windows(0) >= 3);
        assert_eq!(
            s.periodic_generated,
            3 * 4 * 128 + s.periodic_generated % (4 * 128)
        );
        assert!(s.hira_ra > 0, "{s:?}");
        assert_eq!(s.deadline_violations, 0);
    }

    #[test]
    fn long_slack_pairs_refreshes() {
        let c = idle(32, 2);
        let s = c.stats();
        assert_eq!(s.command_errors, 0, "{:?}", s.first_error);
        assert!(clean(&c));
        assert!(s.hira_rr > 0, "{s:?}");
        assert!(s.table_max_occupancy > 1);
    }

    #[test]
    fn baseline_mode_keeps_all_rows_fresh() {
        let c = run(RefreshMode::BaselineRef, None, 3);
        let s = c.stats();
        assert_eq!(s.command_errors, 0, "{:?}", s.first_error);
        assert!(clean(&c));
        assert!(s.refs >= 3 * 16);
        assert_eq!(s.hira_ra + s.hira_rr, 0);
    }

    #[test]
    fn para_refreshes_neighbours_in_both_modes() {
        for mode in [
            RefreshMode::Hira,
            RefreshMode::BaselineRef,
            RefreshMode::HiraPreventive,
        ] {
            let c = run(mode, Some(0.1), 1);
            let s = c.stats();
            assert_eq!(s.command_errors, 0, "{:?}", s.first_error);
            assert!(clean(&c));
            assert!(s.preventive_generated > 0);
        }
    }

    #[test]
    fn preventive_only_mode_pairs_preventive_refreshes() {
        let c = run_slack(RefreshMode::HiraPreventive, Some(0.5), 2, 4);
        let s = c.stats();
        assert_eq!(s.command_errors, 0, "{:?}", s.first_error);
        assert!(clean(&c));
        assert_eq!(s.periodic_generated, 0);
        assert!(s.refs >= 2 * 16);
        assert!(s.hira_ra + s.hira_rr > 0, "{s:?}");
        assert_eq!(s.deadline_violations, 0);
    }

    #[test]
    fn hira_timing_in_the_event_log() {
        let c = idle(32, 1);
        let ev = c.events();
        assert!(ev.iter().any(|e| e.kind == EventKind::HiraRr));
        for (i, e) in ev.iter().enumerate() {
            if e.kind == EventKind::HiraRr {
                let cmds: Vec<_> = ev[i + 1..]
                    .iter()
                    .filter(|x| x.bank == e.bank)
                    .take(4)
                    .collect();
                assert_eq!(cmds[0].kind, EventKind::Act);
                assert_eq!(cmds[1].kind, EventKind::Pre);
                assert_eq!(cmds[1].time - cmds[0].time, ns(3));
                assert_eq!(cmds[2].kind, EventKind::Act);
                assert_eq!(cmds[2].time - cmds[1].time, ns(3));
                assert_eq!(cmds[3].kind, EventKind::Pre);
                assert!(cmds[3].time - cmds[2].time >= c.chip().timing().t_ras);
            }
        }
    }

    #[test]
    fn no_refresh_ideal_generates_nothing() {
        let chip = desk_chip(1);
        let mut c = Controller::new(
            chip,
            SchedulerConfig {
                periodic_refresh: false,
                ..SchedulerConfig::default()
            },
        )
        .unwrap();
        for i in 0..100 {
            c.enqueue(req(i, (i % 4) as u32, (i * 7 % 128) as u32, 0));
        }
        c.drain(1_000_000);
        let s = c.stats();
        assert_eq!(s.served, 100);
        assert_eq!(s.periodic_generated + s.refs, 0);
        let mut n = 0;
        while c.pop_completion(Ps::MAX).is_some() {
            n += 1;
        }
        assert_eq!(n, 100);
    }

    #[test]
    fn unsafe_delays_disable_pairing() {
        let chip = desk_chip(1);
        let w = chip.timing().t_refw;
        let mut c = Controller::new(
            chip,
            SchedulerConfig {
                t1: ns(1),
                ..SchedulerConfig::default()
            },
        )
        .unwrap();
        c.run_until(w * 2 / 750);
        let s = c.stats();
        assert_eq!(s.hira_ra + s.hira_rr, 0);
        assert!(s.standalone_periodic > 0);
        assert!(c
            .chip()
            .truth()
            .snapshot()
            .all(|(.., s)| !s.flags.contains(RowFlags::CORRUPTED)));
    }
}
