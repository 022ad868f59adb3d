//! Behavioral DRAM device: bank state machines, row data, timing checks,
//! disturbance, multi-row activation, retention and energy accounting.

pub mod cells;
pub mod majority;
pub mod retention;
pub mod rowhammer;
pub mod storage;
pub mod timing;

use std::fmt::Write as _;

use thiserror::Error;

use crate::config::{Geometry, Profile};
use crate::isa::DramOpcode;
use majority::{MajorityEvent, MajorityModel, SegmentRates, SEGMENT_ROWS};
use retention::RetentionModel;
use rowhammer::{HammerModel, WeakCell, DISTURB_SCALE};
use storage::RowStore;
pub use storage::Transfer;
use timing::{CommandClass, HistoryEntry, RuleSet, TimingChecker};

/// Rows are refreshed in this many REF commands per full sweep.
pub const REFRESH_GROUPS: u32 = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("bank {bank} does not exist")]
    UnknownBank { bank: u32 },
    #[error("row {row} does not exist in bank {bank}")]
    UnknownRow { bank: u32, row: u32 },
    #[error("column {col} does not exist")]
    UnknownColumn { bank: u32, col: u32 },
    #[error("command at slot {time} precedes the last command at slot {last}")]
    TimeWentBackwards { time: u64, last: u64 },
    #[error("replay needs bank {bank} precharged and the device out of self-refresh")]
    ReplayPrecondition { bank: u32 },
    #[error("row data must be {expected} bytes, got {got}")]
    RowSize { expected: usize, got: usize },
}

/// A decoded command as it reaches the device pins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeviceCommand {
    pub op: DramOpcode,
    pub bank: u32,
    /// Row for ACT, column address for READ/WRITE, unused otherwise.
    pub addr: u32,
    pub auto_precharge: bool,
}

impl DeviceCommand {
    fn new(op: DramOpcode, bank: u32, addr: u32) -> DeviceCommand {
        DeviceCommand { op, bank, addr, auto_precharge: false }
    }
    pub fn act(bank: u32, row: u32) -> DeviceCommand {
        Self::new(DramOpcode::Act, bank, row)
    }
    pub fn pre(bank: u32) -> DeviceCommand {
        Self::new(DramOpcode::Pre, bank, 0)
    }
    pub fn prea() -> DeviceCommand {
        Self::new(DramOpcode::PreA, 0, 0)
    }
    pub fn read(bank: u32, col: u32) -> DeviceCommand {
        Self::new(DramOpcode::Read, bank, col)
    }
    pub fn write(bank: u32, col: u32) -> DeviceCommand {
        Self::new(DramOpcode::Write, bank, col)
    }
    pub fn refresh() -> DeviceCommand {
        Self::new(DramOpcode::Ref, 0, 0)
    }
    pub fn zqs() -> DeviceCommand {
        Self::new(DramOpcode::Zqs, 0, 0)
    }
    pub fn with_auto_precharge(mut self) -> DeviceCommand {
        self.auto_precharge = true;
        self
    }

    /// Bank the command addresses, `None` for device-wide commands.
    pub fn target_bank(&self) -> Option<u32> {
        match self.op {
            DramOpcode::Act | DramOpcode::Pre | DramOpcode::Read | DramOpcode::Write => Some(self.bank),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Timing,
    State,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub bus_slot: u64,
    pub kind: ViolationKind,
    pub rule: String,
    pub bank: Option<u32>,
    pub prev_cmd: Option<&'static str>,
    pub prev_slot: Option<u64>,
    pub cur_cmd: &'static str,
    pub required_ns: Option<f64>,
    pub actual_ns: Option<f64>,
    /// Address of the instruction that issued the command, when known.
    pub pc: Option<u32>,
}

pub const VIOLATION_CSV_HEADER: &str = "bus_slot,rule,bank,prev_cmd,cur_cmd,required_ns,actual_ns";

impl Violation {
    pub fn csv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.bus_slot,
            self.rule,
            self.bank.map(|b| b.to_string()).unwrap_or_default(),
            self.prev_cmd.unwrap_or(""),
            self.cur_cmd,
            opt(self.required_ns),
            opt(self.actual_ns)
        )
    }
}

pub fn violations_csv(violations: &[Violation]) -> String {
    let mut out = String::from(VIOLATION_CSV_HEADER);
    out.push('\n');
    for v in violations {
        let _ = writeln!(out, "{}", v.csv_line());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CommandCounts {
    pub act: u64,
    pub pre: u64,
    pub prea: u64,
    pub read: u64,
    pub write: u64,
    pub refresh: u64,
    pub zqs: u64,
}

impl CommandCounts {
    fn bump(&mut self, op: DramOpcode, n: u64) {
        match op {
            DramOpcode::Act => self.act += n,
            DramOpcode::Pre => self.pre += n,
            DramOpcode::PreA => self.prea += n,
            DramOpcode::Read => self.read += n,
            DramOpcode::Write => self.write += n,
            DramOpcode::Ref => self.refresh += n,
            DramOpcode::Zqs => self.zqs += n,
            DramOpcode::Nop => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyReport {
    pub act: f64,
    pub pre: f64,
    pub read: f64,
    pub write: f64,
    pub refresh: f64,
    pub zqs: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankState {
    Precharged,
    Activating,
    Active,
    Precharging,
}

#[derive(Debug, Clone, Default)]
struct Bank {
    open_row: Option<u32>,
    act_time: u64,
    pre_time: Option<u64>,
    /// Row, ACT slot and PRE slot of the most recently closed activation.
    closed: Option<(u32, u64, u64)>,
}

/// ACT-to-PRE and PRE-to-ACT spacing used by [`DramDevice::hammer_pattern`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HammerTiming {
    pub act_to_pre: u64,
    pub pre_to_act: u64,
}

impl HammerTiming {
    pub fn from_profile(profile: &Profile) -> HammerTiming {
        HammerTiming {
            act_to_pre: profile.min_slots(CommandClass::Act, CommandClass::Pre).max(1),
            pre_to_act: profile.min_slots(CommandClass::Pre, CommandClass::Act).max(1),
        }
    }

    pub fn period(&self) -> u64 {
        self.act_to_pre + self.pre_to_act
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommandEvents {
    /// Transfer returned by a READ.
    pub data: Option<Transfer>,
    /// Victim bits changed by disturbance.
    pub flips: u32,
    pub majority: Option<MajorityEvent>,
    /// Violations recorded for this command.
    pub violations: usize,
}

#[derive(Debug, Clone)]
pub struct DramDevice {
    profile: Profile,
    seed: u64,
    checker: TimingChecker,
    banks: Vec<Bank>,
    store: RowStore,
    hammer: HammerModel,
    majority: MajorityModel,
    majority_log: Vec<MajorityEvent>,
    retention: Option<RetentionModel>,
    counts: CommandCounts,
    violations: Vec<Violation>,
    self_refresh: bool,
    current_pc: Option<u32>,
    now: u64,
    refresh_ptr: u32,
    trcd: u64,
    trp: u64,
}

impl DramDevice {
    /// A device seeded from the profile's fault-model seed.
    pub fn new(profile: &Profile) -> DramDevice {
        DramDevice::with_seed(profile, profile.fault_model.seed)
    }

    pub fn with_seed(profile: &Profile, seed: u64) -> DramDevice {
        let g = &profile.geometry;
        let fm = &profile.fault_model;
        DramDevice {
            profile: profile.clone(),
            seed,
            checker: TimingChecker::new(RuleSet::from_profile(profile)),
            banks: vec![Bank::default(); g.banks as usize],
            store: RowStore::new(g.row_bytes()),
            hammer: HammerModel::new(&fm.rowhammer, g, seed),
            majority: MajorityModel::new(&fm.majority, seed, profile.slot_ns),
            majority_log: Vec::new(),
            retention: fm.retention.as_ref().map(|r| RetentionModel::new(r, g, seed, profile.slot_ns)),
            counts: CommandCounts::default(),
            violations: Vec::new(),
            self_refresh: false,
            current_pc: None,
            now: 0,
            refresh_ptr: 0,
            trcd: profile.min_slots(CommandClass::Act, CommandClass::Read),
            trp: profile.min_slots(CommandClass::Pre, CommandClass::Act),
        }
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn geometry(&self) -> &Geometry {
        &self.profile.geometry
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn slot_ns(&self) -> f64 {
        self.profile.slot_ns
    }

    pub fn rules(&self) -> &RuleSet {
        self.checker.rules()
    }

    /// Bus slot of the latest command.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn set_current_pc(&mut self, pc: Option<u32>) {
        self.current_pc = pc;
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    pub fn take_violations(&mut self) -> Vec<Violation> {
        std::mem::take(&mut self.violations)
    }

    pub fn counts(&self) -> CommandCounts {
        self.counts
    }

    pub fn energy(&self) -> EnergyReport {
        let e = &self.profile.energy;
        let c = &self.counts;
        let mut r = EnergyReport {
            act: c.act as f64 * e.act,
            pre: (c.pre + c.prea) as f64 * e.pre,
            read: c.read as f64 * e.read,
            write: c.write as f64 * e.write,
            refresh: c.refresh as f64 * e.refresh,
            zqs: c.zqs as f64 * e.zqs,
            total: 0.0,
        };
        r.total = r.act + r.pre + r.read + r.write + r.refresh + r.zqs;
        r
    }

    pub fn in_self_refresh(&self) -> bool {
        self.self_refresh
    }

    pub fn open_row(&self, bank: u32) -> Option<u32> {
        self.banks.get(bank as usize).and_then(|b| b.open_row)
    }

    pub fn bank_state(&self, bank: u32) -> BankState {
        let b = &self.banks[bank as usize];
        match (b.open_row, b.pre_time) {
            (Some(_), _) if self.now < b.act_time + self.trcd => BankState::Activating,
            (Some(_), _) => BankState::Active,
            (None, Some(p)) if self.now < p + self.trp => BankState::Precharging,
            (None, _) => BankState::Precharged,
        }
    }

    /// Disturbance accumulated by a row since its last restore, in ACT-equivalents.
    pub fn accumulator(&self, bank: u32, row: u32) -> f64 {
        self.hammer.accumulator(bank, row) as f64 / DISTURB_SCALE
    }

    pub fn segment_rates(&mut self, bank: u32, segment: u32) -> SegmentRates {
        self.majority.rates(bank, segment)
    }

    /// Multi-row activations performed since power-on or the last reset.
    pub fn majority_events(&self) -> &[MajorityEvent] {
        &self.majority_log
    }

    /// Error scale of the timing combination if an ACT-PRE-ACT with these
    /// gaps (in bus slots) triggers a multi-row activation.
    pub fn majority_trigger(&self, tras_slots: u64, trp_slots: u64) -> Option<f64> {
        self.majority.trigger(tras_slots, trp_slots)
    }

    /// Weak cells of a row whose thresholds do not exceed `limit` ACT-equivalents.
    pub fn weak_cells(&mut self, bank: u32, row: u32, limit: f64) -> Vec<WeakCell> {
        self.hammer.cells_up_to(bank, row, limit)
    }

    pub fn gate_stride(&self) -> Option<u32> {
        self.hammer.gate_enabled().then_some(self.hammer.stride())
    }

    /// Only weak cells in `columns` are modeled from now on; `None` models all
    /// of them. Clears accumulated disturbance.
    pub fn set_region_of_interest(&mut self, columns: Option<&[u32]>) {
        self.hammer.set_region_of_interest(columns, self.profile.geometry.columns_per_row);
    }

    fn check_bank(&self, bank: u32) -> Result<(), DeviceError> {
        if bank < self.profile.geometry.banks {
            Ok(())
        } else {
            Err(DeviceError::UnknownBank { bank })
        }
    }

    fn check_row(&self, bank: u32, row: u32) -> Result<(), DeviceError> {
        self.check_bank(bank)?;
        if row < self.profile.geometry.rows_per_bank {
            Ok(())
        } else {
            Err(DeviceError::UnknownRow { bank, row })
        }
    }

    fn column_index(&self, bank: u32, col: u32) -> Result<u32, DeviceError> {
        let g = &self.profile.geometry;
        if col < g.column_addresses() {
            Ok(col / g.burst_length)
        } else {
            Err(DeviceError::UnknownColumn { bank, col })
        }
    }

    fn state_violation(&mut self, t: u64, rule: &str, bank: Option<u32>, cur: &'static str) {
        self.violations.push(Violation {
            bus_slot: t,
            kind: ViolationKind::State,
            rule: rule.to_string(),
            bank,
            prev_cmd: None,
            prev_slot: None,
            cur_cmd: cur,
            required_ns: None,
            actual_ns: None,
            pc: self.current_pc,
        });
    }

    fn restore_row(&mut self, bank: u32, row: u32, t: u64) {
        self.hammer.restore(bank, row);
        match self.retention.as_mut() {
            Some(r) => {
                r.restore(&mut self.store, bank, row, t);
            }
            None => self.store.set_restored(bank, row, t),
        }
    }

    fn close_all(&mut self, t: u64) -> bool {
        let mut any = false;
        for b in &mut self.banks {
            if let Some(row) = b.open_row.take() {
                b.closed = Some((row, b.act_time, t));
                b.pre_time = Some(t);
                any = true;
            }
        }
        any
    }

    /// Issues one command at bus slot `t`. `wdr` supplies WRITE data.
    pub fn apply(&mut self, cmd: DeviceCommand, t: u64, wdr: &Transfer) -> Result<CommandEvents, DeviceError> {
        if t < self.now {
            return Err(DeviceError::TimeWentBackwards { time: t, last: self.now });
        }
        match cmd.op {
            DramOpcode::Nop => return Ok(CommandEvents::default()),
            DramOpcode::Act => self.check_row(cmd.bank, cmd.addr)?,
            DramOpcode::Pre => self.check_bank(cmd.bank)?,
            DramOpcode::Read | DramOpcode::Write => {
                self.check_bank(cmd.bank)?;
                self.column_index(cmd.bank, cmd.addr)?;
            }
            _ => {}
        }
        self.now = t;
        self.counts.bump(cmd.op, 1);
        let before = self.violations.len();
        let mut ev = CommandEvents::default();
        let name = cmd.op.mnemonic();
        if self.self_refresh {
            self.state_violation(t, "CMD_IN_SELF_REFRESH", cmd.target_bank(), name);
            if cmd.op == DramOpcode::Read {
                ev.data = Some([0u8; Geometry::TRANSFER_BYTES]);
            }
            ev.violations = self.violations.len() - before;
            return Ok(ev);
        }
        let entry = HistoryEntry { time: t, op: cmd.op, bank: cmd.target_bank() };
        for v in self.checker.issue(entry) {
            self.violations.push(Violation {
                bus_slot: t,
                kind: ViolationKind::Timing,
                rule: v.rule,
                bank: v.bank,
                prev_cmd: Some(v.prev_op.mnemonic()),
                prev_slot: Some(v.prev_time),
                cur_cmd: name,
                required_ns: Some(v.required_ns),
                actual_ns: Some(v.actual_ns),
                pc: self.current_pc,
            });
        }
        let bank = cmd.bank;
        match cmd.op {
            DramOpcode::Act => {
                if self.banks[bank as usize].open_row.is_some() {
                    self.state_violation(t, "ACT_TO_OPEN_BANK", Some(bank), name);
                } else {
                    let row = cmd.addr;
                    let trigger = match self.banks[bank as usize].closed {
                        Some((r1, ta, tp)) if r1 % SEGMENT_ROWS == 1 && row == r1 + 1 => {
                            self.majority.trigger(tp - ta, t - tp).map(|scale| (tp - ta, t - tp, scale))
                        }
                        _ => None,
                    };
                    if let Some(r) = self.retention.as_mut() {
                        r.restore(&mut self.store, bank, row, t);
                    }
                    self.store.set_restored(bank, row, t);
                    ev.flips = self.hammer.activate(bank, row, 1, &mut self.store, t);
                    if let Some((tras, trp, scale)) = trigger {
                        let segment = row / SEGMENT_ROWS;
                        for r in 0..3 {
                            self.restore_row(bank, segment * SEGMENT_ROWS + r, t);
                        }
                        let m = self.majority.activate(&mut self.store, bank, segment, tras, trp, scale, t);
                        self.majority_log.push(m);
                        ev.majority = Some(m);
                        for r in 0..3 {
                            self.hammer.on_row_rewrite(bank, segment * SEGMENT_ROWS + r);
                        }
                    }
                    let b = &mut self.banks[bank as usize];
                    b.open_row = Some(row);
                    b.act_time = t;
                }
            }
            DramOpcode::Pre => {
                let b = &mut self.banks[bank as usize];
                if let Some(row) = b.open_row.take() {
                    b.closed = Some((row, b.act_time, t));
                    b.pre_time = Some(t);
                }
            }
            DramOpcode::PreA => {
                self.close_all(t);
            }
            DramOpcode::Read | DramOpcode::Write => {
                let col = self.column_index(bank, cmd.addr)?;
                match self.banks[bank as usize].open_row {
                    None => {
                        let rule = if cmd.op == DramOpcode::Read { "READ_TO_CLOSED_BANK" } else { "WRITE_TO_CLOSED_BANK" };
                        self.state_violation(t, rule, Some(bank), name);
                        if cmd.op == DramOpcode::Read {
                            ev.data = Some([0u8; Geometry::TRANSFER_BYTES]);
                        }
                    }
                    Some(row) => {
                        if cmd.op == DramOpcode::Read {
                            let mut data = self.store.read_column(bank, row, col);
                            if let Some(r) = self.retention.as_mut() {
                                r.apply(&self.store, bank, row, t, col * Geometry::TRANSFER_BITS, &mut data);
                            }
                            ev.data = Some(data);
                        } else {
                            self.store.write_column(bank, row, col, wdr, t);
                            self.hammer.on_column_write(bank, row, col);
                        }
                        if cmd.auto_precharge {
                            let b = &mut self.banks[bank as usize];
                            b.open_row = None;
                            b.closed = Some((row, b.act_time, t));
                            b.pre_time = Some(t);
                            self.checker.record(HistoryEntry { time: t, op: DramOpcode::Pre, bank: Some(bank) });
                        }
                    }
                }
            }
            DramOpcode::Ref => {
                if self.close_all(t) {
                    self.state_violation(t, "REF_WITH_OPEN_BANK", None, name);
                }
                self.refresh_group(t);
            }
            DramOpcode::Zqs => {
                if self.banks.iter().any(|b| b.open_row.is_some()) {
                    self.state_violation(t, "ZQS_WITH_OPEN_BANK", None, name);
                }
            }
            DramOpcode::Nop => {}
        }
        ev.violations = self.violations.len() - before;
        Ok(ev)
    }

    fn refresh_group(&mut self, t: u64) {
        let rows = self.profile.geometry.rows_per_bank;
        let per_ref = rows.div_ceil(REFRESH_GROUPS).max(1);
        let start = self.refresh_ptr;
        for bank in 0..self.profile.geometry.banks {
            for i in 0..per_ref {
                let row = (start + i) % rows;
                self.restore_row(bank, row, t);
            }
        }
        self.refresh_ptr = (start + per_ref) % rows;
    }

    pub fn enter_self_refresh(&mut self, t: u64) {
        self.now = self.now.max(t);
        if self.self_refresh {
            return;
        }
        if self.close_all(t) {
            self.state_violation(t, "SRE_WITH_OPEN_BANK", None, "SRE");
        }
        if let Some(r) = self.retention.as_mut() {
            for (bank, row) in self.store.keys() {
                r.restore(&mut self.store, bank, row, t);
            }
        }
        self.self_refresh = true;
    }

    pub fn exit_self_refresh(&mut self, t: u64) {
        self.now = self.now.max(t);
        if !self.self_refresh {
            return;
        }
        self.self_refresh = false;
        self.hammer.new_epoch();
        for (bank, row) in self.store.keys() {
            self.store.set_restored(bank, row, t);
        }
    }

    /// Replaces the contents of a row without issuing commands.
    pub fn fill_row(&mut self, bank: u32, row: u32, bytes: &[u8]) -> Result<(), DeviceError> {
        self.check_row(bank, row)?;
        let expected = self.store.row_bytes();
        if bytes.len() != expected {
            return Err(DeviceError::RowSize { expected, got: bytes.len() });
        }
        self.store.fill(bank, row, bytes, self.now);
        self.hammer.on_row_rewrite(bank, row);
        Ok(())
    }

    /// Fills a row with `pattern` repeated.
    pub fn fill_row_pattern(&mut self, bank: u32, row: u32, pattern: &[u8]) -> Result<(), DeviceError> {
        let n = self.store.row_bytes();
        if pattern.is_empty() {
            return self.fill_row(bank, row, pattern);
        }
        let mut bytes = pattern.repeat(n.div_ceil(pattern.len()));
        bytes.truncate(n);
        self.fill_row(bank, row, &bytes)
    }

    /// Current contents of a row, including leaked cells.
    pub fn peek_row(&mut self, bank: u32, row: u32) -> Result<Vec<u8>, DeviceError> {
        self.check_row(bank, row)?;
        let mut data = self.store.snapshot(bank, row);
        if let Some(r) = self.retention.as_mut() {
            r.apply(&self.store, bank, row, self.now, 0, &mut data);
        }
        Ok(data)
    }

    pub fn peek_column(&mut self, bank: u32, row: u32, col: u32) -> Result<Transfer, DeviceError> {
        self.check_row(bank, row)?;
        let idx = self.column_index(bank, col)?;
        let mut data = self.store.read_column(bank, row, idx);
        if let Some(r) = self.retention.as_mut() {
            r.apply(&self.store, bank, row, self.now, idx * Geometry::TRANSFER_BITS, &mut data);
        }
        Ok(data)
    }

    /// Returns the device to its power-on state while keeping the sampled
    /// fault maps (weak cells, segment error rates, leaky cells).
    pub fn reset_state(&mut self) {
        self.checker.clear();
        self.banks.iter_mut().for_each(|b| *b = Bank::default());
        self.store.clear();
        self.hammer.reset();
        self.majority.reset();
        self.majority_log.clear();
        self.counts = CommandCounts::default();
        self.violations.clear();
        self.self_refresh = false;
        self.current_pc = None;
        self.now = 0;
        self.refresh_ptr = 0;
    }

    /// Applies `iterations` repetitions of `pattern`, where each `(row, count)`
    /// entry stands for `count` ACT/PRE pairs to `row` in `bank`, starting at
    /// bus slot `start`. The resulting row data, accumulators and counters are
    /// the same as issuing the commands one by one with the given spacing.
    /// The spacing must be legal and must not trigger a multi-row activation.
    pub fn hammer_pattern(
        &mut self,
        bank: u32,
        pattern: &[(u32, u64)],
        iterations: u64,
        start: u64,
        timing: HammerTiming,
    ) -> Result<u32, DeviceError> {
        self.check_bank(bank)?;
        for &(row, _) in pattern {
            self.check_row(bank, row)?;
        }
        if start < self.now {
            return Err(DeviceError::TimeWentBackwards { time: start, last: self.now });
        }
        let segment_pair = pattern.windows(2).any(|w| w[0].0 % SEGMENT_ROWS == 1 && w[1].0 == w[0].0 + 1)
            || pattern.len() > 1
                && pattern[pattern.len() - 1].0 % SEGMENT_ROWS == 1
                && pattern[0].0 == pattern[pattern.len() - 1].0 + 1;
        let majority_possible = segment_pair && self.majority.trigger(timing.act_to_pre, timing.pre_to_act).is_some();
        if self.self_refresh || self.banks[bank as usize].open_row.is_some() || majority_possible {
            return Err(DeviceError::ReplayPrecondition { bank });
        }
        let per_iter: u64 = pattern.iter().map(|p| p.1).sum();
        if iterations == 0 || per_iter == 0 {
            return Ok(0);
        }
        let period = timing.period();
        let mut t = start;
        let mut last = (0u32, 0u64);
        let mut flips = 0;
        let mut done = 0;
        let mut stable = 0;
        while done < iterations && stable < 2 {
            let before: Vec<u64> = pattern.iter().map(|p| self.store.version(bank, p.0)).collect();
            flips += self.replay_iteration(bank, pattern, &mut t, &mut last, period);
            done += 1;
            let after: Vec<u64> = pattern.iter().map(|p| self.store.version(bank, p.0)).collect();
            stable = if before == after { stable + 1 } else { 0 };
        }
        if iterations - done > 1 {
            let k = iterations - done - 1;
            t += k * per_iter * period;
            flips += self.hammer.bulk(bank, pattern, k, &mut self.store, t);
            done += k;
        }
        while done < iterations {
            flips += self.replay_iteration(bank, pattern, &mut t, &mut last, period);
            done += 1;
        }
        let (row, act) = last;
        let pre = act + timing.act_to_pre;
        self.counts.act += iterations * per_iter;
        self.counts.pre += iterations * per_iter;
        self.checker.record(HistoryEntry { time: act, op: DramOpcode::Act, bank: Some(bank) });
        self.checker.record(HistoryEntry { time: pre, op: DramOpcode::Pre, bank: Some(bank) });
        let b = &mut self.banks[bank as usize];
        b.act_time = act;
        b.closed = Some((row, act, pre));
        b.pre_time = Some(pre);
        self.now = pre;
        Ok(flips)
    }

    fn replay_iteration(
        &mut self,
        bank: u32,
        pattern: &[(u32, u64)],
        t: &mut u64,
        last: &mut (u32, u64),
        period: u64,
    ) -> u32 {
        let mut flips = 0;
        for &(row, count) in pattern {
            if count == 0 {
                continue;
            }
            let final_act = *t + (count - 1) * period;
            if let Some(r) = self.retention.as_mut() {
                r.restore(&mut self.store, bank, row, *t);
            }
            self.store.set_restored(bank, row, final_act);
            flips += self.hammer.activate(bank, row, count, &mut self.store, final_act);
            *last = (row, final_act);
            *t += count * period;
        }
        flips
    }
}

#[cfg(test)]
mod tests;
