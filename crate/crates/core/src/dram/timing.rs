//! Minimum-delay rules between command pairs and a streaming checker.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::config::Profile;
use crate::isa::DramOpcode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CommandClass {
    #[serde(rename = "ACT")]
    Act,
    /// PRE and PREA.
    #[serde(rename = "PRE")]
    Pre,
    #[serde(rename = "READ")]
    Read,
    #[serde(rename = "WRITE")]
    Write,
    #[serde(rename = "REF")]
    Ref,
    #[serde(rename = "ZQS")]
    Zqs,
}

impl CommandClass {
    pub const COUNT: usize = 6;

    pub fn of(op: DramOpcode) -> Option<CommandClass> {
        Some(match op {
            DramOpcode::Nop => return None,
            DramOpcode::Act => CommandClass::Act,
            DramOpcode::Pre | DramOpcode::PreA => CommandClass::Pre,
            DramOpcode::Read => CommandClass::Read,
            DramOpcode::Write => CommandClass::Write,
            DramOpcode::Ref => CommandClass::Ref,
            DramOpcode::Zqs => CommandClass::Zqs,
        })
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scope {
    /// Both commands target the same bank (device-wide commands match every bank).
    #[serde(rename = "same_bank")]
    SameBank,
    /// Both commands target banks, and the banks differ.
    #[serde(rename = "other_bank")]
    OtherBank,
    /// Any two commands on the device.
    #[serde(rename = "same_device")]
    Device,
}

impl Scope {
    pub fn matches(self, a: Option<u32>, b: Option<u32>) -> bool {
        match self {
            Scope::Device => true,
            Scope::SameBank => match (a, b) {
                (Some(x), Some(y)) => x == y,
                _ => true,
            },
            Scope::OtherBank => matches!((a, b), (Some(x), Some(y)) if x != y),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRule {
    pub name: String,
    pub prev: CommandClass,
    pub next: CommandClass,
    pub scope: Scope,
    pub min_ns: f64,
    pub min_slots: u64,
}

/// A command as seen by the checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryEntry {
    pub time: u64,
    pub op: DramOpcode,
    /// `None` for commands that address the whole device.
    pub bank: Option<u32>,
}

impl HistoryEntry {
    pub fn class(&self) -> CommandClass {
        CommandClass::of(self.op).expect("NOP never enters history")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingViolation {
    pub rule: String,
    pub scope: Scope,
    pub prev_op: DramOpcode,
    pub cur_op: DramOpcode,
    pub prev_time: u64,
    pub cur_time: u64,
    pub bank: Option<u32>,
    pub required_slots: u64,
    pub required_ns: f64,
    pub actual_ns: f64,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<TimingRule>,
    pair: Vec<Vec<usize>>,
    window: [u64; CommandClass::COUNT],
    slot_ns: f64,
}

impl RuleSet {
    pub fn from_profile(profile: &Profile) -> RuleSet {
        let rules = profile
            .timing_rules
            .iter()
            .map(|r| TimingRule {
                name: r.name.clone(),
                prev: r.prev,
                next: r.next,
                scope: r.scope,
                min_ns: r.min_ns,
                min_slots: profile.ns_to_slots(r.min_ns),
            })
            .collect();
        RuleSet::new(rules, profile.slot_ns)
    }

    pub fn new(rules: Vec<TimingRule>, slot_ns: f64) -> RuleSet {
        let mut pair = vec![Vec::new(); CommandClass::COUNT * CommandClass::COUNT];
        let mut window = [0u64; CommandClass::COUNT];
        for (i, r) in rules.iter().enumerate() {
            pair[r.prev.index() * CommandClass::COUNT + r.next.index()].push(i);
            window[r.next.index()] = window[r.next.index()].max(r.min_slots);
        }
        RuleSet { rules, pair, window, slot_ns }
    }

    pub fn rules(&self) -> &[TimingRule] {
        &self.rules
    }

    pub fn slot_ns(&self) -> f64 {
        self.slot_ns
    }

    pub fn max_window(&self) -> u64 {
        self.window.iter().copied().max().unwrap_or(0)
    }

    fn rules_for(&self, prev: CommandClass, next: CommandClass) -> &[usize] {
        &self.pair[prev.index() * CommandClass::COUNT + next.index()]
    }

    fn violation(&self, rule: &TimingRule, prev: &HistoryEntry, cur: &HistoryEntry) -> TimingViolation {
        TimingViolation {
            rule: rule.name.clone(),
            scope: rule.scope,
            prev_op: prev.op,
            cur_op: cur.op,
            prev_time: prev.time,
            cur_time: cur.time,
            bank: cur.bank.or(prev.bank),
            required_slots: rule.min_slots,
            required_ns: rule.min_ns,
            actual_ns: (cur.time - prev.time) as f64 * self.slot_ns,
        }
    }
}

/// Every rule breached by issuing `cur` after the commands in `history` (oldest first).
pub fn check_timing(history: &[HistoryEntry], cur: &HistoryEntry, rules: &RuleSet) -> Vec<TimingViolation> {
    check_newest_first(history.iter().rev(), cur, rules)
}

fn check_newest_first<'a>(
    history: impl Iterator<Item = &'a HistoryEntry>,
    cur: &HistoryEntry,
    rules: &RuleSet,
) -> Vec<TimingViolation> {
    let mut out = Vec::new();
    let next = cur.class();
    let window = rules.window[next.index()];
    for prev in history {
        let delay = cur.time - prev.time;
        if delay >= window {
            break;
        }
        for &ri in rules.rules_for(prev.class(), next) {
            let rule = &rules.rules[ri];
            if delay < rule.min_slots && rule.scope.matches(prev.bank, cur.bank) {
                out.push(rules.violation(rule, prev, cur));
            }
        }
    }
    out.reverse();
    out
}

/// Keeps only the history that can still constrain future commands.
#[derive(Debug, Clone)]
pub struct TimingChecker {
    rules: RuleSet,
    history: VecDeque<HistoryEntry>,
    horizon: u64,
}

impl TimingChecker {
    pub fn new(rules: RuleSet) -> TimingChecker {
        let horizon = rules.max_window();
        TimingChecker { rules, history: VecDeque::new(), horizon }
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// Checks `cur` against the retained history and then appends it.
    pub fn issue(&mut self, cur: HistoryEntry) -> Vec<TimingViolation> {
        while let Some(front) = self.history.front() {
            if cur.time - front.time >= self.horizon {
                self.history.pop_front();
            } else {
                break;
            }
        }
        let out = check_newest_first(self.history.iter().rev(), &cur, &self.rules);
        self.history.push_back(cur);
        out
    }

    /// Appends a command without checking it.
    pub fn record(&mut self, entry: HistoryEntry) {
        self.history.push_back(entry);
    }

    pub fn clear(&mut self) {
        self.history.clear();
    }
}
