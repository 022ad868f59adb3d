//! Value-change dump of bus commands, bank state and FIFO occupancy.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::config::Profile;
use crate::emulator::{StepEvents, SLOTS_PER_CYCLE};
use crate::isa::DramOpcode;
use crate::platform::TraceRecord;

/// FIFO occupancy sampled after each committed instruction.
#[derive(Debug, Clone, Default)]
pub struct VcdRecorder {
    fifo: Vec<(u64, u32)>,
}

impl VcdRecorder {
    pub fn sample(&mut self, ev: &StepEvents, fifo_len: u32) {
        let slot = ev.end_cycle * SLOTS_PER_CYCLE;
        if self.fifo.last().map(|&(_, v)| v) != Some(fifo_len) {
            self.fifo.push((slot, fifo_len));
        }
    }

    pub fn render(&self, trace: &[TraceRecord], profile: &Profile) -> String {
        write_vcd(trace, &self.fifo, profile.geometry.banks, profile.slot_ns)
    }
}

fn ident(mut n: usize) -> String {
    let mut s = String::new();
    loop {
        s.push((b'!' + (n % 94) as u8) as char);
        n /= 94;
        if n == 0 {
            return s;
        }
        n -= 1;
    }
}

fn bits(v: u64, width: u32) -> String {
    if width == 1 {
        return format!("{}", v & 1);
    }
    format!("b{v:b} ")
}

/// Renders the trace and FIFO samples as VCD text with a 1 ps timescale.
pub fn write_vcd(trace: &[TraceRecord], fifo: &[(u64, u32)], banks: u32, slot_ns: f64) -> String {
    let cmd_id = ident(0);
    let fifo_id = ident(1);
    let open_id = |b: u32| ident(2 + 2 * b as usize);
    let row_id = |b: u32| ident(3 + 2 * b as usize);

    let mut out = String::new();
    out.push_str("$version bender $end\n$timescale 1ps $end\n$scope module dram $end\n");
    let _ = writeln!(out, "$var wire 3 {cmd_id} cmd $end");
    let _ = writeln!(out, "$var wire 16 {fifo_id} fifo_occupancy $end");
    for b in 0..banks {
        let _ = writeln!(out, "$var wire 1 {} bank{b}_open $end", open_id(b));
        let _ = writeln!(out, "$var wire 32 {} bank{b}_row $end", row_id(b));
    }
    out.push_str("$upscope $end\n$enddefinitions $end\n#0\n$dumpvars\n");
    let _ = writeln!(out, "b0 {cmd_id}\nb0 {fifo_id}");
    for b in 0..banks {
        let _ = writeln!(out, "0{}\nb0 {}", open_id(b), row_id(b));
    }
    out.push_str("$end\n");

    // (slot, order) -> changes; order keeps same-slot changes in event order
    let mut changes: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    let mut push = |slot: u64, s: String| changes.entry(slot).or_default().push(s);
    let mut cmd_slots = std::collections::BTreeSet::new();
    for t in trace {
        cmd_slots.insert(t.slot);
    }
    for t in trace {
        push(t.slot, format!("{}{cmd_id}", bits(t.op.code() as u64, 3)));
        if !cmd_slots.contains(&(t.slot + 1)) {
            push(t.slot + 1, format!("b0 {cmd_id}"));
        }
        match t.op {
            DramOpcode::Act => {
                let b = t.bank.unwrap_or(0);
                if b < banks {
                    push(t.slot, format!("1{}", open_id(b)));
                    push(t.slot, format!("{}{}", bits(t.addr.unwrap_or(0) as u64, 32), row_id(b)));
                }
            }
            DramOpcode::Pre => {
                let b = t.bank.unwrap_or(0);
                if b < banks {
                    push(t.slot, format!("0{}", open_id(b)));
                }
            }
            DramOpcode::PreA => {
                for b in 0..banks {
                    push(t.slot, format!("0{}", open_id(b)));
                }
            }
            _ => {}
        }
    }
    for &(slot, v) in fifo {
        push(slot, format!("{}{fifo_id}", bits(v as u64, 16)));
    }
    for (slot, list) in changes {
        let ps = (slot as f64 * slot_ns * 1000.0).round() as u64;
        let _ = writeln!(out, "#{ps}");
        for c in list {
            out.push_str(&c);
            out.push('\n');
        }
    }
    out
}
