use super::{
    imm32, CommandFlags, DramCommand, DramOpcode, Instruction, IsaError, RegisterId, RegularOp, RegularOpcode, R0,
    WDR,
};

/// One parsed source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceItem {
    Label(String),
    Instr(Instruction),
    /// A branch whose target is a label name, to be resolved at assembly time.
    LabelRef { op: RegularOp, label: String },
}

fn cmd_text(c: &DramCommand) -> String {
    let c = c.normalized();
    let reg = |r: RegisterId, inc: bool| if inc { format!("{r}+") } else { r.to_string() };
    let mut parts: Vec<String> = Vec::new();
    match c.op.operand_count() {
        2 => {
            parts.push(reg(c.reg_a, c.flags.inc_a));
            parts.push(reg(c.reg_b, c.flags.inc_b));
        }
        1 => parts.push(reg(c.reg_a, c.flags.inc_a)),
        _ => {}
    }
    if c.flags.auto_precharge {
        parts.push("AP".into());
    }
    if c.flags.aux {
        parts.push("AUX".into());
    }
    if parts.is_empty() {
        c.op.mnemonic().to_string()
    } else {
        format!("{} {}", c.op.mnemonic(), parts.join(", "))
    }
}

/// Canonical one-line text of an instruction. Branch targets print as absolute addresses.
pub fn disassemble(instr: &Instruction) -> String {
    use RegularOpcode::*;
    match instr {
        Instruction::Dram(slots) => {
            if slots.iter().all(|c| c.is_nop()) {
                "NOP4".to_string()
            } else {
                slots.iter().map(cmd_text).collect::<Vec<_>>().join(" | ")
            }
        }
        Instruction::Regular(r) => {
            let m = r.op.mnemonic();
            match r.op {
                Ld | Addi => format!("{m} {}, {}, {}", r.rd, r.rs1, r.imm),
                St => format!("{m} {}, {}, {}", r.rs2, r.rs1, r.imm),
                And | Or | Xor | Add | Sub => format!("{m} {}, {}, {}", r.rd, r.rs1, r.rs2),
                Mv | Src => format!("{m} {}, {}", r.rd, r.rs1),
                Li | Ldpc => format!("{m} {}, {}", r.rd, r.imm),
                Bl | Beq => format!("{m} {}, {}, {}", r.imm as u32, r.rs1, r.rs2),
                Jump => format!("{m} {}", r.imm as u32),
                Sleep | Hint => format!("{m} {}", r.imm),
                Ldwd => format!("{m} {}, {}", r.imm, r.rs1),
                Sre | Srx | End => m.to_string(),
            }
        }
    }
}

pub fn parse_register(tok: &str) -> Option<RegisterId> {
    match tok.to_ascii_uppercase().as_str() {
        "BASR" => Some(RegisterId::BASR),
        "RASR" => Some(RegisterId::RASR),
        "CASR" => Some(RegisterId::CASR),
        "WDR" => Some(WDR),
        s => {
            let n: u8 = s.strip_prefix('R')?.parse().ok()?;
            (n < RegisterId::GPR_COUNT).then(|| RegisterId::r(n))
        }
    }
}

fn parse_int(tok: &str) -> Option<i64> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok),
    };
    let v = if let Some(hex) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

struct Line<'a> {
    number: usize,
    raw: &'a str,
}

impl Line<'_> {
    fn err(&self, tok: &str, msg: impl Into<String>) -> IsaError {
        let col = if tok.is_empty() { 1 } else { self.raw.find(tok).map_or(1, |p| p + 1) };
        IsaError::SyntaxError { line: self.number, col, msg: msg.into() }
    }

    fn reg(&self, tok: &str) -> Result<RegisterId, IsaError> {
        parse_register(tok).ok_or_else(|| self.err(tok, format!("expected register, found `{tok}`")))
    }

    fn imm(&self, tok: &str) -> Result<i32, IsaError> {
        let v = parse_int(tok).ok_or_else(|| self.err(tok, format!("expected integer, found `{tok}`")))?;
        imm32(v)
    }
}

fn split_operands(s: &str) -> Vec<&str> {
    if s.trim().is_empty() {
        Vec::new()
    } else {
        s.split(',').map(str::trim).collect()
    }
}

fn dram_opcode(m: &str) -> Option<DramOpcode> {
    DramOpcode::ALL.into_iter().find(|op| op.mnemonic() == m)
}

fn regular_opcode(m: &str) -> Option<RegularOpcode> {
    RegularOpcode::ALL.into_iter().find(|op| op.mnemonic() == m)
}

fn parse_command(line: &Line, text: &str) -> Result<DramCommand, IsaError> {
    let text = text.trim();
    let (mn, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    let upper = mn.to_ascii_uppercase();
    let op = dram_opcode(&upper).ok_or_else(|| {
        if regular_opcode(&upper).is_some() {
            line.err(mn, format!("`{mn}` cannot share a line with DRAM commands"))
        } else {
            IsaError::UnknownMnemonic { line: line.number, mnemonic: mn.to_string() }
        }
    })?;
    let ops = split_operands(rest);
    let n = op.operand_count();
    if ops.len() < n {
        return Err(line.err(text, format!("{} takes {n} register operands", op.mnemonic())));
    }
    let mut regs = [R0; 2];
    let mut incs = [false; 2];
    for (i, tok) in ops[..n].iter().enumerate() {
        let (name, inc) = match tok.strip_suffix('+') {
            Some(base) => (base.trim(), true),
            None => (*tok, false),
        };
        regs[i] = line.reg(name)?;
        incs[i] = inc;
    }
    let mut flags = CommandFlags { inc_a: incs[0], inc_b: incs[1], ..CommandFlags::NONE };
    for tok in &ops[n..] {
        match tok.to_ascii_uppercase().as_str() {
            "AP" if matches!(op, DramOpcode::Read | DramOpcode::Write) => flags.auto_precharge = true,
            "AUX" if op != DramOpcode::Nop => flags.aux = true,
            _ => return Err(line.err(tok, format!("unexpected operand `{tok}`"))),
        }
    }
    let cmd = DramCommand { op, reg_a: regs[0], reg_b: regs[1], flags };
    for r in &regs[..n] {
        if !r.is_narrow() {
            return Err(IsaError::InvalidRegisterField { field: "dram register", reg: *r });
        }
    }
    Ok(cmd.normalized())
}

fn parse_regular(line: &Line, op: RegularOpcode, rest: &str) -> Result<SourceItem, IsaError> {
    use RegularOpcode::*;
    let ops = split_operands(rest);
    let arity = match op {
        Ld | St | And | Or | Xor | Add | Sub | Addi | Bl | Beq => 3,
        Mv | Src | Li | Ldpc | Ldwd => 2,
        Jump | Sleep | Hint => 1,
        Sre | Srx | End => 0,
    };
    if ops.len() != arity {
        return Err(line.err(rest.trim(), format!("{} takes {arity} operands, found {}", op.mnemonic(), ops.len())));
    }
    let mut r = RegularOp::new(op);
    let mut label = None;
    match op {
        Ld | Addi => {
            r = r.rd(line.reg(ops[0])?).rs1(line.reg(ops[1])?).imm(line.imm(ops[2])?);
        }
        St => {
            r = r.rs2(line.reg(ops[0])?).rs1(line.reg(ops[1])?).imm(line.imm(ops[2])?);
        }
        And | Or | Xor | Add | Sub => {
            r = r.rd(line.reg(ops[0])?).rs1(line.reg(ops[1])?).rs2(line.reg(ops[2])?);
        }
        Mv | Src => r = r.rd(line.reg(ops[0])?).rs1(line.reg(ops[1])?),
        Li | Ldpc => r = r.rd(line.reg(ops[0])?).imm(line.imm(ops[1])?),
        Ldwd => r = r.imm(line.imm(ops[0])?).rs1(line.reg(ops[1])?),
        Sleep | Hint => r = r.imm(line.imm(ops[0])?),
        Bl | Beq | Jump => {
            if op != Jump {
                r = r.rs1(line.reg(ops[1])?).rs2(line.reg(ops[2])?);
            }
            let target = ops[0];
            if let Some(v) = parse_int(target) {
                r = r.imm(imm32(v)?);
            } else if is_identifier(target) {
                label = Some(target.to_string());
            } else {
                return Err(line.err(target, format!("bad branch target `{target}`")));
            }
        }
        Sre | Srx | End => {}
    }
    let r = r.validated()?;
    Ok(match label {
        Some(label) => SourceItem::LabelRef { op: r, label },
        None => SourceItem::Instr(Instruction::Regular(r)),
    })
}

fn parse_line(line: &Line, text: &str) -> Result<SourceItem, IsaError> {
    if let Some(name) = text.strip_suffix(':') {
        let name = name.trim();
        if !is_identifier(name) {
            return Err(line.err(name, format!("bad label `{name}`")));
        }
        return Ok(SourceItem::Label(name.to_string()));
    }
    let (mn, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
    let upper = mn.to_ascii_uppercase();
    if upper == "NOP4" && rest.trim().is_empty() {
        return Ok(SourceItem::Instr(Instruction::NOP4));
    }
    if let Some(op) = regular_opcode(&upper) {
        if text.contains('|') {
            return Err(line.err("|", "regular instructions cannot be joined with `|`"));
        }
        return parse_regular(line, op, rest);
    }
    if dram_opcode(&upper).is_none() {
        return Err(IsaError::UnknownMnemonic { line: line.number, mnemonic: mn.to_string() });
    }
    let parts: Vec<&str> = text.split('|').collect();
    if parts.len() > 4 {
        return Err(line.err(parts[4].trim(), "a DRAM instruction holds at most 4 commands"));
    }
    let mut slots = [DramCommand::NOP; 4];
    for (slot, part) in slots.iter_mut().zip(&parts) {
        *slot = parse_command(line, part)?;
    }
    Ok(SourceItem::Instr(Instruction::Dram(slots)))
}

/// Parses `.dbasm` text into line-numbered items. Duplicate labels are rejected here.
pub fn parse_source(src: &str) -> Result<Vec<(usize, SourceItem)>, IsaError> {
    let mut items = Vec::new();
    let mut labels = std::collections::HashSet::new();
    for (idx, raw) in src.lines().enumerate() {
        let line = Line { number: idx + 1, raw };
        let text = raw.split('#').next().unwrap().trim();
        if text.is_empty() {
            continue;
        }
        let item = parse_line(&line, text)?;
        if let SourceItem::Label(name) = &item {
            if !labels.insert(name.clone()) {
                return Err(IsaError::DuplicateLabel(name.clone()));
            }
        }
        items.push((line.number, item));
    }
    Ok(items)
}
