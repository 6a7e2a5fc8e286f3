//! Toy register-machine IR: instructions, textual format, code layout and
//! control-flow graphs.
//!
//! Each line holds one instruction, label or directive:
//!
//! ```text
//! .bitwidth 12
//! .high r1 {0, 1}
//!         MALLOC r2, 128
//!         CMP r1, 0
//!         JZ done
//!         ADD r2, 64
//! done:   STORE [r2+0], r1
//!         HALT
//! ```
//!
//! Instructions occupy 4 bytes by default and are laid out from `.base`
//! upwards. A `size=N` prefix changes the footprint of one instruction and an
//! `@0xADDR` prefix pins its address, which moves the layout cursor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of general purpose registers.
pub const NUM_REGS: usize = 16;
/// Bit widths accepted by `.bitwidth`.
pub const BITWIDTHS: [u32; 4] = [8, 12, 16, 32];
/// Footprint of an instruction without a `size=` annotation.
pub const DEFAULT_INSTR_SIZE: u64 = 4;
/// Layout origin without a `.base` directive.
pub const DEFAULT_BASE: u64 = 0;
/// Bit width without a `.bitwidth` directive.
pub const DEFAULT_BITWIDTH: u32 = 32;

/// A register `r0..r15`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Register(u8);

impl Register {
    pub fn new(index: usize) -> Option<Register> {
        (index < NUM_REGS).then_some(Register(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Source operand: a register or an immediate already reduced modulo `2^n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    Reg(Register),
    Imm(u64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Reg(r) => write!(f, "{r}"),
            Operand::Imm(v) => write!(f, "{v:#x}"),
        }
    }
}

/// Memory operand `[base + disp]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemOperand {
    pub base: Register,
    pub disp: i64,
}

impl fmt::Display for MemOperand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.disp < 0 {
            write!(f, "[{}-{}]", self.base, -self.disp)
        } else {
            write!(f, "[{}+{}]", self.base, self.disp)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Opcode {
    Mov,
    And,
    Or,
    Xor,
    Add,
    Sub,
    Mul,
    Shl,
    Cmp,
    Load,
    Store,
    Malloc,
    Jmp,
    Jz,
    Jnz,
    Halt,
}

impl Opcode {
    pub const ALL: [Opcode; 16] = [
        Opcode::Mov,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Shl,
        Opcode::Cmp,
        Opcode::Load,
        Opcode::Store,
        Opcode::Malloc,
        Opcode::Jmp,
        Opcode::Jz,
        Opcode::Jnz,
        Opcode::Halt,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Mov => "MOV",
            Opcode::And => "AND",
            Opcode::Or => "OR",
            Opcode::Xor => "XOR",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Shl => "SHL",
            Opcode::Cmp => "CMP",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Malloc => "MALLOC",
            Opcode::Jmp => "JMP",
            Opcode::Jz => "JZ",
            Opcode::Jnz => "JNZ",
            Opcode::Halt => "HALT",
        }
    }

    fn from_mnemonic(s: &str) -> Option<Opcode> {
        let upper = s.to_ascii_uppercase();
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == upper)
    }
}

/// Two-operand ALU operations with a register or immediate source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AluOp {
    And,
    Or,
    Xor,
    Add,
    Sub,
}

/// Decoded instruction semantics. Jump targets are instruction indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Op {
    Mov { dst: Register, src: Operand },
    Alu { op: AluOp, dst: Register, src: Operand },
    Mul { dst: Register, imm: u64 },
    Shl { dst: Register, imm: u64 },
    Cmp { lhs: Register, rhs: Operand },
    Load { dst: Register, mem: MemOperand },
    Store { mem: MemOperand, src: Operand },
    Malloc { dst: Register, size: u64 },
    Jmp { target: usize },
    Jz { target: usize },
    Jnz { target: usize },
    Halt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instr {
    pub op: Op,
    /// Code address of the first byte.
    pub addr: u64,
    /// Bytes occupied.
    pub size: u64,
    /// 1-based source line.
    pub line: usize,
}

impl Instr {
    pub fn opcode(&self) -> Opcode {
        match &self.op {
            Op::Mov { .. } => Opcode::Mov,
            Op::Alu { op, .. } => match op {
                AluOp::And => Opcode::And,
                AluOp::Or => Opcode::Or,
                AluOp::Xor => Opcode::Xor,
                AluOp::Add => Opcode::Add,
                AluOp::Sub => Opcode::Sub,
            },
            Op::Mul { .. } => Opcode::Mul,
            Op::Shl { .. } => Opcode::Shl,
            Op::Cmp { .. } => Opcode::Cmp,
            Op::Load { .. } => Opcode::Load,
            Op::Store { .. } => Opcode::Store,
            Op::Malloc { .. } => Opcode::Malloc,
            Op::Jmp { .. } => Opcode::Jmp,
            Op::Jz { .. } => Opcode::Jz,
            Op::Jnz { .. } => Opcode::Jnz,
            Op::Halt => Opcode::Halt,
        }
    }

    /// Jump target, if any.
    pub fn target(&self) -> Option<usize> {
        match self.op {
            Op::Jmp { target } | Op::Jz { target } | Op::Jnz { target } => Some(target),
            _ => None,
        }
    }

    /// Whether control may continue with the next instruction in program order.
    pub fn falls_through(&self) -> bool {
        !matches!(self.op, Op::Jmp { .. } | Op::Halt)
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self.op, Op::Jz { .. } | Op::Jnz { .. })
    }
}

/// Initial-state directives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitDirective {
    /// `.high r3 {0,1}`: secret drawn from a finite set.
    High { reg: Register, values: Vec<u64> },
    /// `.low r4 = 42`: known public value.
    LowConst { reg: Register, value: u64 },
    /// `.lowsym r5` or `.lowsym r5, 256`: public but unknown base of a
    /// region of the given size.
    LowSymbolic { reg: Register, size: Option<u64> },
    /// `.memhigh [r5+0] {0x11,0x22}`: secret memory cell.
    MemHigh { cell: MemOperand, values: Vec<u64> },
    /// `.memlow [r5+4] = 7`: public memory cell.
    MemLow { cell: MemOperand, value: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub instrs: Vec<Instr>,
    pub labels: BTreeMap<String, usize>,
    pub directives: Vec<InitDirective>,
    pub base_addr: u64,
    pub bitwidth: u32,
}

impl Program {
    /// Mask selecting the low `bitwidth` bits.
    pub fn word_mask(&self) -> u64 {
        word_mask(self.bitwidth)
    }

    /// Register and memory-cell high directives in declaration order.
    pub fn high_sets(&self) -> Vec<&[u64]> {
        self.directives
            .iter()
            .filter_map(|d| match d {
                InitDirective::High { values, .. } | InitDirective::MemHigh { values, .. } => Some(values.as_slice()),
                _ => None,
            })
            .collect()
    }
}

pub fn word_mask(n: u32) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(String),
    #[error("unresolved jump target `{0}`")]
    UnresolvedTarget(String),
    #[error("instruction at {first:#x} overlaps instruction at {second:#x}")]
    Overlap { first: u64, second: u64 },
    #[error("value {0} does not fit in the bit width")]
    OutOfRange(String),
    #[error("unsupported bit width {0} (expected 8, 12, 16 or 32)")]
    BadBitwidth(u32),
    #[error("{0}")]
    Structure(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct ParseError {
    /// 1-based line; 0 for whole-program errors.
    pub line: usize,
    pub kind: ParseErrorKind,
}

fn err<T>(line: usize, kind: ParseErrorKind) -> Result<T, ParseError> {
    Err(ParseError { line, kind })
}

fn syntax<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    err(line, ParseErrorKind::Syntax(msg.into()))
}

/// Parse IR text using the bit width declared in the text.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    parse_with_bitwidth(text, None)
}

/// Parse IR text, letting `bitwidth` override any `.bitwidth` directive.
pub fn parse_with_bitwidth(text: &str, bitwidth: Option<u32>) -> Result<Program, ParseError> {
    Parser::new(text, bitwidth)?.run()
}

enum PendingOp {
    Ready(Op),
    Jump(Opcode, String),
}

struct RawInstr {
    op: PendingOp,
    at: Option<u64>,
    size: u64,
    line: usize,
}

struct Parser<'a> {
    lines: Vec<(usize, &'a str)>,
    n: u32,
    base: u64,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str, override_n: Option<u32>) -> Result<Self, ParseError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split(';').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        let mut n = DEFAULT_BITWIDTH;
        let mut base = None;
        for &(line, l) in &lines {
            let mut words = l.split_whitespace();
            match words.next() {
                Some(".bitwidth") => {
                    let v = words.next().map(parse_number).transpose();
                    match v {
                        Ok(Some(v)) if v >= 0 => n = v as u32,
                        _ => return syntax(line, "expected `.bitwidth N`"),
                    }
                }
                Some(".base") => match words.next().map(parse_number) {
                    Some(Ok(v)) if v >= 0 => base = Some((line, v as u64)),
                    _ => return syntax(line, "expected `.base ADDR`"),
                },
                _ => {}
            }
        }
        if let Some(o) = override_n {
            n = o;
        }
        if !BITWIDTHS.contains(&n) {
            return err(0, ParseErrorKind::BadBitwidth(n));
        }
        let base = match base {
            Some((line, b)) if b > word_mask(n) => return err(line, ParseErrorKind::OutOfRange(format!("{b:#x}"))),
            Some((_, b)) => b,
            None => DEFAULT_BASE,
        };
        Ok(Parser { lines, n, base })
    }

    fn run(self) -> Result<Program, ParseError> {
        let mut labels: BTreeMap<String, usize> = BTreeMap::new();
        let mut raws: Vec<RawInstr> = Vec::new();
        let mut directives = Vec::new();
        for &(line, l) in &self.lines {
            if l.starts_with('.') {
                if let Some(d) = self.directive(line, l)? {
                    directives.push(d);
                }
                continue;
            }
            let mut rest = l;
            if let Some((head, tail)) = l.split_once(':') {
                let head = head.trim();
                if is_ident(head) && !head.contains(char::is_whitespace) {
                    if labels.insert(head.to_string(), raws.len()).is_some() {
                        return err(line, ParseErrorKind::DuplicateLabel(head.to_string()));
                    }
                    rest = tail.trim();
                }
            }
            if !rest.is_empty() {
                raws.push(self.instr(line, rest)?);
            }
        }
        if let Some((name, _)) = labels.iter().find(|(_, &i)| i >= raws.len()) {
            return err(0, ParseErrorKind::Structure(format!("label `{name}` does not precede an instruction")));
        }
        let instrs = self.layout(raws, &labels)?;
        let program = Program { instrs, labels, directives, base_addr: self.base, bitwidth: self.n };
        check_structure(&program)?;
        Ok(program)
    }

    fn layout(&self, raws: Vec<RawInstr>, labels: &BTreeMap<String, usize>) -> Result<Vec<Instr>, ParseError> {
        let mut cursor = self.base;
        let mut instrs = Vec::with_capacity(raws.len());
        for raw in raws {
            let addr = raw.at.unwrap_or(cursor);
            let end = addr.checked_add(raw.size).filter(|&e| e <= word_mask(self.n) + 1);
            let Some(end) = end else {
                return err(raw.line, ParseErrorKind::OutOfRange(format!("code address {addr:#x}")));
            };
            cursor = end;
            let op = match raw.op {
                PendingOp::Ready(op) => op,
                PendingOp::Jump(opc, name) => {
                    let Some(&target) = labels.get(&name) else {
                        return err(raw.line, ParseErrorKind::UnresolvedTarget(name));
                    };
                    match opc {
                        Opcode::Jmp => Op::Jmp { target },
                        Opcode::Jz => Op::Jz { target },
                        _ => Op::Jnz { target },
                    }
                }
            };
            instrs.push(Instr { op, addr, size: raw.size, line: raw.line });
        }
        let mut order: Vec<&Instr> = instrs.iter().collect();
        order.sort_by_key(|i| i.addr);
        for w in order.windows(2) {
            if w[0].addr + w[0].size > w[1].addr {
                return err(w[1].line.max(w[0].line), ParseErrorKind::Overlap { first: w[0].addr, second: w[1].addr });
            }
        }
        Ok(instrs)
    }

    fn imm(&self, line: usize, tok: &str) -> Result<u64, ParseError> {
        let v = match parse_number(tok) {
            Ok(v) => v,
            Err(_) => return syntax(line, format!("expected a number, found `{tok}`")),
        };
        let m = word_mask(self.n);
        if v >= 0 {
            if v as u64 > m {
                return err(line, ParseErrorKind::OutOfRange(tok.to_string()));
            }
            Ok(v as u64)
        } else {
            if v.unsigned_abs() > m / 2 + 1 {
                return err(line, ParseErrorKind::OutOfRange(tok.to_string()));
            }
            Ok((v as u64) & m)
        }
    }

    fn operand(&self, line: usize, tok: &str) -> Result<Operand, ParseError> {
        match parse_register(tok) {
            Some(r) => Ok(Operand::Reg(r)),
            None => Ok(Operand::Imm(self.imm(line, tok)?)),
        }
    }

    fn mem(&self, line: usize, tok: &str) -> Result<MemOperand, ParseError> {
        let inner = tok.strip_prefix('[').and_then(|t| t.strip_suffix(']')).map(str::trim);
        let Some(inner) = inner else {
            return syntax(line, format!("expected `[reg+disp]`, found `{tok}`"));
        };
        let (reg, disp) = match inner.find(['+', '-']) {
            Some(i) => {
                let d = inner[i + 1..].trim();
                let d = match parse_number(d) {
                    Ok(d) if d >= 0 => d,
                    _ => return syntax(line, format!("bad displacement in `{tok}`")),
                };
                let d = if &inner[i..=i] == "-" { -d } else { d };
                (inner[..i].trim(), d)
            }
            None => (inner, 0),
        };
        let Some(base) = parse_register(reg) else {
            return syntax(line, format!("expected a base register in `{tok}`"));
        };
        if disp.unsigned_abs() > word_mask(self.n) {
            return err(line, ParseErrorKind::OutOfRange(tok.to_string()));
        }
        Ok(MemOperand { base, disp })
    }

    fn reg(&self, line: usize, tok: &str) -> Result<Register, ParseError> {
        parse_register(tok).map_or_else(|| syntax(line, format!("expected a register, found `{tok}`")), Ok)
    }

    fn instr(&self, line: usize, text: &str) -> Result<RawInstr, ParseError> {
        let mut at = None;
        let mut size = DEFAULT_INSTR_SIZE;
        let mut rest = text;
        loop {
            let (tok, tail) = split_word(rest);
            if let Some(a) = tok.strip_prefix('@') {
                match parse_number(a) {
                    Ok(v) if v >= 0 => at = Some(v as u64),
                    _ => return syntax(line, format!("bad address annotation `{tok}`")),
                }
            } else if let Some(s) = tok.strip_prefix("size=") {
                match parse_number(s) {
                    Ok(v) if v > 0 => size = v as u64,
                    _ => return syntax(line, format!("bad size annotation `{tok}`")),
                }
            } else {
                break;
            }
            rest = tail;
        }
        let (mnemonic, args) = split_word(rest);
        let Some(opcode) = Opcode::from_mnemonic(mnemonic) else {
            return syntax(line, format!("unknown opcode `{mnemonic}`"));
        };
        let args: Vec<&str> =
            if args.trim().is_empty() { Vec::new() } else { args.split(',').map(str::trim).collect() };
        let arity = match opcode {
            Opcode::Halt => 0,
            Opcode::Jmp | Opcode::Jz | Opcode::Jnz => 1,
            _ => 2,
        };
        if args.len() != arity {
            return syntax(line, format!("{} takes {arity} operand(s)", opcode.mnemonic()));
        }
        let op = match opcode {
            Opcode::Mov => Op::Mov { dst: self.reg(line, args[0])?, src: self.operand(line, args[1])? },
            Opcode::And | Opcode::Or | Opcode::Xor | Opcode::Add | Opcode::Sub => {
                let op = match opcode {
                    Opcode::And => AluOp::And,
                    Opcode::Or => AluOp::Or,
                    Opcode::Xor => AluOp::Xor,
                    Opcode::Add => AluOp::Add,
                    _ => AluOp::Sub,
                };
                Op::Alu { op, dst: self.reg(line, args[0])?, src: self.operand(line, args[1])? }
            }
            Opcode::Mul | Opcode::Shl => {
                let dst = self.reg(line, args[0])?;
                if parse_register(args[1]).is_some() {
                    return syntax(line, format!("{} needs an immediate operand", opcode.mnemonic()));
                }
                let imm = self.imm(line, args[1])?;
                if opcode == Opcode::Mul {
                    Op::Mul { dst, imm }
                } else {
                    Op::Shl { dst, imm }
                }
            }
            Opcode::Cmp => Op::Cmp { lhs: self.reg(line, args[0])?, rhs: self.operand(line, args[1])? },
            Opcode::Load => Op::Load { dst: self.reg(line, args[0])?, mem: self.mem(line, args[1])? },
            Opcode::Store => Op::Store { mem: self.mem(line, args[0])?, src: self.operand(line, args[1])? },
            Opcode::Malloc => {
                let dst = self.reg(line, args[0])?;
                let size = self.imm(line, args[1])?;
                if size == 0 {
                    return syntax(line, "MALLOC size must be positive");
                }
                Op::Malloc { dst, size }
            }
            Opcode::Jmp | Opcode::Jz | Opcode::Jnz => {
                if !is_ident(args[0]) {
                    return syntax(line, format!("bad label `{}`", args[0]));
                }
                return Ok(RawInstr { op: PendingOp::Jump(opcode, args[0].to_string()), at, size, line });
            }
            Opcode::Halt => Op::Halt,
        };
        Ok(RawInstr { op: PendingOp::Ready(op), at, size, line })
    }

    fn value_set(&self, line: usize, text: &str) -> Result<Vec<u64>, ParseError> {
        let inner = text.trim().strip_prefix('{').and_then(|t| t.strip_suffix('}'));
        let Some(inner) = inner else {
            return syntax(line, "expected a value set `{a, b, ...}`");
        };
        let mut out = BTreeSet::new();
        for tok in inner.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            out.insert(self.imm(line, tok)?);
        }
        if out.is_empty() {
            return syntax(line, "high value set must be nonempty");
        }
        Ok(out.into_iter().collect())
    }

    fn directive(&self, line: usize, text: &str) -> Result<Option<InitDirective>, ParseError> {
        let (name, rest) = split_word(text);
        let rest = rest.trim();
        let d = match name {
            ".bitwidth" | ".base" => return Ok(None),
            ".high" => {
                let (r, set) = split_word(rest);
                InitDirective::High { reg: self.reg(line, r)?, values: self.value_set(line, set)? }
            }
            ".low" => {
                let Some((r, v)) = rest.split_once('=') else {
                    return syntax(line, "expected `.low rN = VALUE`");
                };
                InitDirective::LowConst { reg: self.reg(line, r.trim())?, value: self.imm(line, v.trim())? }
            }
            ".lowsym" => {
                let mut parts = rest.split(',').map(str::trim);
                let reg = self.reg(line, parts.next().unwrap_or(""))?;
                let size = parts.next().map(|s| self.imm(line, s)).transpose()?;
                if parts.next().is_some() {
                    return syntax(line, "expected `.lowsym rN[, SIZE]`");
                }
                InitDirective::LowSymbolic { reg, size }
            }
            ".memhigh" => {
                let Some(close) = rest.find(']') else {
                    return syntax(line, "expected `.memhigh [rN+OFF] {values}`");
                };
                let cell = self.mem(line, &rest[..=close])?;
                InitDirective::MemHigh { cell, values: self.value_set(line, &rest[close + 1..])? }
            }
            ".memlow" => {
                let Some((m, v)) = rest.split_once('=') else {
                    return syntax(line, "expected `.memlow [rN+OFF] = VALUE`");
                };
                InitDirective::MemLow { cell: self.mem(line, m.trim())?, value: self.imm(line, v.trim())? }
            }
            other => return syntax(line, format!("unknown directive `{other}`")),
        };
        Ok(Some(d))
    }
}

fn split_word(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(i) => (&s[..i], &s[i..]),
        None => (s, ""),
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_register(tok: &str) -> Option<Register> {
    let t = tok.trim();
    let digits = t.strip_prefix('r').or_else(|| t.strip_prefix('R'))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Register::new(digits.parse().ok()?)
}

/// Parse a decimal, `0x` hexadecimal or `0b` binary literal with optional sign.
pub fn parse_number(tok: &str) -> Result<i64, std::num::ParseIntError> {
    let t = tok.trim().replace('_', "");
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b.to_string()),
        None => (false, t),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16)?
    } else if let Some(b) = body.strip_prefix("0b").or_else(|| body.strip_prefix("0B")) {
        i64::from_str_radix(b, 2)?
    } else {
        body.parse::<i64>()?
    };
    Ok(if neg { -v } else { v })
}

fn check_structure(p: &Program) -> Result<(), ParseError> {
    if p.instrs.is_empty() {
        return err(0, ParseErrorKind::Structure("program has no instructions".into()));
    }
    let mut seen = vec![false; p.instrs.len()];
    let mut stack = vec![0usize];
    let mut halts = 0;
    while let Some(i) = stack.pop() {
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        let ins = &p.instrs[i];
        if ins.op == Op::Halt {
            halts += 1;
        }
        if let Some(t) = ins.target() {
            stack.push(t);
        }
        if ins.falls_through() {
            if i + 1 >= p.instrs.len() {
                return err(ins.line, ParseErrorKind::Structure("control falls off the end of the program".into()));
            }
            stack.push(i + 1);
        }
    }
    if halts != 1 {
        return err(0, ParseErrorKind::Structure(format!("expected exactly one reachable HALT, found {halts}")));
    }
    Ok(())
}

/// A maximal straight-line run of instructions `start..end`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub start: usize,
    pub end: usize,
    /// Successor block indices; fall-through first, then the jump target.
    pub succs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cfg {
    pub blocks: Vec<BasicBlock>,
    /// Block index of each instruction.
    pub block_of: Vec<usize>,
}

impl Cfg {
    /// Edges `(from, to)` whose target does not come later in program order.
    pub fn back_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (b, blk) in self.blocks.iter().enumerate() {
            for &s in &blk.succs {
                if self.blocks[s].start <= blk.start {
                    out.push((b, s));
                }
            }
        }
        out
    }

    /// Targets of back edges, sorted and deduplicated.
    pub fn loop_heads(&self) -> Vec<usize> {
        let heads: BTreeSet<usize> = self.back_edges().into_iter().map(|(_, h)| h).collect();
        heads.into_iter().collect()
    }
}

pub fn build_cfg(p: &Program) -> Cfg {
    let n = p.instrs.len();
    let mut leader = vec![false; n];
    leader[0] = true;
    for (i, ins) in p.instrs.iter().enumerate() {
        if let Some(t) = ins.target() {
            leader[t] = true;
        }
        if (ins.target().is_some() || ins.op == Op::Halt) && i + 1 < n {
            leader[i + 1] = true;
        }
    }
    let mut block_of = vec![0; n];
    let mut starts = Vec::new();
    for i in 0..n {
        if leader[i] {
            starts.push(i);
        }
        block_of[i] = starts.len() - 1;
    }
    let blocks = starts
        .iter()
        .enumerate()
        .map(|(b, &start)| {
            let end = starts.get(b + 1).copied().unwrap_or(n);
            let last = &p.instrs[end - 1];
            let mut succs = Vec::new();
            if last.falls_through() && end < n {
                succs.push(block_of[end]);
            }
            if let Some(t) = last.target() {
                if !succs.contains(&block_of[t]) {
                    succs.push(block_of[t]);
                }
            }
            BasicBlock { start, end, succs }
        })
        .collect();
    Cfg { blocks, block_of }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.opcode().mnemonic();
        match &self.op {
            Op::Mov { dst, src } | Op::Alu { dst, src, .. } => write!(f, "{m} {dst}, {src}"),
            Op::Mul { dst, imm } | Op::Shl { dst, imm } => write!(f, "{m} {dst}, {imm}"),
            Op::Cmp { lhs, rhs } => write!(f, "{m} {lhs}, {rhs}"),
            Op::Load { dst, mem } => write!(f, "{m} {dst}, {mem}"),
            Op::Store { mem, src } => write!(f, "{m} {mem}, {src}"),
            Op::Malloc { dst, size } => write!(f, "{m} {dst}, {size}"),
            Op::Jmp { target } | Op::Jz { target } | Op::Jnz { target } => write!(f, "{m} #{target}"),
            Op::Halt => write!(f, "{m}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BRANCH: &str = "\
.bitwidth 32
.high r1 {0, 1}
@0x41a90 size=7 MOV r2, r1
@0x41a97 size=2 CMP r2, 0
@0x41a99 size=2 JNZ tail
@0x41a9b size=2 MOV r4, r5
@0x41a9d size=2 MOV r5, r6
@0x41a9f size=2 MOV r6, r4
tail:
@0x41aa1 size=3 SUB r7, 1
HALT
";

    #[test]
    fn single_halt_layout() {
        let p = parse(".base 0x1000\nHALT").unwrap();
        assert_eq!(p.instrs.len(), 1);
        assert_eq!(p.instrs[0].addr, 0x1000);
        assert_eq!(p.instrs[0].size, 4);
    }

    #[test]
    fn explicit_address_is_kept() {
        let p = parse("MOV r1, 0\n@0x41aa1 SUB r1, 1\nHALT").unwrap();
        assert_eq!(p.instrs[1].addr, 0x41aa1);
        assert_eq!(p.instrs[2].addr, 0x41aa5);
    }

    #[test]
    fn unresolved_target() {
        let e = parse("JMP nowhere\nHALT").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UnresolvedTarget("nowhere".into()));
        assert_eq!(e.line, 1);
    }

    #[test]
    fn duplicate_label_and_syntax_errors() {
        let e = parse("a: MOV r1, 1\na: HALT").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::DuplicateLabel("a".into()));
        let e = parse("MOV r1, 1\nFROB r2\nHALT").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
        let e = parse("SHL r1, r2\nHALT").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
        let e = parse("LOAD r1, r2\nHALT").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(_)));
    }

    #[test]
    fn overlapping_addresses() {
        let e = parse("@0x10 MOV r1, 1\n@0x12 HALT").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Overlap { first: 0x10, second: 0x12 });
    }

    #[test]
    fn immediates_respect_bitwidth() {
        let e = parse(".bitwidth 8\nMOV r1, 256\nHALT").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::OutOfRange(_)));
        let p = parse(".bitwidth 12\nAND r1, -64\nHALT").unwrap();
        assert_eq!(p.instrs[0].op, Op::Alu { op: AluOp::And, dst: Register(1), src: Operand::Imm(0xfc0) });
        let p = parse_with_bitwidth(".bitwidth 12\nAND r1, -64\nHALT", Some(32)).unwrap();
        assert_eq!(p.bitwidth, 32);
        assert_eq!(p.instrs[0].op, Op::Alu { op: AluOp::And, dst: Register(1), src: Operand::Imm(0xffff_ffc0) });
    }

    #[test]
    fn halt_structure() {
        assert!(parse("MOV r1, 1").is_err());
        assert!(parse("HALT\nHALT").is_ok());
        assert!(parse("JMP b\na: HALT\nb: JMP a\nc: HALT").is_ok());
        assert!(parse("JZ a\nHALT\na: HALT").is_err());
    }

    #[test]
    fn directives() {
        let p = parse(
            ".high r3 {1, 0, 1}\n.low r4 = 42\n.lowsym r5\n.lowsym r6, 64\n.memhigh [r5+8] {0x11,0x22}\n.memlow [r5-4] = 7\nHALT",
        )
        .unwrap();
        let r = |i| Register::new(i).unwrap();
        assert_eq!(
            p.directives,
            vec![
                InitDirective::High { reg: r(3), values: vec![0, 1] },
                InitDirective::LowConst { reg: r(4), value: 42 },
                InitDirective::LowSymbolic { reg: r(5), size: None },
                InitDirective::LowSymbolic { reg: r(6), size: Some(64) },
                InitDirective::MemHigh { cell: MemOperand { base: r(5), disp: 8 }, values: vec![0x11, 0x22] },
                InitDirective::MemLow { cell: MemOperand { base: r(5), disp: -4 }, value: 7 },
            ]
        );
        assert!(parse(".high r3 {}\nHALT").is_err());
    }

    #[test]
    fn layout_is_deterministic_and_monotone() {
        let text = "MOV r1, 1\nsize=2 ADD r1, 1\nsize=8 SUB r1, 1\nHALT";
        let a = parse(text).unwrap();
        let b = parse(text).unwrap();
        assert_eq!(a, b);
        let addrs: Vec<u64> = a.instrs.iter().map(|i| i.addr).collect();
        assert_eq!(addrs, vec![0, 4, 6, 14]);
    }

    #[test]
    fn straight_line_cfg() {
        let p = parse("MOV r1, 1\nADD r1, 2\nHALT").unwrap();
        let cfg = build_cfg(&p);
        assert_eq!(cfg.blocks, vec![BasicBlock { start: 0, end: 3, succs: vec![] }]);
    }

    #[test]
    fn branch_cfg_is_a_diamond() {
        let p = parse(BRANCH).unwrap();
        let cfg = build_cfg(&p);
        assert_eq!(cfg.blocks.len(), 3);
        assert_eq!(cfg.blocks[0].succs, vec![1, 2]);
        assert_eq!(cfg.blocks[1].succs, vec![2]);
        assert!(cfg.blocks[2].succs.is_empty());
        assert!(cfg.back_edges().is_empty());
    }

    #[test]
    fn loop_cfg_has_one_back_edge() {
        let p = parse("MOV r1, 0\nloop: ADD r1, 1\nCMP r1, 4\nJNZ loop\nHALT").unwrap();
        let cfg = build_cfg(&p);
        assert_eq!(cfg.loop_heads(), vec![1]);
        assert_eq!(cfg.back_edges(), vec![(1, 1)]);
    }
}
