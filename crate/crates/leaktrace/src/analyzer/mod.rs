//! Abstract interpretation of IR programs over masked symbols, with one
//! trace DAG per observer.
//!
//! Control flow is explored path-sensitively with bounded unrolling. States
//! that reach the same instruction with the same loop-iteration context are
//! joined; states reaching `HALT` are joined at the end and each observer's
//! DAG is counted.

mod report;
mod state;

use std::collections::BTreeMap;

use num_bigint::BigUint;
use thiserror::Error;

pub use report::{LeakReport, ObserverReport, Status};
pub use state::{AbstractState, MemKey};

use crate::ir::{AluOp, InitDirective, Instr, MemOperand, Op, Operand, Program};
use crate::msym::{
    lift2, project, BinOp, FlagTrits, MSymSet, Mask, MaskedSymbol, OffsetTable, OpCtx, SymbolAllocator, Trit,
};
use crate::observers::{AccessKind, Observer, ObserverError};
use crate::tracedag::{bits, Frontier, Label, TraceDag};
use state::Shared;

/// Default bound on loop iterations per path.
pub const DEFAULT_UNROLL: u32 = 4096;

/// Where `MALLOC` results may lie.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MallocAlign {
    /// Any address: `T^n`.
    #[default]
    Any,
    /// 64-byte aligned: `T^(n-6) 0^6`.
    Line,
}

#[derive(Clone, Debug)]
pub struct AnalysisConfig {
    pub observers: Vec<Observer>,
    pub bitwidth: u32,
    pub cap: usize,
    pub unroll: u32,
    pub malloc_align: MallocAlign,
}

impl AnalysisConfig {
    pub fn new(bitwidth: u32, observers: Vec<Observer>) -> AnalysisConfig {
        AnalysisConfig {
            observers,
            bitwidth,
            cap: crate::msym::DEFAULT_CAP,
            unroll: DEFAULT_UNROLL,
            malloc_align: MallocAlign::Any,
        }
    }

    pub fn with_observers(bitwidth: u32, specs: &[&str]) -> Result<AnalysisConfig, ObserverError> {
        let obs = specs.iter().map(|s| Observer::parse(s, bitwidth)).collect::<Result<_, _>>()?;
        Ok(AnalysisConfig::new(bitwidth, obs))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("line {line}: store through an unbounded address")]
    UnboundedStore { line: usize },
    #[error("line {line}: access at offset {off:#x} outside an allocation of {size} bytes")]
    OutOfBounds { line: usize, off: u64, size: u64 },
    #[error("directive cell base must be a single known pointer")]
    BadDirective,
    #[error("program is {program}-bit but the configuration is {config}-bit")]
    BitwidthMismatch { program: u32, config: u32 },
    #[error("configuration needs at least one observer and an unroll limit of at least 1")]
    BadConfig,
}

/// A finished analysis: the report plus the DAGs it was counted on.
pub struct Analysis {
    pub report: LeakReport,
    pub dags: Vec<TraceDag>,
    pub finals: Vec<Frontier>,
}

impl Analysis {
    /// DOT rendering of the part of observer `i`'s DAG that reaches the end.
    pub fn dot(&self, i: usize) -> String {
        self.dags[i].to_dot_at(&self.finals[i])
    }
}

/// Analyzes `p` and reports a bound per observer.
pub fn run(p: &Program, cfg: &AnalysisConfig) -> Result<LeakReport, AnalysisError> {
    analyze(p, cfg).map(|a| a.report)
}

/// Worklist key: total back edges taken, instruction index, per-loop
/// iteration counts. Every step strictly increases the key, so popping the
/// least key guarantees all states meeting at a point are joined first.
type Key = (u32, usize, BTreeMap<usize, u32>);

pub fn analyze(p: &Program, cfg: &AnalysisConfig) -> Result<Analysis, AnalysisError> {
    if p.bitwidth != cfg.bitwidth {
        return Err(AnalysisError::BitwidthMismatch { program: p.bitwidth, config: cfg.bitwidth });
    }
    if cfg.observers.is_empty() || cfg.unroll == 0 {
        return Err(AnalysisError::BadConfig);
    }
    let mut run = Runner {
        p,
        cfg,
        sh: Shared {
            n: p.bitwidth,
            cap: cfg.cap,
            alloc: SymbolAllocator::new(),
            tbl: OffsetTable::new(),
            dags: cfg.observers.iter().map(|_| TraceDag::new()).collect(),
            initial: BTreeMap::new(),
        },
        sizes: BTreeMap::new(),
        unroll_hit: false,
    };
    let init = run.initial_state()?;
    let mut work: BTreeMap<Key, AbstractState> = BTreeMap::new();
    work.insert((0, 0, BTreeMap::new()), init);
    let mut done: Option<AbstractState> = None;
    while let Some(((total, pc, ctx), st)) = work.pop_first() {
        for (next, st) in run.step(pc, st)? {
            let Some(next) = next else {
                done = Some(match done {
                    Some(d) => d.join(&st, &mut run.sh),
                    None => st,
                });
                continue;
            };
            let mut key = (total, next, ctx.clone());
            if next <= pc {
                let c = key.2.entry(next).or_insert(0);
                *c += 1;
                if *c > cfg.unroll {
                    run.unroll_hit = true;
                    continue;
                }
                key.0 += 1;
            }
            let joined = match work.remove(&key) {
                Some(old) => old.join(&st, &mut run.sh),
                None => st,
            };
            work.insert(key, joined);
        }
    }
    Ok(run.finish(done))
}

struct Runner<'a> {
    p: &'a Program,
    cfg: &'a AnalysisConfig,
    sh: Shared,
    sizes: BTreeMap<MaskedSymbol, u64>,
    unroll_hit: bool,
}

impl Runner<'_> {
    fn n(&self) -> u32 {
        self.p.bitwidth
    }

    fn ctx(&mut self) -> OpCtx<'_> {
        OpCtx { alloc: &mut self.sh.alloc, tbl: &mut self.sh.tbl, cap: self.cfg.cap }
    }

    fn initial_state(&mut self) -> Result<AbstractState, AnalysisError> {
        let mut st = AbstractState::initial(&mut self.sh);
        let n = self.n();
        for d in &self.p.directives {
            match d {
                InitDirective::High { reg, values } => {
                    st.regs[reg.index()] = MSymSet::constants(n, values.iter().copied(), self.cfg.cap);
                }
                InitDirective::LowConst { reg, value } => st.regs[reg.index()] = MSymSet::constant(n, *value),
                InitDirective::LowSymbolic { reg, size } => {
                    let x = self.new_region(size.unwrap_or(0), MallocAlign::Any);
                    st.regs[reg.index()] = MSymSet::singleton(x);
                }
                InitDirective::MemHigh { cell, values } => {
                    let key = self.directive_key(&st, cell)?;
                    st.mem.insert(key, MSymSet::constants(n, values.iter().copied(), self.cfg.cap));
                }
                InitDirective::MemLow { cell, value } => {
                    let key = self.directive_key(&st, cell)?;
                    st.mem.insert(key, MSymSet::constant(n, *value));
                }
            }
        }
        Ok(st)
    }

    fn directive_key(&mut self, st: &AbstractState, cell: &MemOperand) -> Result<MemKey, AnalysisError> {
        let addrs = self.address(st, cell);
        let x = addrs.as_singleton().ok_or(AnalysisError::BadDirective)?;
        Ok(MemKey::of(x, &self.sh.tbl))
    }

    /// A fresh low-input base, registered as its own origin. Size 0 means
    /// unknown.
    fn new_region(&mut self, size: u64, align: MallocAlign) -> MaskedSymbol {
        let n = self.n();
        let s = self.sh.alloc.fresh(true);
        let mask = match align {
            MallocAlign::Any => Mask::top(n),
            MallocAlign::Line => {
                let low = 6.min(n);
                Mask::from_parts(n, crate::ir::word_mask(low), 0)
            }
        };
        let x = MaskedSymbol::new(s, mask);
        self.sh.tbl.register(&x);
        if size > 0 {
            self.sizes.insert(x, size);
        }
        x
    }

    fn operand(&self, st: &AbstractState, o: &Operand) -> MSymSet {
        match o {
            Operand::Reg(r) => st.regs[r.index()].clone(),
            Operand::Imm(v) => MSymSet::constant(self.n(), *v),
        }
    }

    fn address(&mut self, st: &AbstractState, m: &MemOperand) -> MSymSet {
        let n = self.n();
        let disp = MSymSet::constant(n, (m.disp as u64) & crate::ir::word_mask(n));
        let base = st.regs[m.base.index()].clone();
        lift2(BinOp::Add, &base, &disp, &mut self.ctx()).0
    }

    fn keys(&self, addrs: &MSymSet, line: usize) -> Result<Vec<MemKey>, AnalysisError> {
        let Some(elems) = addrs.elems() else { return Ok(Vec::new()) };
        let mut out = Vec::with_capacity(elems.len());
        for x in elems {
            let key = MemKey::of(x, &self.sh.tbl);
            if let MemKey::Symbolic(origin, off) = key {
                if let Some(&size) = self.sizes.get(&origin) {
                    if off >= size {
                        return Err(AnalysisError::OutOfBounds { line, off, size });
                    }
                }
            }
            out.push(key);
        }
        Ok(out)
    }

    fn emit(&mut self, st: &mut AbstractState, kind: AccessKind, addrs: &MSymSet) {
        for (i, o) in self.cfg.observers.iter().enumerate() {
            if o.kind.sees(kind) {
                let label = project(addrs, o.proj);
                st.frontiers[i] = self.sh.dags[i].update(&st.frontiers[i], label);
            }
        }
    }

    /// Executes instruction `pc`. Successors are `Some(index)`, or `None`
    /// for a state that halted.
    fn step(&mut self, pc: usize, mut st: AbstractState) -> Result<Vec<(Option<usize>, AbstractState)>, AnalysisError> {
        let p = self.p;
        let ins: &Instr = &p.instrs[pc];
        let n = self.n();
        self.emit(&mut st, AccessKind::Instruction, &MSymSet::constant(n, ins.addr));
        let next = Some(pc + 1);
        match &ins.op {
            Op::Mov { dst, src } => st.regs[dst.index()] = self.operand(&st, src),
            Op::Alu { op, dst, src } => {
                let op = match op {
                    AluOp::And => BinOp::And,
                    AluOp::Or => BinOp::Or,
                    AluOp::Xor => BinOp::Xor,
                    AluOp::Add => BinOp::Add,
                    AluOp::Sub => BinOp::Sub,
                };
                let y = self.operand(&st, src);
                self.alu(&mut st, op, dst.index(), &y);
            }
            Op::Mul { dst, imm } => self.alu(&mut st, BinOp::Mul, dst.index(), &MSymSet::constant(n, *imm)),
            Op::Shl { dst, imm } => self.alu(&mut st, BinOp::Shl, dst.index(), &MSymSet::constant(n, *imm)),
            Op::Cmp { lhs, rhs } => {
                let y = self.operand(&st, rhs);
                let x = st.regs[lhs.index()].clone();
                st.flags = lift2(BinOp::Sub, &x, &y, &mut self.ctx()).1;
            }
            Op::Load { dst, mem } => {
                let addrs = self.address(&st, mem);
                self.emit(&mut st, AccessKind::Data, &addrs);
                st.regs[dst.index()] = if addrs.is_top() {
                    MSymSet::Top
                } else {
                    let mut v: Option<MSymSet> = None;
                    for k in self.keys(&addrs, ins.line)? {
                        let c = st.read(k, &mut self.sh);
                        v = Some(match v {
                            Some(v) => v.union(&c, self.cfg.cap),
                            None => c,
                        });
                    }
                    v.expect("address sets are nonempty")
                };
            }
            Op::Store { mem, src } => {
                let addrs = self.address(&st, mem);
                self.emit(&mut st, AccessKind::Data, &addrs);
                if addrs.is_top() {
                    return Err(AnalysisError::UnboundedStore { line: ins.line });
                }
                let v = self.operand(&st, src);
                let keys = self.keys(&addrs, ins.line)?;
                if let [k] = keys[..] {
                    st.mem.insert(k, v);
                } else {
                    for k in keys {
                        let old = st.read(k, &mut self.sh);
                        st.mem.insert(k, old.union(&v, self.cfg.cap));
                    }
                }
            }
            Op::Malloc { dst, size } => {
                let x = self.new_region(*size, self.cfg.malloc_align);
                st.regs[dst.index()] = MSymSet::singleton(x);
            }
            Op::Jmp { target } => return Ok(vec![(Some(*target), st)]),
            Op::Jz { target } | Op::Jnz { target } => {
                let taken_when = if matches!(ins.op, Op::Jz { .. }) { Trit::One } else { Trit::Zero };
                return Ok(match st.flags.zf {
                    Trit::T => vec![(Some(*target), st.clone()), (next, st)],
                    zf if zf == taken_when => vec![(Some(*target), st)],
                    _ => vec![(next, st)],
                });
            }
            Op::Halt => return Ok(vec![(None, st)]),
        }
        Ok(vec![(next, st)])
    }

    fn alu(&mut self, st: &mut AbstractState, op: BinOp, dst: usize, y: &MSymSet) {
        let x = st.regs[dst].clone();
        let (r, f): (MSymSet, FlagTrits) = lift2(op, &x, y, &mut self.ctx());
        st.regs[dst] = r;
        st.flags = f;
    }

    fn finish(mut self, done: Option<AbstractState>) -> Analysis {
        let finals: Vec<Frontier> = match &done {
            Some(st) => st.frontiers.clone(),
            None => self.sh.dags.iter().map(TraceDag::root_frontier).collect(),
        };
        let mut observers = Vec::new();
        for (i, o) in self.cfg.observers.iter().enumerate() {
            let dag = &mut self.sh.dags[i];
            let count: BigUint = dag.count_frontier(&finals[i], o.stuttering);
            let anc = dag.ancestors(&finals[i].vertices());
            let widened = anc.iter().any(|&v| matches!(&dag.vertex(v).label, Label::Obs(s) if s.is_top()));
            let status = if self.unroll_hit {
                Status::UnrollLimit
            } else if widened {
                Status::TopWidened
            } else {
                Status::Ok
            };
            let summary = dag.summary(&finals[i]);
            observers.push(ObserverReport {
                observer: o.name.clone(),
                bits: bits(&count),
                count,
                vertices: summary.vertices,
                edges: summary.edges,
                status,
            });
        }
        let report = LeakReport { bitwidth: self.p.bitwidth, observers };
        Analysis { report, dags: self.sh.dags, finals }
    }
}
