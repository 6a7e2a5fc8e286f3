//! Concrete reference semantics and exact view counting.
//!
//! A scenario fixes the low inputs (the base address of every `.lowsym`
//! region, then of every `MALLOC` in execution order) and the secrets (one
//! value per `.high`/`.memhigh` directive, in declaration order). Running a
//! program concretely yields its access trace; collecting the views over all
//! secrets gives the exact leak the analyzer must bound.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::LeakReport;
use crate::ir::{word_mask, AluOp, InitDirective, MemOperand, Op, Operand, Program, NUM_REGS};
use crate::msym::{concrete, BinOp, MSymSet, Projection, SymbolId, Valuation};
use crate::observers::{view_concrete, AccessKind, Observer};
use crate::tracedag::{TraceDag, TraceError, VertexId};

/// Default bound on executed instructions.
pub const STEP_BUDGET: u64 = 1_000_000;

/// Default number of sampled valuations when enumeration is too large.
pub const DEFAULT_SAMPLES: usize = 50;

/// Low-input bits up to which valuations are enumerated exhaustively.
pub const EXHAUSTIVE_BITS: u32 = 16;

/// Size assumed for a `.lowsym` region declared without one.
pub const DEFAULT_REGION: u64 = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("step budget of {0} instructions exceeded")]
    Budget(u64),
    #[error("line {line}: access to {addr:#x} outside every region")]
    OutOfBounds { line: usize, addr: u64 },
    #[error("scenario provides {have} region bases but the run needs more")]
    MissingBase { have: usize },
    #[error("scenario provides {have} secret values, program declares {want}")]
    HighArity { have: usize, want: usize },
    #[error("no non-overlapping placement of regions exists")]
    NoPlacement,
}

/// One access-trace event.
pub type Event = (AccessKind, u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcreteState {
    pub regs: [u64; NUM_REGS],
    /// Word cells keyed by address; unwritten cells read as zero.
    pub mem: BTreeMap<u64, u64>,
    pub zf: bool,
    pub cf: bool,
    pub trace: Vec<Event>,
    /// `(base, size)` of every region in allocation order.
    pub regions: Vec<(u64, u64)>,
}

impl ConcreteState {
    fn in_bounds(&self, addr: u64) -> bool {
        self.regions.iter().any(|&(b, s)| addr >= b && addr - b < s)
    }
}

/// Runs `p` with region bases `bases` and secrets `high`.
pub fn run_concrete(p: &Program, bases: &[u64], high: &[u64]) -> Result<ConcreteState, OracleError> {
    run_with_budget(p, bases, high, STEP_BUDGET)
}

pub fn run_with_budget(p: &Program, bases: &[u64], high: &[u64], budget: u64) -> Result<ConcreteState, OracleError> {
    Machine::new(p, bases.to_vec(), budget).run(high)
}

struct Machine<'a> {
    p: &'a Program,
    bases: Vec<u64>,
    budget: u64,
    /// Hand out `bases` when `false`, or bump-allocate to discover sizes.
    dry: bool,
    st: ConcreteState,
    /// Cells named by directives, always accessible.
    declared: BTreeSet<u64>,
}

impl<'a> Machine<'a> {
    fn new(p: &'a Program, bases: Vec<u64>, budget: u64) -> Self {
        Machine {
            p,
            bases,
            budget,
            dry: false,
            st: ConcreteState {
                regs: [0; NUM_REGS],
                mem: BTreeMap::new(),
                zf: false,
                cf: false,
                trace: Vec::new(),
                regions: Vec::new(),
            },
            declared: BTreeSet::new(),
        }
    }

    fn m(&self) -> u64 {
        self.p.word_mask()
    }

    fn region(&mut self, size: u64) -> Result<u64, OracleError> {
        let k = self.st.regions.len();
        let base = if self.dry {
            self.st.regions.last().map_or(0, |&(b, s)| b + s.max(1))
        } else {
            *self.bases.get(k).ok_or(OracleError::MissingBase { have: self.bases.len() })?
        };
        self.st.regions.push((base, size));
        Ok(base)
    }

    fn cell(&self, m: &MemOperand) -> u64 {
        self.st.regs[m.base.index()].wrapping_add(m.disp as u64) & self.m()
    }

    fn operand(&self, o: &Operand) -> u64 {
        match *o {
            Operand::Reg(r) => self.st.regs[r.index()],
            Operand::Imm(v) => v,
        }
    }

    fn run(mut self, high: &[u64]) -> Result<ConcreteState, OracleError> {
        let want = self.p.high_sets().len();
        if high.len() != want {
            return Err(OracleError::HighArity { have: high.len(), want });
        }
        let mut secrets = high.iter().copied();
        for d in &self.p.directives {
            match d {
                InitDirective::High { reg, .. } => self.st.regs[reg.index()] = secrets.next().unwrap(),
                InitDirective::LowConst { reg, value } => self.st.regs[reg.index()] = *value,
                InitDirective::LowSymbolic { reg, size } => {
                    self.st.regs[reg.index()] = self.region(size.unwrap_or(DEFAULT_REGION))?;
                }
                InitDirective::MemHigh { cell, .. } => {
                    let a = self.cell(cell);
                    self.declared.insert(a);
                    self.st.mem.insert(a, secrets.next().unwrap());
                }
                InitDirective::MemLow { cell, value } => {
                    let a = self.cell(cell);
                    self.declared.insert(a);
                    self.st.mem.insert(a, *value);
                }
            }
        }
        let n = self.p.bitwidth;
        let mut pc = 0;
        let mut steps = 0u64;
        loop {
            steps += 1;
            if steps > self.budget {
                return Err(OracleError::Budget(self.budget));
            }
            let ins = &self.p.instrs[pc];
            self.st.trace.push((AccessKind::Instruction, ins.addr));
            let mut next = pc + 1;
            match &ins.op {
                Op::Mov { dst, src } => self.st.regs[dst.index()] = self.operand(src),
                Op::Alu { op, dst, src } => {
                    let op = match op {
                        AluOp::And => BinOp::And,
                        AluOp::Or => BinOp::Or,
                        AluOp::Xor => BinOp::Xor,
                        AluOp::Add => BinOp::Add,
                        AluOp::Sub => BinOp::Sub,
                    };
                    let y = self.operand(src);
                    self.alu(op, dst.index(), y, n);
                }
                Op::Mul { dst, imm } => self.alu(BinOp::Mul, dst.index(), *imm, n),
                Op::Shl { dst, imm } => self.alu(BinOp::Shl, dst.index(), *imm, n),
                Op::Cmp { lhs, rhs } => {
                    let (_, zf, cf) = concrete(BinOp::Sub, self.st.regs[lhs.index()], self.operand(rhs), n);
                    self.st.zf = zf;
                    self.st.cf = cf;
                }
                Op::Load { dst, mem } => {
                    let a = self.access(mem, ins.line)?;
                    self.st.regs[dst.index()] = self.st.mem.get(&a).copied().unwrap_or(0);
                }
                Op::Store { mem, src } => {
                    let a = self.access(mem, ins.line)?;
                    let v = self.operand(src);
                    self.st.mem.insert(a, v);
                }
                Op::Malloc { dst, size } => self.st.regs[dst.index()] = self.region(*size)?,
                Op::Jmp { target } => next = *target,
                Op::Jz { target } => {
                    if self.st.zf {
                        next = *target;
                    }
                }
                Op::Jnz { target } => {
                    if !self.st.zf {
                        next = *target;
                    }
                }
                Op::Halt => return Ok(self.st),
            }
            pc = next;
        }
    }

    fn alu(&mut self, op: BinOp, dst: usize, y: u64, n: u32) {
        let (r, zf, cf) = concrete(op, self.st.regs[dst], y, n);
        self.st.regs[dst] = r;
        self.st.zf = zf;
        self.st.cf = cf;
    }

    fn access(&mut self, m: &MemOperand, line: usize) -> Result<u64, OracleError> {
        let a = self.cell(m);
        self.st.trace.push((AccessKind::Data, a));
        if self.dry || self.declared.contains(&a) || self.st.in_bounds(a) {
            Ok(a)
        } else {
            Err(OracleError::OutOfBounds { line, addr: a })
        }
    }
}

/// Sizes of the regions a run allocates, found by running with the first
/// secret assignment and placeholder bases.
pub fn region_sizes(p: &Program) -> Result<Vec<u64>, OracleError> {
    let high: Vec<u64> = p.high_sets().iter().map(|s| s[0]).collect();
    let mut m = Machine::new(p, Vec::new(), STEP_BUDGET);
    m.dry = true;
    Ok(m.run(&high)?.regions.into_iter().map(|(_, s)| s).collect())
}

/// Cross product of the declared secret sets.
pub fn high_assignments(p: &Program) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for set in p.high_sets() {
        out = out
            .into_iter()
            .flat_map(|pre| {
                set.iter().map(move |&v| {
                    let mut a = pre.clone();
                    a.push(v);
                    a
                })
            })
            .collect();
    }
    out
}

/// Valuation giving the `k`-th low-input symbol the `k`-th base, matching
/// the analyzer's allocation order on straight-line code.
pub fn valuation_of(bases: &[u64]) -> Valuation {
    bases.iter().enumerate().map(|(k, &b)| (SymbolId::from_raw(k as u32 + 1, true), b)).collect()
}

fn fits(n: u32, base: u64, size: u64) -> bool {
    base.checked_add(size).is_some_and(|end| end <= word_mask(n) + 1)
}

fn disjoint(placed: &[(u64, u64)], base: u64, size: u64) -> bool {
    placed.iter().all(|&(b, s)| base + size <= b || b + s <= base)
}

/// Candidate region bases: every non-overlapping in-range placement when
/// the regions have at most [`EXHAUSTIVE_BITS`] bits of freedom, otherwise
/// `samples` stratified placements drawn from `seed`. Strata cycle through
/// bases that are 64-byte aligned, at offset 63, at offset 1, at offset 32,
/// and uniform.
pub fn valuations(n: u32, sizes: &[u64], samples: usize, seed: u64) -> Result<Vec<Vec<u64>>, OracleError> {
    if sizes.is_empty() {
        return Ok(vec![Vec::new()]);
    }
    if sizes.len() as u32 * n <= EXHAUSTIVE_BITS {
        let mut out = Vec::new();
        enumerate(n, sizes, &mut Vec::new(), &mut out);
        return if out.is_empty() { Err(OracleError::NoPlacement) } else { Ok(out) };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = word_mask(n);
    let mut out = Vec::with_capacity(samples);
    let mut attempts = 0usize;
    while out.len() < samples {
        attempts += 1;
        if attempts > samples * 1000 {
            return Err(OracleError::NoPlacement);
        }
        let stratum = out.len() % 5;
        let mut placed: Vec<(u64, u64)> = Vec::new();
        for &size in sizes {
            let mut ok = false;
            for _ in 0..64 {
                let raw = rng.gen::<u64>() & space;
                let base = match stratum {
                    0 => raw & !63,
                    1 => (raw & !63) | 63,
                    2 => (raw & !63) | 1,
                    3 => (raw & !63) | 32,
                    _ => raw,
                } & space;
                if fits(n, base, size) && disjoint(&placed, base, size) {
                    placed.push((base, size));
                    ok = true;
                    break;
                }
            }
            if !ok {
                break;
            }
        }
        if placed.len() == sizes.len() {
            out.push(placed.into_iter().map(|(b, _)| b).collect());
        }
    }
    Ok(out)
}

fn enumerate(n: u32, sizes: &[u64], placed: &mut Vec<(u64, u64)>, out: &mut Vec<Vec<u64>>) {
    let Some(&size) = sizes.get(placed.len()) else {
        out.push(placed.iter().map(|&(b, _)| b).collect());
        return;
    };
    for base in 0..=word_mask(n) {
        if fits(n, base, size) && disjoint(placed, base, size) {
            placed.push((base, size));
            enumerate(n, sizes, placed, out);
            placed.pop();
        }
    }
}

/// Distinct views of `obs` over all secret assignments under `bases`.
pub fn views(p: &Program, obs: &Observer, bases: &[u64]) -> Result<BTreeMap<Vec<u64>, Vec<u64>>, OracleError> {
    let mut out = BTreeMap::new();
    for h in high_assignments(p) {
        let st = run_concrete(p, bases, &h)?;
        out.entry(view_concrete(&st.trace, obs)).or_insert(h);
    }
    Ok(out)
}

/// `|{view(run(p, λ, h)) : h}|`.
pub fn exact_view_count(p: &Program, obs: &Observer, bases: &[u64]) -> Result<usize, OracleError> {
    Ok(views(p, obs, bases)?.len())
}

/// A replayable counterexample to a reported bound.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub observer: String,
    pub bound: String,
    pub exact: usize,
    /// Region bases.
    pub lambda: Vec<u64>,
    /// Secret assignments producing pairwise distinct views.
    pub highs: Vec<Vec<u64>>,
    pub views: Vec<Vec<u64>>,
}

/// Largest exact view count seen for one observer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObserverCheck {
    pub observer: String,
    pub bound: String,
    pub max_exact: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub valuations: usize,
    pub assignments: usize,
    pub observers: Vec<ObserverCheck>,
    pub violations: Vec<Witness>,
}

impl Verdict {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Most witnesses kept per violation.
const WITNESS_VIEWS: usize = 16;

/// Compares every observer's exact view count against `report` for every
/// valuation in `lambdas`.
pub fn check_bound(
    p: &Program,
    observers: &[Observer],
    report: &LeakReport,
    lambdas: &[Vec<u64>],
) -> Result<Verdict, OracleError> {
    let highs = high_assignments(p);
    let mut checks: Vec<ObserverCheck> = observers
        .iter()
        .map(|o| ObserverCheck {
            observer: o.name.clone(),
            bound: report.get(&o.name).map_or_else(|| "?".into(), |r| r.count.to_string()),
            max_exact: 0,
        })
        .collect();
    let mut violations = Vec::new();
    for bases in lambdas {
        let traces: Vec<(Vec<u64>, Vec<Event>)> = highs
            .iter()
            .map(|h| run_concrete(p, bases, h).map(|st| (h.clone(), st.trace)))
            .collect::<Result<_, _>>()?;
        for (o, check) in observers.iter().zip(checks.iter_mut()) {
            let mut seen: BTreeMap<Vec<u64>, Vec<u64>> = BTreeMap::new();
            for (h, t) in &traces {
                seen.entry(view_concrete(t, o)).or_insert_with(|| h.clone());
            }
            check.max_exact = check.max_exact.max(seen.len());
            let Some(bound) = report.get(&o.name).map(|r| &r.count) else { continue };
            if BigUint::from(seen.len()) > *bound {
                let kept: Vec<_> = seen.into_iter().take(WITNESS_VIEWS).collect();
                violations.push(Witness {
                    observer: o.name.clone(),
                    bound: bound.to_string(),
                    exact: check.max_exact,
                    lambda: bases.clone(),
                    highs: kept.iter().map(|(_, h)| h.clone()).collect(),
                    views: kept.into_iter().map(|(v, _)| v).collect(),
                });
            }
        }
    }
    Ok(Verdict { valuations: lambdas.len(), assignments: highs.len(), observers: checks, violations })
}

/// Re-runs a witness; returns the views it produces now.
pub fn replay(p: &Program, obs: &Observer, w: &Witness) -> Result<Vec<Vec<u64>>, OracleError> {
    w.highs.iter().map(|h| Ok(view_concrete(&run_concrete(p, &w.lambda, h)?.trace, obs))).collect()
}

/// Counting bound for one set and one valuation: `|π(γ_λ(x))| ≤ |π(x)|`.
pub fn projection_bound_holds(x: &MSymSet, p: Projection, lambda: &Valuation) -> bool {
    let Ok(vals) = crate::msym::concretize(x, lambda) else { return x.is_top() };
    let units: BTreeSet<u64> = vals.into_iter().map(|v| p.apply(v)).collect();
    (units.len() as u64) <= crate::msym::count_obs(x, p)
}

/// Path-weighted product sum by explicit enumeration of root-to-`v` paths.
pub fn brute_force_count(dag: &TraceDag, v: VertexId, stuttering: bool) -> BigUint {
    let x = dag.vertex(v);
    if x.parents.is_empty() {
        return BigUint::from(1u32);
    }
    let reps = if stuttering { BigUint::from(1u32) } else { BigUint::from(x.reps.card()) };
    let own = reps * x.label.card();
    x.parents.iter().map(|&u| &own * brute_force_count(dag, u, stuttering)).sum()
}

/// Counting bound for one DAG vertex and one valuation, with the view
/// stuttered when `stuttering`.
pub fn dag_bound_holds(
    dag: &TraceDag,
    v: VertexId,
    lambda: &Valuation,
    stuttering: bool,
    limit: usize,
) -> Result<bool, TraceError> {
    let traces = dag.concretize_traces(v, lambda, limit)?;
    let views: BTreeSet<Vec<u64>> =
        if stuttering { traces.iter().map(|t| crate::observers::stutter(t)).collect() } else { traces };
    Ok(BigUint::from(views.len()) <= dag.count(v, stuttering))
}
