use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ir::NUM_REGS;
use crate::msym::{FlagTrits, MSymSet, MaskedSymbol, OffsetTable, SymbolAllocator};
use crate::tracedag::{Frontier, TraceDag};

/// Memory cell: a fixed address, or an offset from a symbolic origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemKey {
    Concrete(u64),
    Symbolic(MaskedSymbol, u64),
}

impl MemKey {
    pub fn of(x: &MaskedSymbol, tbl: &OffsetTable) -> MemKey {
        match x.value() {
            Some(v) => MemKey::Concrete(v),
            None => MemKey::Symbolic(tbl.orig(x), tbl.off(x)),
        }
    }
}

/// Run-wide mutable context shared by all states.
pub(crate) struct Shared {
    pub n: u32,
    pub cap: usize,
    pub alloc: SymbolAllocator,
    pub tbl: OffsetTable,
    pub dags: Vec<TraceDag>,
    /// Unknown initial content of memory cells nobody has written.
    pub initial: BTreeMap<MemKey, MaskedSymbol>,
}

impl Shared {
    pub fn initial_value(&mut self, key: MemKey) -> MSymSet {
        let n = self.n;
        let alloc = &mut self.alloc;
        let x = *self.initial.entry(key).or_insert_with(|| MaskedSymbol::symbol(alloc.fresh(false), n));
        MSymSet::singleton(x)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractState {
    pub regs: Vec<MSymSet>,
    /// Written cells; absent cells hold their initial content.
    pub mem: BTreeMap<MemKey, MSymSet>,
    pub flags: FlagTrits,
    pub frontiers: Vec<Frontier>,
}

impl AbstractState {
    pub(crate) fn initial(sh: &mut Shared) -> AbstractState {
        let regs =
            (0..NUM_REGS).map(|_| MSymSet::singleton(MaskedSymbol::symbol(sh.alloc.fresh(false), sh.n))).collect();
        let frontiers = sh.dags.iter().map(TraceDag::root_frontier).collect();
        AbstractState { regs, mem: BTreeMap::new(), flags: FlagTrits::UNKNOWN, frontiers }
    }

    pub(crate) fn read(&self, key: MemKey, sh: &mut Shared) -> MSymSet {
        match self.mem.get(&key) {
            Some(v) => v.clone(),
            None => sh.initial_value(key),
        }
    }

    /// Pointwise union of values, flag join, and frontier join.
    pub(crate) fn join(&self, other: &AbstractState, sh: &mut Shared) -> AbstractState {
        let regs = self.regs.iter().zip(&other.regs).map(|(a, b)| a.union(b, sh.cap)).collect();
        let mut mem = BTreeMap::new();
        let keys: Vec<MemKey> = self.mem.keys().chain(other.mem.keys()).copied().collect();
        for k in keys {
            if mem.contains_key(&k) {
                continue;
            }
            let v = self.read(k, sh).union(&other.read(k, sh), sh.cap);
            mem.insert(k, v);
        }
        let frontiers = self
            .frontiers
            .iter()
            .zip(&other.frontiers)
            .zip(sh.dags.iter_mut())
            .map(|((a, b), d)| d.join(a, b))
            .collect();
        AbstractState { regs, mem, flags: self.flags.join(other.flags), frontiers }
    }
}
