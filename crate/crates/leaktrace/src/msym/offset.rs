use std::collections::BTreeMap;

use super::ops::abs_add;
use super::symbol::{MaskedSymbol, SymbolAllocator};
use crate::ir::word_mask;

/// Origin/offset congruences: every registered `x` equals `orig(x) + off(x)`
/// modulo `2^n`, and `succ` finds the canonical element for an offset.
#[derive(Clone, Debug, Default)]
pub struct OffsetTable {
    entries: BTreeMap<MaskedSymbol, (MaskedSymbol, u64)>,
    succ: BTreeMap<(MaskedSymbol, u64), MaskedSymbol>,
}

impl OffsetTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `x` as its own origin unless it is already known.
    pub fn register(&mut self, x: &MaskedSymbol) {
        if x.is_const() || self.entries.contains_key(x) {
            return;
        }
        self.entries.insert(*x, (*x, 0));
        self.succ.insert((*x, 0), *x);
    }

    pub fn is_registered(&self, x: &MaskedSymbol) -> bool {
        self.entries.contains_key(x)
    }

    /// Origin of `x`; unregistered values are their own origin.
    pub fn orig(&self, x: &MaskedSymbol) -> MaskedSymbol {
        self.entries.get(x).map_or(*x, |e| e.0)
    }

    /// Offset of `x` from its origin, in `0..2^n`.
    pub fn off(&self, x: &MaskedSymbol) -> u64 {
        self.entries.get(x).map_or(0, |e| e.1)
    }

    pub fn succ(&self, origin: &MaskedSymbol, off: u64) -> Option<MaskedSymbol> {
        self.succ.get(&(*origin, off)).copied()
    }

    /// `x + c`, reusing the element already registered for that offset from
    /// the origin of `x`.
    pub fn add_offset(&mut self, x: &MaskedSymbol, c: u64, alloc: &mut SymbolAllocator) -> MaskedSymbol {
        let n = x.width();
        let m = word_mask(n);
        if let Some(v) = x.value() {
            return MaskedSymbol::constant(n, v.wrapping_add(c) & m);
        }
        self.register(x);
        let (origin, k) = self.entries[x];
        let target = k.wrapping_add(c) & m;
        if let Some(z) = self.succ(&origin, target) {
            return z;
        }
        let y = abs_add(x, &MaskedSymbol::constant(n, c & m), alloc);
        if !y.is_const() {
            self.entries.entry(y).or_insert((origin, target));
            self.succ.insert((origin, target), y);
        }
        y
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
