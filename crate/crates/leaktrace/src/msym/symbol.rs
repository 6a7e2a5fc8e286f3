use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::mask::{Mask, Trit};

/// Opaque identifier of an unknown-but-fixed value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SymbolId {
    id: u32,
    low_input: bool,
}

/// Symbol carried by every constant.
pub const CONST_SYM: SymbolId = SymbolId { id: 0, low_input: false };

/// First id handed out for symbols minted during analysis. Low-input ids
/// stay below it, so they precede every analysis symbol in id order.
pub const FRESH_BASE: u32 = 1 << 24;

impl SymbolId {
    pub fn id(self) -> u32 {
        self.id
    }

    /// Member of the low initial inputs (allocator results, `.lowsym`).
    pub fn is_low_input(self) -> bool {
        self.low_input
    }

    pub fn is_const(self) -> bool {
        self == CONST_SYM
    }

    /// Rebuild an id from its parts, e.g. when replaying a dump.
    pub fn from_raw(id: u32, low_input: bool) -> SymbolId {
        SymbolId { id, low_input }
    }
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.id)
    }
}

/// Hands out never-before-seen symbols for one analysis run.
#[derive(Clone, Debug)]
pub struct SymbolAllocator {
    next_low: u32,
    next_fresh: u32,
}

impl Default for SymbolAllocator {
    fn default() -> Self {
        SymbolAllocator { next_low: 1, next_fresh: FRESH_BASE }
    }
}

impl SymbolAllocator {
    pub fn new() -> Self {
        Self::default()
    }

    /// `None` once the id space is used up.
    pub fn try_fresh(&mut self, low_input: bool) -> Option<SymbolId> {
        let slot = if low_input { &mut self.next_low } else { &mut self.next_fresh };
        let limit = if low_input { FRESH_BASE } else { u32::MAX };
        if *slot >= limit {
            return None;
        }
        let id = *slot;
        *slot += 1;
        Some(SymbolId { id, low_input })
    }

    pub fn fresh(&mut self, low_input: bool) -> SymbolId {
        self.try_fresh(low_input).expect("symbol allocator exhausted")
    }

    /// Number of low-input symbols issued so far.
    pub fn low_count(&self) -> u32 {
        self.next_low - 1
    }
}

/// Assignment of bit-vectors to symbols.
pub type Valuation = BTreeMap<SymbolId, u64>;

/// A symbol together with a trit mask, denoting `λ(sym) ⊙ mask`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaskedSymbol {
    sym: SymbolId,
    mask: Mask,
}

impl MaskedSymbol {
    /// Pairs `sym` with `mask`; a mask without `T` yields a constant.
    pub fn new(sym: SymbolId, mask: Mask) -> MaskedSymbol {
        if mask.is_const() {
            MaskedSymbol { sym: CONST_SYM, mask }
        } else {
            assert!(!sym.is_const(), "the constant symbol cannot carry unknown bits");
            MaskedSymbol { sym, mask }
        }
    }

    pub fn constant(n: u32, v: u64) -> MaskedSymbol {
        MaskedSymbol { sym: CONST_SYM, mask: Mask::constant(n, v) }
    }

    /// `(sym, T^n)`.
    pub fn symbol(sym: SymbolId, n: u32) -> MaskedSymbol {
        MaskedSymbol::new(sym, Mask::top(n))
    }

    pub fn sym(&self) -> SymbolId {
        self.sym
    }

    pub fn mask(&self) -> Mask {
        self.mask
    }

    pub fn width(&self) -> u32 {
        self.mask.width()
    }

    pub fn is_const(&self) -> bool {
        self.mask.is_const()
    }

    pub fn value(&self) -> Option<u64> {
        self.mask.value()
    }

    pub fn trit(&self, i: u32) -> Trit {
        self.mask.trit(i)
    }

    /// `λ(sym) ⊙ mask`, or `None` when λ misses the symbol.
    pub fn concretize(&self, lambda: &Valuation) -> Option<u64> {
        if self.is_const() {
            return Some(self.mask.bits());
        }
        lambda.get(&self.sym).map(|&v| self.mask.apply(v))
    }
}

impl fmt::Display for MaskedSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.sym, self.mask)
    }
}

impl fmt::Debug for MaskedSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocator_ids() {
        let mut a = SymbolAllocator::new();
        let x = a.fresh(false);
        let y = a.fresh(true);
        let z = a.fresh(false);
        assert!(x != y && y != z && x != z);
        assert!(y.is_low_input());
        assert!(!x.is_low_input() && !z.is_low_input());
        assert!(y < x, "low inputs precede analysis symbols");
        assert_eq!(a.low_count(), 1);
    }

    #[test]
    fn constants_share_the_const_symbol() {
        let mut a = SymbolAllocator::new();
        let s = a.fresh(true);
        let c = MaskedSymbol::new(s, Mask::constant(8, 3));
        assert_eq!(c, MaskedSymbol::constant(8, 3));
        assert_eq!(c.sym(), CONST_SYM);
    }

    #[test]
    fn render() {
        let s = SymbolId::from_raw(3, false);
        let x = MaskedSymbol::new(s, "TTTT TT00 0000".parse().unwrap());
        assert_eq!(x.to_string(), "s3:TTTT TT00 0000");
        assert_eq!(MaskedSymbol::constant(8, 5).to_string(), "s0:0000 0101");
    }
}
