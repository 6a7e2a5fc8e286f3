use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::symbol::{MaskedSymbol, SymbolId, Valuation, CONST_SYM};
use crate::ir::word_mask;

/// Default bound on the number of elements of an [`MSymSet`].
pub const DEFAULT_CAP: usize = 256;

/// A finite nonempty set of masked symbols, or `Top` (any bit-vector).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MSymSet {
    Top,
    Elems(BTreeSet<MaskedSymbol>),
}

impl MSymSet {
    pub fn singleton(x: MaskedSymbol) -> MSymSet {
        MSymSet::Elems(BTreeSet::from([x]))
    }

    pub fn constant(n: u32, v: u64) -> MSymSet {
        MSymSet::singleton(MaskedSymbol::constant(n, v))
    }

    /// Set of constants; `Top` when more than `cap` distinct values.
    pub fn constants(n: u32, values: impl IntoIterator<Item = u64>, cap: usize) -> MSymSet {
        MSymSet::from_elems(values.into_iter().map(|v| MaskedSymbol::constant(n, v)), cap)
    }

    /// Collect elements; `Top` when more than `cap` distinct ones.
    ///
    /// # Panics
    /// On an empty iterator.
    pub fn from_elems(elems: impl IntoIterator<Item = MaskedSymbol>, cap: usize) -> MSymSet {
        let mut set = BTreeSet::new();
        for x in elems {
            set.insert(x);
            if set.len() > cap {
                return MSymSet::Top;
            }
        }
        assert!(!set.is_empty(), "masked symbol sets are nonempty");
        MSymSet::Elems(set)
    }

    pub fn is_top(&self) -> bool {
        matches!(self, MSymSet::Top)
    }

    /// Number of elements; `None` for `Top`.
    /// `Some(true)` for the empty set, `None` for `Top`.
    pub fn is_empty(&self) -> Option<bool> {
        self.len().map(|n| n == 0)
    }

    pub fn len(&self) -> Option<usize> {
        match self {
            MSymSet::Top => None,
            MSymSet::Elems(s) => Some(s.len()),
        }
    }

    pub fn elems(&self) -> Option<&BTreeSet<MaskedSymbol>> {
        match self {
            MSymSet::Top => None,
            MSymSet::Elems(s) => Some(s),
        }
    }

    /// The single element, if there is exactly one.
    pub fn as_singleton(&self) -> Option<&MaskedSymbol> {
        match self {
            MSymSet::Elems(s) if s.len() == 1 => s.iter().next(),
            _ => None,
        }
    }

    pub fn union(&self, other: &MSymSet, cap: usize) -> MSymSet {
        match (self, other) {
            (MSymSet::Elems(a), MSymSet::Elems(b)) => MSymSet::from_elems(a.iter().chain(b.iter()).copied(), cap),
            _ => MSymSet::Top,
        }
    }

    /// Whether every element of `self` is an element of `other`.
    pub fn is_subset(&self, other: &MSymSet) -> bool {
        match (self, other) {
            (_, MSymSet::Top) => true,
            (MSymSet::Top, _) => false,
            (MSymSet::Elems(a), MSymSet::Elems(b)) => a.is_subset(b),
        }
    }
}

impl fmt::Display for MSymSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MSymSet::Top => write!(f, "⊤"),
            MSymSet::Elems(s) => {
                write!(f, "{{")?;
                for (i, x) in s.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

impl fmt::Debug for MSymSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConcretizeError {
    #[error("top is not concretizable")]
    Top,
    #[error("valuation misses symbol {0}")]
    Unassigned(SymbolId),
}

/// `γ_λ(x)`.
pub fn concretize(x: &MSymSet, lambda: &Valuation) -> Result<BTreeSet<u64>, ConcretizeError> {
    let elems = x.elems().ok_or(ConcretizeError::Top)?;
    elems.iter().map(|e| e.concretize(lambda).ok_or(ConcretizeError::Unassigned(e.sym()))).collect()
}

/// `π_{n:b}`: keeps bits `b..n-1` of an `n`-bit address. The general form
/// keeps an arbitrary window `b..top`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Projection {
    pub n: u32,
    pub b: u32,
    pub top: u32,
}

impl Projection {
    /// # Panics
    /// Unless `b <= n <= 64`.
    pub fn new(n: u32, b: u32) -> Projection {
        Projection::window(n, b, n)
    }

    /// Keeps bits `b..top`.
    ///
    /// # Panics
    /// Unless `b <= top <= n <= 64`.
    pub fn window(n: u32, b: u32, top: u32) -> Projection {
        assert!(b <= top && top <= n && n <= 64, "bad projection window {b}..{top} of width {n}");
        Projection { n, b, top }
    }

    /// Number of observable bits.
    pub fn out_width(&self) -> u32 {
        self.top - self.b
    }

    /// Bits `b..top` of `a`.
    pub fn apply(&self, a: u64) -> u64 {
        if self.b >= 64 {
            0
        } else {
            (a >> self.b) & word_mask(self.out_width())
        }
    }

    /// Number of distinct observable units.
    pub fn units(&self) -> u64 {
        1u64 << self.out_width()
    }
}

/// A masked symbol restricted to the observable bits. Unknown bits stay tied
/// to their symbol; an element without unknown bits carries [`CONST_SYM`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProjElem {
    sym: SymbolId,
    shift: u8,
    width: u8,
    known: u64,
    bits: u64,
}

impl ProjElem {
    pub fn project(x: &MaskedSymbol, p: Projection) -> ProjElem {
        let w = word_mask(p.out_width());
        let m = x.mask();
        let known = if p.b >= 64 { w } else { (m.known() >> p.b) & w };
        let bits = if p.b >= 64 { 0 } else { (m.bits() >> p.b) & w };
        let sym = if known == w { CONST_SYM } else { x.sym() };
        ProjElem { sym, shift: p.b as u8, width: p.out_width() as u8, known, bits }
    }

    /// A fully known observation.
    pub fn constant(p: Projection, unit: u64) -> ProjElem {
        let w = word_mask(p.out_width());
        ProjElem { sym: CONST_SYM, shift: p.b as u8, width: p.out_width() as u8, known: w, bits: unit & w }
    }

    pub fn sym(&self) -> SymbolId {
        self.sym
    }

    pub fn value(&self) -> Option<u64> {
        self.sym.is_const().then_some(self.bits)
    }

    /// The observed unit under λ.
    pub fn concretize(&self, lambda: &Valuation) -> Option<u64> {
        if self.sym.is_const() {
            return Some(self.bits);
        }
        let v = *lambda.get(&self.sym)?;
        let w = word_mask(self.width as u32);
        let shifted = if self.shift >= 64 { 0 } else { v >> self.shift };
        Some((shifted & w & !self.known) | self.bits)
    }
}

impl fmt::Display for ProjElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.width == 0 {
            return write!(f, "()");
        }
        if self.sym.is_const() {
            return write!(f, "{:#x}", self.bits);
        }
        write!(f, "{}:", self.sym)?;
        for i in (0..self.width as u32).rev() {
            let c = if self.known >> i & 1 == 0 {
                'T'
            } else if self.bits >> i & 1 == 1 {
                '1'
            } else {
                '0'
            };
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ProjElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Result of projecting an [`MSymSet`]: a set of projected elements, or the
/// projection of `Top`, which covers every observable unit.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProjSet {
    Top { width: u32 },
    Elems(BTreeSet<ProjElem>),
}

impl ProjSet {
    /// Number of observations this set stands for.
    pub fn card(&self) -> u64 {
        match self {
            ProjSet::Top { width } => 1u64 << width,
            ProjSet::Elems(s) => s.len() as u64,
        }
    }

    pub fn is_top(&self) -> bool {
        matches!(self, ProjSet::Top { .. })
    }

    /// Observed units under λ; `Top` enumerates every unit.
    pub fn concretize(&self, lambda: &Valuation) -> Option<BTreeSet<u64>> {
        match self {
            ProjSet::Top { width } => Some((0..1u64 << width).collect()),
            ProjSet::Elems(s) => s.iter().map(|e| e.concretize(lambda)).collect(),
        }
    }

    /// Singleton label observing one known unit.
    pub fn unit(p: Projection, unit: u64) -> ProjSet {
        ProjSet::Elems(BTreeSet::from([ProjElem::constant(p, unit)]))
    }
}

impl fmt::Display for ProjSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjSet::Top { .. } => write!(f, "⊤"),
            ProjSet::Elems(s) => {
                write!(f, "{{")?;
                for (i, x) in s.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "}}")
            }
        }
    }
}

impl fmt::Debug for ProjSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Applies `π` to every element and deduplicates.
pub fn project(x: &MSymSet, p: Projection) -> ProjSet {
    match x {
        MSymSet::Top => ProjSet::Top { width: p.out_width() },
        MSymSet::Elems(s) => ProjSet::Elems(s.iter().map(|e| ProjElem::project(e, p)).collect()),
    }
}

/// `|π(x)|`, with `2^(n-b)` for `Top`.
pub fn count_obs(x: &MSymSet, p: Projection) -> u64 {
    project(x, p).card()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msym::{Mask, SymbolAllocator};

    fn ms(sym: SymbolId, m: &str) -> MaskedSymbol {
        MaskedSymbol::new(sym, m.parse::<Mask>().unwrap())
    }

    #[test]
    fn concretize_examples() {
        let mut a = SymbolAllocator::new();
        let (s, t, u) = (a.fresh(true), a.fresh(true), a.fresh(true));
        let lam: Valuation = [(s, 0b101)].into();
        let x = MSymSet::singleton(ms(s, "TTT"));
        assert_eq!(concretize(&x, &lam).unwrap(), BTreeSet::from([0b101]));
        let lam: Valuation = [(s, 0b100)].into();
        let x = MSymSet::singleton(ms(s, "TT1"));
        assert_eq!(concretize(&x, &lam).unwrap(), BTreeSet::from([0b101]));

        let x = MSymSet::from_elems([ms(s, "001"), ms(t, "TT1"), ms(u, "111")], DEFAULT_CAP);
        let lam: Valuation = [(s, 0), (t, 0), (u, 0)].into();
        assert_eq!(concretize(&x, &lam).unwrap(), BTreeSet::from([0b001, 0b111]));
        assert_eq!(concretize(&MSymSet::Top, &lam), Err(ConcretizeError::Top));
    }

    #[test]
    fn projection_examples() {
        let mut a = SymbolAllocator::new();
        let (s, t, u) = (a.fresh(true), a.fresh(true), a.fresh(true));
        let x = MSymSet::from_elems([ms(s, "001"), ms(t, "TT1"), ms(u, "111")], DEFAULT_CAP);
        let msb = Projection::new(3, 1);
        let px = project(&x, msb);
        assert_eq!(px.card(), 3);
        assert_eq!(px.to_string(), format!("{{0x0, 0x3, {t}:TT}}"));
        let lsb = Projection::window(3, 0, 1);
        assert_eq!(project(&x, lsb).to_string(), "{0x1}");
        assert_eq!(count_obs(&x, lsb), 1);
        let y = MSymSet::singleton(ms(s, "TT0"));
        assert_eq!(count_obs(&y, Projection::new(3, 0)), 1);
        assert_eq!(count_obs(&MSymSet::Top, Projection::new(8, 6)), 4);
    }

    #[test]
    fn blind_projection() {
        let p = Projection::new(8, 8);
        assert_eq!(p.apply(0xab), 0);
        let mut a = SymbolAllocator::new();
        let x = MSymSet::from_elems([MaskedSymbol::symbol(a.fresh(true), 8), MaskedSymbol::constant(8, 3)], 8);
        assert_eq!(count_obs(&x, p), 1);
    }

    #[test]
    fn cap_overflow_is_top() {
        let x = MSymSet::constants(8, 0..20, 16);
        assert!(x.is_top());
        let y = MSymSet::constants(8, 0..16, 16);
        assert_eq!(y.len(), Some(16));
        assert!(y.union(&MSymSet::constant(8, 99), 16).is_top());
    }
}
