//! Bit-precise transfer functions on single masked symbols.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use super::mask::{Mask, Trit};
use super::symbol::{MaskedSymbol, SymbolAllocator, SymbolId};
use crate::ir::word_mask;

/// Binary operations of the abstract domain. `CMP` is `Sub` with the result
/// discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BinOp {
    And,
    Or,
    Xor,
    Add,
    Sub,
    Mul,
    Shl,
}

/// Machine arithmetic on `n`-bit words: returns `(result, zf, cf)`.
///
/// Logic operations clear the carry flag. `Add` and `Mul`/`Shl` set it on
/// unsigned overflow; `Sub` sets it on borrow.
pub fn concrete(op: BinOp, x: u64, y: u64, n: u32) -> (u64, bool, bool) {
    let m = word_mask(n);
    let (x, y) = (x & m, y & m);
    let (r, cf) = match op {
        BinOp::And => (x & y, false),
        BinOp::Or => (x | y, false),
        BinOp::Xor => (x ^ y, false),
        BinOp::Add => {
            let s = x as u128 + y as u128;
            ((s as u64) & m, s > m as u128)
        }
        BinOp::Sub => (x.wrapping_sub(y) & m, x < y),
        BinOp::Mul => {
            let p = x as u128 * y as u128;
            ((p as u64) & m, p > m as u128)
        }
        BinOp::Shl => {
            if y >= n as u64 {
                (0, x != 0)
            } else {
                let p = (x as u128) << y;
                ((p as u64) & m, p > m as u128)
            }
        }
    };
    (r, r == 0, cf)
}

thread_local! {
    static BROKEN_ADD: Cell<bool> = const { Cell::new(false) };
}

/// Fault injection for the soundness harness.
#[doc(hidden)]
pub mod mutation {
    /// Runs `f` with an [`abs_add`](super::abs_add) that forgets carry
    /// propagation into unknown bits, on the current thread only.
    pub fn with_broken_add<R>(f: impl FnOnce() -> R) -> R {
        struct Reset(bool);
        impl Drop for Reset {
            fn drop(&mut self) {
                super::BROKEN_ADD.with(|b| b.set(self.0));
            }
        }
        let _reset = Reset(super::BROKEN_ADD.with(|b| b.replace(true)));
        f()
    }
}

fn check_widths(x: &MaskedSymbol, y: &MaskedSymbol) -> u32 {
    assert_eq!(x.width(), y.width(), "operand widths differ");
    x.width()
}

fn finish(sym: Option<SymbolId>, mask: Mask, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    if mask.is_const() {
        return MaskedSymbol::new(super::symbol::CONST_SYM, mask);
    }
    MaskedSymbol::new(sym.unwrap_or_else(|| alloc.fresh(false)), mask)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Logic {
    And,
    Or,
    Xor,
}

impl Logic {
    fn neutral(self) -> Trit {
        match self {
            Logic::And => Trit::One,
            Logic::Or | Logic::Xor => Trit::Zero,
        }
    }
}

fn logic(op: Logic, x: &MaskedSymbol, y: &MaskedSymbol, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    let n = check_widths(x, y);
    let same = x.sym() == y.sym() && !x.is_const();
    let mut out = Mask::top(n);
    for i in 0..n {
        let (a, b) = (x.trit(i), y.trit(i));
        let t = match op {
            Logic::And => match (a, b) {
                (Trit::Zero, _) | (_, Trit::Zero) => Trit::Zero,
                (Trit::One, Trit::One) => Trit::One,
                _ => Trit::T,
            },
            Logic::Or => match (a, b) {
                (Trit::One, _) | (_, Trit::One) => Trit::One,
                (Trit::Zero, Trit::Zero) => Trit::Zero,
                _ => Trit::T,
            },
            Logic::Xor => match (a, b) {
                (Trit::T, Trit::T) if same => Trit::Zero,
                (Trit::T, _) | (_, Trit::T) => Trit::T,
                (p, q) => Trit::from_bit(p != q),
            },
        };
        out = out.with_trit(i, t);
    }
    // A result bit left unknown carries the symbol of `z` when it equals
    // bit i of λ(z.sym).
    let carries = |z: &MaskedSymbol, w: &MaskedSymbol| {
        !z.is_const()
            && (0..n).filter(|&i| out.trit(i) == Trit::T).all(|i| {
                let (a, b) = (z.trit(i), w.trit(i));
                match (a, b) {
                    (Trit::T, b) if b == op.neutral() => true,
                    (Trit::T, Trit::T) => same && op != Logic::Xor,
                    (a, Trit::T) => same && a == op.neutral(),
                    _ => false,
                }
            })
    };
    let sym = if carries(x, y) {
        Some(x.sym())
    } else if carries(y, x) {
        Some(y.sym())
    } else {
        None
    };
    finish(sym, out, alloc)
}

/// Bitwise AND. Absorbing zeros win; a symbol survives when every unknown
/// result bit is an unchanged bit of it.
pub fn abs_and(x: &MaskedSymbol, y: &MaskedSymbol, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    logic(Logic::And, x, y, alloc)
}

/// Bitwise OR, dual to [`abs_and`].
pub fn abs_or(x: &MaskedSymbol, y: &MaskedSymbol, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    logic(Logic::Or, x, y, alloc)
}

/// Bitwise XOR. Unknown bits of one symbol cancel against themselves.
pub fn abs_xor(x: &MaskedSymbol, y: &MaskedSymbol, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    logic(Logic::Xor, x, y, alloc)
}

struct Ripple {
    /// Result trits; positions from `stop` upwards are `T`.
    mask: Mask,
    /// First position the ripple could not decide.
    stop: Option<u32>,
    /// Carry (or borrow) into `stop`, or out of the top bit.
    carry: bool,
}

fn ripple_add(x: &MaskedSymbol, y: &MaskedSymbol) -> Ripple {
    let n = x.width();
    let mut mask = Mask::top(n);
    let mut c = false;
    for i in 0..n {
        match (x.trit(i), y.trit(i)) {
            (Trit::T, _) | (_, Trit::T) => return Ripple { mask, stop: Some(i), carry: c },
            (a, b) => {
                let (a, b) = (a == Trit::One, b == Trit::One);
                mask = mask.with_trit(i, Trit::from_bit(a ^ b ^ c));
                c = (a && b) || (c && (a ^ b));
            }
        }
    }
    Ripple { mask, stop: None, carry: c }
}

fn ripple_sub(x: &MaskedSymbol, y: &MaskedSymbol) -> Ripple {
    let n = x.width();
    let same = x.sym() == y.sym() && !x.is_const();
    let mut mask = Mask::top(n);
    let mut b = false;
    for i in 0..n {
        match (x.trit(i), y.trit(i)) {
            // Equal unknown bits: the difference bit is the borrow, which
            // passes through unchanged.
            (Trit::T, Trit::T) if same => mask = mask.with_trit(i, Trit::from_bit(b)),
            (Trit::T, _) | (_, Trit::T) => return Ripple { mask, stop: Some(i), carry: b },
            (p, q) => {
                let (p, q) = (p == Trit::One, q == Trit::One);
                mask = mask.with_trit(i, Trit::from_bit(p ^ q ^ b));
                b = (!p && q) || (b && !(p ^ q));
            }
        }
    }
    Ripple { mask, stop: None, carry: b }
}

/// Copies the trits of `x` at positions `from..n` over `base`.
fn splice_above(base: Mask, x: &MaskedSymbol, from: u32) -> Mask {
    let keep = !word_mask(from);
    let m = x.mask();
    Mask::from_parts(
        base.width(),
        (base.known() & !keep) | (m.known() & keep),
        (base.bits() & !keep) | (m.bits() & keep),
    )
}

/// Whether `c` is a constant whose bits from `p` upwards are all zero.
fn zero_from(c: &MaskedSymbol, p: u32) -> bool {
    c.value().is_some_and(|v| p >= 64 || v >> p == 0)
}

/// Addition by ripple carry over the known low prefix. From the first unknown
/// position upwards the result is unknown, except that adding a constant
/// that cannot disturb those bits keeps them and the symbol.
pub fn abs_add(x: &MaskedSymbol, y: &MaskedSymbol, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    check_widths(x, y);
    let r = ripple_add(x, y);
    let Some(p) = r.stop else {
        return MaskedSymbol::new(super::symbol::CONST_SYM, r.mask);
    };
    if BROKEN_ADD.with(Cell::get) {
        return broken_add(x, y, r.mask, p, alloc);
    }
    if !r.carry && zero_from(y, p) {
        return finish(Some(x.sym()), splice_above(r.mask, x, p), alloc);
    }
    if !r.carry && zero_from(x, p) {
        return finish(Some(y.sym()), splice_above(r.mask, y, p), alloc);
    }
    finish(None, r.mask, alloc)
}

fn broken_add(x: &MaskedSymbol, y: &MaskedSymbol, low: Mask, p: u32, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    let (keep, _) = if x.is_const() { (y, x) } else { (x, y) };
    if !x.is_const() && !y.is_const() {
        return finish(None, low, alloc);
    }
    finish(Some(keep.sym()), splice_above(low, keep, p), alloc)
}

/// Subtraction by ripple borrow. Unknown bits shared with the same symbol
/// cancel while the borrow stays known.
pub fn abs_sub(x: &MaskedSymbol, y: &MaskedSymbol, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    check_widths(x, y);
    let r = ripple_sub(x, y);
    let Some(p) = r.stop else {
        return MaskedSymbol::new(super::symbol::CONST_SYM, r.mask);
    };
    if !r.carry && zero_from(y, p) {
        return finish(Some(x.sym()), splice_above(r.mask, x, p), alloc);
    }
    finish(None, r.mask, alloc)
}

/// Carry (`Add`) or borrow (`Sub`) out of the top bit, as far as it is
/// decided by the masks.
pub fn carry_out(op: BinOp, x: &MaskedSymbol, y: &MaskedSymbol) -> Trit {
    let r = match op {
        BinOp::Add => ripple_add(x, y),
        BinOp::Sub => ripple_sub(x, y),
        _ => return Trit::T,
    };
    match r.stop {
        None => Trit::from_bit(r.carry),
        Some(p) => {
            let quiet = match op {
                BinOp::Add => zero_from(y, p) || zero_from(x, p),
                _ => zero_from(y, p),
            };
            if !r.carry && quiet {
                Trit::Zero
            } else {
                Trit::T
            }
        }
    }
}

/// Multiplication by an immediate. Exact on constants; otherwise every bit
/// is unknown under a fresh symbol.
pub fn abs_mul(x: &MaskedSymbol, c: u64, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    let n = x.width();
    match x.value() {
        Some(v) => MaskedSymbol::constant(n, concrete(BinOp::Mul, v, c, n).0),
        None => MaskedSymbol::symbol(alloc.fresh(false), n),
    }
}

/// Left shift by an immediate. Unknown bits move with the shift and
/// therefore take a fresh symbol.
pub fn abs_shl(x: &MaskedSymbol, k: u64, alloc: &mut SymbolAllocator) -> MaskedSymbol {
    let n = x.width();
    if let Some(v) = x.value() {
        return MaskedSymbol::constant(n, concrete(BinOp::Shl, v, k, n).0);
    }
    if k == 0 {
        return *x;
    }
    if k >= n as u64 {
        return MaskedSymbol::constant(n, 0);
    }
    let m = x.mask();
    let w = word_mask(n);
    let shifted = Mask::from_parts(n, ((m.known() << k) | word_mask(k as u32)) & w, (m.bits() << k) & w);
    finish(None, shifted, alloc)
}
