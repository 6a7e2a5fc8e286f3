use std::collections::BTreeSet;

use super::flags::{infer_flags, FlagTrits};
use super::offset::OffsetTable;
use super::ops::{abs_add, abs_and, abs_mul, abs_or, abs_shl, abs_sub, abs_xor, BinOp};
use super::set::MSymSet;
use super::symbol::{MaskedSymbol, SymbolAllocator};
use crate::ir::word_mask;

/// Mutable context shared by the operations of one analysis run.
pub struct OpCtx<'a> {
    pub alloc: &'a mut SymbolAllocator,
    pub tbl: &'a mut OffsetTable,
    pub cap: usize,
}

/// `op(x, y)` on single elements. Additions and subtractions of a constant
/// go through the offset table; other results involving two symbols become
/// their own origin.
pub fn apply(op: BinOp, x: &MaskedSymbol, y: &MaskedSymbol, ctx: &mut OpCtx<'_>) -> MaskedSymbol {
    let n = x.width();
    let r = match op {
        BinOp::And => abs_and(x, y, ctx.alloc),
        BinOp::Or => abs_or(x, y, ctx.alloc),
        BinOp::Xor => abs_xor(x, y, ctx.alloc),
        BinOp::Add => match (x.value(), y.value()) {
            (_, Some(c)) => return ctx.tbl.add_offset(x, c, ctx.alloc),
            (Some(c), None) => return ctx.tbl.add_offset(y, c, ctx.alloc),
            (None, None) => abs_add(x, y, ctx.alloc),
        },
        BinOp::Sub => match y.value() {
            Some(c) => return ctx.tbl.add_offset(x, c.wrapping_neg() & word_mask(n), ctx.alloc),
            None => abs_sub(x, y, ctx.alloc),
        },
        BinOp::Mul => match (x.value(), y.value()) {
            (_, Some(c)) => abs_mul(x, c, ctx.alloc),
            (Some(c), None) => abs_mul(y, c, ctx.alloc),
            (None, None) => MaskedSymbol::symbol(ctx.alloc.fresh(false), n),
        },
        BinOp::Shl => match y.value() {
            Some(k) => abs_shl(x, k, ctx.alloc),
            None => MaskedSymbol::symbol(ctx.alloc.fresh(false), n),
        },
    };
    if matches!(op, BinOp::Add | BinOp::Sub) {
        ctx.tbl.register(&r);
    }
    r
}

/// Pairwise application over `X × Y` with deduplication. Yields `Top` when
/// an input is `Top` or more than `cap` results arise. The flags hold only
/// what every pair agrees on.
pub fn lift2(op: BinOp, xs: &MSymSet, ys: &MSymSet, ctx: &mut OpCtx<'_>) -> (MSymSet, FlagTrits) {
    let (Some(xs), Some(ys)) = (xs.elems(), ys.elems()) else {
        return (MSymSet::Top, FlagTrits::UNKNOWN);
    };
    let mut out = BTreeSet::new();
    let mut flags: Option<FlagTrits> = None;
    for x in xs {
        for y in ys {
            let r = apply(op, x, y, ctx);
            let f = infer_flags(op, x, y, &r, ctx.tbl);
            flags = Some(flags.map_or(f, |g| g.join(f)));
            out.insert(r);
            if out.len() > ctx.cap {
                return (MSymSet::Top, FlagTrits::UNKNOWN);
            }
        }
    }
    (MSymSet::Elems(out), flags.unwrap_or(FlagTrits::UNKNOWN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msym::Trit;

    #[test]
    fn constant_sets() {
        let mut alloc = SymbolAllocator::new();
        let mut tbl = OffsetTable::new();
        let mut ctx = OpCtx { alloc: &mut alloc, tbl: &mut tbl, cap: 256 };
        let xs = MSymSet::constants(8, [1, 2], 256);
        let (r, f) = lift2(BinOp::Add, &xs, &MSymSet::constant(8, 3), &mut ctx);
        assert_eq!(r, MSymSet::constants(8, [4, 5], 256));
        assert_eq!(f.zf, Trit::Zero);
    }

    #[test]
    fn symbolic_branch_offsets() {
        let mut alloc = SymbolAllocator::new();
        let mut tbl = OffsetTable::new();
        let s = alloc.fresh(true);
        let mut ctx = OpCtx { alloc: &mut alloc, tbl: &mut tbl, cap: 256 };
        let x = MSymSet::singleton(MaskedSymbol::symbol(s, 32));
        let (r, _) = lift2(BinOp::Add, &x, &MSymSet::constants(32, [0, 64], 256), &mut ctx);
        assert_eq!(r.len(), Some(2));
        assert!(r.elems().unwrap().contains(&MaskedSymbol::symbol(s, 32)));
    }

    #[test]
    fn cap_gives_top() {
        let mut alloc = SymbolAllocator::new();
        let mut tbl = OffsetTable::new();
        let mut ctx = OpCtx { alloc: &mut alloc, tbl: &mut tbl, cap: 256 };
        let xs = MSymSet::constants(16, 0..20, 256);
        let ys = MSymSet::constants(16, (0..20).map(|v| v * 100), 256);
        let (r, f) = lift2(BinOp::Add, &xs, &ys, &mut ctx);
        assert!(r.is_top());
        assert_eq!(f, FlagTrits::UNKNOWN);
        let (r, _) = lift2(BinOp::And, &MSymSet::Top, &xs, &mut ctx);
        assert!(r.is_top());
    }

    #[test]
    fn mixed_flags_are_unknown() {
        let mut alloc = SymbolAllocator::new();
        let mut tbl = OffsetTable::new();
        let mut ctx = OpCtx { alloc: &mut alloc, tbl: &mut tbl, cap: 256 };
        let k = MSymSet::constants(8, 0..8, 256);
        let (_, f) = lift2(BinOp::Sub, &k, &MSymSet::constant(8, 3), &mut ctx);
        assert_eq!(f.zf, Trit::T);
        let (_, f) = lift2(BinOp::Sub, &k, &MSymSet::constant(8, 9), &mut ctx);
        assert_eq!(f.zf, Trit::Zero);
    }
}
