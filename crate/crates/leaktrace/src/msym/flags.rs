use serde::{Deserialize, Serialize};

use super::mask::Trit;
use super::offset::OffsetTable;
use super::ops::{carry_out, concrete, BinOp};
use super::symbol::MaskedSymbol;

/// Zero and carry flags; `T` means both values are possible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlagTrits {
    pub zf: Trit,
    pub cf: Trit,
}

impl FlagTrits {
    pub const UNKNOWN: FlagTrits = FlagTrits { zf: Trit::T, cf: Trit::T };

    pub fn join(self, other: FlagTrits) -> FlagTrits {
        FlagTrits { zf: self.zf.join(other.zf), cf: self.cf.join(other.cf) }
    }
}

impl Default for FlagTrits {
    fn default() -> Self {
        FlagTrits::UNKNOWN
    }
}

/// Flags after `r = op(x, y)` for one pair of operands.
///
/// Constant operands give exact flags. Otherwise `zf = 0` when `r` has a
/// known one bit, or for `Sub` when `x` and `y` differ by a known nonzero
/// offset from a shared origin; `zf = 1` for `Sub` when `x = y`. `cf = 0` for
/// logic operations and for additions or subtractions that leave the unknown
/// high part untouched.
pub fn infer_flags(op: BinOp, x: &MaskedSymbol, y: &MaskedSymbol, r: &MaskedSymbol, tbl: &OffsetTable) -> FlagTrits {
    if let (Some(a), Some(b)) = (x.value(), y.value()) {
        let (_, zf, cf) = concrete(op, a, b, x.width());
        return FlagTrits { zf: Trit::from_bit(zf), cf: Trit::from_bit(cf) };
    }
    let zf = if r.mask().bits() != 0 {
        Trit::Zero
    } else if op == BinOp::Sub && x == y {
        Trit::One
    } else if op == BinOp::Sub && tbl.orig(x) == tbl.orig(y) && tbl.off(x) != tbl.off(y) {
        Trit::Zero
    } else {
        Trit::T
    };
    let cf = match op {
        BinOp::And | BinOp::Or | BinOp::Xor => Trit::Zero,
        BinOp::Add | BinOp::Sub => carry_out(op, x, y),
        BinOp::Mul | BinOp::Shl => Trit::T,
    };
    FlagTrits { zf, cf }
}
