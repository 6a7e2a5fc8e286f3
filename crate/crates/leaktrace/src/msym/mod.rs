//! Masked symbol domain.
//!
//! A masked symbol `(s, m)` pairs a symbol `s`, standing for an unknown but
//! fixed bit-vector, with a trit mask `m` over `{0, 1, T}`. Under a valuation
//! `λ` it denotes `λ(s) ⊙ m`: known trits override the bits of `λ(s)`.
//! Heap pointers with known alignment are the motivating case:
//!
//! ```
//! use leaktrace::msym::{abs_add, abs_and, MaskedSymbol, SymbolAllocator};
//!
//! let mut alloc = SymbolAllocator::new();
//! let buf = MaskedSymbol::symbol(alloc.fresh(true), 12);
//! let aligned = abs_and(&buf, &MaskedSymbol::constant(12, 0xfc0), &mut alloc);
//! assert_eq!(aligned.mask().to_string(), "TTTT TT00 0000");
//! let last = abs_add(&aligned, &MaskedSymbol::constant(12, 63), &mut alloc);
//! assert_eq!(last.sym(), buf.sym());
//! ```

mod flags;
mod lift;
mod mask;
mod offset;
mod ops;
mod set;
mod symbol;

pub use flags::{infer_flags, FlagTrits};
pub use lift::{apply, lift2, OpCtx};
pub use mask::{Mask, MaskParseError, Trit};
pub use offset::OffsetTable;
pub use ops::{abs_add, abs_and, abs_mul, abs_or, abs_shl, abs_sub, abs_xor, carry_out, concrete, mutation, BinOp};
pub use set::{concretize, count_obs, project, ConcretizeError, MSymSet, ProjElem, ProjSet, Projection, DEFAULT_CAP};
pub use symbol::{MaskedSymbol, SymbolAllocator, SymbolId, Valuation, CONST_SYM, FRESH_BASE};
