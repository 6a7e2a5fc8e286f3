use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ir::word_mask;

/// A known bit or the unknown-but-fixed marker `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Trit {
    Zero,
    One,
    T,
}

impl Trit {
    pub fn from_bit(b: bool) -> Trit {
        if b {
            Trit::One
        } else {
            Trit::Zero
        }
    }

    pub fn is_known(self) -> bool {
        self != Trit::T
    }

    /// Least upper bound: equal trits are kept, anything else is `T`.
    pub fn join(self, other: Trit) -> Trit {
        if self == other {
            self
        } else {
            Trit::T
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Trit::Zero => '0',
            Trit::One => '1',
            Trit::T => 'T',
        }
    }
}

impl fmt::Display for Trit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Trit vector of width `n`, stored as a known-bit mask and the values of the
/// known bits. Bit `i` is `T` exactly when bit `i` of `known` is clear.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mask {
    width: u8,
    known: u64,
    bits: u64,
}

impl Mask {
    /// All-`T` mask.
    pub fn top(n: u32) -> Mask {
        Mask::from_parts(n, 0, 0)
    }

    /// Fully known mask holding `v mod 2^n`.
    pub fn constant(n: u32, v: u64) -> Mask {
        Mask::from_parts(n, u64::MAX, v)
    }

    /// Build from a known-bit mask and bit values; extra bits are dropped.
    pub fn from_parts(n: u32, known: u64, bits: u64) -> Mask {
        assert!((1..=64).contains(&n), "mask width {n} out of range");
        let w = word_mask(n);
        let known = known & w;
        Mask { width: n as u8, known, bits: bits & known }
    }

    /// Build from trits listed most-significant first.
    pub fn from_trits(trits: &[Trit]) -> Mask {
        let n = trits.len() as u32;
        let mut known = 0;
        let mut bits = 0;
        for (k, t) in trits.iter().rev().enumerate() {
            match t {
                Trit::Zero => known |= 1 << k,
                Trit::One => {
                    known |= 1 << k;
                    bits |= 1 << k;
                }
                Trit::T => {}
            }
        }
        Mask::from_parts(n, known, bits)
    }

    pub fn width(&self) -> u32 {
        self.width as u32
    }

    /// Positions holding a known bit.
    pub fn known(&self) -> u64 {
        self.known
    }

    /// Values of the known bits; zero elsewhere.
    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Positions holding `T`.
    pub fn unknown(&self) -> u64 {
        !self.known & word_mask(self.width())
    }

    pub fn trit(&self, i: u32) -> Trit {
        if self.known >> i & 1 == 0 {
            Trit::T
        } else {
            Trit::from_bit(self.bits >> i & 1 == 1)
        }
    }

    pub fn with_trit(&self, i: u32, t: Trit) -> Mask {
        let (known, bits) = match t {
            Trit::T => (self.known & !(1 << i), self.bits & !(1 << i)),
            Trit::Zero => (self.known | 1 << i, self.bits & !(1 << i)),
            Trit::One => (self.known | 1 << i, self.bits | 1 << i),
        };
        Mask::from_parts(self.width(), known, bits)
    }

    /// Trits most-significant first.
    pub fn trits(&self) -> Vec<Trit> {
        (0..self.width()).rev().map(|i| self.trit(i)).collect()
    }

    pub fn is_const(&self) -> bool {
        self.unknown() == 0
    }

    pub fn value(&self) -> Option<u64> {
        self.is_const().then_some(self.bits)
    }

    pub fn has_top(&self) -> bool {
        !self.is_const()
    }

    /// Lowest `T` position.
    pub fn first_top(&self) -> Option<u32> {
        let u = self.unknown();
        (u != 0).then(|| u.trailing_zeros())
    }

    /// `v ⊙ m`: known trits override the bits of `v`.
    pub fn apply(&self, v: u64) -> u64 {
        (v & self.unknown()) | self.bits
    }

    /// Whether `v` agrees with every known trit.
    pub fn admits(&self, v: u64) -> bool {
        v & self.known == self.bits && v & !word_mask(self.width()) == 0
    }
}

impl fmt::Display for Mask {
    /// Trits most-significant first, grouped by four from the least
    /// significant end.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.width();
        for i in (0..n).rev() {
            write!(f, "{}", self.trit(i))?;
            if i % 4 == 0 && i != 0 {
                write!(f, " ")?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mask({self})")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid mask literal `{0}`")]
pub struct MaskParseError(pub String);

impl FromStr for Mask {
    type Err = MaskParseError;

    /// Parses trits most-significant first; spaces and `_` are ignored.
    fn from_str(s: &str) -> Result<Mask, MaskParseError> {
        let mut trits = Vec::new();
        for c in s.chars() {
            match c {
                '0' => trits.push(Trit::Zero),
                '1' => trits.push(Trit::One),
                'T' | 't' => trits.push(Trit::T),
                ' ' | '_' => {}
                _ => return Err(MaskParseError(s.to_string())),
            }
        }
        if trits.is_empty() || trits.len() > 64 {
            return Err(MaskParseError(s.to_string()));
        }
        Ok(Mask::from_trits(&trits))
    }
}
