//! Countermeasure kernels shipped with the crate, with their expected
//! leakage bounds.
//!
//! All kernels are 12-bit programs. The expected values were computed by the
//! analyzer and confirmed against exact view counts from [`crate::oracle`].
//!
//! ```
//! use leaktrace::analyzer::{run, AnalysisConfig};
//! use leaktrace::corpus;
//!
//! let k = corpus::get("gather_aligned").unwrap();
//! let p = k.program();
//! let cfg = AnalysisConfig::with_observers(p.bitwidth, &["d/block:6", "d/addr"]).unwrap();
//! let r = run(&p, &cfg).unwrap();
//! assert_eq!(r.observers[0].bits, 0.0);
//! assert_eq!(r.observers[1].bits, 12.0);
//! ```

use crate::ir::{parse, Program};

/// One corpus program and its pinned results.
#[derive(Clone, Copy, Debug)]
pub struct Kernel {
    pub name: &'static str,
    pub source: &'static str,
    /// `(observer, bits)` the analyzer must report.
    pub expected: &'static [(&'static str, f64)],
}

impl Kernel {
    /// # Panics
    /// If the embedded source does not parse, which the test suite rules out.
    pub fn program(&self) -> Program {
        parse(self.source).unwrap_or_else(|e| panic!("corpus/{}.ir: {e}", self.name))
    }

    pub fn file_name(&self) -> String {
        format!("{}.ir", self.name)
    }
}

macro_rules! kernel {
    ($name:literal, [$(($o:literal, $b:expr)),* $(,)?]) => {
        Kernel {
            name: $name,
            source: include_str!(concat!("../../../corpus/", $name, ".ir")),
            expected: &[$(($o, $b)),*],
        }
    };
}

/// Golden expectations, sorted by name.
pub fn manifest() -> &'static [Kernel] {
    MANIFEST
}

pub fn get(name: &str) -> Option<&'static Kernel> {
    MANIFEST.iter().find(|k| k.name == name)
}

static MANIFEST: &[Kernel] = &[
    kernel!("align", [("i/addr", 0.0), ("d/addr", 0.0), ("d/block:6", 0.0)]),
    kernel!("branch_in_block", [("i/addr", 1.0), ("i/block:6", 1.0), ("i/block:6~", 0.0), ("d/addr", 0.0)]),
    kernel!(
        "branch_offset",
        [("i/addr", 1.0), ("i/block:6~", 0.0), ("d/addr", 1.0), ("d/block:6", 1.0), ("d/page:12", 0.0)]
    ),
    kernel!("branch_offset_masked", [("i/addr", 1.0), ("d/addr", 1.0), ("d/bank:2", 1.0), ("d/block:6", 0.0)]),
    kernel!(
        "gather_aligned",
        [("i/addr", 0.0), ("d/addr", 12.0), ("d/bank:2", 4.0), ("d/block:6", 0.0), ("d/block:6~", 0.0)]
    ),
    kernel!("gather_defensive", [("i/addr", 0.0), ("d/addr", 0.0), ("d/bank:2", 0.0), ("d/block:6", 0.0)]),
    kernel!("scatter", [("i/addr", 0.0), ("d/addr", 0.0), ("d/block:6", 0.0)]),
    kernel!("secure_retrieve", [("i/addr", 0.0), ("d/addr", 0.0), ("d/bank:2", 0.0), ("d/block:6", 0.0)]),
    kernel!("sq_always_m_loose", [("i/addr", 1.0), ("i/block:6~", 0.0), ("i/block:5~", 1.0), ("d/addr", 0.0)]),
    kernel!("sq_always_m_tight", [("i/addr", 1.0), ("i/block:6~", 0.0), ("i/block:5~", 0.0), ("d/addr", 0.0)]),
    kernel!("sqm", [("i/addr", 1.0), ("i/block:6", 1.0), ("i/block:6~", 0.0), ("d/addr", 1.0), ("d/page:12", 1.0)]),
];
