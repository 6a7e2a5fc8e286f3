//! Static upper bounds on what a program leaks about its secrets through the
//! sequence of memory addresses it touches.
//!
//! Programs are written in a small register-machine IR ([`ir`]). The analyzer
//! ([`analyzer`]) interprets them over masked symbols ([`msym`]), which track
//! known and unknown bits of heap pointers, and records the accesses each
//! observer ([`observers`]) can see in a trace DAG ([`tracedag`]). Counting
//! the paths of that DAG bounds the number of distinguishable views; its
//! logarithm is the leak in bits. The [`oracle`] runs programs concretely and
//! checks every bound against exact view counts.
//!
//! ```
//! use leaktrace::analyzer::{run, AnalysisConfig};
//! use leaktrace::ir::parse;
//!
//! let p = parse("
//!     .bitwidth 12
//!     .high r1 {0, 1}
//!     MALLOC r2, 128
//!     CMP r1, 0
//!     JZ done
//!     ADD r2, 64
//! done:
//!     STORE [r2+0], r1
//!     HALT
//! ").unwrap();
//! let cfg = AnalysisConfig::with_observers(12, &["d/addr", "d/block:6"]).unwrap();
//! let report = run(&p, &cfg).unwrap();
//! assert_eq!(report.observers[0].bits, 1.0);
//! assert_eq!(report.observers[1].bits, 1.0);
//! ```

pub mod analyzer;
pub mod cli;
pub mod corpus;
pub mod ir;
pub mod msym;
pub mod observers;
pub mod oracle;
pub mod tracedag;
