//! The guide's chapters, compiled as doc-tests so every snippet in the book
//! runs under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/ir.md")]
pub mod ir {}
#[doc = include_str!("../../../book/src/masked-symbols.md")]
pub mod masked_symbols {}
#[doc = include_str!("../../../book/src/observers.md")]
pub mod observers {}
#[doc = include_str!("../../../book/src/trace-dags.md")]
pub mod trace_dags {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/validation.md")]
pub mod validation {}
#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
