//! Compiles every chapter of the guide as documentation so its code blocks
//! run under `cargo test`.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/corpus_proxy.md")]
pub mod corpus_proxy {}
#[doc = include_str!("../../../book/src/classification.md")]
pub mod classification {}
#[doc = include_str!("../../../book/src/uncertainty.md")]
pub mod uncertainty {}
#[doc = include_str!("../../../book/src/quadrants.md")]
pub mod quadrants {}
#[doc = include_str!("../../../book/src/reporting.md")]
pub mod reporting {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
