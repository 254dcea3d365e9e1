//! mdbook cannot test snippets that depend on workspace crates, so each
//! chapter is included here as a module doc and runs under `cargo test --doc`.
//! One module per chapter keeps failures traceable to their source file.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/tape.md")]
pub mod tape {}
#[doc = include_str!("../../../book/src/scan.md")]
pub mod scan {}
#[doc = include_str!("../../../book/src/mamba.md")]
pub mod mamba {}
#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}
#[doc = include_str!("../../../book/src/eeg.md")]
pub mod eeg {}
#[doc = include_str!("../../../book/src/dataset.md")]
pub mod dataset {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
