//! Compiles and runs the Rust snippets of the guide in `book/src` as
//! doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/quickstart.md")]
mod quickstart {}

#[doc = include_str!("../../../book/src/configuration.md")]
mod configuration {}

#[doc = include_str!("../../../book/src/data.md")]
mod data {}

#[doc = include_str!("../../../book/src/mechanism.md")]
mod mechanism {}

#[doc = include_str!("../../../book/src/library.md")]
mod library {}

#[doc = include_str!("../../../book/src/metrics.md")]
mod metrics {}

#[doc = include_str!("../../../book/src/reproducibility.md")]
mod reproducibility {}

#[doc = include_str!("../../../book/src/results.md")]
mod results {}
