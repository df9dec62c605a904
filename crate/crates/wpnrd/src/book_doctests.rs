//! Compiles the book's code snippets as doctests so the guide and the crate
//! cannot drift apart. Only built under `cargo test --doc`.

#[doc = include_str!("../../../book/src/absorption.md")]
mod absorption_chapter {}

#[doc = include_str!("../../../book/src/circuit.md")]
mod circuit_chapter {}

#[doc = include_str!("../../../book/src/photon-statistics.md")]
mod photon_statistics_chapter {}

#[doc = include_str!("../../../book/src/fidelity.md")]
mod fidelity_chapter {}

#[doc = include_str!("../../../book/src/signal-processing.md")]
mod signal_processing_chapter {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli_chapter {}
