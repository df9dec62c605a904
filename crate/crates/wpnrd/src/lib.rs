//! Simulator for waveguide photon-number-resolving detectors (WPNRDs) built
//! from N series-connected superconducting nanowires on top of a ridge
//! waveguide, read out through a single electrical port.
//!
//! The crate models the full measurement chain of such a detector:
//!
//! - [`absorption`] — modal absorption of the guided mode, partitioned among
//!   the wires (`1 - exp(-alpha L)` with central/lateral group coefficients).
//! - [`circuit`] — the electro-thermal readout: each wire is a kinetic
//!   inductance with a two-state hotspot, shunted by an integrated resistor;
//!   the chain drives a load. Transient pulses, IV curve, decay and recovery
//!   times come from an RK4 integration of the piecewise-linear network.
//! - [`photonstats`] — photon sources, the efficiency chain, exact P(m|n)
//!   click statistics and a deterministic, partition-invariant Monte Carlo.
//! - [`fidelity`] — photon-number-resolution quality: P(m|n) matrices, the
//!   multiplicative fidelity breakdown, and pulse-height discrimination
//!   fidelity from Gaussian peak overlap.
//! - [`signalproc`] — the measurement chain seen by the scope: single-pole
//!   band-pass, additive noise, moving average, peak extraction, pulse-height
//!   histograms and multi-Gaussian fitting.
//! - [`config`] + [`runner`] — a TOML experiment description and the CLI
//!   subcommands (`absorb`, `iv`, `pulse`, `mc`, `fidelity`, `histogram`)
//!   that export CSV/JSON artifacts.
//!
//! The default parameter set reproduces the reference four-wire device:
//! 76% TE / 86% TM absorptance over 30 um, a 152 ohm resistive IV branch,
//! a 5.6 ns band-passed 1/e pulse decay, and the P(2|2) fidelity ledger.
//! See the `book/` guide for worked examples.

pub mod absorption;
pub mod circuit;
pub mod config;
pub mod error;
pub mod fidelity;
pub mod photonstats;
pub mod runner;
pub mod signalproc;

#[cfg(doctest)]
mod book_doctests;

pub use absorption::{AbsorptionModel, Polarization, WireGroup, WireProbabilityVector};
pub use circuit::{DetectorCircuit, PulseTrace, SwitchEvent, WireParams};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use fidelity::{FidelityLedger, PeakModel, PnrMatrix};
pub use photonstats::{
    CountStatistics, DetectionDistribution, EfficiencyChain, SourceConfig, SourceKind,
};
pub use signalproc::{FilterSpec, GaussianFit, Histogram};
