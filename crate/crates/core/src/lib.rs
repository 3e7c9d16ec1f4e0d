//! Pipeline-parallel schedule laboratory.
//!
//! Schedules are built as discrete worker×slot tables ([`schedule`]), checked
//! against closed-form bubble formulas ([`analytic`]), lowered into
//! communication-annotated execution graphs ([`execgraph`]), costed with a
//! Hockney/roofline model ([`costmodel`]) and executed by a deterministic
//! discrete-event engine ([`simulator`]). [`sweep`] ties the levels together
//! over a grid of system regimes and emits CSV datasets.

pub mod analytic;
pub mod costmodel;
pub mod error;
pub mod execgraph;
pub mod schedule;
pub mod simulator;
pub mod sweep;

pub use error::{Error, Result};
