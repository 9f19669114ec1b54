//! Optimal data-sharing and targeted-advertising mechanisms.
//!
//! Merchants hold customer datasets and private per-click margins. A designer
//! buys data, sells ad slots, and allocates each customer to the merchant with
//! the highest quality score `ω_i g_i(θ_i)`, where `g_i` is an ironed weighted
//! virtual type function. This crate computes those scoring rules, the
//! stylized closed forms, the continuum ironing system, the large-market
//! three-market design, and numerical verification oracles.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod continuum;
pub mod dist;
pub mod error;
pub mod finite;
pub mod interim;
pub mod largemarket;
pub mod quad;
pub mod scoring;
pub mod stylized;
pub mod verify;

pub use dist::{Side, TypeDistribution, WelfareWeight};
pub use error::{Error, Result};
pub use scoring::ScoringRule;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
