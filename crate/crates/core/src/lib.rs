//! Behavioral simulator for an in-memory Bayesian inference engine built on a
//! multi-level-cell crossbar.
//!
//! The pipeline is: load a [`data::Dataset`], train a Gaussian naive Bayes
//! model ([`gnbc`]), convert its log-probabilities into column-normalized,
//! quantized cell states ([`mapping`]), program them into a virtual array and
//! run inference as row-current accumulation followed by winner-take-all
//! selection ([`crossbar`]). [`experiments`] drives the multi-epoch
//! benchmark protocol and emits reports.

pub mod crossbar;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gnbc;
pub mod mapping;
pub mod seed;

pub use error::{Error, Result};
