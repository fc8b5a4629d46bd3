//! Fault localization and repair for neural-network model conversions.
//!
//! Models are exchanged in NMIF ([`nmif`]), executed by a deterministic
//! reference [`interpreter`], compared statically ([`diffcore`]) and
//! dynamically ([`differential`]), localized along a conversion chain
//! ([`localize`]) and patched by replayable graph edits ([`repair`]).

pub mod diffcore;
pub mod differential;
pub mod fixture;
pub mod interpreter;
pub mod localize;
pub mod nmif;
pub mod plot;
pub mod repair;
