//! Analysis toolkit for decentralized coded caching of chunked video under
//! asynchronous user arrivals and audience retention.
//!
//! The crate is organised around the delivery pipeline:
//!
//! * [`catalog`]: library, popularity/retention model and demand-process
//!   probabilities.
//! * [`cache`]: per-chunk caching fractions and exclusive subfile sizes.
//! * [`rate`]: closed-form average rates for random (RAN), subset-XOR (MAN)
//!   and partial coded caching (PCC) delivery, plus per-slot rates.
//! * [`allocation`]: popularity-based and numerically optimized cache
//!   allocation.
//! * [`bound`]: genie-aided cut-set lower bound on the average rate.
//! * [`sim`]: slotted Monte Carlo simulator and a bit-level executor of the
//!   delivery algorithms.

pub mod allocation;
pub mod bound;
pub mod cache;
pub mod catalog;
pub mod error;
pub mod numeric;
pub mod rate;
pub mod sim;

pub use error::{Error, Result};
