//! Deterministic simulator and protocol library for decentralized
//! zeroth-order training where clients exchange seed/scalar update messages
//! by flooding and aggregate them in a shared low-rank coordinate buffer.
//!
//! The crate is `no_std` (it needs `alloc`). Everything that touches the
//! filesystem, the command line or text formats lives in the `seedflood`
//! companion crate.
//!
//! Module map:
//!
//! * [`rng`]: seed-addressed random streams shared by every client.
//! * [`model`]: layered parameter containers and the synthetic tasks.
//! * [`topology`]: communication graphs, diameters and mixing matrices.
//! * [`subcge`]: shared subspace bases and the `U A Vᵀ` coordinate buffer.
//! * [`zo`]: two-point estimation with seed replay.
//! * [`protocol`]: wire format, flooding engine, gossip and traffic ledger.
//! * [`sim`]: round-based driver for SeedFlood and the gossip baselines.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod error;
pub mod model;
pub mod protocol;
pub mod real;
pub mod rng;
pub mod sim;
pub mod subcge;
pub mod topology;
pub mod zo;

pub use error::{Error, Result};
pub use real::{Precision, Real};
pub use rng::{RandomStream, Seed};
