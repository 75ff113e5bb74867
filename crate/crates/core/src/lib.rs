//! Trip generation for station-based bike-share expansion.
//!
//! The crate is `no_std` (with `alloc`) and holds the numerical core:
//! built-environment features, localized spatial graphs, a small reverse-mode
//! differentiation kernel, the graph-attention demand model and its
//! baselines, the training harness, explanations, a synthetic city generator
//! and the what-if scenario engine. File formats, the CLI and the HTTP
//! service live in the companion `tripgen` crate.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod demand;
pub mod error;
pub mod explain;
pub mod geo;
pub mod graph;
pub mod linalg;
pub mod math;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod scenario;
pub mod station;
pub mod synth;
pub mod time;
pub mod train;

pub use error::{Error, Result};
pub use station::{StationId, StationRecord};
pub use time::{CivilDate, YearMonth};
