//! Object-centric surrogate world model.
//!
//! Frames are segmented into solid-colour objects whose centroids form an
//! interpretable latent state. Latents are forecast by a [`predictor`], turned
//! back into frames by per-object pixel displacement ([`reconstruct`]) and
//! scored with centroid distances, pixel metrics and horizon safety verdicts.
//!
//! The crate is `no_std` + `alloc`; enable `std` for `std::error::Error`
//! impls and `serde` for (de)serialisation of configuration and results.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod envsim;
pub mod error;
pub mod metrics;
pub mod observation;
pub mod predictor;
pub mod reconstruct;
pub mod render;
pub mod safety;
pub mod segment;

pub use envsim::{Action, ControllerConfig, EnvId, EnvParams, Episode, SimState};
pub use error::{Error, Result};
pub use observation::Observation;
pub use render::Palette;
pub use segment::{Centroid, LatentState, SegmentMask};
