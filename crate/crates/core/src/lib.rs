//! Learning to set letter spacing from glyph rasters.
//!
//! The crate covers the whole pipeline: a small autodiff engine
//! ([`numerics`]), font-record ingestion and a synthetic corpus with known
//! spacing ([`dataset`]), glyph geometry and a trainable image encoder
//! ([`features`]), the pairwise and set-wise spacing models ([`models`]),
//! heuristic baselines ([`baselines`]), training ([`training`]), metrics and
//! reports ([`eval`]) and word previews ([`render`]).

pub mod baselines;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod models;
pub mod numerics;
pub mod par;
pub mod pgm;
pub mod render;
pub mod training;

mod error;

pub use error::{Error, Result};
