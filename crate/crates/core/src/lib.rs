//! Spatio-temporal video grounding toolkit: box and span geometry, benchmark
//! metrics, training losses, a query-guided tube decoder, time-aware frame
//! sequencing, and a synthesis pipeline for grounding training data.

pub mod decoder;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod jsonl;
pub mod losses;
pub mod metrics;
pub mod sequencing;
pub mod tensor;
pub mod unistg;

pub use error::{Error, Result};
pub use geometry::{BBox, TimeSpan, Tube};
