//! Melody transcription on a beat-synchronous grid.
//!
//! The pipeline: functional annotations are converted to absolute segments
//! ([`htparse`]), snapped to a detected beat grid ([`align`]), audio features
//! are pooled to one vector per sixteenth note ([`features`]), a Transformer
//! labeler predicts an onset pitch (or nothing) per sixteenth ([`labeler`]),
//! transcripts are scored with octave-invariant note-wise F1 ([`eval`]), and
//! melody plus chords are engraved as a lead sheet ([`leadsheet`]). [`synth`] renders
//! synthetic segments for end-to-end checks.

pub mod align;
pub mod error;
pub mod eval;
pub mod features;
pub mod htparse;
pub mod labeler;
pub mod leadsheet;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
