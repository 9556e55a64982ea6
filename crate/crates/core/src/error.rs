use thiserror::Error;

/// Errors produced anywhere in the transcription pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("pitch {midi} outside A0..C8 (21..=108){}", .note.map(|i| format!(" at note {i}")).unwrap_or_default())]
    PitchRange { midi: i32, note: Option<usize> },

    #[error("onsets must be strictly increasing (note {index})")]
    Ordering { index: usize },

    #[error("notes {index} and {next} overlap")]
    Overlap { index: usize, next: usize },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("unsupported annotation construct `{token}`")]
    Unsupported { token: String },

    #[error("no artist mapping for segment `{0}`")]
    MissingArtist(String),

    #[error("needed {needed} beats after the chosen downbeat, only {available} available")]
    InsufficientBeats { needed: usize, available: usize },

    #[error("beat position {position} outside [0, {num_beats}]")]
    BeatRange { position: f64, num_beats: usize },

    #[error("features do not cover tick {tick} at {time_s:.4} s")]
    Coverage { tick: usize, time_s: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
