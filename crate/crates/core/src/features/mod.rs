//! Time-rate feature matrices and their beat-synchronous resampling.

mod audio;
mod mel;
mod resample;
mod ssft;

pub use audio::{read_wav, write_wav_f32, Audio};
pub use mel::{logmel, logmel_with, mel_bin_centers_hz, MelConfig};
pub use resample::{beatwise_resample, concat_features, ResampledFeatures};
pub use ssft::{load_features, read_ssft, save_features, write_ssft};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Features sampled uniformly in time: row `j` is centred at `t0_s + j / rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rate_hz: f64,
    t0_s: f64,
    frames: Array2<f32>,
}

impl FeatureMatrix {
    pub fn new(rate_hz: f64, t0_s: f64, frames: Array2<f32>) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::Invalid(format!("feature rate {rate_hz} must be positive")));
        }
        if !t0_s.is_finite() {
            return Err(Error::Invalid("feature origin must be finite".into()));
        }
        if frames.nrows() == 0 || frames.ncols() == 0 {
            return Err(Error::Invalid("feature matrix needs at least one frame and one dimension".into()));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("feature values must be finite".into()));
        }
        Ok(FeatureMatrix { rate_hz, t0_s, frames })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn t0_s(&self) -> f64 {
        self.t0_s
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frames(&self) -> &Array2<f32> {
        &self.frames
    }

    pub fn frame_time(&self, j: usize) -> f64 {
        self.t0_s + j as f64 / self.rate_hz
    }

    /// End of the covered span, `t0_s + n / rate_hz`.
    pub fn end_s(&self) -> f64 {
        self.t0_s + self.num_frames() as f64 / self.rate_hz
    }
}
