use std::f64::consts::PI;

use ndarray::Array2;
use rubato::{FftFixedInOut, Resampler};
use rustfft::{num_complex::Complex, FftPlanner};

use super::{Audio, FeatureMatrix};
use crate::error::{Error, Result};

/// Log-mel front end parameters. The defaults give 229 bins at 31.25 frames/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_offset: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate_hz: 16_000,
            n_fft: 2048,
            hop: 512,
            n_mels: 229,
            fmin_hz: 30.0,
            fmax_hz: 8000.0,
            log_offset: 1e-6,
        }
    }
}

impl MelConfig {
    pub fn frame_rate_hz(&self) -> f64 {
        self.sample_rate_hz as f64 / self.hop as f64
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `n_mels + 2` filter edge frequencies, equally spaced on the HTK mel scale.
fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    let n = cfg.n_mels + 1;
    (0..=n).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64)).collect()
}

/// Centre frequency of each mel filter.
pub fn mel_bin_centers_hz(cfg: &MelConfig) -> Vec<f64> {
    let edges = mel_edges(cfg);
    edges[1..=cfg.n_mels].to_vec()
}

/// Triangular filters (peak 1) over FFT bins, stored sparsely as (first bin, weights).
fn mel_filters(cfg: &MelConfig) -> Vec<(usize, Vec<f64>)> {
    let edges = mel_edges(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let weights: Vec<(usize, f64)> = (0..n_bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            match weights.first() {
                Some(&(start, _)) => (start, weights.iter().map(|&(_, w)| w).collect()),
                None => (0, Vec::new()),
            }
        })
        .collect()
}

fn resample_to(samples: &[f32], from_hz: u32, to_hz: u32) -> Result<Vec<f64>> {
    let input: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    if from_hz == to_hz {
        return Ok(input);
    }
    let mut resampler = FftFixedInOut::<f64>::new(from_hz as usize, to_hz as usize, 1024, 1)
        .map_err(|e| Error::Input(format!("cannot resample {from_hz} Hz → {to_hz} Hz: {e}")))?;
    let delay = resampler.output_delay();
    let expected = (input.len() as u64 * to_hz as u64).div_ceil(from_hz as u64) as usize;
    let mut out = Vec::with_capacity(expected + delay + resampler.output_frames_max());
    let mut pos = 0;
    while out.len() < expected + delay {
        let need = resampler.input_frames_next();
        let mut chunk = vec![0.0; need];
        if pos < input.len() {
            let take = need.min(input.len() - pos);
            chunk[..take].copy_from_slice(&input[pos..pos + take]);
        }
        pos += need;
        let res = resampler
            .process(&[chunk], None)
            .map_err(|e| Error::Input(format!("resampling failed: {e}")))?;
        out.extend_from_slice(&res[0]);
    }
    Ok(out[delay..delay + expected].to_vec())
}

/// Log-amplitude mel spectrogram: 16 kHz audio, Hann window 2048, hop 512, 229 HTK mel bins over
/// 30–8000 Hz, `ln(mel magnitude + 1e-6)`. Frame `j` is centred on sample `j·hop` (zero padded),
/// giving `ceil(len / hop)` frames with `t0_s = 0`.
pub fn logmel(audio: &Audio) -> Result<FeatureMatrix> {
    logmel_with(audio, &MelConfig::default())
}

pub fn logmel_with(audio: &Audio, cfg: &MelConfig) -> Result<FeatureMatrix> {
    if audio.samples.is_empty() {
        return Err(Error::Input("audio is empty".into()));
    }
    if audio.sample_rate_hz == 0 {
        return Err(Error::Input("sample rate must be positive".into()));
    }
    let x = resample_to(&audio.samples, audio.sample_rate_hz, cfg.sample_rate_hz)?;
    let n_frames = x.len().div_ceil(cfg.hop).max(1);
    let half = cfg.n_fft / 2;
    let window: Vec<f64> = (0..cfg.n_fft)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / cfg.n_fft as f64).cos())
        .collect();
    let filters = mel_filters(cfg);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);

    let mut out = Array2::<f32>::zeros((n_frames, cfg.n_mels));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut mag = vec![0.0f64; half + 1];
    for j in 0..n_frames {
        let start = (j * cfg.hop) as isize - half as isize;
        for (i, slot) in buf.iter_mut().enumerate() {
            let idx = start + i as isize;
            let s = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] } else { 0.0 };
            *slot = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, m) in mag.iter_mut().enumerate() {
            *m = buf[k].norm();
        }
        for (m, (first, weights)) in filters.iter().enumerate() {
            let energy: f64 = weights.iter().zip(&mag[*first..]).map(|(w, v)| w * v).sum();
            out[[j, m]] = (energy + cfg.log_offset).ln() as f32;
        }
    }
    FeatureMatrix::new(cfg.frame_rate_hz(), 0.0, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, seconds: f64, sr: u32) -> Audio {
        let n = (seconds * sr as f64) as usize;
        Audio {
            samples: (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin() as f32).collect(),
            sample_rate_hz: sr,
        }
    }

    #[test]
    fn silence_is_log_offset() {
        let audio = Audio { samples: vec![0.0; 16000], sample_rate_hz: 16000 };
        let m = logmel(&audio).unwrap();
        assert_eq!(m.num_frames(), 32);
        assert_eq!((m.rate_hz(), m.dim()), (31.25, 229));
        let floor = (1e-6f64).ln();
        assert!(m.frames().iter().all(|&v| (v as f64 - floor).abs() < 1e-6));
    }

    #[test]
    fn sine_peaks_at_nearest_center() {
        let cfg = MelConfig::default();
        let centers = mel_bin_centers_hz(&cfg);
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - 440.0).abs().total_cmp(&(centers[b] - 440.0).abs()))
            .unwrap();
        let m = logmel(&sine(440.0, 1.0, 16000)).unwrap();
        // Interior frames: the analysis window lies fully inside the signal.
        for j in 2..m.num_frames() - 2 {
            let row = m.frames().row(j);
            let arg = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(arg, nearest, "frame {j}");
        }
    }

    #[test]
    fn other_rates_are_resampled() {
        let m = logmel(&sine(440.0, 1.0, 44100)).unwrap();
        assert_eq!((m.rate_hz(), m.dim(), m.num_frames()), (31.25, 229, 32));
        let base = logmel(&sine(440.0, 1.0, 16000)).unwrap();
        let (a, b) = (m.frames().row(16), base.frames().row(16));
        let arg = |r: ndarray::ArrayView1<f32>| (0..r.len()).max_by(|&x, &y| r[x].total_cmp(&r[y])).unwrap();
        assert_eq!(arg(a), arg(b));
    }

    #[test]
    fn empty_audio_rejected() {
        assert!(matches!(logmel(&Audio { samples: vec![], sample_rate_hz: 16000 }), Err(Error::Input(_))));
    }

    #[test]
    fn filter_edges_span_range() {
        let cfg = MelConfig::default();
        let edges = mel_edges(&cfg);
        assert_eq!(edges.len(), 231);
        assert!((edges[0] - 30.0).abs() < 1e-9 && (edges[230] - 8000.0).abs() < 1e-6);
    }
}
