use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Audio {
    pub samples: Vec<f32>,
    pub sample_rate_hz: u32,
}

impl Audio {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

fn wav_err(e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format(format!("wav: {other}")),
    }
}

/// Reads a PCM16 or float32 WAV file, averaging channels down to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let mut reader = WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        (fmt, bits) => return Err(Error::Format(format!("unsupported wav encoding {fmt:?} {bits}-bit"))),
    };
    let channels = spec.channels.max(1) as usize;
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    Ok(Audio { samples, sample_rate_hz: spec.sample_rate })
}

/// Writes mono float32 WAV.
pub fn write_wav_f32(path: impl AsRef<Path>, audio: &Audio) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &audio.samples {
        writer.write_sample(s).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stereo_pcm16_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = WavSpec { channels: 2, sample_rate: 8000, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for _ in 0..4 {
            w.write_sample(16384i16).unwrap();
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav(&path).unwrap();
        assert_eq!(a.sample_rate_hz, 8000);
        assert_eq!(a.samples, vec![0.25; 4]);
    }

    #[test]
    fn float_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let audio = Audio { samples: vec![0.0, 0.5, -0.25], sample_rate_hz: 16000 };
        write_wav_f32(&path, &audio).unwrap();
        assert_eq!(read_wav(&path).unwrap(), audio);
    }
}
