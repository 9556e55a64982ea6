//! Synthetic segments: random diatonic melodies rendered as enveloped sine tones over a
//! constant-tempo beat grid, for end-to-end testing without real recordings.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::BeatGrid;
use crate::error::Result;
use crate::features::Audio;
use crate::htparse::stratified_split;
use crate::types::{
    ChordEvent, ChordQuality, ChordSymbol, KeySignature, Meter, Mode, Pitch, PitchClass, ScoreMelody, ScoreNote, Segment,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sample_rate_hz: u32,
    pub beats: usize,
    pub bpm_min: f64,
    pub bpm_max: f64,
    pub amplitude: f64,
    /// Also render a quiet block-chord accompaniment (one chord per bar).
    pub with_chords: bool,
    /// Segments per artist, for artist-stratified splitting.
    pub segments_per_artist: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sample_rate_hz: 16_000,
            beats: 16,
            bpm_min: 60.0,
            bpm_max: 180.0,
            amplitude: 0.3,
            with_chords: false,
            segments_per_artist: 2,
        }
    }
}

/// One generated segment with its audio, beat grid and tempo.
#[derive(Debug, Clone)]
pub struct SynthSegment {
    pub segment: Segment,
    pub artist: String,
    pub audio: Audio,
    pub grid: BeatGrid,
    pub bpm: f64,
}

fn random_melody(rng: &mut ChaCha8Rng, key: KeySignature, beats: usize) -> ScoreMelody {
    let scale = key.mode.scale();
    // Tonic register near middle C.
    let base = 60 + (key.tonic.index() as i32 + 6).rem_euclid(12) - 6;
    let mut degree: i32 = rng.gen_range(3..10);
    let end = 4 * beats as u32;
    let mut notes = Vec::new();
    let mut t = 0u32;
    if rng.gen_bool(0.3) {
        t = 2 * rng.gen_range(1..3);
    }
    while t < end {
        let duration = [2, 4, 4, 4, 6, 8][rng.gen_range(0..6)].min(end - t);
        degree = (degree + rng.gen_range(-3..=3)).clamp(0, 13);
        let midi = base + scale[(degree % 7) as usize] + 12 * (degree / 7) - 7;
        notes.push(ScoreNote::new(t, duration, Pitch::new(midi).expect("in range")).expect("positive duration"));
        t += duration;
        if rng.gen_bool(0.15) {
            t += 2 * rng.gen_range(1..3);
        }
    }
    ScoreMelody::new(notes).expect("generated in order")
}

fn diatonic_chords(rng: &mut ChaCha8Rng, key: KeySignature, beats: usize) -> Vec<ChordEvent> {
    let scale = key.mode.scale();
    let triads = match key.mode {
        Mode::Major => [ChordQuality::Maj, ChordQuality::Min, ChordQuality::Min, ChordQuality::Maj, ChordQuality::Maj, ChordQuality::Min, ChordQuality::Dim],
        Mode::Minor => [ChordQuality::Min, ChordQuality::Dim, ChordQuality::Maj, ChordQuality::Min, ChordQuality::Min, ChordQuality::Maj, ChordQuality::Maj],
    };
    (0..beats.div_ceil(4))
        .map(|bar| {
            let d = if bar == 0 { 0 } else { [0, 3, 4, 5][rng.gen_range(0..4)] };
            let onset = 16 * bar as u32;
            ChordEvent {
                onset_ticks: onset,
                duration_ticks: (16u32).min(4 * beats as u32 - onset),
                chord: ChordSymbol::new(key.tonic.transpose(scale[d]), triads[d]),
            }
        })
        .collect()
}

/// Attack 10 ms, exponential decay, 30 ms release ending at `len_s`.
fn envelope(t: f64, len_s: f64) -> f64 {
    let attack = (t / 0.010).min(1.0);
    let release = ((len_s - t) / 0.030).clamp(0.0, 1.0);
    attack * release * (-t / 0.8).exp()
}

fn add_tone(out: &mut [f32], sr: f64, start_s: f64, len_s: f64, freq: f64, amp: f64) {
    let first = (start_s * sr).ceil() as usize;
    let last = (((start_s + len_s) * sr).floor() as usize).min(out.len().saturating_sub(1));
    for (i, s) in out.iter_mut().enumerate().take(last + 1).skip(first) {
        let t = i as f64 / sr - start_s;
        *s += (amp * envelope(t, len_s) * (2.0 * PI * freq * t).sin()) as f32;
    }
}

/// Generates segment `index` from its own random stream.
pub fn synth_segment(index: usize, seed: u64, cfg: &SynthConfig) -> SynthSegment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mode = if rng.gen_bool(0.5) { Mode::Major } else { Mode::Minor };
    let key = KeySignature::new(PitchClass::wrapping(rng.gen_range(0..12)), mode);
    let bpm = rng.gen_range(cfg.bpm_min..=cfg.bpm_max);
    let period = 60.0 / bpm;
    let lead_in = rng.gen_range(0.5..2.0);
    let melody = random_melody(&mut rng, key, cfg.beats);
    let chords = if cfg.with_chords { diatonic_chords(&mut rng, key, cfg.beats) } else { Vec::new() };

    let sr = cfg.sample_rate_hz as f64;
    let duration = lead_in + cfg.beats as f64 * period + 1.0;
    let mut samples = vec![0.0f32; (duration * sr).ceil() as usize];
    let time = |tick: u32| lead_in + tick as f64 / 4.0 * period;
    for n in melody.notes() {
        let len = time(n.end_ticks()) - time(n.onset_ticks);
        add_tone(&mut samples, sr, time(n.onset_ticks), len, n.pitch.frequency_hz(), cfg.amplitude);
    }
    for c in &chords {
        let len = time(c.onset_ticks + c.duration_ticks) - time(c.onset_ticks);
        for pc in c.chord.pitch_classes() {
            let f = Pitch::new(48 + pc.index() as i32).expect("in range").frequency_hz();
            add_tone(&mut samples, sr, time(c.onset_ticks), len, f, cfg.amplitude * 0.25);
        }
    }

    // Grid over the whole file; the segment starts on a downbeat after a few pickup beats.
    let pickup = (lead_in / period).floor() as usize;
    let first = lead_in - pickup as f64 * period;
    let count = ((duration - first) / period).floor() as usize + 1;
    let times: Vec<f64> = (0..count).map(|i| first + i as f64 * period).collect();
    let flags: Vec<bool> = (0..count).map(|i| (i as isize - pickup as isize).rem_euclid(4) == 0).collect();
    let grid = BeatGrid::new(times, flags).expect("increasing grid with a downbeat");
    let jitter = rng.gen_range(-0.3..0.3) * period;

    let id = format!("synth-{index:04}");
    let segment = Segment {
        id: id.clone(),
        audio_ref: format!("{id}.wav"),
        split: None,
        user_start_s: (lead_in + jitter).max(0.0),
        user_end_s: lead_in + cfg.beats as f64 * period,
        meter: Meter::common_time(),
        key,
        melody,
        chords,
    };
    SynthSegment {
        segment,
        artist: format!("artist-{:03}", index / cfg.segments_per_artist.max(1)),
        audio: Audio { samples, sample_rate_hz: cfg.sample_rate_hz },
        grid,
        bpm,
    }
}

/// `n` segments with an artist-stratified 8:1:1 split.
pub fn synth_dataset(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<SynthSegment>> {
    let mut items: Vec<SynthSegment> = (0..n).map(|i| synth_segment(i, seed, cfg)).collect();
    let artists: HashMap<String, String> = items.iter().map(|s| (s.segment.id.clone(), s.artist.clone())).collect();
    let segments: Vec<Segment> = items.iter().map(|s| s.segment.clone()).collect();
    for (item, seg) in items.iter_mut().zip(stratified_split(&segments, &artists, [8, 1, 1], seed)?) {
        item.segment.split = seg.split;
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::refine_alignment;
    use crate::types::Split;

    #[test]
    fn segments_are_valid_and_seeded() {
        let cfg = SynthConfig::default();
        let a = synth_segment(3, 9, &cfg);
        let b = synth_segment(3, 9, &cfg);
        assert_eq!(a.segment, b.segment);
        assert_eq!(a.audio, b.audio);
        a.segment.validate().unwrap();
        assert!(a.segment.num_beats() <= 16);
        assert!((60.0..=180.0).contains(&a.bpm));
        assert_ne!(synth_segment(4, 9, &cfg).segment.melody, a.segment.melody);
    }

    #[test]
    fn alignment_recovers_the_true_downbeat() {
        let cfg = SynthConfig::default();
        for i in 0..20 {
            let s = synth_segment(i, 1, &cfg);
            let map = refine_alignment(&s.grid, s.segment.user_start_s, cfg.beats).unwrap();
            let period = 60.0 / s.bpm;
            let lead_in = s.segment.user_end_s - cfg.beats as f64 * period;
            assert!((map.start_s() - lead_in).abs() < 1e-9, "segment {i}");
            assert!(map.end_s() < s.audio.duration_s());
        }
    }

    #[test]
    fn dataset_split_proportions() {
        let cfg = SynthConfig { beats: 4, ..SynthConfig::default() };
        let d = synth_dataset(40, 2, &cfg).unwrap();
        let count = |sp| d.iter().filter(|s| s.segment.split == Some(sp)).count();
        assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (32, 4, 4));
    }

    #[test]
    fn chords_rendered_when_asked() {
        let cfg = SynthConfig { with_chords: true, ..SynthConfig::default() };
        let s = synth_segment(0, 5, &cfg);
        assert_eq!(s.segment.chords.len(), 4);
        assert_eq!(s.segment.chords[0].chord.root, s.segment.key.tonic);
        s.segment.validate().unwrap();
    }
}
