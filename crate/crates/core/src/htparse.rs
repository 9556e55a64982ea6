//! Functional (scale-degree / roman-numeral) annotation ingestion.
//!
//! Annotations arrive relative to a key: melody notes as scale degrees with
//! accidentals and relative octaves, chords as roman numerals. This module
//! converts them into the absolute [`Segment`] format and assigns
//! artist-stratified dataset splits.
//!
//! # Functional input schema
//!
//! ```json
//! {
//!   "id": "seg-001",
//!   "audio_ref": "yt:xyz",
//!   "artist": "Some Band",
//!   "user_start_s": 12.3,
//!   "user_end_s": 25.0,
//!   "meter": { "beats_per_bar": 4, "beat_unit": 4 },
//!   "key": { "tonic_pc": 7, "mode": "major" },
//!   "notes": [
//!     { "scale_degree": 1, "accidental": 0, "rel_octave": 0,
//!       "onset_beats": { "num": 0, "den": 1 }, "duration_beats": { "num": 1, "den": 2 } }
//!   ],
//!   "chords": [
//!     { "degree": 4, "accidental": 0, "quality": "triad", "borrowed_mode": null,
//!       "onset_beats": { "num": 0, "den": 1 }, "duration_beats": { "num": 4, "den": 1 } }
//!   ]
//! }
//! ```
//!
//! `artist`, `accidental`, `rel_octave`, `borrowed_mode` and `chords` are optional.
//! Beat positions are rationals whose reduced denominator divides 4. Chords may
//! also carry `inversion`, `applied` (secondary function target) and
//! `suspensions`; any non-default value is rejected as unsupported, as are
//! non-empty `key_changes` / `meter_changes` lists.
//!
//! Only natural minor is used for minor keys; there is no harmonic-minor
//! raised seventh. Borrowed chords are expressed with `borrowed_mode`.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::types::{
    canonical_octave_shift, ChordEvent, ChordQuality, ChordSymbol, KeySignature, Melody, Meter, Mode,
    Pitch, PitchClass, ScoreNote, Segment, Split, TICKS_PER_BEAT,
};

/// A beat position or length as `num / den` beats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeatFraction {
    pub num: i64,
    pub den: i64,
}

impl BeatFraction {
    pub fn to_ticks(self) -> std::result::Result<u32, String> {
        if self.den <= 0 {
            return Err(format!("denominator {} must be positive", self.den));
        }
        if self.num < 0 {
            return Err(format!("negative beat value {}/{}", self.num, self.den));
        }
        let scaled = self.num * TICKS_PER_BEAT as i64;
        if scaled % self.den != 0 {
            return Err(format!("{}/{} is not on the sixteenth-note grid", self.num, self.den));
        }
        u32::try_from(scaled / self.den).map_err(|_| format!("{}/{} too large", self.num, self.den))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalNote {
    pub scale_degree: i32,
    #[serde(default)]
    pub accidental: i32,
    #[serde(default)]
    pub rel_octave: i32,
    pub onset_beats: BeatFraction,
    pub duration_beats: BeatFraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityMarker {
    Triad,
    Seventh,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalChord {
    pub degree: i32,
    #[serde(default)]
    pub accidental: i32,
    #[serde(rename = "quality")]
    pub quality_marker: QualityMarker,
    #[serde(default)]
    pub borrowed_mode: Option<Mode>,
    pub onset_beats: BeatFraction,
    pub duration_beats: BeatFraction,
    #[serde(default)]
    pub inversion: u8,
    #[serde(default)]
    pub applied: u8,
    #[serde(default)]
    pub suspensions: Vec<u8>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionalDoc {
    id: String,
    audio_ref: String,
    #[serde(default)]
    artist: Option<String>,
    user_start_s: f64,
    user_end_s: f64,
    meter: Meter,
    key: KeySignature,
    notes: Vec<FunctionalNote>,
    #[serde(default)]
    chords: Vec<FunctionalChord>,
    #[serde(default)]
    key_changes: Vec<serde_json::Value>,
    #[serde(default)]
    meter_changes: Vec<serde_json::Value>,
}

/// Result of converting one functional annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conversion {
    pub segment: Segment,
    pub artist: Option<String>,
    pub warnings: Vec<String>,
}

const CHECK_DEGREE: std::ops::RangeInclusive<i32> = 1..=7;
const CHECK_ACCIDENTAL: std::ops::RangeInclusive<i32> = -2..=2;

/// MIDI number of the tonic in the reference octave: the tonic nearest C4, spanning G3..F#4.
fn tonic_base(tonic: PitchClass) -> i32 {
    60 + (tonic.index() as i32 + 6).rem_euclid(12) - 6
}

/// Absolute MIDI number of a scale degree before octave canonicalization.
pub fn degree_to_midi(key: KeySignature, note: &FunctionalNote) -> i32 {
    let offset = key.mode.scale()[(note.scale_degree - 1) as usize];
    tonic_base(key.tonic) + offset + note.accidental + 12 * note.rel_octave
}

/// Converts a single scale degree to a pitch, without melody-level octave canonicalization.
pub fn degree_to_pitch(key: KeySignature, note: &FunctionalNote) -> Result<Pitch> {
    if !CHECK_DEGREE.contains(&note.scale_degree) {
        return Err(Error::Invalid(format!("scale degree {} outside 1..=7", note.scale_degree)));
    }
    Pitch::new(degree_to_midi(key, note))
}

fn triad_quality(mode: Mode, degree: i32) -> ChordQuality {
    use ChordQuality::*;
    let major = [Maj, Min, Min, Maj, Maj, Min, Dim];
    let minor = [Min, Dim, Maj, Min, Min, Maj, Maj];
    let table = if mode == Mode::Major { major } else { minor };
    table[(degree - 1) as usize]
}

fn seventh_quality(mode: Mode, degree: i32) -> ChordQuality {
    use ChordQuality::*;
    let major = [Maj7, Min7, Min7, Maj7, Dom7, Min7, Hdim7];
    let minor = [Min7, Hdim7, Maj7, Min7, Min7, Maj7, Dom7];
    let table = if mode == Mode::Major { major } else { minor };
    table[(degree - 1) as usize]
}

/// Resolves a roman numeral against a key using the diatonic tables of the effective mode.
pub fn roman_to_chord(key: KeySignature, chord: &FunctionalChord) -> Result<ChordSymbol> {
    if chord.inversion != 0 {
        return Err(Error::Unsupported { token: format!("inversion={}", chord.inversion) });
    }
    if chord.applied != 0 {
        return Err(Error::Unsupported { token: format!("applied={}", chord.applied) });
    }
    if !chord.suspensions.is_empty() {
        return Err(Error::Unsupported { token: format!("suspensions={:?}", chord.suspensions) });
    }
    if !CHECK_DEGREE.contains(&chord.degree) {
        return Err(Error::Invalid(format!("chord degree {} outside 1..=7", chord.degree)));
    }
    let mode = chord.borrowed_mode.unwrap_or(key.mode);
    let root = key
        .tonic
        .transpose(mode.scale()[(chord.degree - 1) as usize] + chord.accidental);
    let quality = match chord.quality_marker {
        QualityMarker::Triad => triad_quality(mode, chord.degree),
        QualityMarker::Seventh => seventh_quality(mode, chord.degree),
    };
    Ok(ChordSymbol::new(root, quality))
}

fn field_err(path: String, message: impl Into<String>) -> Error {
    Error::Parse { path, message: message.into() }
}

fn relocate(path: String, e: Error) -> Error {
    match e {
        Error::Unsupported { .. } => e,
        other => field_err(path, other.to_string()),
    }
}

/// Parses a functional annotation into an absolute segment (split left unset).
pub fn parse_segment(functional_json: &[u8]) -> Result<Segment> {
    convert_functional(functional_json).map(|c| c.segment)
}

/// Parses a functional annotation, keeping the artist and any warnings.
pub fn convert_functional(functional_json: &[u8]) -> Result<Conversion> {
    let de = &mut serde_json::Deserializer::from_slice(functional_json);
    let doc: FunctionalDoc = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        field_err(path, e.into_inner().to_string())
    })?;

    if !doc.key_changes.is_empty() {
        return Err(Error::Unsupported { token: "key_changes".into() });
    }
    if !doc.meter_changes.is_empty() {
        return Err(Error::Unsupported { token: "meter_changes".into() });
    }

    let mut warnings = Vec::new();
    if doc.meter.is_compound() {
        warnings.push(format!(
            "compound meter {}/{} annotated with 4 ticks per notated beat",
            doc.meter.beats_per_bar, doc.meter.beat_unit
        ));
    }

    let mut raw_notes = Vec::with_capacity(doc.notes.len());
    for (i, n) in doc.notes.iter().enumerate() {
        if !CHECK_DEGREE.contains(&n.scale_degree) {
            return Err(field_err(format!("notes[{i}].scale_degree"), format!("{} outside 1..=7", n.scale_degree)));
        }
        if !CHECK_ACCIDENTAL.contains(&n.accidental) {
            return Err(field_err(format!("notes[{i}].accidental"), format!("{} outside -2..=2", n.accidental)));
        }
        let onset = n.onset_beats.to_ticks().map_err(|m| field_err(format!("notes[{i}].onset_beats"), m))?;
        let duration = n
            .duration_beats
            .to_ticks()
            .map_err(|m| field_err(format!("notes[{i}].duration_beats"), m))?;
        if duration == 0 {
            return Err(field_err(format!("notes[{i}].duration_beats"), "zero duration"));
        }
        raw_notes.push((onset, duration, degree_to_midi(doc.key, n)));
    }

    let midis: Vec<i32> = raw_notes.iter().map(|n| n.2).collect();
    let shift = 12 * canonical_octave_shift(&midis);
    let notes = raw_notes
        .iter()
        .enumerate()
        .map(|(i, &(onset, duration, midi))| {
            let pitch = Pitch::new(midi + shift).map_err(|_| Error::PitchRange { midi: midi + shift, note: Some(i) })?;
            Ok(ScoreNote { onset_ticks: onset, duration_ticks: duration, pitch })
        })
        .collect::<Result<Vec<_>>>()?;
    let melody = Melody::new(notes).map_err(|e| relocate("notes".into(), e))?;

    let mut chords = Vec::with_capacity(doc.chords.len());
    for (i, c) in doc.chords.iter().enumerate() {
        if !CHECK_DEGREE.contains(&c.degree) {
            return Err(field_err(format!("chords[{i}].degree"), format!("{} outside 1..=7", c.degree)));
        }
        if !CHECK_ACCIDENTAL.contains(&c.accidental) {
            return Err(field_err(format!("chords[{i}].accidental"), format!("{} outside -2..=2", c.accidental)));
        }
        let chord = roman_to_chord(doc.key, c).map_err(|e| relocate(format!("chords[{i}]"), e))?;
        let onset = c.onset_beats.to_ticks().map_err(|m| field_err(format!("chords[{i}].onset_beats"), m))?;
        let duration = c
            .duration_beats
            .to_ticks()
            .map_err(|m| field_err(format!("chords[{i}].duration_beats"), m))?;
        if duration == 0 {
            return Err(field_err(format!("chords[{i}].duration_beats"), "zero duration"));
        }
        chords.push(ChordEvent { onset_ticks: onset, duration_ticks: duration, chord });
    }

    let segment = Segment {
        id: doc.id,
        audio_ref: doc.audio_ref,
        split: None,
        user_start_s: doc.user_start_s,
        user_end_s: doc.user_end_s,
        meter: doc.meter,
        key: doc.key,
        melody,
        chords,
    };
    segment.validate().map_err(|e| relocate("chords".into(), e))?;
    Ok(Conversion { segment, artist: doc.artist, warnings })
}

/// Assigns splits so that each artist lands wholly in one split, approximating `ratios` by
/// segment count. Artists are shuffled by `seed`, then placed largest first into the split
/// furthest below its target.
pub fn stratified_split(
    segments: &[Segment],
    artist_of: &HashMap<String, String>,
    ratios: [u32; 3],
    seed: u64,
) -> Result<Vec<Segment>> {
    let mut by_artist: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, seg) in segments.iter().enumerate() {
        let artist = artist_of.get(&seg.id).ok_or_else(|| Error::MissingArtist(seg.id.clone()))?;
        by_artist.entry(artist.as_str()).or_default().push(i);
    }
    let ratio_sum: u32 = ratios.iter().sum();
    if ratio_sum == 0 {
        return Err(Error::Invalid("split ratios sum to zero".into()));
    }

    let mut artists: Vec<(&str, Vec<usize>)> = by_artist.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    artists.shuffle(&mut rng);
    artists.sort_by(|a, b| b.1.len().cmp(&a.1.len()));

    let total = segments.len() as f64;
    let targets: Vec<f64> = ratios.iter().map(|&r| total * r as f64 / ratio_sum as f64).collect();
    let mut counts = [0usize; 3];
    let mut out = segments.to_vec();
    for (_, members) in &artists {
        let mut best = 0;
        for k in 1..3 {
            if targets[k] - counts[k] as f64 > targets[best] - counts[best] as f64 {
                best = k;
            }
        }
        counts[best] += members.len();
        for &i in members {
            out[i].split = Some(Split::ALL[best]);
        }
    }
    Ok(out)
}
