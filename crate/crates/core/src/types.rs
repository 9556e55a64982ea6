//! Domain types shared by every stage of the pipeline.
//!
//! A melody note is an onset plus a pitch. Notes exist in two forms: score
//! form ([`ScoreNote`], positioned in sixteenth-note ticks of the metrical
//! grid) and performed form ([`PerfNote`], positioned in seconds). Both are
//! held in a [`Melody`], which enforces strictly increasing onsets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sixteenth-note ticks per beat.
pub const TICKS_PER_BEAT: u32 = 4;

/// Number of pitches in the transcription vocabulary (A0..=C8).
pub const PITCH_VOCAB: usize = 88;

/// Pitch vocabulary plus the "no onset" class.
pub const MELODY_CLASSES: usize = PITCH_VOCAB + 1;

/// A piano-range pitch, A0 (21) through C8 (108).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct Pitch(u8);

impl Pitch {
    pub const MIN: i32 = 21;
    pub const MAX: i32 = 108;

    pub fn new(midi: i32) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&midi) {
            Ok(Pitch(midi as u8))
        } else {
            Err(Error::PitchRange { midi, note: None })
        }
    }

    pub fn midi(self) -> i32 {
        self.0 as i32
    }

    pub fn pitch_class(self) -> PitchClass {
        PitchClass(self.0 % 12)
    }

    /// Label class of this pitch: 1 for A0 up to 88 for C8 (0 is reserved for "no onset").
    pub fn class_index(self) -> usize {
        (self.0 as i32 - Self::MIN + 1) as usize
    }

    pub fn from_class_index(class: usize) -> Result<Self> {
        if (1..=PITCH_VOCAB).contains(&class) {
            Ok(Pitch((class as i32 + Self::MIN - 1) as u8))
        } else {
            Err(Error::Invalid(format!("pitch class index {class} outside 1..=88")))
        }
    }

    pub fn transpose(self, semitones: i32) -> Result<Self> {
        Pitch::new(self.midi() + semitones)
    }

    pub fn frequency_hz(self) -> f64 {
        440.0 * 2f64.powf((self.midi() as f64 - 69.0) / 12.0)
    }
}

impl TryFrom<i32> for Pitch {
    type Error = Error;
    fn try_from(value: i32) -> Result<Self> {
        Pitch::new(value)
    }
}

impl From<Pitch> for i32 {
    fn from(p: Pitch) -> i32 {
        p.midi()
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.pitch_class().sharp_name(), self.midi() / 12 - 1)
    }
}

/// Pitch class, 0 = C through 11 = B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct PitchClass(u8);

const SHARP_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

impl PitchClass {
    pub fn new(pc: i32) -> Result<Self> {
        if (0..12).contains(&pc) {
            Ok(PitchClass(pc as u8))
        } else {
            Err(Error::Invalid(format!("pitch class {pc} outside 0..=11")))
        }
    }

    /// Reduces any integer modulo 12.
    pub fn wrapping(value: i32) -> Self {
        PitchClass(value.rem_euclid(12) as u8)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn transpose(self, semitones: i32) -> Self {
        Self::wrapping(self.0 as i32 + semitones)
    }

    pub fn sharp_name(self) -> &'static str {
        SHARP_NAMES[self.0 as usize]
    }
}

impl TryFrom<i32> for PitchClass {
    type Error = Error;
    fn try_from(value: i32) -> Result<Self> {
        PitchClass::new(value)
    }
}

impl From<PitchClass> for i32 {
    fn from(pc: PitchClass) -> i32 {
        pc.0 as i32
    }
}

/// A note positioned on the sixteenth-note grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreNote {
    pub onset_ticks: u32,
    pub duration_ticks: u32,
    #[serde(rename = "midi")]
    pub pitch: Pitch,
}

impl ScoreNote {
    pub fn new(onset_ticks: u32, duration_ticks: u32, pitch: Pitch) -> Result<Self> {
        let note = ScoreNote { onset_ticks, duration_ticks, pitch };
        note.validate()?;
        Ok(note)
    }

    pub fn end_ticks(&self) -> u32 {
        self.onset_ticks + self.duration_ticks
    }
}

/// A note positioned in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfNote {
    pub onset_s: f64,
    pub offset_s: f64,
    #[serde(rename = "midi")]
    pub pitch: Pitch,
}

/// Behaviour shared by score and performed notes.
pub trait Note: Clone {
    fn pitch(&self) -> Pitch;
    fn with_pitch(&self, pitch: Pitch) -> Self;
    /// Onset on whatever axis the note lives on (ticks or seconds).
    fn onset(&self) -> f64;
    fn validate(&self) -> Result<()>;
    /// Whether this note sounds past the onset of `next`.
    fn overlaps(&self, next: &Self) -> bool;
}

impl Note for ScoreNote {
    fn pitch(&self) -> Pitch {
        self.pitch
    }
    fn with_pitch(&self, pitch: Pitch) -> Self {
        ScoreNote { pitch, ..*self }
    }
    fn onset(&self) -> f64 {
        self.onset_ticks as f64
    }
    fn validate(&self) -> Result<()> {
        if self.duration_ticks == 0 {
            return Err(Error::Invalid("note duration must be at least one tick".into()));
        }
        Ok(())
    }
    fn overlaps(&self, next: &Self) -> bool {
        self.end_ticks() > next.onset_ticks
    }
}

impl Note for PerfNote {
    fn pitch(&self) -> Pitch {
        self.pitch
    }
    fn with_pitch(&self, pitch: Pitch) -> Self {
        PerfNote { pitch, ..*self }
    }
    fn onset(&self) -> f64 {
        self.onset_s
    }
    fn validate(&self) -> Result<()> {
        if !(self.onset_s.is_finite() && self.offset_s.is_finite()) || self.onset_s < 0.0 {
            return Err(Error::Invalid(format!("bad note times {} .. {}", self.onset_s, self.offset_s)));
        }
        if self.offset_s <= self.onset_s {
            return Err(Error::Invalid(format!(
                "offset {} not after onset {}",
                self.offset_s, self.onset_s
            )));
        }
        Ok(())
    }
    // Performed transcripts from external systems may overlap slightly; only ordering is enforced.
    fn overlaps(&self, _next: &Self) -> bool {
        false
    }
}

/// A monophonic note sequence with strictly increasing onsets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<N>", into = "Vec<N>", bound(serialize = "N: Note + Serialize", deserialize = "N: Note + Deserialize<'de>"))]
pub struct Melody<N> {
    notes: Vec<N>,
}

pub type ScoreMelody = Melody<ScoreNote>;
pub type PerfMelody = Melody<PerfNote>;

impl<N: Note> Melody<N> {
    pub fn new(notes: Vec<N>) -> Result<Self> {
        for (i, note) in notes.iter().enumerate() {
            note.validate()?;
            if let Some(next) = notes.get(i + 1) {
                if next.onset() <= note.onset() {
                    return Err(Error::Ordering { index: i + 1 });
                }
                if note.overlaps(next) {
                    return Err(Error::Overlap { index: i, next: i + 1 });
                }
            }
        }
        Ok(Melody { notes })
    }

    pub fn empty() -> Self {
        Melody { notes: Vec::new() }
    }

    pub fn notes(&self) -> &[N] {
        &self.notes
    }

    pub fn into_notes(self) -> Vec<N> {
        self.notes
    }

    pub fn len(&self) -> usize {
        self.notes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Shifts every pitch by `sigma` octaves.
    pub fn octave_shift(&self, sigma: i32) -> Result<Self> {
        self.transpose(12 * sigma)
    }

    pub fn transpose(&self, semitones: i32) -> Result<Self> {
        let notes = self
            .notes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let midi = n.pitch().midi() + semitones;
                Pitch::new(midi)
                    .map(|p| n.with_pitch(p))
                    .map_err(|_| Error::PitchRange { midi, note: Some(i) })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Melody { notes })
    }

    /// Octave shifts in `range` that keep every note inside the pitch vocabulary.
    pub fn feasible_shifts(&self, range: std::ops::RangeInclusive<i32>) -> Vec<i32> {
        let lo = self.notes.iter().map(|n| n.pitch().midi()).min();
        let hi = self.notes.iter().map(|n| n.pitch().midi()).max();
        range
            .filter(|s| match (lo, hi) {
                (Some(lo), Some(hi)) => lo + 12 * s >= Pitch::MIN && hi + 12 * s <= Pitch::MAX,
                _ => true,
            })
            .collect()
    }
}

impl<N: Note> TryFrom<Vec<N>> for Melody<N> {
    type Error = Error;
    fn try_from(notes: Vec<N>) -> Result<Self> {
        Melody::new(notes)
    }
}

impl<N> From<Melody<N>> for Vec<N> {
    fn from(m: Melody<N>) -> Vec<N> {
        m.notes
    }
}

/// Octave shift that puts the mean pitch closest to middle C, ties toward the lower octave.
pub fn canonical_octave_shift(midis: &[i32]) -> i32 {
    if midis.is_empty() {
        return 0;
    }
    let mean = midis.iter().map(|&m| m as f64).sum::<f64>() / midis.len() as f64;
    let low = ((60.0 - mean) / 12.0).floor() as i32;
    let dist = |s: i32| (mean + 12.0 * s as f64 - 60.0).abs();
    if dist(low + 1) < dist(low) {
        low + 1
    } else {
        low
    }
}

/// Assigns each onset an offset equal to the next onset; the last note ends at `segment_end_s`.
pub fn legato_offsets(onsets: &[(f64, Pitch)], segment_end_s: f64) -> Result<Vec<PerfNote>> {
    for (i, w) in onsets.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(Error::Ordering { index: i + 1 });
        }
    }
    if let Some(&(last, _)) = onsets.last() {
        if last >= segment_end_s {
            return Err(Error::Invalid(format!(
                "onset {last} s not before segment end {segment_end_s} s"
            )));
        }
    }
    Ok(onsets
        .iter()
        .enumerate()
        .map(|(i, &(onset_s, pitch))| PerfNote {
            onset_s,
            offset_s: onsets.get(i + 1).map_or(segment_end_s, |n| n.0),
            pitch,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChordQuality {
    Maj,
    Min,
    Dim,
    Aug,
    Dom7,
    Maj7,
    Min7,
    Hdim7,
}

impl ChordQuality {
    pub const ALL: [ChordQuality; 8] = [
        ChordQuality::Maj,
        ChordQuality::Min,
        ChordQuality::Dim,
        ChordQuality::Aug,
        ChordQuality::Dom7,
        ChordQuality::Maj7,
        ChordQuality::Min7,
        ChordQuality::Hdim7,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&q| q == self).unwrap()
    }

    /// Semitone offsets of the chord tones above the root.
    pub fn intervals(self) -> &'static [i32] {
        match self {
            ChordQuality::Maj => &[0, 4, 7],
            ChordQuality::Min => &[0, 3, 7],
            ChordQuality::Dim => &[0, 3, 6],
            ChordQuality::Aug => &[0, 4, 8],
            ChordQuality::Dom7 => &[0, 4, 7, 10],
            ChordQuality::Maj7 => &[0, 4, 7, 11],
            ChordQuality::Min7 => &[0, 3, 7, 10],
            ChordQuality::Hdim7 => &[0, 3, 6, 10],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChordQuality::Maj => "maj",
            ChordQuality::Min => "min",
            ChordQuality::Dim => "dim",
            ChordQuality::Aug => "aug",
            ChordQuality::Dom7 => "dom7",
            ChordQuality::Maj7 => "maj7",
            ChordQuality::Min7 => "min7",
            ChordQuality::Hdim7 => "hdim7",
        }
    }
}

/// Number of chord classes: 12 roots × 8 qualities.
pub const CHORD_VOCAB: usize = 12 * 8;
pub const CHORD_CLASSES: usize = CHORD_VOCAB + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChordSymbol {
    #[serde(rename = "root_pc")]
    pub root: PitchClass,
    pub quality: ChordQuality,
}

impl ChordSymbol {
    pub fn new(root: PitchClass, quality: ChordQuality) -> Self {
        ChordSymbol { root, quality }
    }

    pub fn pitch_classes(&self) -> impl Iterator<Item = PitchClass> + '_ {
        self.quality.intervals().iter().map(|&i| self.root.transpose(i))
    }

    /// Label class: 1 + root·8 + quality (0 is "no chord onset").
    pub fn class_index(&self) -> usize {
        1 + self.root.index() * 8 + self.quality.index()
    }

    pub fn from_class_index(class: usize) -> Result<Self> {
        if !(1..=CHORD_VOCAB).contains(&class) {
            return Err(Error::Invalid(format!("chord class index {class} outside 1..=96")));
        }
        let c = class - 1;
        Ok(ChordSymbol::new(PitchClass((c / 8) as u8), ChordQuality::ALL[c % 8]))
    }

    pub fn transpose(&self, semitones: i32) -> Self {
        ChordSymbol::new(self.root.transpose(semitones), self.quality)
    }
}

impl fmt::Display for ChordSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.root.sharp_name(), self.quality.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

impl Mode {
    /// Semitone offsets of scale degrees 1..=7 (natural minor for `Minor`).
    pub fn scale(self) -> [i32; 7] {
        match self {
            Mode::Major => [0, 2, 4, 5, 7, 9, 11],
            Mode::Minor => [0, 2, 3, 5, 7, 8, 10],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeySignature {
    #[serde(rename = "tonic_pc")]
    pub tonic: PitchClass,
    pub mode: Mode,
}

impl KeySignature {
    pub fn new(tonic: PitchClass, mode: Mode) -> Self {
        KeySignature { tonic, mode }
    }
}

impl fmt::Display for KeySignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = match self.mode {
            Mode::Major => "major",
            Mode::Minor => "minor",
        };
        write!(f, "{} {}", self.tonic.sharp_name(), mode)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawMeter")]
pub struct Meter {
    pub beats_per_bar: u32,
    pub beat_unit: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeter {
    beats_per_bar: u32,
    beat_unit: u32,
}

impl TryFrom<RawMeter> for Meter {
    type Error = Error;
    fn try_from(raw: RawMeter) -> Result<Self> {
        Meter::new(raw.beats_per_bar, raw.beat_unit)
    }
}

impl Meter {
    pub fn new(beats_per_bar: u32, beat_unit: u32) -> Result<Self> {
        if beats_per_bar == 0 {
            return Err(Error::Invalid("beats_per_bar must be at least 1".into()));
        }
        if ![1, 2, 4, 8, 16].contains(&beat_unit) {
            return Err(Error::Invalid(format!("beat unit {beat_unit} not in {{1,2,4,8,16}}")));
        }
        Ok(Meter { beats_per_bar, beat_unit })
    }

    pub fn common_time() -> Self {
        Meter { beats_per_bar: 4, beat_unit: 4 }
    }

    pub fn ticks_per_bar(&self) -> u32 {
        self.beats_per_bar * TICKS_PER_BEAT
    }

    /// Compound meters (6/8, 9/8, 12/8) are annotated here with four ticks per notated beat.
    pub fn is_compound(&self) -> bool {
        self.beat_unit == 8 && self.beats_per_bar % 3 == 0 && self.beats_per_bar > 3
    }
}

impl std::str::FromStr for Meter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (num, den) = s
            .split_once('/')
            .ok_or_else(|| Error::Invalid(format!("meter `{s}` is not of the form N/D")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| Error::Invalid(format!("meter `{s}` is not of the form N/D")))
        };
        Meter::new(parse(num)?, parse(den)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

/// A chord held from `onset_ticks` for `duration_ticks`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawChordEvent", into = "RawChordEvent")]
pub struct ChordEvent {
    pub onset_ticks: u32,
    pub duration_ticks: u32,
    pub chord: ChordSymbol,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChordEvent {
    onset_ticks: u32,
    duration_ticks: u32,
    root_pc: PitchClass,
    quality: ChordQuality,
}

impl From<RawChordEvent> for ChordEvent {
    fn from(r: RawChordEvent) -> Self {
        ChordEvent {
            onset_ticks: r.onset_ticks,
            duration_ticks: r.duration_ticks,
            chord: ChordSymbol::new(r.root_pc, r.quality),
        }
    }
}

impl From<ChordEvent> for RawChordEvent {
    fn from(c: ChordEvent) -> Self {
        RawChordEvent {
            onset_ticks: c.onset_ticks,
            duration_ticks: c.duration_ticks,
            root_pc: c.chord.root,
            quality: c.chord.quality,
        }
    }
}

/// One annotated excerpt of a recording, in absolute (non-functional) form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSegment")]
pub struct Segment {
    pub id: String,
    pub audio_ref: String,
    pub split: Option<Split>,
    pub user_start_s: f64,
    pub user_end_s: f64,
    pub meter: Meter,
    pub key: KeySignature,
    pub melody: ScoreMelody,
    pub chords: Vec<ChordEvent>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    id: String,
    audio_ref: String,
    split: Option<Split>,
    user_start_s: f64,
    user_end_s: f64,
    meter: Meter,
    key: KeySignature,
    melody: ScoreMelody,
    chords: Vec<ChordEvent>,
}

impl TryFrom<RawSegment> for Segment {
    type Error = Error;
    fn try_from(r: RawSegment) -> Result<Self> {
        let seg = Segment {
            id: r.id,
            audio_ref: r.audio_ref,
            split: r.split,
            user_start_s: r.user_start_s,
            user_end_s: r.user_end_s,
            meter: r.meter,
            key: r.key,
            melody: r.melody,
            chords: r.chords,
        };
        seg.validate()?;
        Ok(seg)
    }
}

impl Segment {
    pub fn validate(&self) -> Result<()> {
        if !(self.user_start_s < self.user_end_s) {
            return Err(Error::Invalid(format!(
                "segment `{}`: user_start_s {} not before user_end_s {}",
                self.id, self.user_start_s, self.user_end_s
            )));
        }
        for (i, c) in self.chords.iter().enumerate() {
            if c.duration_ticks == 0 {
                return Err(Error::Invalid(format!("segment `{}`: chord {i} has zero duration", self.id)));
            }
            if let Some(next) = self.chords.get(i + 1) {
                if next.onset_ticks < c.onset_ticks + c.duration_ticks {
                    return Err(Error::Overlap { index: i, next: i + 1 });
                }
            }
        }
        Ok(())
    }

    /// Tick one past the last annotated event.
    pub fn end_ticks(&self) -> u32 {
        let melody_end = self.melody.notes().iter().map(|n| n.end_ticks()).max().unwrap_or(0);
        let chord_end = self.chords.iter().map(|c| c.onset_ticks + c.duration_ticks).max().unwrap_or(0);
        melody_end.max(chord_end)
    }

    /// Beat count B: the annotation length rounded up to whole beats, at least one.
    pub fn num_beats(&self) -> usize {
        (self.end_ticks().div_ceil(TICKS_PER_BEAT) as usize).max(1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
