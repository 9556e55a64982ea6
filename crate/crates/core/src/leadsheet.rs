//! Lead sheets: key estimation from symbolic output, assembly, and LilyPond / MIDI emission.

use std::fmt::Write as _;

use midly::num::{u15, u24, u28, u4, u7};
use midly::{Format, Header, MetaMessage, MidiMessage, Smf, Timing, TrackEvent, TrackEventKind};

use crate::align::AlignmentMap;
use crate::error::{Error, Result};
use crate::types::{ChordEvent, ChordSymbol, ChordQuality, KeySignature, Meter, Mode, Pitch, PitchClass, ScoreMelody, ScoreNote};

/// Krumhansl probe-tone profile for major keys, tonic first.
pub const MAJOR_PROFILE: [f64; 12] = [6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88];
/// Krumhansl probe-tone profile for minor keys, tonic first.
pub const MINOR_PROFILE: [f64; 12] = [6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17];

/// MIDI ticks per quarter note (one beat) in emitted files.
pub const MIDI_TPQ: u32 = 480;
const MIDI_PER_TICK: u32 = MIDI_TPQ / 4;

/// Duration-weighted pitch-class histogram: melody notes by duration, every chord tone by the chord's duration.
pub fn pitch_class_histogram(melody: &ScoreMelody, chords: &[ChordEvent]) -> [f64; 12] {
    let mut h = [0.0; 12];
    for n in melody.notes() {
        h[n.pitch.pitch_class().index()] += n.duration_ticks as f64;
    }
    for c in chords {
        for pc in c.chord.pitch_classes() {
            h[pc.index()] += c.duration_ticks as f64;
        }
    }
    h
}

fn pearson(x: &[f64; 12], y: &[f64; 12]) -> f64 {
    let mx = x.iter().sum::<f64>() / 12.0;
    let my = y.iter().sum::<f64>() / 12.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..12 {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Correlation of the histogram with each of the 24 keys, indexed `tonic * 2 + (minor as usize)`.
pub fn key_correlations(histogram: &[f64; 12]) -> [f64; 24] {
    let mut out = [0.0; 24];
    for tonic in 0..12 {
        // Read the histogram starting at the tonic so transposition permutes keys exactly.
        let rotated: [f64; 12] = std::array::from_fn(|i| histogram[(i + tonic) % 12]);
        out[2 * tonic] = pearson(&rotated, &MAJOR_PROFILE);
        out[2 * tonic + 1] = pearson(&rotated, &MINOR_PROFILE);
    }
    out
}

/// Krumhansl–Schmuckler key: the best-correlated of the 24 keys (ties: lower tonic, then major).
pub fn ks_key(melody: &ScoreMelody, chords: &[ChordEvent]) -> Result<KeySignature> {
    if melody.is_empty() && chords.is_empty() {
        return Err(Error::Input("key estimation needs at least one note or chord".into()));
    }
    let corr = key_correlations(&pitch_class_histogram(melody, chords));
    let mut best = 0;
    for k in 1..24 {
        if corr[k] > corr[best] {
            best = k;
        }
    }
    let mode = if best % 2 == 0 { Mode::Major } else { Mode::Minor };
    Ok(KeySignature::new(PitchClass::wrapping((best / 2) as i32), mode))
}

/// Everything needed to engrave one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadSheet {
    pub key: KeySignature,
    pub meter: Meter,
    pub tempo_bpm: f64,
    pub melody: ScoreMelody,
    pub chords: Vec<(u32, ChordSymbol)>,
    pub pickup_ticks: u32,
    /// Piece length, `4B` ticks.
    pub length_ticks: u32,
}

impl LeadSheet {
    pub fn validate(&self) -> Result<()> {
        if let Some(n) = self.melody.notes().iter().find(|n| n.end_ticks() > self.length_ticks) {
            return Err(Error::Input(format!(
                "note at tick {} ends at {}, past the piece length {}",
                n.onset_ticks,
                n.end_ticks(),
                self.length_ticks
            )));
        }
        for (i, w) in self.chords.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(Error::Ordering { index: i + 1 });
            }
        }
        if let Some(&(t, _)) = self.chords.iter().find(|c| c.0 >= self.length_ticks) {
            return Err(Error::Input(format!("chord at tick {t} past the piece length {}", self.length_ticks)));
        }
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return Err(Error::Invalid(format!("tempo {} must be positive", self.tempo_bpm)));
        }
        Ok(())
    }

    /// Chords with durations running to the next chord (or the end).
    pub fn chord_events(&self) -> Vec<ChordEvent> {
        self.chords
            .iter()
            .enumerate()
            .map(|(i, &(onset, chord))| {
                let end = self.chords.get(i + 1).map_or(self.length_ticks, |c| c.0);
                ChordEvent { onset_ticks: onset, duration_ticks: end - onset, chord }
            })
            .collect()
    }
}

/// Score melody from onset ticks with legato durations; the last note runs to `end_ticks`.
pub fn legato_score(onsets: &[(u32, Pitch)], end_ticks: u32) -> Result<ScoreMelody> {
    let notes = onsets
        .iter()
        .enumerate()
        .map(|(i, &(t, p))| {
            let end = onsets.get(i + 1).map_or(end_ticks, |n| n.0);
            if end <= t {
                return Err(Error::Ordering { index: i + 1 });
            }
            ScoreNote::new(t, end - t, p)
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreMelody::new(notes)
}

/// Combines transcribed melody and chords with a key and meter; tempo is the map's mean tempo.
pub fn assemble(
    melody: ScoreMelody,
    chords: Vec<(u32, ChordSymbol)>,
    key: KeySignature,
    meter: Meter,
    map: &AlignmentMap,
) -> Result<LeadSheet> {
    let b = map.num_beats();
    let sheet = LeadSheet {
        key,
        meter,
        tempo_bpm: 60.0 * b as f64 / (map.end_s() - map.start_s()),
        melody,
        chords,
        // Tick 0 is a downbeat by construction of the alignment.
        pickup_ticks: 0,
        length_ticks: map.num_ticks() as u32,
    };
    sheet.validate()?;
    Ok(sheet)
}

const SHARP_NAMES: [&str; 12] = ["c", "cis", "d", "dis", "e", "f", "fis", "g", "gis", "a", "ais", "b"];
const FLAT_NAMES: [&str; 12] = ["c", "des", "d", "ees", "e", "f", "ges", "g", "aes", "a", "bes", "b"];

/// Flat keys: F, B♭, E♭, A♭, D♭, G♭ major and their relative minors.
fn uses_flats(key: KeySignature) -> bool {
    let major_tonic = match key.mode {
        Mode::Major => key.tonic,
        Mode::Minor => key.tonic.transpose(3),
    };
    [5, 10, 3, 8, 1, 6].contains(&major_tonic.index())
}

fn pc_name(pc: PitchClass, flats: bool) -> &'static str {
    if flats {
        FLAT_NAMES[pc.index()]
    } else {
        SHARP_NAMES[pc.index()]
    }
}

/// Absolute LilyPond pitch: `c'` is middle C.
fn ly_pitch(p: Pitch, flats: bool) -> String {
    let octave = p.midi().div_euclid(12) - 1;
    let marks = if octave >= 3 { "'".repeat((octave - 3) as usize) } else { ",".repeat((3 - octave) as usize) };
    format!("{}{marks}", pc_name(p.pitch_class(), flats))
}

fn ly_chord(c: ChordSymbol, flats: bool) -> String {
    let suffix = match c.quality {
        ChordQuality::Maj => "",
        ChordQuality::Min => ":m",
        ChordQuality::Dim => ":dim",
        ChordQuality::Aug => ":aug",
        ChordQuality::Dom7 => ":7",
        ChordQuality::Maj7 => ":maj7",
        ChordQuality::Min7 => ":m7",
        ChordQuality::Hdim7 => ":m7.5-",
    };
    format!("{}{suffix}", pc_name(c.root, flats))
}

/// Note values available in `meter`, longest first, as (ticks, LilyPond duration).
fn note_values(meter: Meter) -> Vec<(u32, String)> {
    let whole = 4 * meter.beat_unit;
    let mut out = Vec::new();
    let mut d = 1;
    while d <= whole {
        let ticks = whole / d;
        if ticks % 2 == 0 {
            out.push((ticks * 3 / 2, format!("{d}.")));
        }
        out.push((ticks, d.to_string()));
        d *= 2;
    }
    out
}

/// Splits `[start, start + len)` at barlines and into plain or dotted note values.
fn split_duration(start: u32, len: u32, meter: Meter, pickup: u32, values: &[(u32, String)]) -> Vec<String> {
    let bar = meter.ticks_per_bar();
    let mut out = Vec::new();
    let (mut t, end) = (start, start + len);
    while t < end {
        let bar_end = if t < pickup { pickup } else { pickup + ((t - pickup) / bar + 1) * bar };
        let mut room = end.min(bar_end) - t;
        while room > 0 {
            let (ticks, name) = values.iter().find(|(v, _)| *v <= room).expect("one-tick value exists");
            out.push(name.clone());
            room -= ticks;
            t += ticks;
        }
    }
    out
}

/// LilyPond source for the sheet: chord names above a single melody staff.
pub fn emit_lilypond(sheet: &LeadSheet) -> Result<String> {
    sheet.validate()?;
    let flats = uses_flats(sheet.key);
    let values = note_values(sheet.meter);
    let split = |start, len| split_duration(start, len, sheet.meter, sheet.pickup_ticks, &values);
    let mode = match sheet.key.mode {
        Mode::Major => "major",
        Mode::Minor => "minor",
    };

    let mut melody = Vec::new();
    let mut t = 0;
    for n in sheet.melody.notes() {
        if n.onset_ticks > t {
            melody.extend(split(t, n.onset_ticks - t).into_iter().map(|d| format!("r{d}")));
        }
        let pitch = ly_pitch(n.pitch, flats);
        let parts = split(n.onset_ticks, n.duration_ticks);
        let last = parts.len() - 1;
        for (i, d) in parts.into_iter().enumerate() {
            melody.push(format!("{pitch}{d}{}", if i < last { "~" } else { "" }));
        }
        t = n.end_ticks();
    }
    if t < sheet.length_ticks {
        melody.extend(split(t, sheet.length_ticks - t).into_iter().map(|d| format!("r{d}")));
    }

    let mut chords = Vec::new();
    let events = sheet.chord_events();
    let first = events.first().map_or(sheet.length_ticks, |c| c.onset_ticks);
    if first > 0 {
        chords.extend(split(0, first).into_iter().map(|d| format!("r{d}")));
    }
    for c in &events {
        let name = ly_chord(c.chord, flats);
        chords.extend(split(c.onset_ticks, c.duration_ticks).into_iter().map(|d| {
            let (root, suffix) = name.split_once(':').map_or((name.as_str(), String::new()), |(r, s)| (r, format!(":{s}")));
            format!("{root}{d}{suffix}")
        }));
    }

    let mut out = String::new();
    writeln!(out, "\\version \"2.24.0\"").unwrap();
    writeln!(out, "\\header {{ tagline = ##f }}").unwrap();
    writeln!(out, "<<").unwrap();
    writeln!(out, "  \\new ChordNames \\chordmode {{").unwrap();
    writeln!(out, "    \\set chordChanges = ##t").unwrap();
    writeln!(out, "    {}", chords.join(" ")).unwrap();
    writeln!(out, "  }}").unwrap();
    writeln!(out, "  \\new Staff {{").unwrap();
    writeln!(out, "    \\key {} \\{mode}", pc_name(sheet.key.tonic, flats)).unwrap();
    writeln!(out, "    \\time {}/{}", sheet.meter.beats_per_bar, sheet.meter.beat_unit).unwrap();
    writeln!(out, "    \\tempo {} = {}", sheet.meter.beat_unit, sheet.tempo_bpm.round() as i64).unwrap();
    writeln!(out, "    {}", melody.join(" ")).unwrap();
    writeln!(out, "  }}").unwrap();
    writeln!(out, ">>").unwrap();
    Ok(out)
}

/// Key signature as (sharps positive / flats negative, minor).
fn key_accidentals(key: KeySignature) -> (i8, bool) {
    let major_tonic = match key.mode {
        Mode::Major => key.tonic.index() as i32,
        Mode::Minor => (key.tonic.index() as i32 + 3) % 12,
    };
    // Position on the circle of fifths: 7 semitones up adds a sharp.
    let fifths = (major_tonic * 7).rem_euclid(12);
    let count = if uses_flats(key) { fifths - 12 } else { fifths };
    (count as i8, key.mode == Mode::Minor)
}

/// Format-0 standard MIDI file, 480 ticks per quarter, one tempo event per beat from `map`.
///
/// The melody is on channel 0 with each note released at its (legato) end; chords are block
/// voicings on channel 1 with the root in the octave above C3.
pub fn emit_midi(sheet: &LeadSheet, map: &AlignmentMap) -> Result<Vec<u8>> {
    sheet.validate()?;
    if map.num_ticks() as u32 != sheet.length_ticks {
        return Err(Error::Input(format!(
            "alignment covers {} ticks, sheet has {}",
            map.num_ticks(),
            sheet.length_ticks
        )));
    }
    // (midi tick, order, event); meta first, then note-offs, then note-ons at equal times.
    let mut events: Vec<(u32, u8, TrackEventKind<'static>)> = Vec::new();
    let meter_denominator = sheet.meter.beat_unit.trailing_zeros() as u8;
    events.push((
        0,
        0,
        TrackEventKind::Meta(MetaMessage::TimeSignature(sheet.meter.beats_per_bar as u8, meter_denominator, 24, 8)),
    ));
    let (acc, minor) = key_accidentals(sheet.key);
    events.push((0, 0, TrackEventKind::Meta(MetaMessage::KeySignature(acc, minor))));
    for (b, w) in map.beat_times().windows(2).enumerate() {
        let us = ((w[1] - w[0]) * 1e6).round().clamp(1.0, 16_777_215.0) as u32;
        events.push((b as u32 * MIDI_TPQ, 0, TrackEventKind::Meta(MetaMessage::Tempo(u24::new(us)))));
    }
    let note = |channel: u8, key: i32, on: bool| TrackEventKind::Midi {
        channel: u4::new(channel),
        message: if on {
            MidiMessage::NoteOn { key: u7::new(key as u8), vel: u7::new(if channel == 0 { 96 } else { 64 }) }
        } else {
            MidiMessage::NoteOff { key: u7::new(key as u8), vel: u7::new(0) }
        },
    };
    for n in sheet.melody.notes() {
        events.push((n.onset_ticks * MIDI_PER_TICK, 2, note(0, n.pitch.midi(), true)));
        events.push((n.end_ticks() * MIDI_PER_TICK, 1, note(0, n.pitch.midi(), false)));
    }
    for c in sheet.chord_events() {
        let root = 48 + c.chord.root.index() as i32;
        for &iv in c.chord.quality.intervals() {
            events.push((c.onset_ticks * MIDI_PER_TICK, 2, note(1, root + iv, true)));
            events.push(((c.onset_ticks + c.duration_ticks) * MIDI_PER_TICK, 1, note(1, root + iv, false)));
        }
    }
    events.sort_by_key(|e| (e.0, e.1));

    let mut track = Vec::with_capacity(events.len() + 1);
    let mut now = 0;
    for (t, _, kind) in events {
        track.push(TrackEvent { delta: u28::new(t - now), kind });
        now = t;
    }
    let end = sheet.length_ticks * MIDI_PER_TICK;
    track.push(TrackEvent { delta: u28::new(end.saturating_sub(now)), kind: TrackEventKind::Meta(MetaMessage::EndOfTrack) });
    let smf = Smf { header: Header::new(Format::SingleTrack, Timing::Metrical(u15::new(MIDI_TPQ as u16))), tracks: vec![track] };
    let mut out = Vec::new();
    smf.write(&mut out).map_err(|e| Error::Format(format!("midi: {e}")))?;
    Ok(out)
}
