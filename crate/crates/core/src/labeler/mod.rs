//! Per-sixteenth-note onset labeling: dense targets, the Transformer labeler, its training loop
//! and threshold decoding back to notes.

mod checkpoint;
mod loss;
mod model;
mod prior;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use loss::{cross_entropy, octave_tolerant_loss, LossValue, LOSS_SHIFTS};
pub use model::{
    finite_difference_check, forward, loss_and_gradient, predict, GradCheck, LabelerConfig, Layer, Params,
};
pub use prior::{class_frequencies, prior_logits, prior_only_f1};
pub use train::{
    chord_f1, sweep_thresholds, thresholds, train, EvalPoint, TrainConfig, TrainOutcome, TrainingExample,
};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::align::AlignmentMap;
use crate::error::{Error, Result};
use crate::types::{
    legato_offsets, ChordEvent, ChordSymbol, Melody, PerfMelody, Pitch, ScoreMelody, CHORD_CLASSES, MELODY_CLASSES,
    TICKS_PER_BEAT,
};

/// Which vocabulary the labeler predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Melody,
    Chords,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Melody => MELODY_CLASSES,
            Task::Chords => CHORD_CLASSES,
        }
    }

    /// Melody targets are compared up to whole octaves; chord targets are not.
    pub fn octave_tolerant(self) -> bool {
        self == Task::Melody
    }
}

/// One class per tick; class 0 is "no onset".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseLabelSequence {
    classes: Vec<usize>,
    num_classes: usize,
}

impl DenseLabelSequence {
    pub fn new(classes: Vec<usize>, num_classes: usize) -> Result<Self> {
        if classes.is_empty() || classes.len() % 4 != 0 {
            return Err(Error::Shape(format!("{} labels is not a positive multiple of 4", classes.len())));
        }
        if let Some(i) = classes.iter().position(|&c| c >= num_classes) {
            return Err(Error::Invalid(format!("label {} at tick {i} outside {num_classes} classes", classes[i])));
        }
        Ok(DenseLabelSequence { classes, num_classes })
    }

    /// `4B` ticks of silence.
    pub fn silent(num_beats: usize, task: Task) -> Self {
        DenseLabelSequence { classes: vec![0; 4 * num_beats.max(1)], num_classes: task.num_classes() }
    }

    pub fn from_pitches(labels: &[Option<Pitch>]) -> Result<Self> {
        DenseLabelSequence::new(labels.iter().map(|p| p.map_or(0, Pitch::class_index)).collect(), MELODY_CLASSES)
    }

    pub fn ticks(&self) -> usize {
        self.classes.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    /// Melody reading of tick `i`.
    pub fn pitch_at(&self, i: usize) -> Option<Pitch> {
        match self.classes[i] {
            0 => None,
            c => Pitch::from_class_index(c).ok(),
        }
    }

    /// `(tick, class)` for every non-empty tick.
    pub fn onsets(&self) -> Vec<(usize, usize)> {
        self.classes.iter().enumerate().filter(|(_, &c)| c != 0).map(|(i, &c)| (i, c)).collect()
    }

    /// Shifts every melody label by `sigma` octaves, or `None` if a label would leave the vocabulary.
    pub fn octave_shift(&self, sigma: i32) -> Option<Self> {
        let shifted = self
            .classes
            .iter()
            .map(|&c| match c {
                0 => Some(0),
                c => {
                    let moved = c as i32 + 12 * sigma;
                    (1..MELODY_CLASSES as i32).contains(&moved).then_some(moved as usize)
                }
            })
            .collect::<Option<Vec<_>>>()?;
        Some(DenseLabelSequence { classes: shifted, num_classes: self.num_classes })
    }

    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.ticks() {
            return Err(Error::Shape(format!("ticks {start}..{} beyond {}", start + len, self.ticks())));
        }
        DenseLabelSequence::new(self.classes[start..start + len].to_vec(), self.num_classes)
    }

    /// Melody labels as performed notes under `map`, with legato offsets.
    pub fn to_perf_melody(&self, map: &AlignmentMap) -> Result<PerfMelody> {
        if map.num_ticks() != self.ticks() {
            return Err(Error::Shape(format!("{} labels for a {}-tick map", self.ticks(), map.num_ticks())));
        }
        let onsets = self
            .onsets()
            .into_iter()
            .map(|(i, c)| Ok((map.tick_time(i)?, Pitch::from_class_index(c)?)))
            .collect::<Result<Vec<_>>>()?;
        Melody::new(legato_offsets(&onsets, map.end_s())?)
    }
}

/// Result of [`densify`]: the labels plus how many notes quantization touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Densified {
    pub labels: DenseLabelSequence,
    /// Notes whose onset was not already on a tick.
    pub moved: usize,
    /// Notes dropped because another note claimed the same tick.
    pub collisions: usize,
}

/// Quantizes onsets given in beats to ticks: `round(4b)` with ties rounded down.
///
/// When two notes land on one tick the one whose onset is nearer the tick wins (ties: the earlier
/// note); the loser is counted in `collisions`.
pub fn densify(onsets_beats: &[(f64, Pitch)], num_beats: usize) -> Result<Densified> {
    if num_beats == 0 {
        return Err(Error::Invalid("segment must span at least one beat".into()));
    }
    let n_ticks = 4 * num_beats;
    let mut slots: Vec<Option<(f64, Pitch)>> = vec![None; n_ticks];
    let (mut moved, mut collisions) = (0, 0);
    for &(beat, pitch) in onsets_beats {
        if !(0.0..num_beats as f64).contains(&beat) {
            return Err(Error::BeatRange { position: beat, num_beats });
        }
        let x = beat * TICKS_PER_BEAT as f64;
        let floor = x.floor();
        let tick = if x - floor > 0.5 { floor + 1.0 } else { floor };
        // Onsets in the last half tick round to 4B, which does not exist.
        let tick = (tick as usize).min(n_ticks - 1);
        if x != tick as f64 {
            moved += 1;
        }
        let dist = (x - tick as f64).abs();
        match slots[tick] {
            Some((held, _)) if held <= dist => collisions += 1,
            Some(_) => {
                collisions += 1;
                slots[tick] = Some((dist, pitch));
            }
            None => slots[tick] = Some((dist, pitch)),
        }
    }
    let labels = slots.iter().map(|s| s.map(|(_, p)| p)).collect::<Vec<_>>();
    Ok(Densified { labels: DenseLabelSequence::from_pitches(&labels)?, moved, collisions })
}

/// Dense labels for a melody already on the tick grid.
pub fn densify_score(melody: &ScoreMelody, num_beats: usize) -> Result<DenseLabelSequence> {
    let mut labels = DenseLabelSequence::silent(num_beats, Task::Melody);
    for n in melody.notes() {
        let tick = n.onset_ticks as usize;
        if tick >= labels.ticks() {
            return Err(Error::BeatRange { position: tick as f64 / 4.0, num_beats });
        }
        labels.classes[tick] = n.pitch.class_index();
    }
    Ok(labels)
}

/// Dense chord-onset labels over the 97-class chord vocabulary.
pub fn densify_chords(chords: &[ChordEvent], num_beats: usize) -> Result<DenseLabelSequence> {
    let mut labels = DenseLabelSequence::silent(num_beats, Task::Chords);
    for c in chords {
        let tick = c.onset_ticks as usize;
        if tick >= labels.ticks() {
            return Err(Error::BeatRange { position: tick as f64 / 4.0, num_beats });
        }
        labels.classes[tick] = c.chord.class_index();
    }
    Ok(labels)
}

/// Unnormalized class scores, one row per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSequence {
    logits: Array2<f64>,
}

impl LogitSequence {
    pub fn new(logits: Array2<f64>) -> Result<Self> {
        if logits.nrows() == 0 || logits.nrows() % 4 != 0 {
            return Err(Error::Shape(format!("{} logit rows is not a positive multiple of 4", logits.nrows())));
        }
        if logits.ncols() < 2 {
            return Err(Error::Shape("need at least two classes".into()));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("logits must be finite".into()));
        }
        Ok(LogitSequence { logits })
    }

    pub fn ticks(&self) -> usize {
        self.logits.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.ncols()
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.logits
    }

    /// Row-wise softmax.
    pub fn probabilities(&self) -> Array2<f64> {
        let mut p = self.logits.clone();
        softmax_rows(&mut p);
        p
    }

    /// Logits putting all mass (up to `e^-scale`) on each tick's label.
    pub fn one_hot(labels: &DenseLabelSequence, scale: f64) -> Self {
        let mut logits = Array2::zeros((labels.ticks(), labels.num_classes()));
        for (i, &c) in labels.classes().iter().enumerate() {
            logits[[i, c]] = scale;
        }
        LogitSequence { logits }
    }
}

pub(crate) fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Index of the largest entry among classes `1..`, ties to the lower class.
pub(crate) fn argmax_nonempty(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 1;
    for c in 2..row.len() {
        if row[c] > row[best] {
            best = c;
        }
    }
    best
}

/// Ticks with `p(∅) < tau`, each with its most likely non-empty class.
pub fn decode_onsets(logits: &LogitSequence, tau: f64) -> Vec<(usize, usize)> {
    let p = logits.probabilities();
    p.axis_iter(Axis(0))
        .enumerate()
        .filter(|(_, row)| row[0] < tau)
        .map(|(i, row)| (i, argmax_nonempty(row)))
        .collect()
}

/// Threshold decoding to performed notes: onset times through `map`, legato offsets.
pub fn decode(logits: &LogitSequence, tau: f64, map: &AlignmentMap) -> Result<PerfMelody> {
    if logits.num_classes() != MELODY_CLASSES {
        return Err(Error::Shape(format!("melody decoding needs {MELODY_CLASSES} classes, got {}", logits.num_classes())));
    }
    if logits.ticks() != map.num_ticks() {
        return Err(Error::Shape(format!("{} logit rows for a {}-tick map", logits.ticks(), map.num_ticks())));
    }
    let onsets = decode_onsets(logits, tau)
        .into_iter()
        .map(|(i, c)| Ok((map.tick_time(i)?, Pitch::from_class_index(c)?)))
        .collect::<Result<Vec<_>>>()?;
    Melody::new(legato_offsets(&onsets, map.end_s())?)
}

/// Threshold decoding over the chord vocabulary: `(onset tick, chord)` pairs.
pub fn decode_chords(logits: &LogitSequence, tau: f64) -> Result<Vec<(u32, ChordSymbol)>> {
    if logits.num_classes() != CHORD_CLASSES {
        return Err(Error::Shape(format!("chord decoding needs {CHORD_CLASSES} classes, got {}", logits.num_classes())));
    }
    decode_onsets(logits, tau)
        .into_iter()
        .map(|(i, c)| Ok((i as u32, ChordSymbol::from_class_index(c)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{constant_tempo_grid, refine_alignment};
    use crate::types::{ChordQuality, PitchClass, ScoreNote};
    use proptest::prelude::*;

    fn p(m: i32) -> Pitch {
        Pitch::new(m).unwrap()
    }

    fn map_120(beats: usize) -> AlignmentMap {
        refine_alignment(&constant_tempo_grid(120.0, 0.0, beats + 4, 4).unwrap(), 0.0, beats).unwrap()
    }

    #[test]
    fn densify_examples() {
        let d = densify(&[(2.0, p(60))], 4).unwrap();
        assert_eq!(d.labels.pitch_at(8), Some(p(60)));
        assert_eq!(d.moved, 0);

        let d = densify(&[(2.13, p(62))], 4).unwrap();
        assert_eq!(d.labels.onsets(), vec![(9, p(62).class_index())]);
        assert_eq!(d.moved, 1);

        let d = densify(&[], 2).unwrap();
        assert_eq!(d.labels.ticks(), 8);
        assert!(d.labels.onsets().is_empty());
    }

    #[test]
    fn densify_ties_round_down() {
        // 4 × 0.125 = 0.5 → tick 0; 4 × 0.375 = 1.5 → tick 1
        let d = densify(&[(0.125, p(60)), (0.375, p(62))], 1).unwrap();
        assert_eq!(d.labels.onsets(), vec![(0, p(60).class_index()), (1, p(62).class_index())]);
    }

    #[test]
    fn densify_collisions() {
        // both round to tick 1; 0.3 is 0.2 ticks away, 0.2 is 0.2 away too → earlier wins
        let d = densify(&[(0.2, p(60)), (0.3, p(64))], 1).unwrap();
        assert_eq!(d.labels.pitch_at(1), Some(p(60)));
        assert_eq!(d.collisions, 1);
        // 0.26 is nearer tick 1 than 0.2 is
        let d = densify(&[(0.2, p(60)), (0.26, p(64))], 1).unwrap();
        assert_eq!(d.labels.pitch_at(1), Some(p(64)));
        assert_eq!(d.collisions, 1);
    }

    #[test]
    fn densify_rejects_out_of_range() {
        assert!(matches!(densify(&[(4.0, p(60))], 4), Err(Error::BeatRange { .. })));
        assert!(matches!(densify(&[(-0.1, p(60))], 4), Err(Error::BeatRange { .. })));
        // last half tick clamps onto the final tick
        assert_eq!(densify(&[(3.95, p(60))], 4).unwrap().labels.pitch_at(15), Some(p(60)));
    }

    #[test]
    fn score_and_chord_densify() {
        let m = ScoreMelody::new(vec![ScoreNote::new(0, 4, p(60)).unwrap(), ScoreNote::new(6, 2, p(67)).unwrap()]).unwrap();
        let l = densify_score(&m, 2).unwrap();
        assert_eq!(l.onsets(), vec![(0, 40), (6, 47)]);
        let c = ChordSymbol::new(PitchClass::new(7).unwrap(), ChordQuality::Dom7);
        let chords = [ChordEvent { onset_ticks: 4, duration_ticks: 4, chord: c }];
        assert_eq!(densify_chords(&chords, 2).unwrap().onsets(), vec![(4, c.class_index())]);
        assert!(densify_score(&m, 1).is_err());
    }

    #[test]
    fn decode_forced_silence() {
        let mut logits = Array2::zeros((16, MELODY_CLASSES));
        logits.column_mut(0).fill(100.0);
        let l = LogitSequence::new(logits).unwrap();
        assert!(decode(&l, 0.5, &map_120(4)).unwrap().is_empty());
    }

    #[test]
    fn decode_single_onset() {
        let mut labels = DenseLabelSequence::silent(4, Task::Melody);
        labels.classes[4] = p(60).class_index();
        let l = LogitSequence::one_hot(&labels, 1000.0);
        let m = decode(&l, 0.5, &map_120(4)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!((m.notes()[0].onset_s, m.notes()[0].pitch), (0.5, p(60)));
        assert_eq!(m.notes()[0].offset_s, 2.0);
    }

    #[test]
    fn chord_decode_examples() {
        let silent = LogitSequence::one_hot(&DenseLabelSequence::silent(2, Task::Chords), 50.0);
        assert!(decode_chords(&silent, 0.5).unwrap().is_empty());
        let cmaj = ChordSymbol::new(PitchClass::new(0).unwrap(), ChordQuality::Maj);
        let mut labels = DenseLabelSequence::silent(2, Task::Chords);
        labels.classes[0] = cmaj.class_index();
        assert_eq!(decode_chords(&LogitSequence::one_hot(&labels, 50.0), 0.5).unwrap(), vec![(0, cmaj)]);
        assert!(decode_chords(&LogitSequence::one_hot(&DenseLabelSequence::silent(2, Task::Melody), 50.0), 0.5).is_err());
    }

    #[test]
    fn shape_errors() {
        assert!(LogitSequence::new(Array2::zeros((6, 89))).is_err());
        assert!(LogitSequence::new(Array2::from_elem((4, 89), f64::NAN)).is_err());
        assert!(DenseLabelSequence::new(vec![0; 5], 89).is_err());
        assert!(DenseLabelSequence::new(vec![0, 0, 0, 89], 89).is_err());
        let l = LogitSequence::new(Array2::zeros((8, 89))).unwrap();
        assert!(decode(&l, 0.5, &map_120(4)).is_err());
    }

    #[test]
    fn label_octave_shift() {
        let l = densify(&[(0.0, p(100)), (1.0, p(30))], 2).unwrap().labels;
        assert!(l.octave_shift(1).is_none());
        assert!(l.octave_shift(-1).is_none());
        assert_eq!(l.octave_shift(0).unwrap(), l);
        let high = densify(&[(0.0, p(60))], 1).unwrap().labels.octave_shift(2).unwrap();
        assert_eq!(high.pitch_at(0), Some(p(84)));
    }

    proptest! {
        #[test]
        fn softmax_rows_normalized(vals in prop::collection::vec(-50.0f64..50.0, 4 * 89)) {
            let l = LogitSequence::new(Array2::from_shape_vec((4, 89), vals).unwrap()).unwrap();
            for row in l.probabilities().rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn decode_monotone_in_threshold(vals in prop::collection::vec(-5.0f64..5.0, 8 * 89), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
            let l = LogitSequence::new(Array2::from_shape_vec((8, 89), vals).unwrap()).unwrap();
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let a: Vec<usize> = decode_onsets(&l, lo).iter().map(|x| x.0).collect();
            let b: Vec<usize> = decode_onsets(&l, hi).iter().map(|x| x.0).collect();
            prop_assert!(a.iter().all(|i| b.contains(i)));
        }

        #[test]
        fn one_hot_roundtrip(onsets in prop::collection::btree_map(0usize..64, 21i32..=108, 0..20)) {
            let mut labels = vec![None; 64];
            for (&t, &m) in &onsets {
                labels[t] = Some(p(m));
            }
            let dense = DenseLabelSequence::from_pitches(&labels).unwrap();
            let decoded = decode_onsets(&LogitSequence::one_hot(&dense, 50.0), 0.5);
            prop_assert_eq!(decoded, dense.onsets());
        }

        #[test]
        fn on_grid_onsets_never_move(ticks in prop::collection::btree_set(0u32..64, 0..30)) {
            let onsets: Vec<(f64, Pitch)> = ticks.iter().map(|&t| (t as f64 / 4.0, p(60))).collect();
            let d = densify(&onsets, 16).unwrap();
            prop_assert_eq!(d.moved, 0);
            prop_assert_eq!(d.collisions, 0);
            let got: Vec<usize> = d.labels.onsets().iter().map(|x| x.0).collect();
            prop_assert_eq!(got, ticks.iter().map(|&t| t as usize).collect::<Vec<_>>());
        }
    }
}
