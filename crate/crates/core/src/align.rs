//! Beat-grid alignment.
//!
//! User-supplied segment boundaries are only approximate. Given a beat grid
//! from an external tracker, the first segment beat is snapped to the
//! detected downbeat nearest the user's start time and the remaining beats
//! follow the detected beats in order. [`AlignmentMap::align`] then maps any
//! fractional beat position to seconds by linear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detected beats and downbeats, as read from a tracker sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatGrid {
    beat_times_s: Vec<f64>,
    downbeat_flags: Vec<bool>,
}

/// Sidecar form: `{ "beats_s": [..], "downbeats": [indices into beats_s] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeatGridFile {
    pub beats_s: Vec<f64>,
    pub downbeats: Vec<usize>,
}

impl BeatGrid {
    pub fn new(beat_times_s: Vec<f64>, downbeat_flags: Vec<bool>) -> Result<Self> {
        if beat_times_s.len() != downbeat_flags.len() {
            return Err(Error::Invalid(format!(
                "{} beat times but {} downbeat flags",
                beat_times_s.len(),
                downbeat_flags.len()
            )));
        }
        if beat_times_s.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Invalid("beat times must be finite and non-negative".into()));
        }
        if beat_times_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("beat times must be strictly increasing".into()));
        }
        if !downbeat_flags.iter().any(|&d| d) {
            return Err(Error::Invalid("beat grid has no downbeat".into()));
        }
        Ok(BeatGrid { beat_times_s, downbeat_flags })
    }

    pub fn beat_times_s(&self) -> &[f64] {
        &self.beat_times_s
    }

    pub fn downbeat_flags(&self) -> &[bool] {
        &self.downbeat_flags
    }

    pub fn from_file(file: BeatGridFile) -> Result<Self> {
        let mut flags = vec![false; file.beats_s.len()];
        for &i in &file.downbeats {
            *flags
                .get_mut(i)
                .ok_or_else(|| Error::Invalid(format!("downbeat index {i} out of range")))? = true;
        }
        BeatGrid::new(file.beats_s, flags)
    }

    pub fn to_file(&self) -> BeatGridFile {
        BeatGridFile {
            beats_s: self.beat_times_s.clone(),
            downbeats: (0..self.downbeat_flags.len()).filter(|&i| self.downbeat_flags[i]).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        BeatGrid::from_file(serde_json::from_str(text)?)
    }
}

/// Times of beats 0..=B; entry B closes the final beat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlignmentFile", into = "AlignmentFile")]
pub struct AlignmentMap {
    beat_to_time_s: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignmentFile {
    beat_to_time_s: Vec<f64>,
}

impl TryFrom<AlignmentFile> for AlignmentMap {
    type Error = Error;
    fn try_from(f: AlignmentFile) -> Result<Self> {
        AlignmentMap::new(f.beat_to_time_s)
    }
}

impl From<AlignmentMap> for AlignmentFile {
    fn from(m: AlignmentMap) -> Self {
        AlignmentFile { beat_to_time_s: m.beat_to_time_s }
    }
}

impl AlignmentMap {
    pub fn new(beat_to_time_s: Vec<f64>) -> Result<Self> {
        if beat_to_time_s.len() < 2 {
            return Err(Error::Invalid("alignment map needs at least two entries".into()));
        }
        if beat_to_time_s.iter().any(|t| !t.is_finite()) || beat_to_time_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("alignment times must be finite and strictly increasing".into()));
        }
        Ok(AlignmentMap { beat_to_time_s })
    }

    /// Number of beats B.
    pub fn num_beats(&self) -> usize {
        self.beat_to_time_s.len() - 1
    }

    pub fn num_ticks(&self) -> usize {
        4 * self.num_beats()
    }

    pub fn beat_times(&self) -> &[f64] {
        &self.beat_to_time_s
    }

    pub fn start_s(&self) -> f64 {
        self.beat_to_time_s[0]
    }

    pub fn end_s(&self) -> f64 {
        *self.beat_to_time_s.last().unwrap()
    }

    /// Maps a beat position in `[0, B]` to seconds.
    pub fn align(&self, beat_position: f64) -> Result<f64> {
        let b = self.num_beats();
        if !(0.0..=b as f64).contains(&beat_position) {
            return Err(Error::BeatRange { position: beat_position, num_beats: b });
        }
        let i = (beat_position.floor() as usize).min(b - 1);
        let frac = beat_position - i as f64;
        let (t0, t1) = (self.beat_to_time_s[i], self.beat_to_time_s[i + 1]);
        Ok(t0 + frac * (t1 - t0))
    }

    /// Time of sixteenth-note tick `tick` (tick / 4 beats).
    pub fn tick_time(&self, tick: usize) -> Result<f64> {
        self.align(tick as f64 / 4.0)
    }

    /// A sub-range of beats `[start, start + len]` re-based to beat 0.
    pub fn slice(&self, start_beat: usize, num_beats: usize) -> Result<AlignmentMap> {
        let end = start_beat + num_beats;
        if num_beats == 0 || end > self.num_beats() {
            return Err(Error::BeatRange { position: end as f64, num_beats: self.num_beats() });
        }
        AlignmentMap::new(self.beat_to_time_s[start_beat..=end].to_vec())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Snaps beat 0 to the downbeat nearest `user_start_s` (ties: earlier) and follows the grid
/// for beats 1..B-1; beat B is extrapolated from the last inter-beat interval.
pub fn refine_alignment(grid: &BeatGrid, user_start_s: f64, num_beats: usize) -> Result<AlignmentMap> {
    if num_beats == 0 {
        return Err(Error::Invalid("segment must span at least one beat".into()));
    }
    let times = &grid.beat_times_s;
    let mut chosen: Option<usize> = None;
    for (i, &t) in times.iter().enumerate() {
        if !grid.downbeat_flags[i] {
            continue;
        }
        let better = match chosen {
            None => true,
            Some(c) => (t - user_start_s).abs() < (times[c] - user_start_s).abs(),
        };
        if better {
            chosen = Some(i);
        }
    }
    let first = chosen.expect("grid validated to contain a downbeat");
    let available = times.len() - first - 1;
    if available < num_beats - 1 {
        return Err(Error::InsufficientBeats { needed: num_beats - 1, available });
    }
    let mut out: Vec<f64> = times[first..first + num_beats].to_vec();
    let interval = if num_beats >= 2 {
        out[num_beats - 1] - out[num_beats - 2]
    } else if first + 1 < times.len() {
        times[first + 1] - times[first]
    } else if first > 0 {
        times[first] - times[first - 1]
    } else {
        return Err(Error::InsufficientBeats { needed: 1, available: 0 });
    };
    out.push(out[num_beats - 1] + interval);
    AlignmentMap::new(out)
}

/// A constant-tempo grid with a downbeat every `beats_per_bar` beats starting at beat 0.
pub fn constant_tempo_grid(bpm: f64, first_downbeat_s: f64, count: usize, beats_per_bar: usize) -> Result<BeatGrid> {
    if !(bpm.is_finite() && bpm > 0.0) {
        return Err(Error::Invalid(format!("tempo {bpm} must be positive")));
    }
    if count == 0 || beats_per_bar == 0 {
        return Err(Error::Invalid("beat count and beats per bar must be positive".into()));
    }
    let period = 60.0 / bpm;
    let times = (0..count).map(|i| first_downbeat_s + i as f64 * period).collect();
    let flags = (0..count).map(|i| i % beats_per_bar == 0).collect();
    BeatGrid::new(times, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn refine_example() {
        let grid = BeatGrid::new(vec![0.5, 1.0, 1.5, 2.0, 2.5], vec![true, false, false, false, true]).unwrap();
        let map = refine_alignment(&grid, 0.6, 3).unwrap();
        assert_eq!(map.beat_times(), &[0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn refine_exact_and_tie() {
        let grid = BeatGrid::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![true, false, true, false, true]).unwrap();
        assert_eq!(refine_alignment(&grid, 2.0, 2).unwrap().start_s(), 2.0);
        // 1.0 is equidistant from downbeats at 0.0 and 2.0.
        assert_eq!(refine_alignment(&grid, 1.0, 2).unwrap().start_s(), 0.0);
    }

    #[test]
    fn refine_insufficient() {
        let grid = constant_tempo_grid(120.0, 0.0, 5, 4).unwrap();
        // downbeats at 0 and 4; start near 2.0 s picks index 4, leaving nothing after it.
        match refine_alignment(&grid, 1.9, 10) {
            Err(Error::InsufficientBeats { needed: 9, available: 0 }) => {}
            other => panic!("{other:?}"),
        }
        match refine_alignment(&grid, 0.0, 10) {
            Err(Error::InsufficientBeats { needed: 9, available: 4 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refine_single_beat_uses_grid_interval() {
        let grid = constant_tempo_grid(60.0, 1.0, 3, 3).unwrap();
        assert_eq!(refine_alignment(&grid, 1.0, 1).unwrap().beat_times(), &[1.0, 2.0]);
    }

    #[test]
    fn align_examples() {
        let m = AlignmentMap::new(vec![0.0, 1.0, 2.0]).unwrap();
        assert_eq!(m.align(0.25).unwrap(), 0.25);
        assert_eq!(m.align(0.0).unwrap(), 0.0);
        assert_eq!(m.align(2.0).unwrap(), 2.0);
        let m = AlignmentMap::new(vec![0.0, 0.4, 1.2]).unwrap();
        assert!((m.align(1.5).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(m.align(2.01), Err(Error::BeatRange { .. })));
        assert!(matches!(m.align(-0.1), Err(Error::BeatRange { .. })));
    }

    #[test]
    fn grid_examples() {
        let g = constant_tempo_grid(120.0, 0.0, 4, 4).unwrap();
        assert_eq!(g.beat_times_s(), &[0.0, 0.5, 1.0, 1.5]);
        assert_eq!(g.downbeat_flags(), &[true, false, false, false]);
        let g = constant_tempo_grid(60.0, 1.0, 2, 2).unwrap();
        assert_eq!(g.beat_times_s(), &[1.0, 2.0]);
        assert_eq!(g.to_file().downbeats, vec![0]);
        assert!(constant_tempo_grid(0.0, 0.0, 4, 4).is_err());
    }

    #[test]
    fn sidecar_json() {
        let g = BeatGrid::from_json(r#"{"beats_s": [0.1, 0.6, 1.1], "downbeats": [1]}"#).unwrap();
        assert_eq!(g.downbeat_flags(), &[false, true, false]);
        assert!(BeatGrid::from_json(r#"{"beats_s": [0.1], "downbeats": [3]}"#).is_err());
        assert!(BeatGrid::from_json(r#"{"beats_s": [0.1, 0.6], "downbeats": []}"#).is_err());
        let m = AlignmentMap::new(vec![0.5, 1.0]).unwrap();
        assert_eq!(AlignmentMap::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn align_strictly_monotone(gaps in prop::collection::vec(0.05f64..2.0, 1..12), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let mut times = vec![0.3];
            for g in &gaps { times.push(times.last().unwrap() + g); }
            let m = AlignmentMap::new(times).unwrap();
            let bn = m.num_beats() as f64;
            let (x, y) = (a.min(b) * bn, a.max(b) * bn);
            prop_assume!(y - x > 1e-9);
            prop_assert!(m.align(x).unwrap() < m.align(y).unwrap());
        }

        #[test]
        fn constant_grid_alignment_is_linear(bpm in 60.0f64..200.0, start in 0.0f64..5.0, b in 0.0f64..7.0) {
            let grid = constant_tempo_grid(bpm, start, 16, 4).unwrap();
            let map = refine_alignment(&grid, start, 8).unwrap();
            let want = start + b * 60.0 / bpm;
            let got = map.align(b).unwrap();
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }

        #[test]
        fn refined_times_are_contiguous_grid_run(n in 1usize..10, user in 0.0f64..10.0) {
            let grid = constant_tempo_grid(97.0, 0.2, 40, 3).unwrap();
            let map = refine_alignment(&grid, user, n).unwrap();
            let t = map.beat_times();
            let first = grid.beat_times_s().iter().position(|&g| g == t[0]).unwrap();
            prop_assert!(grid.downbeat_flags()[first]);
            prop_assert_eq!(&t[..n], &grid.beat_times_s()[first..first + n]);
        }
    }
}
