//! Onset-only note-wise F-measure with octave invariance.
//!
//! Estimated and reference onsets are first matched (one-to-one, within a
//! tolerance) ignoring pitch; a matched estimate is then correct when its
//! pitch equals the reference pitch. Among all maximum-cardinality matchings
//! the one with the most pitch-correct pairs is scored, so the result does
//! not depend on matching order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{PerfMelody, PerfNote};

/// Default onset tolerance in seconds.
pub const ONSET_TOLERANCE_S: f64 = 0.05;

/// Octave shifts searched by [`octave_invariant_f1`].
pub const EVAL_SHIFTS: std::ops::RangeInclusive<i32> = -8..=8;

const ORACLE_MAX_NOTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_sigma: i32,
    /// Size of the onset matching.
    pub matched: usize,
    /// Matched pairs whose pitches agree.
    pub true_positives: usize,
}

impl EvalReport {
    /// Scores from match counts. Both sides empty scores 1; any other empty side scores 0.
    pub fn from_counts(n_estimate: usize, n_reference: usize, matched: usize, true_positives: usize) -> Self {
        if n_estimate == 0 && n_reference == 0 {
            return EvalReport { precision: 1.0, recall: 1.0, f1: 1.0, best_sigma: 0, matched, true_positives };
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(true_positives, n_estimate);
        let recall = ratio(true_positives, n_reference);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        EvalReport { precision, recall, f1, best_sigma: 0, matched, true_positives }
    }
}

fn labelled(m: &PerfMelody) -> Vec<(f64, i32)> {
    m.notes().iter().map(|n| (n.onset_s, n.pitch.midi())).collect()
}

/// F-measure without octave shifting.
pub fn note_f1(estimate: &PerfMelody, reference: &PerfMelody, tol_s: f64) -> EvalReport {
    let (e, r) = (labelled(estimate), labelled(reference));
    let (matched, tp) = match_onsets(&e, &r, tol_s);
    EvalReport::from_counts(e.len(), r.len(), matched, tp)
}

/// Best F-measure over whole-octave shifts of the estimate (shifts leaving the pitch range are
/// skipped). Ties keep the smallest |σ|, negative first.
pub fn octave_invariant_f1(estimate: &PerfMelody, reference: &PerfMelody, tol_s: f64) -> EvalReport {
    let feasible = estimate.feasible_shifts(EVAL_SHIFTS);
    let mut best: Option<EvalReport> = None;
    for sigma in search_order(*EVAL_SHIFTS.end()) {
        if !feasible.contains(&sigma) {
            continue;
        }
        let shifted = estimate.octave_shift(sigma).expect("feasible shift");
        let mut report = note_f1(&shifted, reference, tol_s);
        report.best_sigma = sigma;
        if best.is_none_or(|b| report.f1 > b.f1) {
            best = Some(report);
        }
    }
    best.expect("sigma = 0 is always feasible")
}

/// 0, -1, 1, -2, 2, ...
fn search_order(max: i32) -> impl Iterator<Item = i32> {
    std::iter::once(0).chain((1..=max).flat_map(|k| [-k, k]))
}

/// Exhaustive-enumeration reference implementation of [`note_f1`] for at most eight notes per side.
pub fn oracle_note_f1(estimate: &PerfMelody, reference: &PerfMelody, tol_s: f64) -> Result<EvalReport> {
    if estimate.len() > ORACLE_MAX_NOTES || reference.len() > ORACLE_MAX_NOTES {
        return Err(Error::Input(format!(
            "oracle handles at most {ORACLE_MAX_NOTES} notes per side (got {} and {})",
            estimate.len(),
            reference.len()
        )));
    }
    let (e, r) = (labelled(estimate), labelled(reference));
    let mut used = vec![false; r.len()];
    let mut best = (0, 0);
    enumerate(&e, &r, tol_s, 0, &mut used, (0, 0), &mut best);
    Ok(EvalReport::from_counts(e.len(), r.len(), best.0, best.1))
}

fn enumerate(
    e: &[(f64, i32)],
    r: &[(f64, i32)],
    tol: f64,
    i: usize,
    used: &mut [bool],
    current: (usize, usize),
    best: &mut (usize, usize),
) {
    if i == e.len() {
        if current > *best {
            *best = current;
        }
        return;
    }
    enumerate(e, r, tol, i + 1, used, current, best);
    for j in 0..r.len() {
        if !used[j] && (e[i].0 - r[j].0).abs() <= tol {
            used[j] = true;
            let hit = usize::from(e[i].1 == r[j].1);
            enumerate(e, r, tol, i + 1, used, (current.0 + 1, current.1 + hit), best);
            used[j] = false;
        }
    }
}

/// Maximum matching of onsets within `tol_s`, maximising label agreement among maximum
/// matchings. Returns (matched pairs, pairs with equal labels).
pub fn match_onsets<L: PartialEq>(estimate: &[(f64, L)], reference: &[(f64, L)], tol_s: f64) -> (usize, usize) {
    let (ne, nr) = (estimate.len(), reference.len());
    if ne == 0 || nr == 0 {
        return (0, 0);
    }
    let mut edges = Vec::new();
    for (i, e) in estimate.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            if (e.0 - r.0).abs() <= tol_s {
                edges.push((i, j));
            }
        }
    }

    // Connected components over estimate nodes 0..ne and reference nodes ne..ne+nr.
    let mut parent: Vec<usize> = (0..ne + nr).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while p[root] != root {
            root = p[root];
        }
        let mut cur = x;
        while p[cur] != root {
            let next = p[cur];
            p[cur] = root;
            cur = next;
        }
        root
    }
    for &(i, j) in &edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, ne + j));
        if a != b {
            parent[a] = b;
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (Vec<usize>, Vec<usize>)> = Default::default();
    for &(i, j) in &edges {
        let root = find(&mut parent, i);
        let g = groups.entry(root).or_default();
        if !g.0.contains(&i) {
            g.0.push(i);
        }
        if !g.1.contains(&j) {
            g.1.push(j);
        }
    }

    let (mut matched, mut tp) = (0, 0);
    for (rows, cols) in groups.values() {
        let base = rows.len().min(cols.len()) as i64 + 1;
        let weight = |i: usize, j: usize| -> i64 {
            if (estimate[i].0 - reference[j].0).abs() <= tol_s {
                base + i64::from(estimate[i].1 == reference[j].1)
            } else {
                0
            }
        };
        let (transpose, n_small, n_large) =
            if rows.len() <= cols.len() { (false, rows.len(), cols.len()) } else { (true, cols.len(), rows.len()) };
        let w = |a: usize, b: usize| if transpose { weight(rows[b], cols[a]) } else { weight(rows[a], cols[b]) };
        for (a, b) in max_weight_assignment(n_small, n_large, w) {
            let value = w(a, b);
            if value > 0 {
                matched += 1;
                tp += usize::from(value > base);
            }
        }
    }
    (matched, tp)
}

/// Hungarian algorithm: assigns each of `n` rows to a distinct column among `m >= n`,
/// maximising the total weight.
fn max_weight_assignment(n: usize, m: usize, weight: impl Fn(usize, usize) -> i64) -> Vec<(usize, usize)> {
    const INF: i64 = i64::MAX / 4;
    let cost = |i: usize, j: usize| -weight(i - 1, j - 1);
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![INF; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = INF;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect()
}

/// Mean of per-item F1 scores; an empty list scores 0.
pub fn mean_f1(reports: &[EvalReport]) -> f64 {
    if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.f1).sum::<f64>() / reports.len() as f64
    }
}

/// Reads a transcript interchange file: a JSON list of `{onset_s, offset_s, midi}`.
pub fn transcript_from_json(text: &str) -> Result<PerfMelody> {
    let notes: Vec<PerfNote> = serde_json::from_str(text)?;
    PerfMelody::new(notes)
}

pub fn transcript_to_json(m: &PerfMelody) -> Result<String> {
    Ok(serde_json::to_string_pretty(m.notes())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Melody, Pitch};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mel(notes: &[(f64, i32)]) -> PerfMelody {
        Melody::new(
            notes
                .iter()
                .map(|&(t, m)| PerfNote { onset_s: t, offset_s: t + 0.01, pitch: Pitch::new(m).unwrap() })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_scores_one() {
        let m = mel(&[(0.0, 60), (0.5, 62), (1.0, 64)]);
        let r = note_f1(&m, &m, ONSET_TOLERANCE_S);
        assert_eq!((r.precision, r.recall, r.f1, r.matched), (1.0, 1.0, 1.0, 3));
    }

    #[test]
    fn one_of_two_onsets_in_tolerance() {
        let r = note_f1(&mel(&[(0.0, 60), (1.2, 62)]), &mel(&[(0.0, 60), (1.0, 62)]), 0.05);
        assert_eq!((r.matched, r.true_positives), (1, 1));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_conventions() {
        let empty = PerfMelody::empty();
        let some = mel(&[(0.0, 60)]);
        assert_eq!(note_f1(&empty, &some, 0.05).f1, 0.0);
        assert_eq!(note_f1(&some, &empty, 0.05).f1, 0.0);
        let both = note_f1(&empty, &empty, 0.05);
        assert_eq!((both.precision, both.recall, both.f1), (1.0, 1.0, 1.0));
        assert_eq!(oracle_note_f1(&empty, &empty, 0.05).unwrap().f1, 1.0);
    }

    #[test]
    fn octave_examples() {
        let reference = mel(&[(0.0, 60), (0.5, 62), (1.0, 64), (1.5, 65)]);
        let up = reference.octave_shift(1).unwrap();
        let r = octave_invariant_f1(&up, &reference, 0.05);
        assert_eq!((r.f1, r.best_sigma), (1.0, -1));
        assert_eq!(note_f1(&up, &reference, 0.05).f1, 0.0);

        let half = mel(&[(0.0, 72), (0.5, 74), (1.0, 64), (1.5, 65)]);
        let r = octave_invariant_f1(&half, &reference, 0.05);
        assert_eq!(r.f1, 0.5);
        assert_eq!(r.best_sigma, 0);
        let mut shifted = note_f1(&half.octave_shift(-1).unwrap(), &reference, 0.05);
        shifted.best_sigma = -1;
        assert_eq!(shifted.f1, 0.5);
    }

    #[test]
    fn pitch_aware_tiebreak_among_maximum_matchings() {
        // Both estimates can match either reference; only one assignment gets both pitches right.
        let est = mel(&[(1.00, 62), (1.02, 60)]);
        let reference = mel(&[(1.01, 60), (1.03, 62)]);
        let r = note_f1(&est, &reference, 0.05);
        assert_eq!((r.matched, r.true_positives), (2, 2));
        assert_eq!(r, oracle_note_f1(&est, &reference, 0.05).unwrap());
    }

    // Widening the tolerance can trade a pitch-correct pair for a larger matching.
    #[test]
    fn wider_tolerance_can_lower_f1() {
        let est = mel(&[(0.06, 60), (0.12, 62)]);
        let reference = mel(&[(0.0, 62), (0.06, 60)]);
        let narrow = note_f1(&est, &reference, 0.05);
        let wide = note_f1(&est, &reference, 0.07);
        assert_eq!((narrow.matched, narrow.true_positives), (1, 1));
        assert_eq!((wide.matched, wide.true_positives), (2, 0));
        assert!(wide.f1 < narrow.f1);
    }

    #[test]
    fn oracle_size_limit() {
        let big = mel(&(0..9).map(|i| (i as f64, 60)).collect::<Vec<_>>());
        assert!(matches!(oracle_note_f1(&big, &big, 0.05), Err(Error::Input(_))));
    }

    fn random_pair(rng: &mut ChaCha8Rng) -> (PerfMelody, PerfMelody) {
        let gen = |rng: &mut ChaCha8Rng, n: usize| {
            let mut t: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
            t.sort_by(f64::total_cmp);
            t.dedup();
            t
        };
        let nr = rng.gen_range(0..=8);
        let ref_t = gen(rng, nr);
        let ref_p: Vec<i32> = ref_t.iter().map(|_| rng.gen_range(48..80)).collect();
        let mut est: Vec<(f64, i32)> = Vec::new();
        for (t, p) in ref_t.iter().zip(&ref_p) {
            if rng.gen_bool(0.8) {
                let jitter = rng.gen_range(-0.08..0.08);
                let pitch = match rng.gen_range(0..4) {
                    0 => p + 12,
                    1 => p + rng.gen_range(-2..=2),
                    _ => *p,
                };
                est.push(((t + jitter).max(0.0), pitch));
            }
        }
        while est.len() < 8 && rng.gen_bool(0.3) {
            est.push((rng.gen_range(0.0..10.0), rng.gen_range(48..80)));
        }
        est.sort_by(|a, b| a.0.total_cmp(&b.0));
        est.dedup_by(|a, b| a.0 == b.0);
        let reference = ref_t.into_iter().zip(ref_p).collect::<Vec<_>>();
        (mel(&est), mel(&reference))
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let (e, r) = random_pair(&mut rng);
            assert_eq!(note_f1(&e, &r, 0.05), oracle_note_f1(&e, &r, 0.05).unwrap());
        }
    }

    proptest! {
        #[test]
        fn shifting_all_onsets_preserves_scores(seed in 0u64..1000, delta in 0.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, r) = random_pair(&mut rng);
            let shift = |m: &PerfMelody| mel(&m.notes().iter().map(|n| (n.onset_s + delta, n.pitch.midi())).collect::<Vec<_>>());
            prop_assert_eq!(note_f1(&e, &r, 0.05), note_f1(&shift(&e), &shift(&r), 0.05));
        }

        #[test]
        fn matching_size_monotone_in_tolerance(seed in 0u64..1000, t1 in 0.0f64..0.2, t2 in 0.0f64..0.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, r) = random_pair(&mut rng);
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            prop_assert!(note_f1(&e, &r, lo).matched <= note_f1(&e, &r, hi).matched);
            // With a single pitch every matched pair is a hit, so F1 follows the matching size.
            let flat = |m: &PerfMelody| mel(&m.notes().iter().map(|n| (n.onset_s, 60)).collect::<Vec<_>>());
            prop_assert!(note_f1(&flat(&e), &flat(&r), lo).f1 <= note_f1(&flat(&e), &flat(&r), hi).f1);
        }

        #[test]
        fn octave_invariant_under_estimate_shift(seed in 0u64..1000, k in -2i32..=2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, r) = random_pair(&mut rng);
            let Ok(shifted) = e.octave_shift(k) else { return Ok(()) };
            prop_assert_eq!(octave_invariant_f1(&shifted, &r, 0.05).f1, octave_invariant_f1(&e, &r, 0.05).f1);
        }

        #[test]
        fn invariant_never_below_plain(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (e, r) = random_pair(&mut rng);
            prop_assert!(octave_invariant_f1(&e, &r, 0.05).f1 >= note_f1(&e, &r, 0.05).f1);
        }
    }
}
