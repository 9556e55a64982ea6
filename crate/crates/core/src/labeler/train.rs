use ndarray::{s, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{loss_and_gradient, predict, LabelerConfig, Params};
use super::{argmax_nonempty, densify_chords, densify_score, DenseLabelSequence, LogitSequence, Task};
use crate::align::{refine_alignment, AlignmentMap, BeatGrid};
use crate::error::{Error, Result};
use crate::eval::{match_onsets, octave_invariant_f1, EvalReport};
use crate::features::{beatwise_resample, FeatureMatrix, ResampledFeatures};
use crate::types::{legato_offsets, Melody, Pitch, Segment, Split};

/// Decoding thresholds swept on validation data: 0.05, 0.10, …, 0.95.
pub fn thresholds() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub max_steps: usize,
    pub max_slice_beats: usize,
    pub max_slice_s: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub tolerance_s: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 8,
            eval_every: 250,
            patience: 10,
            max_steps: 100_000,
            max_slice_beats: 96,
            max_slice_s: 24.0,
            clip_norm: 1.0,
            tolerance_s: crate::eval::ONSET_TOLERANCE_S,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.eval_every == 0 || self.max_slice_beats == 0 {
            return Err(Error::Invalid("learning rate, batch size, eval interval and slice length must be positive".into()));
        }
        if !(self.max_slice_s > 0.0) || self.clip_norm < 0.0 {
            return Err(Error::Invalid("slice duration must be positive and clip norm non-negative".into()));
        }
        Ok(())
    }
}

/// One segment's features, targets and beat-to-time map.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub features: ResampledFeatures,
    pub labels: DenseLabelSequence,
    pub map: AlignmentMap,
    pub split: Split,
}

impl TrainingExample {
    pub fn new(
        id: impl Into<String>,
        features: ResampledFeatures,
        labels: DenseLabelSequence,
        map: AlignmentMap,
        split: Split,
    ) -> Result<Self> {
        if features.ticks() != labels.ticks() || labels.ticks() != map.num_ticks() {
            return Err(Error::Shape(format!(
                "{} feature ticks, {} labels, {} map ticks",
                features.ticks(),
                labels.ticks(),
                map.num_ticks()
            )));
        }
        Ok(TrainingExample { id: id.into(), features, labels, map, split })
    }

    /// Aligns `segment` to `grid`, pools `features` per tick and densifies the task's targets.
    pub fn from_segment(segment: &Segment, features: &FeatureMatrix, grid: &BeatGrid, task: Task) -> Result<Self> {
        let split = segment
            .split
            .ok_or_else(|| Error::Input(format!("segment `{}` has no split assignment", segment.id)))?;
        let b = segment.num_beats();
        let map = refine_alignment(grid, segment.user_start_s, b)?;
        let pooled = beatwise_resample(features, &map)?;
        let labels = match task {
            Task::Melody => densify_score(&segment.melody, b)?,
            Task::Chords => densify_chords(&segment.chords, b)?,
        };
        TrainingExample::new(segment.id.clone(), pooled, labels, map, split)
    }
}

/// Validation result after a training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    /// Mean batch loss since the previous evaluation; absent at step 0.
    pub train_loss: Option<f64>,
    pub valid_f1: f64,
    pub threshold: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation evaluation.
    pub params: Params,
    pub threshold: f64,
    pub best_f1: f64,
    pub best_step: usize,
    pub steps: usize,
    pub history: Vec<EvalPoint>,
}

/// Onset-and-label F1 for chord tracks given as `(time, class)`.
pub fn chord_f1(estimate: &[(f64, usize)], reference: &[(f64, usize)], tol_s: f64) -> EvalReport {
    let (matched, tp) = match_onsets(estimate, reference, tol_s);
    EvalReport::from_counts(estimate.len(), reference.len(), matched, tp)
}

/// F1 of one example at each threshold, given the example's logits.
fn example_scores(task: Task, ex: &TrainingExample, logits: &LogitSequence, taus: &[f64], tol_s: f64) -> Result<Vec<f64>> {
    let probs = logits.probabilities();
    let tick_time = |i: usize| ex.map.tick_time(i);
    let rows: Vec<(f64, usize)> = probs.rows().into_iter().map(|r| (r[0], argmax_nonempty(r))).collect();
    taus.iter()
        .map(|&tau| {
            let onsets = rows.iter().enumerate().filter(|(_, r)| r.0 < tau).map(|(i, r)| (i, r.1));
            Ok(match task {
                Task::Melody => {
                    let est = onsets
                        .map(|(i, c)| Ok((tick_time(i)?, Pitch::from_class_index(c)?)))
                        .collect::<Result<Vec<_>>>()?;
                    let est = Melody::new(legato_offsets(&est, ex.map.end_s())?)?;
                    let reference = ex.labels.to_perf_melody(&ex.map)?;
                    octave_invariant_f1(&est, &reference, tol_s).f1
                }
                Task::Chords => {
                    let est = onsets.map(|(i, c)| Ok((tick_time(i)?, c))).collect::<Result<Vec<_>>>()?;
                    let reference =
                        ex.labels.onsets().into_iter().map(|(i, c)| Ok((tick_time(i)?, c))).collect::<Result<Vec<_>>>()?;
                    chord_f1(&est, &reference, tol_s).f1
                }
            })
        })
        .collect()
}

/// Mean per-segment F1 at each threshold, computing logits with `logits_for`.
pub(crate) fn threshold_scores<F>(task: Task, examples: &[&TrainingExample], logits_for: F, tol_s: f64) -> Result<Vec<f64>>
where
    F: Fn(&TrainingExample) -> Result<LogitSequence> + Sync,
{
    let taus = thresholds();
    let per_example = examples
        .par_iter()
        .map(|ex| example_scores(task, ex, &logits_for(ex)?, &taus, tol_s))
        .collect::<Result<Vec<_>>>()?;
    let n = per_example.len().max(1) as f64;
    Ok((0..taus.len()).map(|k| per_example.iter().map(|s| s[k]).sum::<f64>() / n).collect())
}

/// Best `(F1, threshold)` over the sweep (ties: lower threshold) and the full curve.
pub fn sweep_thresholds(
    cfg: &LabelerConfig,
    params: &Params,
    examples: &[&TrainingExample],
    tol_s: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let curve = threshold_scores(cfg.task, examples, |ex| predict(cfg, params, ex.features.frames().view()), tol_s)?;
    let (f1, tau) = best_of(&curve);
    Ok((f1, tau, curve))
}

pub(crate) fn best_of(curve: &[f64]) -> (f64, f64) {
    let taus = thresholds();
    let mut best = 0;
    for k in 1..curve.len() {
        if curve[k] > curve[best] {
            best = k;
        }
    }
    (curve[best], taus[best])
}

/// Slice length in beats for an example, and the start beats that allow a slice of that length.
fn slice_plan(ex: &TrainingExample, tc: &TrainConfig, max_ticks: usize) -> (usize, Vec<usize>) {
    let times = ex.map.beat_times();
    let b = ex.map.num_beats();
    let cap = tc.max_slice_beats.min(max_ticks / 4).max(1);
    let len_at = |s: usize| {
        let mut k = 1;
        while k < cap && s + k < b && times[s + k + 1] - times[s] <= tc.max_slice_s {
            k += 1;
        }
        k
    };
    let lens: Vec<usize> = (0..b).map(len_at).collect();
    let best = *lens.iter().max().unwrap();
    (best, (0..b).filter(|&s| lens[s] == best).collect())
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, p: &mut Params, g: &Params, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (((_, pt), (_, gt)), ((_, mt), (_, vt))) in
            p.tensors_mut().into_iter().zip(g.tensors()).zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()))
        {
            Zip::from(pt).and(&gt).and(mt).and(vt).for_each(|p, &g, m, v| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
        }
        p.round_to_f32();
    }
}

/// Trains a labeler on the `Train` examples, selecting parameters and threshold on `Valid`.
///
/// Each step draws `batch_size` random whole-beat slices (at most `max_slice_beats` beats and
/// `max_slice_s` seconds) from single segments; gradients of the per-slice mean loss are averaged.
/// Validation runs before the first step and every `eval_every` steps; training stops after
/// `patience` evaluations without improvement or at `max_steps`. Deterministic given `cfg.seed`.
pub fn train(cfg: &LabelerConfig, tc: &TrainConfig, data: &[TrainingExample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    tc.validate()?;
    let train: Vec<&TrainingExample> = data.iter().filter(|e| e.split == Split::Train).collect();
    let valid: Vec<&TrainingExample> = data.iter().filter(|e| e.split == Split::Valid).collect();
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Input(format!(
            "training needs train and validation segments (got {} and {})",
            train.len(),
            valid.len()
        )));
    }
    for ex in train.iter().chain(&valid) {
        if ex.features.dim() != cfg.input_dim || ex.labels.num_classes() != cfg.num_classes() {
            return Err(Error::Shape(format!(
                "segment `{}`: {} feature dims / {} classes, config wants {} / {}",
                ex.id,
                ex.features.dim(),
                ex.labels.num_classes(),
                cfg.input_dim,
                cfg.num_classes()
            )));
        }
    }

    let mut params = Params::init(cfg)?;
    params.fit_standardization(train.iter().map(|e| e.features.frames().view()));
    let plans: Vec<(usize, Vec<usize>)> = train.iter().map(|e| slice_plan(e, tc, cfg.max_ticks)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam { m: params.zeros_like(), v: params.zeros_like(), t: 0 };

    let (f1, tau, _) = sweep_thresholds(cfg, &params, &valid, tc.tolerance_s)?;
    let mut history =
        vec![EvalPoint { step: 0, train_loss: None, valid_f1: f1, threshold: tau, improved: true }];
    let mut best = (params.clone(), f1, tau, 0usize);
    let (mut stale, mut loss_sum, mut loss_count, mut steps) = (0, 0.0, 0usize, 0);

    for step in 1..=tc.max_steps {
        steps = step;
        let batch: Vec<(usize, usize, usize)> = (0..tc.batch_size)
            .map(|_| {
                let e = rng.gen_range(0..train.len());
                let (len, starts) = &plans[e];
                (e, starts[rng.gen_range(0..starts.len())], *len)
            })
            .collect();
        let results = batch
            .par_iter()
            .map(|&(e, start, len)| {
                let ex = train[e];
                let x = ex.features.frames().slice(s![4 * start..4 * (start + len), ..]);
                loss_and_gradient(cfg, &params, x, &ex.labels.slice(4 * start, 4 * len)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grad = params.zeros_like();
        for (value, g) in &results {
            loss_sum += value.loss;
            loss_count += 1;
            for ((_, mut acc), (_, gt)) in grad.tensors_mut().into_iter().zip(g.tensors()) {
                acc += &gt;
            }
        }
        let mut scale = 1.0 / tc.batch_size as f64;
        if tc.clip_norm > 0.0 {
            let norm = grad.tensors().iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt() * scale;
            if norm > tc.clip_norm {
                scale *= tc.clip_norm / norm;
            }
        }
        for (_, mut t) in grad.tensors_mut() {
            t.mapv_inplace(|v| v * scale);
        }
        adam.step(&mut params, &grad, tc.learning_rate);

        if step % tc.eval_every == 0 || step == tc.max_steps {
            let (f1, tau, _) = sweep_thresholds(cfg, &params, &valid, tc.tolerance_s)?;
            let improved = f1 > best.1;
            history.push(EvalPoint { step, train_loss: Some(loss_sum / loss_count as f64), valid_f1: f1, threshold: tau, improved });
            loss_sum = 0.0;
            loss_count = 0;
            if improved {
                best = (params.clone(), f1, tau, step);
                stale = 0;
            } else {
                stale += 1;
                if stale >= tc.patience {
                    break;
                }
            }
        }
    }
    let (params, best_f1, threshold, best_step) = best;
    Ok(TrainOutcome { params, threshold, best_f1, best_step, steps, history })
}
