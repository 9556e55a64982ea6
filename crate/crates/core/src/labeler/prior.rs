use ndarray::Array1;

use super::train::{best_of, threshold_scores};
use super::{DenseLabelSequence, LogitSequence, Task, TrainingExample};
use crate::error::{Error, Result};

/// Add-one smoothed class frequencies over all ticks of `labels`.
pub fn class_frequencies<'a>(labels: impl IntoIterator<Item = &'a DenseLabelSequence>, num_classes: usize) -> Vec<f64> {
    let mut counts = vec![1.0; num_classes];
    for l in labels {
        for &c in l.classes() {
            counts[c] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

/// Constant logits equal to the log class frequencies.
pub fn prior_logits(frequencies: &[f64]) -> Array1<f64> {
    frequencies.iter().map(|f| f.ln()).collect()
}

/// Best mean F1 (and its threshold) a labeler that ignores its input and always outputs `prior`
/// reaches on `examples`; the threshold is chosen on `examples` themselves, so this bounds the
/// prior-only baseline from above.
pub fn prior_only_f1(task: Task, prior: &Array1<f64>, examples: &[&TrainingExample], tol_s: f64) -> Result<(f64, f64)> {
    if prior.len() != task.num_classes() {
        return Err(Error::Shape(format!("prior has {} classes, task needs {}", prior.len(), task.num_classes())));
    }
    let curve = threshold_scores(
        task,
        examples,
        |ex| LogitSequence::new(ndarray::Array2::from_shape_fn((ex.labels.ticks(), prior.len()), |(_, c)| prior[c])),
        tol_s,
    )?;
    Ok(best_of(&curve))
}
