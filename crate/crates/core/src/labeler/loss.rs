use ndarray::{Array2, Axis};

use super::{DenseLabelSequence, LogitSequence};
use crate::error::{Error, Result};

/// Octave shifts tried by the octave-tolerant loss, in preference order for ties.
pub const LOSS_SHIFTS: [i32; 17] = [0, -1, 1, -2, 2, -3, 3, -4, 4, -5, 5, -6, 6, -7, 7, -8, 8];

/// Mean per-tick cross-entropy and the octave shift of the labels that achieved it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub loss: f64,
    pub sigma: i32,
}

fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn mean_nll(logp: &Array2<f64>, classes: &[usize]) -> f64 {
    let total: f64 = classes.iter().enumerate().map(|(i, &c)| -logp[[i, c]]).sum();
    total / classes.len() as f64
}

fn check(logits: &Array2<f64>, labels: &DenseLabelSequence) -> Result<()> {
    if logits.nrows() != labels.ticks() || logits.ncols() != labels.num_classes() {
        return Err(Error::Shape(format!(
            "logits {}×{} vs {} labels over {} classes",
            logits.nrows(),
            logits.ncols(),
            labels.ticks(),
            labels.num_classes()
        )));
    }
    Ok(())
}

/// Plain mean cross-entropy (σ fixed at 0).
pub fn cross_entropy(logits: &LogitSequence, labels: &DenseLabelSequence) -> Result<f64> {
    check(logits.logits(), labels)?;
    Ok(mean_nll(&log_softmax(logits.logits()), labels.classes()))
}

/// Cross-entropy minimized over every octave relabeling that keeps all labels in range.
pub fn octave_tolerant_loss(logits: &LogitSequence, labels: &DenseLabelSequence) -> Result<LossValue> {
    check(logits.logits(), labels)?;
    Ok(loss_and_grad(logits.logits(), labels, true, false).0)
}

/// Loss and, if `want_grad`, its gradient with respect to the logits along the minimizing branch.
pub(crate) fn loss_and_grad(
    logits: &Array2<f64>,
    labels: &DenseLabelSequence,
    octave: bool,
    want_grad: bool,
) -> (LossValue, Option<Array2<f64>>) {
    let logp = log_softmax(logits);
    let shifts: &[i32] = if octave { &LOSS_SHIFTS } else { &LOSS_SHIFTS[..1] };
    let mut best: Option<(LossValue, DenseLabelSequence)> = None;
    for &sigma in shifts {
        let Some(shifted) = labels.octave_shift(sigma) else { continue };
        let loss = mean_nll(&logp, shifted.classes());
        if best.as_ref().is_none_or(|(b, _)| loss < b.loss) {
            best = Some((LossValue { loss, sigma }, shifted));
        }
    }
    let (value, target) = best.expect("σ = 0 is always feasible");
    let grad = want_grad.then(|| {
        let n = target.ticks() as f64;
        let mut g = logp.mapv(f64::exp);
        for (i, &c) in target.classes().iter().enumerate() {
            g[[i, c]] -= 1.0;
        }
        g / n
    });
    (value, grad)
}
