use ndarray::{concatenate, Array2, Axis};

use super::FeatureMatrix;
use crate::align::AlignmentMap;
use crate::error::{Error, Result};

/// Features at sixteenth-note rate: one row per tick, `4B` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampledFeatures {
    frames: Array2<f64>,
    /// Frames averaged into each tick; 0 where the nearest-frame fallback was used.
    pooled: Vec<usize>,
}

impl ResampledFeatures {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 || frames.nrows() % 4 != 0 {
            return Err(Error::Shape(format!("{} ticks is not a positive multiple of 4", frames.nrows())));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("resampled features must be finite".into()));
        }
        let pooled = vec![1; frames.nrows()];
        Ok(ResampledFeatures { frames, pooled })
    }

    pub fn ticks(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn pooled_counts(&self) -> &[usize] {
        &self.pooled
    }

    /// Rows for ticks `start..start + len`.
    pub fn slice_ticks(&self, start: usize, len: usize) -> Array2<f64> {
        self.frames.slice(ndarray::s![start..start + len, ..]).to_owned()
    }

    /// Stores this matrix as a time-rate matrix at one frame per tick of a nominal grid, for
    /// persisting resampled features in SSFT form.
    pub fn to_feature_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(4.0, 0.0, self.frames.mapv(|v| v as f32))
    }

    pub fn from_feature_matrix(m: &FeatureMatrix) -> Result<Self> {
        ResampledFeatures::new(m.frames().mapv(|v| v as f64))
    }
}

/// Averages the frames nearest each sixteenth-note tick of `map`.
///
/// A frame belongs to the tick whose time is closest to the frame centre (ties: earlier tick).
/// Frames closer to the virtual tick before tick 0 or to the closing tick at beat B are outside
/// the segment and ignored. A tick that receives no frame copies its single nearest frame.
pub fn beatwise_resample(x: &FeatureMatrix, map: &AlignmentMap) -> Result<ResampledFeatures> {
    let n_ticks = map.num_ticks();
    let tick_times: Vec<f64> = (0..n_ticks).map(|i| map.tick_time(i)).collect::<Result<_>>()?;
    let (span_start, span_end) = (x.t0_s(), x.end_s());
    for (i, &t) in tick_times.iter().enumerate() {
        if t < span_start || t > span_end {
            return Err(Error::Coverage { tick: i, time_s: t });
        }
    }

    // Tick times bracketed by one virtual tick on each side.
    let mut ext = Vec::with_capacity(n_ticks + 2);
    ext.push(tick_times[0] - (tick_times[1] - tick_times[0]));
    ext.extend_from_slice(&tick_times);
    ext.push(map.end_s());

    let dim = x.dim();
    let mut sums = Array2::<f64>::zeros((n_ticks, dim));
    let mut counts = vec![0usize; n_ticks];
    let frames = x.frames();
    for j in 0..x.num_frames() {
        let t = x.frame_time(j);
        if t < ext[0] || t > ext[n_ticks + 1] {
            continue;
        }
        let k = ext.partition_point(|&e| e < t);
        let idx = if k == 0 {
            0
        } else if k >= ext.len() {
            ext.len() - 1
        } else if (t - ext[k - 1]).abs() <= (ext[k] - t).abs() {
            k - 1
        } else {
            k
        };
        if idx == 0 || idx == n_ticks + 1 {
            continue;
        }
        let tick = idx - 1;
        counts[tick] += 1;
        let mut row = sums.row_mut(tick);
        for (s, &v) in row.iter_mut().zip(frames.row(j)) {
            *s += v as f64;
        }
    }

    for (i, &c) in counts.iter().enumerate() {
        let mut row = sums.row_mut(i);
        if c > 0 {
            row.mapv_inplace(|v| v / c as f64);
        } else {
            let j = nearest_frame(x, tick_times[i]);
            for (s, &v) in row.iter_mut().zip(frames.row(j)) {
                *s = v as f64;
            }
        }
    }
    Ok(ResampledFeatures { frames: sums, pooled: counts })
}

fn nearest_frame(x: &FeatureMatrix, t: f64) -> usize {
    let n = x.num_frames();
    let pos = ((t - x.t0_s()) * x.rate_hz()).floor().max(0.0) as usize;
    let lo = pos.min(n - 1);
    let hi = (lo + 1).min(n - 1);
    if (x.frame_time(hi) - t).abs() < (x.frame_time(lo) - t).abs() {
        hi
    } else {
        lo
    }
}

/// Concatenates resampled features along the feature axis, in argument order.
pub fn concat_features(parts: &[ResampledFeatures]) -> Result<ResampledFeatures> {
    let first = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
    if let Some(bad) = parts.iter().find(|p| p.ticks() != first.ticks()) {
        return Err(Error::Shape(format!("tick counts differ: {} vs {}", first.ticks(), bad.ticks())));
    }
    let views: Vec<_> = parts.iter().map(|p| p.frames.view()).collect();
    let frames = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    let pooled = (0..first.ticks())
        .map(|i| parts.iter().map(|p| p.pooled[i]).min().unwrap())
        .collect();
    Ok(ResampledFeatures { frames, pooled })
}
