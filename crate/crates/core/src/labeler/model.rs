//! Post-LN Transformer encoder (ReLU feed-forward) with a hand-written backward pass.
//!
//! Computation is in f64; parameters are kept on f32-representable values so checkpoints (stored
//! as f32) reload bit-exactly.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_and_grad;
use super::{DenseLabelSequence, LogitSequence, LossValue, Task};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

fn yes() -> bool {
    true
}

/// Architecture and seed of a labeler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelerConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub input_dim: usize,
    pub max_ticks: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub positional: bool,
    #[serde(default)]
    pub task: Task,
}

impl LabelerConfig {
    /// 2 layers, width 64, 4 heads, feed-forward 256.
    pub fn desk(input_dim: usize) -> Self {
        LabelerConfig {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ff_dim: 256,
            input_dim,
            max_ticks: 384,
            seed: 0,
            positional: true,
            task: Task::Melody,
        }
    }

    /// 4 layers, width 512, 8 heads, feed-forward 2048.
    pub fn paper(input_dim: usize) -> Self {
        LabelerConfig { layers: 4, model_dim: 512, heads: 8, ff_dim: 2048, ..LabelerConfig::desk(input_dim) }
    }

    pub fn num_classes(&self) -> usize {
        self.task.num_classes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ff_dim == 0 || self.input_dim == 0 {
            return Err(Error::Invalid("labeler dimensions must be positive".into()));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::Invalid(format!("model_dim {} not divisible by {} heads", self.model_dim, self.heads)));
        }
        if self.max_ticks == 0 || self.max_ticks % 4 != 0 {
            return Err(Error::Invalid(format!("max_ticks {} must be a positive multiple of 4", self.max_ticks)));
        }
        Ok(())
    }
}

/// One encoder layer. Matrices multiply from the right (`x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Fixed input standardization `(x - shift) * scale`, not trained.
    pub input_shift: Array1<f64>,
    pub input_scale: Array1<f64>,
    pub w_in: Array2<f64>,
    pub b_in: Array1<f64>,
    pub layers: Vec<Layer>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-a..a))
}

impl Params {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains; identity input standardization.
    pub fn init(cfg: &LabelerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (d, f) = (cfg.model_dim, cfg.ff_dim);
        let w_in = xavier(&mut rng, cfg.input_dim, d);
        let layers = (0..cfg.layers)
            .map(|_| Layer {
                wq: xavier(&mut rng, d, d),
                bq: Array1::zeros(d),
                wk: xavier(&mut rng, d, d),
                bk: Array1::zeros(d),
                wv: xavier(&mut rng, d, d),
                bv: Array1::zeros(d),
                wo: xavier(&mut rng, d, d),
                bo: Array1::zeros(d),
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                w1: xavier(&mut rng, d, f),
                b1: Array1::zeros(f),
                w2: xavier(&mut rng, f, d),
                b2: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
            })
            .collect();
        let w_out = xavier(&mut rng, d, cfg.num_classes());
        let mut p = Params {
            input_shift: Array1::zeros(cfg.input_dim),
            input_scale: Array1::ones(cfg.input_dim),
            w_in,
            b_in: Array1::zeros(d),
            layers,
            w_out,
            b_out: Array1::zeros(cfg.num_classes()),
        };
        p.round_to_f32();
        Ok(p)
    }

    /// Same shapes, all zeros (including the standardization vectors).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, mut t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z.input_shift.fill(0.0);
        z.input_scale.fill(0.0);
        z
    }

    /// Trainable tensors in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![("w_in".to_string(), self.w_in.view().into_dyn()), ("b_in".into(), self.b_in.view().into_dyn())];
        for (i, l) in self.layers.iter().enumerate() {
            let mats = [("wq", &l.wq), ("wk", &l.wk), ("wv", &l.wv), ("wo", &l.wo), ("w1", &l.w1), ("w2", &l.w2)];
            let vecs = [
                ("bq", &l.bq),
                ("bk", &l.bk),
                ("bv", &l.bv),
                ("bo", &l.bo),
                ("ln1_g", &l.ln1_g),
                ("ln1_b", &l.ln1_b),
                ("b1", &l.b1),
                ("b2", &l.b2),
                ("ln2_g", &l.ln2_g),
                ("ln2_b", &l.ln2_b),
            ];
            out.extend(mats.iter().map(|(n, t)| (format!("layers.{i}.{n}"), t.view().into_dyn())));
            out.extend(vecs.iter().map(|(n, t)| (format!("layers.{i}.{n}"), t.view().into_dyn())));
        }
        out.push(("w_out".into(), self.w_out.view().into_dyn()));
        out.push(("b_out".into(), self.b_out.view().into_dyn()));
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("w_in".to_string(), self.w_in.view_mut().into_dyn()),
            ("b_in".into(), self.b_in.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let Layer { wq, bq, wk, bk, wv, bv, wo, bo, ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b } = l;
            out.push((format!("layers.{i}.wq"), wq.view_mut().into_dyn()));
            out.push((format!("layers.{i}.wk"), wk.view_mut().into_dyn()));
            out.push((format!("layers.{i}.wv"), wv.view_mut().into_dyn()));
            out.push((format!("layers.{i}.wo"), wo.view_mut().into_dyn()));
            out.push((format!("layers.{i}.w1"), w1.view_mut().into_dyn()));
            out.push((format!("layers.{i}.w2"), w2.view_mut().into_dyn()));
            for (n, t) in [
                ("bq", bq),
                ("bk", bk),
                ("bv", bv),
                ("bo", bo),
                ("ln1_g", ln1_g),
                ("ln1_b", ln1_b),
                ("b1", b1),
                ("b2", b2),
                ("ln2_g", ln2_g),
                ("ln2_b", ln2_b),
            ] {
                out.push((format!("layers.{i}.{n}"), t.view_mut().into_dyn()));
            }
        }
        out.push(("w_out".into(), self.w_out.view_mut().into_dyn()));
        out.push(("b_out".into(), self.b_out.view_mut().into_dyn()));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Rounds every value to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|v| v as f32 as f64);
        }
        self.input_shift.mapv_inplace(|v| v as f32 as f64);
        self.input_scale.mapv_inplace(|v| v as f32 as f64);
    }

    /// Sets the input standardization from `rows`: per-dimension means, and one inverse standard
    /// deviation pooled over all dimensions so that near-constant bins are not blown up.
    pub fn fit_standardization<'a>(&mut self, rows: impl IntoIterator<Item = ArrayView2<'a, f64>>) {
        let d = self.input_shift.len();
        let (mut n, mut sum, mut sq) = (0usize, Array1::<f64>::zeros(d), Array1::<f64>::zeros(d));
        for x in rows {
            n += x.nrows();
            sum += &x.sum_axis(Axis(0));
            sq += &x.mapv(|v| v * v).sum_axis(Axis(0));
        }
        if n == 0 {
            return;
        }
        let mean = sum / n as f64;
        let var = (sq.sum() / n as f64 - mean.mapv(|m| m * m).sum()) / d as f64;
        self.input_shift = mean.mapv(|v| v as f32 as f64);
        self.input_scale.fill((1.0 / var.max(1e-8).sqrt()) as f32 as f64);
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

struct LayerCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln1: LnCache,
    h1: Array2<f64>,
    f1: Array2<f64>,
    a1: Array2<f64>,
    ln2: LnCache,
}

struct Cache {
    x: Array2<f64>,
    layers: Vec<LayerCache>,
    top: Array2<f64>,
}

fn positional_encoding(ticks: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((ticks, dim), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((i - i % 2) as f64 / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

fn layer_norm(x: &Array2<f64>, g: &Array1<f64>, b: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

/// Returns (dx, dgain, dbias).
fn layer_norm_backward(dy: &Array2<f64>, c: &LnCache, g: &Array1<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dg = (dy * &c.xhat).sum_axis(Axis(0));
    let db = dy.sum_axis(Axis(0));
    let mut dx = dy * g;
    let d = dx.ncols() as f64;
    Zip::from(dx.rows_mut()).and(c.xhat.rows()).and(&c.inv_std).for_each(|mut row, xhat, &inv| {
        let m1 = row.sum() / d;
        let m2 = row.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / d;
        Zip::from(&mut row).and(xhat).for_each(|v, &xh| *v = inv * (*v - m1 - xh * m2));
    });
    (dx, dg, db)
}

fn softmax_rows(x: &mut Array2<f64>) {
    super::softmax_rows(x)
}

fn layer_forward(l: &Layer, x: Array2<f64>, heads: usize) -> (Array2<f64>, LayerCache) {
    let (t, d) = x.dim();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let q = x.dot(&l.wq) + &l.bq;
    let k = x.dot(&l.wk) + &l.bk;
    let v = x.dot(&l.wv) + &l.bv;
    let mut ctx = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dk..(h + 1) * dk];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        ctx.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        probs.push(a);
    }
    let r1 = &x + &(ctx.dot(&l.wo) + &l.bo);
    let (h1, ln1) = layer_norm(&r1, &l.ln1_g, &l.ln1_b);
    let f1 = h1.dot(&l.w1) + &l.b1;
    let a1 = f1.mapv(|v| v.max(0.0));
    let r2 = &h1 + &(a1.dot(&l.w2) + &l.b2);
    let (out, ln2) = layer_norm(&r2, &l.ln2_g, &l.ln2_b);
    (out, LayerCache { x, q, k, v, probs, ctx, ln1, h1, f1, a1, ln2 })
}

fn layer_backward(l: &Layer, c: &LayerCache, dout: &Array2<f64>, g: &mut Layer, heads: usize) -> Array2<f64> {
    let d = c.x.ncols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();

    let (dr2, dg2, db2) = layer_norm_backward(dout, &c.ln2, &l.ln2_g);
    g.ln2_g = dg2;
    g.ln2_b = db2;
    g.w2 = c.a1.t().dot(&dr2);
    g.b2 = dr2.sum_axis(Axis(0));
    let mut df1 = dr2.dot(&l.w2.t());
    Zip::from(&mut df1).and(&c.f1).for_each(|v, &pre| {
        if pre <= 0.0 {
            *v = 0.0
        }
    });
    g.w1 = c.h1.t().dot(&df1);
    g.b1 = df1.sum_axis(Axis(0));
    let dh1 = dr2 + df1.dot(&l.w1.t());

    let (dr1, dg1, db1) = layer_norm_backward(&dh1, &c.ln1, &l.ln1_g);
    g.ln1_g = dg1;
    g.ln1_b = db1;
    g.wo = c.ctx.t().dot(&dr1);
    g.bo = dr1.sum_axis(Axis(0));
    let dctx = dr1.dot(&l.wo.t());

    let mut dq = Array2::zeros(c.q.dim());
    let mut dkm = Array2::zeros(c.k.dim());
    let mut dv = Array2::zeros(c.v.dim());
    for (h, a) in c.probs.iter().enumerate() {
        let cols = s![.., h * dk..(h + 1) * dk];
        let dctx_h = dctx.slice(cols);
        dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
        let da = dctx_h.dot(&c.v.slice(cols).t());
        let row_dot = (&da * a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = (da - row_dot) * a * scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dkm.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    g.wq = c.x.t().dot(&dq);
    g.bq = dq.sum_axis(Axis(0));
    g.wk = c.x.t().dot(&dkm);
    g.bk = dkm.sum_axis(Axis(0));
    g.wv = c.x.t().dot(&dv);
    g.bv = dv.sum_axis(Axis(0));
    dr1 + dq.dot(&l.wq.t()) + dkm.dot(&l.wk.t()) + dv.dot(&l.wv.t())
}

fn check_input(cfg: &LabelerConfig, p: &Params, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != cfg.input_dim || p.w_in.nrows() != cfg.input_dim {
        return Err(Error::Shape(format!("input has {} dims, labeler expects {}", x.ncols(), cfg.input_dim)));
    }
    if x.nrows() == 0 || x.nrows() > cfg.max_ticks {
        return Err(Error::Shape(format!("{} ticks outside 1..={}", x.nrows(), cfg.max_ticks)));
    }
    if p.layers.len() != cfg.layers || p.w_out.ncols() != cfg.num_classes() || p.w_in.ncols() != cfg.model_dim {
        return Err(Error::Shape("parameters do not match the labeler config".into()));
    }
    Ok(())
}

fn run(cfg: &LabelerConfig, p: &Params, x: ArrayView2<f64>) -> (Array2<f64>, Cache) {
    let xn = (&x - &p.input_shift) * &p.input_scale;
    let mut h = xn.dot(&p.w_in) + &p.b_in;
    if cfg.positional {
        h += &positional_encoding(h.nrows(), cfg.model_dim);
    }
    let mut caches = Vec::with_capacity(p.layers.len());
    for l in &p.layers {
        let (next, c) = layer_forward(l, h, cfg.heads);
        caches.push(c);
        h = next;
    }
    let logits = h.dot(&p.w_out) + &p.b_out;
    (logits, Cache { x: xn, layers: caches, top: h })
}

fn backward(cfg: &LabelerConfig, p: &Params, cache: &Cache, dlogits: &Array2<f64>) -> Params {
    let mut g = p.zeros_like();
    g.w_out = cache.top.t().dot(dlogits);
    g.b_out = dlogits.sum_axis(Axis(0));
    let mut dh = dlogits.dot(&p.w_out.t());
    for i in (0..p.layers.len()).rev() {
        dh = layer_backward(&p.layers[i], &cache.layers[i], &dh, &mut g.layers[i], cfg.heads);
    }
    g.w_in = cache.x.t().dot(&dh);
    g.b_in = dh.sum_axis(Axis(0));
    g
}

/// Logits for one sequence of at most `max_ticks` ticks.
pub fn forward(cfg: &LabelerConfig, p: &Params, x: ArrayView2<f64>) -> Result<LogitSequence> {
    check_input(cfg, p, &x)?;
    LogitSequence::new(run(cfg, p, x).0)
}

/// Logits for a sequence of any length, processed in consecutive `max_ticks` windows.
pub fn predict(cfg: &LabelerConfig, p: &Params, x: ArrayView2<f64>) -> Result<LogitSequence> {
    check_input(cfg, p, &x.slice(s![..x.nrows().min(cfg.max_ticks), ..]))?;
    let mut out = Array2::zeros((x.nrows(), cfg.num_classes()));
    let mut start = 0;
    while start < x.nrows() {
        let end = (start + cfg.max_ticks).min(x.nrows());
        let (logits, _) = run(cfg, p, x.slice(s![start..end, ..]));
        out.slice_mut(s![start..end, ..]).assign(&logits);
        start = end;
    }
    LogitSequence::new(out)
}

/// Task loss for one sequence and its gradient with respect to every trainable tensor.
pub fn loss_and_gradient(
    cfg: &LabelerConfig,
    p: &Params,
    x: ArrayView2<f64>,
    labels: &DenseLabelSequence,
) -> Result<(LossValue, Params)> {
    check_input(cfg, p, &x)?;
    if labels.ticks() != x.nrows() || labels.num_classes() != cfg.num_classes() {
        return Err(Error::Shape(format!("{} labels for {} ticks", labels.ticks(), x.nrows())));
    }
    let (logits, cache) = run(cfg, p, x);
    let (value, dlogits) = loss_and_grad(&logits, labels, cfg.task.octave_tolerant(), true);
    Ok((value, backward(cfg, p, &cache, &dlogits.expect("gradient requested"))))
}

/// Summary of an analytic-vs-numeric gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Probes discarded because the ±h perturbation crossed a ReLU kink or changed the chosen octave.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Which ReLUs are active, plus the loss's chosen octave; the loss is smooth while both are fixed.
fn branch(cache: &Cache, sigma: i32) -> (Vec<bool>, i32) {
    (cache.layers.iter().flat_map(|l| l.f1.iter().map(|&v| v > 0.0)).collect(), sigma)
}

/// Compares [`loss_and_gradient`] against central differences with step `h`.
///
/// The relative error of a probe is `|a − n| / max(|a|, |n|, floor)`. Each tensor is probed at
/// up to `per_tensor` evenly strided entries (all of them when smaller). Probes whose perturbation
/// changes the piecewise branch (a ReLU sign or the loss's minimizing octave) are skipped, since a
/// finite difference across a kink does not estimate the derivative.
pub fn finite_difference_check(
    cfg: &LabelerConfig,
    p: &Params,
    x: ArrayView2<f64>,
    labels: &DenseLabelSequence,
    h: f64,
    floor: f64,
    per_tensor: usize,
) -> Result<GradCheck> {
    let (_, analytic) = loss_and_gradient(cfg, p, x, labels)?;
    let eval = |q: &Params| {
        let (logits, cache) = run(cfg, q, x);
        let v = loss_and_grad(&logits, labels, cfg.task.octave_tolerant(), false).0;
        (v.loss, branch(&cache, v.sigma))
    };
    let base = eval(p).1;
    let grads: Vec<(String, Vec<f64>)> =
        analytic.tensors().into_iter().map(|(n, t)| (n, t.iter().copied().collect())).collect();
    let mut work = p.clone();
    let mut out = GradCheck { checked: 0, skipped: 0, max_rel_error: 0.0, worst: String::new() };
    for (ti, (name, g)) in grads.iter().enumerate() {
        let stride = g.len().div_ceil(per_tensor.max(1));
        for j in (0..g.len()).step_by(stride) {
            let set = |q: &mut Params, v: f64| q.tensors_mut()[ti].1.as_slice_mut().expect("contiguous")[j] = v;
            let orig = p.tensors()[ti].1.as_slice().expect("contiguous")[j];
            set(&mut work, orig + h);
            let (up, up_branch) = eval(&work);
            set(&mut work, orig - h);
            let (down, down_branch) = eval(&work);
            set(&mut work, orig);
            if up_branch != base || down_branch != base {
                out.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let rel = (g[j] - numeric).abs() / g[j].abs().max(numeric.abs()).max(floor);
            out.checked += 1;
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = format!("{name}[{j}]: analytic {} numeric {numeric}", g[j]);
            }
        }
    }
    Ok(out)
}
