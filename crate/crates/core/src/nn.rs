//! Dense feed-forward classifier with exact manual gradients.
//!
//! Hidden layers use the rectifier, the output layer is identity (logits).
//! Training minimizes mean soft-label cross-entropy minus an optional entropy
//! bonus (`cp_weight`), with SGD + classical momentum and weight decay on
//! weights only. All randomness flows through caller-provided seeded RNGs so
//! runs are bit-deterministic.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Mat, Result};

/// Probability clamp applied inside every logarithm.
pub const PROB_EPS: f64 = 1e-12;

const CKPT_MAGIC: &[u8; 4] = b"BLAB";
const CKPT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layer_dims: Vec<usize>,
    /// Per layer, `out_dim x in_dim` row-major.
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(epoch, multiplier)` pairs, epochs strictly increasing. The effective
    /// learning rate at epoch `e` is the base rate times every multiplier
    /// whose epoch is `<= e`.
    pub schedule: Vec<(usize, f64)>,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must be in [0,1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "schedule epochs must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = self.learning_rate;
        for &(e, m) in &self.schedule {
            if e <= epoch {
                lr *= m;
            }
        }
        lr
    }
}

/// Optimizer state: config plus per-parameter velocities.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub cfg: SgdConfig,
    vel_w: Vec<Mat>,
    vel_b: Vec<Vec<f64>>,
    current_lr: f64,
}

impl SgdState {
    pub fn new(cfg: SgdConfig, model: &MlpModel) -> Result<Self> {
        cfg.validate()?;
        let vel_w = model
            .weights
            .iter()
            .map(|w| Mat::zeros(w.rows(), w.cols()))
            .collect();
        let vel_b = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let current_lr = cfg.lr_at(0);
        Ok(SgdState {
            cfg,
            vel_w,
            vel_b,
            current_lr,
        })
    }

    /// Apply the learning-rate schedule for `epoch`.
    pub fn begin_epoch(&mut self, epoch: usize) {
        self.current_lr = self.cfg.lr_at(epoch);
    }
}

pub fn init_mlp(layer_dims: &[usize], seed: u64) -> Result<MlpModel> {
    if layer_dims.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 layer dims, got {}",
            layer_dims.len()
        )));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::Config("layer dims must be positive".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let scale = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, scale).expect("positive std");
        let mut w = Mat::zeros(fan_out, fan_in);
        for v in w.data_mut() {
            *v = normal.sample(&mut rng);
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpModel {
        layer_dims: layer_dims.to_vec(),
        weights,
        biases,
    })
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        *self.layer_dims.first().unwrap()
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }
}

/// Forward pass returning logits. Pure function of `(model, x)`.
pub fn forward(model: &MlpModel, x: &Mat) -> Result<Mat> {
    if x.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    let (acts, _) = forward_cached(model, x);
    Ok(acts.into_iter().last().unwrap())
}

/// Forward pass keeping per-layer activations for backprop.
/// Returns (activations including input and logits, pre-activations per layer).
fn forward_cached(model: &MlpModel, x: &Mat) -> (Vec<Mat>, Vec<Mat>) {
    let n = x.rows();
    let last = model.weights.len() - 1;
    let mut acts = vec![x.clone()];
    let mut pres = Vec::new();
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let prev = acts.last().unwrap();
        let mut z = Mat::zeros(n, w.rows());
        for i in 0..n {
            let pi = prev.row(i);
            let zi = z.row_mut(i);
            for (o, zo) in zi.iter_mut().enumerate() {
                let wr = w.row(o);
                let mut s = b[o];
                for (a, ww) in pi.iter().zip(wr) {
                    s += a * ww;
                }
                *zo = s;
            }
        }
        let a = if l == last {
            z.clone()
        } else {
            let mut a = z.clone();
            for v in a.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            a
        };
        pres.push(z);
        acts.push(a);
    }
    (acts, pres)
}

/// Row-wise softmax with max-subtraction.
pub fn softmax(logits: &Mat) -> Result<Mat> {
    if !logits.is_finite() {
        return Err(Error::Numeric("non-finite logits in softmax".into()));
    }
    let mut out = logits.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

fn check_same_shape(a: &Mat, b: &Mat) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "shape mismatch: {}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

#[inline]
fn ln_clamped(p: f64) -> f64 {
    p.max(PROB_EPS).ln()
}

/// Per-sample soft-label cross-entropy: `-sum_j Y(i,j) * ln(max(P(i,j), eps))`.
pub fn cross_entropy_soft(y: &Mat, p: &Mat) -> Result<Vec<f64>> {
    check_same_shape(y, p)?;
    Ok((0..y.rows())
        .map(|i| {
            y.row(i)
                .iter()
                .zip(p.row(i))
                .map(|(&yj, &pj)| -yj * ln_clamped(pj))
                .sum()
        })
        .collect())
}

/// Per-sample prediction entropy, in `[0, ln C]` for simplex rows.
pub fn entropy(p: &Mat) -> Vec<f64> {
    (0..p.rows())
        .map(|i| p.row(i).iter().map(|&pj| -pj * ln_clamped(pj)).sum())
        .collect()
}

/// Gradient of the soft-label cross-entropy w.r.t. the labels: entry `(i,j)`
/// is `-ln(max(P(i,j), eps))`, independent of `Y` for this loss.
pub fn label_gradient(y: &Mat, p: &Mat) -> Result<Mat> {
    check_same_shape(y, p)?;
    let mut out = p.clone();
    for v in out.data_mut() {
        *v = -ln_clamped(*v);
    }
    Ok(out)
}

pub fn one_hot(labels: &[usize], class_count: usize) -> Result<Mat> {
    let mut out = Mat::zeros(labels.len(), class_count);
    for (i, &c) in labels.iter().enumerate() {
        if c >= class_count {
            return Err(Error::Data(format!(
                "label {} out of range for {} classes",
                c, class_count
            )));
        }
        out.set(i, c, 1.0);
    }
    Ok(out)
}

/// One SGD-with-momentum step on `mean[CE - cp_weight * H]` over the batch.
/// Returns the mean loss before the update.
pub fn train_step(
    model: &mut MlpModel,
    x: &Mat,
    y: &Mat,
    state: &mut SgdState,
    cp_weight: f64,
) -> Result<f64> {
    if x.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if y.rows() != x.rows() || y.cols() != model.class_count() {
        return Err(Error::Shape(format!(
            "labels are {}x{}, expected {}x{}",
            y.rows(),
            y.cols(),
            x.rows(),
            model.class_count()
        )));
    }
    let n = x.rows();
    let (acts, pres) = forward_cached(model, x);
    let logits = acts.last().unwrap();
    let p = softmax(logits)?;
    let ce = cross_entropy_soft(y, &p)?;
    let h = entropy(&p);
    let loss = ce
        .iter()
        .zip(&h)
        .map(|(c, hh)| c - cp_weight * hh)
        .sum::<f64>()
        / n as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite batch loss".into()));
    }

    // Gradient of the mean loss w.r.t. logits:
    //   CE part:      (sum_j Y_ij) * p_ik - Y_ik
    //   entropy part: cp_weight * p_ik * (ln p_ik + H_i)
    let mut delta = Mat::zeros(n, model.class_count());
    for i in 0..n {
        let ysum: f64 = y.row(i).iter().sum();
        let hi = h[i];
        let pr = p.row(i);
        let yr = y.row(i);
        let dr = delta.row_mut(i);
        for j in 0..dr.len() {
            let pj = pr[j];
            dr[j] = (ysum * pj - yr[j] + cp_weight * pj * (ln_clamped(pj) + hi)) / n as f64;
        }
    }

    backprop_and_update(model, &acts, &pres, delta, state);
    Ok(loss)
}

/// One SGD-with-momentum step from a caller-supplied gradient of the batch
/// loss w.r.t. the output logits. `delta` must already include any batch-size
/// normalization. Shares the backward pass and update rule with `train_step`.
pub fn train_step_from_logit_grad(
    model: &mut MlpModel,
    x: &Mat,
    delta: &Mat,
    state: &mut SgdState,
) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if delta.rows() != x.rows() || delta.cols() != model.class_count() {
        return Err(Error::Shape(format!(
            "logit gradient is {}x{}, expected {}x{}",
            delta.rows(),
            delta.cols(),
            x.rows(),
            model.class_count()
        )));
    }
    if !delta.is_finite() {
        return Err(Error::Numeric("non-finite logit gradient".into()));
    }
    let (acts, pres) = forward_cached(model, x);
    backprop_and_update(model, &acts, &pres, delta.clone(), state);
    Ok(())
}

// Reverse accumulation through the layers, applying the SGD update per layer.
fn backprop_and_update(
    model: &mut MlpModel,
    acts: &[Mat],
    pres: &[Mat],
    mut delta: Mat,
    state: &mut SgdState,
) {
    let n = delta.rows();
    let layers = model.weights.len();
    for l in (0..layers).rev() {
        let a_prev = &acts[l];
        let in_dim = model.weights[l].cols();
        let out_dim = model.weights[l].rows();
        let mut grad_w = Mat::zeros(out_dim, in_dim);
        let mut grad_b = vec![0.0; out_dim];
        for i in 0..n {
            let dr = delta.row(i);
            let ar = a_prev.row(i);
            for (o, &d) in dr.iter().enumerate() {
                grad_b[o] += d;
                let gw = grad_w.row_mut(o);
                for (g, &a) in gw.iter_mut().zip(ar) {
                    *g += d * a;
                }
            }
        }
        if l > 0 {
            let mut next = Mat::zeros(n, in_dim);
            let w = &model.weights[l];
            let zprev = &pres[l - 1];
            for i in 0..n {
                let dr = delta.row(i);
                let nr = next.row_mut(i);
                for (o, &d) in dr.iter().enumerate() {
                    let wr = w.row(o);
                    for (nv, &ww) in nr.iter_mut().zip(wr) {
                        *nv += d * ww;
                    }
                }
                for (j, nv) in nr.iter_mut().enumerate() {
                    if zprev.get(i, j) <= 0.0 {
                        *nv = 0.0;
                    }
                }
            }
            // apply the update for layer l, then continue with the new delta
            apply_update(model, state, l, &grad_w, &grad_b);
            delta = next;
        } else {
            apply_update(model, state, l, &grad_w, &grad_b);
        }
    }
}

fn apply_update(model: &mut MlpModel, state: &mut SgdState, l: usize, grad_w: &Mat, grad_b: &[f64]) {
    let lr = state.current_lr;
    let mu = state.cfg.momentum;
    let wd = state.cfg.weight_decay;
    let w = &mut model.weights[l];
    let vw = &mut state.vel_w[l];
    for ((wv, vv), &g) in w.data_mut().iter_mut().zip(vw.data_mut()).zip(grad_w.data()) {
        let g = g + wd * *wv;
        *vv = mu * *vv - lr * g;
        *wv += *vv;
    }
    let b = &mut model.biases[l];
    let vb = &mut state.vel_b[l];
    for ((bv, vv), &g) in b.iter_mut().zip(vb.iter_mut()).zip(grad_b) {
        *vv = mu * *vv - lr * g;
        *bv += *vv;
    }
}

/// One epoch of mini-batch training with a fresh shuffle from `rng`.
pub fn train_epoch(
    model: &mut MlpModel,
    x: &Mat,
    y: &Mat,
    state: &mut SgdState,
    cp_weight: f64,
    epoch: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    state.begin_epoch(epoch);
    let n = x.rows();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let bs = state.cfg.batch_size;
    let mut total = 0.0;
    let mut batches = 0usize;
    for (bi, chunk) in order.chunks(bs).enumerate() {
        let xb = x.select_rows(chunk);
        let yb = y.select_rows(chunk);
        let loss = train_step(model, &xb, &yb, state, cp_weight).map_err(|e| {
            Error::Numeric(format!("epoch {epoch}, batch {bi}: {e}"))
        })?;
        total += loss;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Cross-entropy of one-hot labels against the model's softmax predictions.
pub fn per_sample_loss(model: &MlpModel, x: &Mat, labels: &[usize]) -> Result<Vec<f64>> {
    let y = one_hot(labels, model.class_count())?;
    let p = softmax(&forward(model, x)?)?;
    cross_entropy_soft(&y, &p)
}

/// Argmax class per row, ties to the lowest class index.
pub fn predict(model: &MlpModel, x: &Mat) -> Result<Vec<usize>> {
    let logits = forward(model, x)?;
    Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Binary checkpoint: magic "BLAB", version u16, layer-dim count u16, dims as
/// u32, then per layer the weight matrix (row-major) followed by the bias
/// vector, all little-endian f64.
pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layer_dims.len() as u16).to_le_bytes());
    for &d in &model.layer_dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (w, b) in model.weights.iter().zip(&model.biases) {
        for &v in w.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for &v in b {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let err = |m: &str| Error::Data(format!("{}: {m}", path.display()));
    if buf.len() < 8 || &buf[0..4] != CKPT_MAGIC {
        return Err(err("bad checkpoint magic"));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != CKPT_VERSION {
        return Err(err(&format!("unsupported checkpoint version {version}")));
    }
    let ndims = u16::from_le_bytes([buf[6], buf[7]]) as usize;
    let mut off = 8;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        if off + 4 > buf.len() {
            return Err(err("truncated dims"));
        }
        dims.push(u32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as usize);
        off += 4;
    }
    if dims.len() < 2 {
        return Err(err("checkpoint needs at least 2 layer dims"));
    }
    let read_f64s = |count: usize, off: &mut usize| -> Result<Vec<f64>> {
        let bytes = count * 8;
        if *off + bytes > buf.len() {
            return Err(Error::Data(format!("{}: truncated payload", path.display())));
        }
        let out = buf[*off..*off + bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        *off += bytes;
        Ok(out)
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in dims.windows(2) {
        let (fi, fo) = (pair[0], pair[1]);
        weights.push(Mat::from_vec(fo, fi, read_f64s(fo * fi, &mut off)?)?);
        biases.push(read_f64s(fo, &mut off)?);
    }
    if off != buf.len() {
        return Err(err("trailing bytes in checkpoint"));
    }
    Ok(MlpModel {
        layer_dims: dims,
        weights,
        biases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn mat(rows: &[&[f64]]) -> Mat {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_mlp(&[2, 3], 7).unwrap();
        let b = init_mlp(&[2, 3], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_rejects_short_dims() {
        assert!(matches!(init_mlp(&[2], 0), Err(Error::Config(_))));
        assert!(matches!(init_mlp(&[2, 0, 3], 0), Err(Error::Config(_))));
    }

    #[test]
    fn init_biases_zero() {
        let m = init_mlp(&[2, 64, 64, 3], 1).unwrap();
        assert!(m.biases.iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_zero_model_gives_zero_logits() {
        let mut m = init_mlp(&[2, 4, 3], 0).unwrap();
        for w in &mut m.weights {
            for v in w.data_mut() {
                *v = 0.0;
            }
        }
        let x = mat(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let out = forward(&m, &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_shape_contract() {
        let m = init_mlp(&[2, 8, 3], 3).unwrap();
        let x = Mat::zeros(5, 2);
        assert_eq!(forward(&m, &x).unwrap().rows(), 5);
        assert_eq!(forward(&m, &x).unwrap().cols(), 3);
        assert!(forward(&m, &Mat::zeros(5, 3)).is_err());
    }

    #[test]
    fn rectifier_blocks_negative_preactivation() {
        // single hidden unit wired to force a negative pre-activation
        let mut m = init_mlp(&[1, 1, 1], 0).unwrap();
        m.weights[0].set(0, 0, -1.0);
        m.weights[1].set(0, 0, 5.0);
        let out = forward(&m, &mat(&[&[2.0]])).unwrap();
        assert_eq!(out.get(0, 0), 0.0);
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&mat(&[&[0.0, 0.0, 0.0]])).unwrap();
        for j in 0..3 {
            assert_relative_eq!(p.get(0, j), 1.0 / 3.0, epsilon = 1e-12);
        }
        let p = softmax(&mat(&[&[1000.0, 0.0, 0.0]])).unwrap();
        assert!(p.is_finite());
        assert!(p.get(0, 0) > 1.0 - 1e-9);
        let p = softmax(&mat(&[&[2.0f64.ln(), 0.0, 0.0]])).unwrap();
        assert_relative_eq!(p.get(0, 0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(p.get(0, 1), 0.25, epsilon = 1e-12);
        assert!(softmax(&mat(&[&[f64::NAN, 0.0]])).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let y = mat(&[&[1.0, 0.0, 0.0]]);
        let p = mat(&[&[1.0, 0.0, 0.0]]);
        assert!(cross_entropy_soft(&y, &p).unwrap()[0] < 1e-11);

        let y = mat(&[&[0.0, 1.0, 0.0, 0.0]]);
        let p = mat(&[&[0.25; 4]]);
        assert_relative_eq!(cross_entropy_soft(&y, &p).unwrap()[0], 4.0f64.ln(), epsilon = 1e-12);

        let y = mat(&[&[0.5, 0.5]]);
        let p = mat(&[&[0.5, 0.5]]);
        assert_relative_eq!(cross_entropy_soft(&y, &p).unwrap()[0], 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn entropy_cases() {
        assert_relative_eq!(entropy(&mat(&[&[1.0, 0.0]]))[0], 0.0, epsilon = 1e-9);
        let uniform = mat(&[&[0.1; 10]]);
        assert_relative_eq!(entropy(&uniform)[0], 10.0f64.ln(), epsilon = 1e-12);
        let h = entropy(&mat(&[&[0.5, 0.25, 0.25]]))[0];
        assert_relative_eq!(h, 1.5 * 2.0f64.ln(), epsilon = 1e-9);
        assert_relative_eq!(h, 1.0397, epsilon = 1e-4);
    }

    #[test]
    fn label_gradient_analytic_cases() {
        let y = mat(&[&[1.0, 0.0, 0.0]]);
        let p = mat(&[&[0.5, 0.25, 0.25]]);
        let g = label_gradient(&y, &p).unwrap();
        assert_relative_eq!(g.get(0, 0), 0.6931, epsilon = 1e-4);
        assert_relative_eq!(g.get(0, 1), 1.3863, epsilon = 1e-4);

        let p = mat(&[&[0.25; 4]]);
        let g = label_gradient(&Mat::zeros(1, 4), &p).unwrap();
        for j in 0..4 {
            assert_relative_eq!(g.get(0, j), 4.0f64.ln(), epsilon = 1e-12);
        }

        let p = mat(&[&[1.0, 0.0, 0.0]]);
        let g = label_gradient(&Mat::zeros(1, 3), &p).unwrap();
        assert!(g.get(0, 0).abs() < 1e-11);
        assert!(g.get(0, 1) <= -(PROB_EPS.ln()) + 1e-9);
        assert!(g.get(0, 1) > 20.0);
    }

    /// Finite-difference oracle on the loss w.r.t. the labels.
    #[test]
    fn label_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100 {
            let c = 3 + rng.gen_range(0..3);
            let y_raw: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.5)).collect();
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = softmax(&Mat::from_vec(1, c, logits).unwrap()).unwrap();
            let y = Mat::from_vec(1, c, y_raw.clone()).unwrap();
            let g = label_gradient(&y, &p).unwrap();
            for j in 0..c {
                let h = 1e-6;
                let mut yp = y.clone();
                yp.set(0, j, y_raw[j] + h);
                let mut ym = y.clone();
                ym.set(0, j, y_raw[j] - h);
                let fd = (cross_entropy_soft(&yp, &p).unwrap()[0]
                    - cross_entropy_soft(&ym, &p).unwrap()[0])
                    / (2.0 * h);
                let rel = (g.get(0, j) - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-5, "rel err {rel}");
            }
        }
    }

    fn loss_of(model: &MlpModel, x: &Mat, y: &Mat, cp_weight: f64) -> f64 {
        let p = softmax(&forward(model, x).unwrap()).unwrap();
        let ce = cross_entropy_soft(y, &p).unwrap();
        let h = entropy(&p);
        ce.iter().zip(&h).map(|(c, hh)| c - cp_weight * hh).sum::<f64>() / x.rows() as f64
    }

    /// Central finite differences over every parameter of a small net.
    #[test]
    fn train_step_gradient_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for case in 0..4 {
            let dims: &[usize] = if case % 2 == 0 { &[2, 8, 3] } else { &[4, 16, 16, 4] };
            let cpw = if case < 2 { 0.0 } else { 0.7 };
            let model = init_mlp(dims, 100 + case as u64).unwrap();
            let n = 4;
            let x = Mat::from_vec(
                n,
                dims[0],
                (0..n * dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let c = *dims.last().unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let y = one_hot(&labels, c).unwrap();

            // recover the analytic gradient from a unit-lr, no-momentum step
            let cfg = SgdConfig {
                learning_rate: 1.0,
                momentum: 0.0,
                weight_decay: 0.0,
                schedule: vec![],
                batch_size: n,
            };
            let mut stepped = model.clone();
            let mut state = SgdState::new(cfg, &stepped).unwrap();
            train_step(&mut stepped, &x, &y, &mut state, cpw).unwrap();

            let h = 1e-5;
            for l in 0..model.weights.len() {
                for idx in 0..model.weights[l].data().len() {
                    let analytic = model.weights[l].data()[idx] - stepped.weights[l].data()[idx];
                    let mut mp = model.clone();
                    mp.weights[l].data_mut()[idx] += h;
                    let mut mm = model.clone();
                    mm.weights[l].data_mut()[idx] -= h;
                    let fd = (loss_of(&mp, &x, &y, cpw) - loss_of(&mm, &x, &y, cpw)) / (2.0 * h);
                    let rel = (analytic - fd).abs() / fd.abs().max(1e-6);
                    assert!(rel < 1e-4, "layer {l} idx {idx}: rel {rel}");
                }
                for idx in 0..model.biases[l].len() {
                    let analytic = model.biases[l][idx] - stepped.biases[l][idx];
                    let mut mp = model.clone();
                    mp.biases[l][idx] += h;
                    let mut mm = model.clone();
                    mm.biases[l][idx] -= h;
                    let fd = (loss_of(&mp, &x, &y, cpw) - loss_of(&mm, &x, &y, cpw)) / (2.0 * h);
                    let rel = (analytic - fd).abs() / fd.abs().max(1e-6);
                    assert!(rel < 1e-4, "layer {l} bias {idx}: rel {rel}");
                }
            }
        }
    }

    #[test]
    fn zero_learning_rate_is_a_null_step() {
        let model = init_mlp(&[2, 8, 3], 9).unwrap();
        let mut m = model.clone();
        let cfg = SgdConfig {
            learning_rate: 0.0,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: vec![],
            batch_size: 4,
        };
        let mut state = SgdState::new(cfg, &m).unwrap();
        let x = mat(&[&[0.3, -0.2], &[1.0, 0.5]]);
        let y = one_hot(&[0, 2], 3).unwrap();
        train_step(&mut m, &x, &y, &mut state, 0.5).unwrap();
        assert_eq!(m, model);
    }

    #[test]
    fn cp_loss_identity() {
        // loss with cp_weight > 0 equals CE - cp_weight * H, evaluated both ways
        let model = init_mlp(&[2, 8, 3], 21).unwrap();
        let x = mat(&[&[0.1, 0.9], &[-0.4, 0.2], &[1.3, -1.1]]);
        let y = one_hot(&[0, 1, 2], 3).unwrap();
        let cpw = 0.8;
        let direct = loss_of(&model, &x, &y, cpw);
        let p = softmax(&forward(&model, &x).unwrap()).unwrap();
        let ce: f64 = cross_entropy_soft(&y, &p).unwrap().iter().sum::<f64>() / 3.0;
        let h: f64 = entropy(&p).iter().sum::<f64>() / 3.0;
        assert_relative_eq!(direct, ce - cpw * h, epsilon = 1e-12);
    }

    #[test]
    fn per_sample_loss_cases() {
        let mut m = init_mlp(&[2, 3], 0).unwrap();
        for w in &mut m.weights {
            for v in w.data_mut() {
                *v = 0.0;
            }
        }
        let x = mat(&[&[0.4, 0.6], &[1.0, 2.0]]);
        let losses = per_sample_loss(&m, &x, &[0, 2]).unwrap();
        for l in losses {
            assert_relative_eq!(l, 3.0f64.ln(), epsilon = 1e-9);
        }
        assert!(per_sample_loss(&m, &x, &[0, 5]).is_err());

        // permutation equivariance
        let m = init_mlp(&[2, 8, 3], 4).unwrap();
        let labels = [0usize, 1, 2];
        let x = mat(&[&[0.1, 0.2], &[0.3, 0.4], &[0.5, 0.6]]);
        let l1 = per_sample_loss(&m, &x, &labels).unwrap();
        let xp = x.select_rows(&[2, 0, 1]);
        let l2 = per_sample_loss(&m, &xp, &[2, 0, 1]).unwrap();
        assert_relative_eq!(l1[2], l2[0], epsilon = 1e-12);
        assert_relative_eq!(l1[0], l2[1], epsilon = 1e-12);

        // agrees with cross_entropy_soft on one-hot encodings
        let p = softmax(&forward(&m, &x).unwrap()).unwrap();
        let ce = cross_entropy_soft(&one_hot(&labels, 3).unwrap(), &p).unwrap();
        assert_eq!(l1, ce);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = init_mlp(&[3, 7, 4], 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(m, loaded);
        // header sanity
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], b"BLAB");
    }

    #[test]
    fn schedule_validation_and_lr() {
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            schedule: vec![(10, 0.1), (20, 0.1)],
            batch_size: 8,
        };
        cfg.validate().unwrap();
        assert_relative_eq!(cfg.lr_at(5), 0.1);
        assert_relative_eq!(cfg.lr_at(10), 0.01);
        assert_relative_eq!(cfg.lr_at(25), 0.001, epsilon = 1e-12);
        let bad = SgdConfig {
            schedule: vec![(10, 0.1), (10, 0.1)],
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let run = || {
            let mut m = init_mlp(&[2, 8, 3], 7).unwrap();
            let cfg = SgdConfig {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 5e-4,
                schedule: vec![],
                batch_size: 4,
            };
            let mut state = SgdState::new(cfg, &m).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(3);
            let x = Mat::from_vec(16, 2, (0..32).map(|i| (i as f64).sin()).collect()).unwrap();
            let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
            let y = one_hot(&labels, 3).unwrap();
            for e in 0..3 {
                train_epoch(&mut m, &x, &y, &mut state, 0.0, e, &mut rng).unwrap();
            }
            m
        };
        assert_eq!(run(), run());
    }
}
