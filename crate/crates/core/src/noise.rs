//! The four label-noise generators and their audits.
//!
//! Symmetric and asymmetric noise flip exact counts; instance-dependent noise
//! draws per-sample flip rates and feature-dependent targets; the adversarial
//! generator optimizes a per-sample class-affinity table against a crafting
//! network and flips the samples whose lowest affinity is smallest.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::nn::{self, SgdConfig, SgdState};
use crate::{Error, Mat, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub index: usize,
    pub clean_label: usize,
    pub noisy_label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyLabels {
    pub records: Vec<LabelRecord>,
    pub class_count: usize,
    pub kind: String,
    pub ratio: f64,
    pub seed: u64,
}

impl NoisyLabels {
    fn from_noisy(ds: &Dataset, noisy: Vec<usize>, kind: &str, ratio: f64, seed: u64) -> Self {
        let records = ds
            .clean_labels
            .iter()
            .zip(noisy)
            .enumerate()
            .map(|(index, (&clean_label, noisy_label))| LabelRecord {
                index,
                clean_label,
                noisy_label,
            })
            .collect();
        NoisyLabels {
            records,
            class_count: ds.class_count,
            kind: kind.into(),
            ratio,
            seed,
        }
    }

    /// Noisy labels ordered by sample index.
    pub fn noisy_vec(&self) -> Vec<usize> {
        let mut v = vec![0usize; self.records.len()];
        for r in &self.records {
            v[r.index] = r.noisy_label;
        }
        v
    }

    pub fn clean_vec(&self) -> Vec<usize> {
        let mut v = vec![0usize; self.records.len()];
        for r in &self.records {
            v[r.index] = r.clean_label;
        }
        v
    }

    /// `true` where the label survived uncorrupted.
    pub fn clean_mask(&self) -> Vec<bool> {
        let mut v = vec![false; self.records.len()];
        for r in &self.records {
            v[r.index] = r.clean_label == r.noisy_label;
        }
        v
    }
}

/// Affinity-score table `z` with its iteration counter.
#[derive(Debug, Clone)]
pub struct FlagArray {
    pub z: Mat,
    pub iteration: usize,
}

impl FlagArray {
    /// One-hot initialization from clean labels.
    pub fn from_labels(labels: &[usize], class_count: usize) -> Result<Self> {
        Ok(FlagArray {
            z: nn::one_hot(labels, class_count)?,
            iteration: 0,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BadLabelConfig {
    pub epochs: usize,
    pub step_size: f64,
    pub sgd: SgdConfig,
    pub mlp_dims: Vec<usize>,
    pub seed: u64,
}

impl BadLabelConfig {
    /// Crafting defaults for a `d`-dimensional `c`-class dataset: T=120
    /// epochs, step 0.1, lr 0.1 decayed x0.1 at T/2 and 3T/4. Shorter
    /// schedules leave the crafting net too uncertain for the flipped set to
    /// concentrate away from the class boundaries.
    pub fn synthetic_default(d: usize, c: usize, seed: u64) -> Self {
        let epochs = 120;
        BadLabelConfig {
            epochs,
            step_size: 0.1,
            sgd: SgdConfig {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 5e-4,
                schedule: vec![(epochs / 2, 0.1), (epochs * 3 / 4, 0.1)],
                batch_size: 64,
            },
            mlp_dims: vec![d, 64, 64, c],
            seed,
        }
    }

    /// Preset for IDX-style image data: T=20, lr 0.01, momentum 0.5.
    pub fn mnist_default(d: usize, c: usize, seed: u64) -> Self {
        BadLabelConfig {
            epochs: 20,
            step_size: 0.1,
            sgd: SgdConfig {
                learning_rate: 0.01,
                momentum: 0.5,
                weight_decay: 5e-4,
                schedule: vec![],
                batch_size: 64,
            },
            mlp_dims: vec![d, 64, 64, c],
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.step_size <= 0.0 {
            return Err(Error::Config("step_size must be > 0".into()));
        }
        self.sgd.validate()
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("ratio {ratio} not in [0,1]")));
    }
    Ok(())
}

/// Flip exactly `floor(ratio * n)` uniformly chosen samples to uniformly
/// random different classes.
pub fn apply_symmetric(ds: &Dataset, ratio: f64, seed: u64) -> Result<NoisyLabels> {
    check_ratio(ratio)?;
    if ds.class_count < 2 && ratio > 0.0 {
        return Err(Error::Config("need at least 2 classes to flip labels".into()));
    }
    let n = ds.len();
    let flips = (ratio * n as f64).floor() as usize;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut noisy = ds.clean_labels.clone();
    for &i in idx.iter().take(flips) {
        let clean = ds.clean_labels[i];
        let mut target = rng.gen_range(0..ds.class_count - 1);
        if target >= clean {
            target += 1;
        }
        noisy[i] = target;
    }
    Ok(NoisyLabels::from_noisy(ds, noisy, "symmetric", ratio, seed))
}

/// Per class `c`, flip exactly `floor(ratio * n_c)` samples to `mapping(c)`.
/// The default mapping is the cyclic successor.
pub fn apply_asymmetric(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
    mapping: Option<&[usize]>,
) -> Result<NoisyLabels> {
    check_ratio(ratio)?;
    let c = ds.class_count;
    let map: Vec<usize> = match mapping {
        Some(m) => {
            if m.len() != c || m.iter().any(|&t| t >= c) {
                return Err(Error::Config("mapping must be a function on [0,C)".into()));
            }
            if m.iter().enumerate().any(|(i, &t)| i == t) {
                return Err(Error::Config("mapping must be fixed-point free".into()));
            }
            m.to_vec()
        }
        None => (0..c).map(|i| (i + 1) % c).collect(),
    };
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut noisy = ds.clean_labels.clone();
    for class in 0..c {
        let mut members: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.clean_labels[i] == class)
            .collect();
        let flips = (ratio * members.len() as f64).floor() as usize;
        members.shuffle(&mut rng);
        for &i in members.iter().take(flips) {
            noisy[i] = map[class];
        }
    }
    Ok(NoisyLabels::from_noisy(ds, noisy, "asymmetric", ratio, seed))
}

/// Instance-dependent noise: per-sample flip rate drawn from N(ratio, 0.1)
/// clipped to [0,1], then tilted toward ambiguous samples so flips concentrate
/// near class boundaries; the flip target comes from the softmax of a seeded
/// random linear projection of the features, restricted to wrong classes.
pub fn apply_idn(ds: &Dataset, ratio: f64, seed: u64) -> Result<NoisyLabels> {
    apply_idn_with_rate_std(ds, ratio, seed, 0.1)
}

/// Mean-one multiplier per sample, in [0.5, 1.5], increasing with how
/// ambiguous the sample looks under a nearest-centroid posterior. Keeps the
/// overall flip rate at ρ while making boundary samples ~3x likelier to flip
/// than deep-interior ones.
fn ambiguity_tilt(ds: &Dataset) -> Vec<f64> {
    let n = ds.len();
    let centroids = ds.class_centroids();
    let dist2 = |i: usize, k: usize| -> f64 {
        ds.features
            .row(i)
            .iter()
            .zip(centroids.row(k))
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    };
    let bandwidth = ((0..n).map(|i| dist2(i, ds.clean_labels[i])).sum::<f64>() / n as f64)
        .max(1e-12);
    let ambiguity: Vec<f64> = (0..n)
        .map(|i| {
            let scores: Vec<f64> = (0..ds.class_count)
                .map(|k| -dist2(i, k) / (2.0 * bandwidth))
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            1.0 - exps[ds.clean_labels[i]] / total
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        ambiguity[a].partial_cmp(&ambiguity[b]).unwrap().then(a.cmp(&b))
    });
    let mut tilt = vec![1.0; n];
    for (rank, &i) in order.iter().enumerate() {
        tilt[i] = 0.5 + (rank as f64 + 0.5) / n as f64;
    }
    tilt
}

pub fn apply_idn_with_rate_std(
    ds: &Dataset,
    ratio: f64,
    seed: u64,
    rate_std: f64,
) -> Result<NoisyLabels> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("ratio {ratio} not in [0,1)")));
    }
    let c = ds.class_count;
    let d = ds.dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // random projection shared by all samples
    let proj_scale = 1.0 / (d as f64).sqrt();
    let normal = Normal::new(0.0, proj_scale).expect("positive std");
    let mut proj = Mat::zeros(c, d);
    for v in proj.data_mut() {
        *v = normal.sample(&mut rng);
    }
    let tilt = ambiguity_tilt(ds);
    let mut noisy = ds.clean_labels.clone();
    for i in 0..ds.len() {
        let q = if rate_std > 0.0 {
            let r: f64 = Normal::new(ratio, rate_std).unwrap().sample(&mut rng);
            r.clamp(0.0, 1.0)
        } else {
            ratio
        };
        if !rng.gen_bool((q * tilt[i]).clamp(0.0, 1.0)) {
            continue;
        }
        let clean = ds.clean_labels[i];
        let x = ds.features.row(i);
        let mut logits: Vec<f64> = (0..c)
            .map(|k| proj.row(k).iter().zip(x).map(|(w, f)| w * f).sum())
            .collect();
        logits[clean] = f64::NEG_INFINITY;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen_range(0.0..total);
        let mut target = c - 1;
        for (k, &w) in weights.iter().enumerate() {
            if draw < w {
                target = k;
                break;
            }
            draw -= w;
        }
        noisy[i] = target;
    }
    Ok(NoisyLabels::from_noisy(ds, noisy, "idn", ratio, seed))
}

/// Flag-array update: `z' = z + alpha * ln(P)` elementwise, then row-wise
/// softmax normalization. Increments the iteration counter.
pub fn update_flag(flag: &FlagArray, p: &Mat, alpha: f64) -> Result<FlagArray> {
    if flag.z.rows() != p.rows() || flag.z.cols() != p.cols() {
        return Err(Error::Shape(format!(
            "flag array is {}x{}, probabilities {}x{}",
            flag.z.rows(),
            flag.z.cols(),
            p.rows(),
            p.cols()
        )));
    }
    let grad = nn::label_gradient(&flag.z, p)?;
    let mut pre = flag.z.clone();
    for (z, &g) in pre.data_mut().iter_mut().zip(grad.data()) {
        *z -= alpha * g;
    }
    if !pre.is_finite() {
        return Err(Error::Numeric("non-finite flag array update".into()));
    }
    Ok(FlagArray {
        z: nn::softmax(&pre)?,
        iteration: flag.iteration + 1,
    })
}

/// Pre-normalization flag update, exposed for auditing the raw step.
pub fn update_flag_raw(z: &Mat, p: &Mat, alpha: f64) -> Result<Mat> {
    let grad = nn::label_gradient(z, p)?;
    let mut pre = z.clone();
    for (zv, &g) in pre.data_mut().iter_mut().zip(grad.data()) {
        *zv -= alpha * g;
    }
    Ok(pre)
}

/// Craft adversarial label noise.
///
/// Stage I trains a network on the clean data for `cfg.epochs` epochs
/// (continued training, no re-initialization) and refines the affinity table
/// after each epoch. Stage II sorts samples ascending by their minimum
/// affinity (stable, ties by index) and flips the first `floor(ratio * n)` to
/// their lowest-affinity class, falling back to the second lowest when that
/// class equals the clean label.
pub fn craft_badlabel(
    ds: &Dataset,
    ratio: f64,
    cfg: &BadLabelConfig,
) -> Result<(NoisyLabels, FlagArray)> {
    check_ratio(ratio)?;
    cfg.validate()?;
    if cfg.mlp_dims.first() != Some(&ds.dim()) || cfg.mlp_dims.last() != Some(&ds.class_count) {
        return Err(Error::Config(format!(
            "mlp dims {:?} do not match data ({} features, {} classes)",
            cfg.mlp_dims,
            ds.dim(),
            ds.class_count
        )));
    }
    let y = nn::one_hot(&ds.clean_labels, ds.class_count)?;
    let mut model = nn::init_mlp(&cfg.mlp_dims, cfg.seed)?;
    let mut state = SgdState::new(cfg.sgd.clone(), &model)?;
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut flag = FlagArray::from_labels(&ds.clean_labels, ds.class_count)?;
    for epoch in 0..cfg.epochs {
        nn::train_epoch(
            &mut model,
            &ds.features,
            &y,
            &mut state,
            0.0,
            epoch,
            &mut shuffle_rng,
        )?;
        let p = nn::softmax(&nn::forward(&model, &ds.features)?)?;
        flag = update_flag(&flag, &p, cfg.step_size)?;
    }
    let noisy = flip_from_flag(ds, ratio, &flag);
    Ok((
        NoisyLabels::from_noisy(ds, noisy, "badlabel", ratio, cfg.seed),
        flag,
    ))
}

/// Stage II of the crafting procedure, separated for direct testing.
pub fn flip_from_flag(ds: &Dataset, ratio: f64, flag: &FlagArray) -> Vec<usize> {
    let n = ds.len();
    let flips = (ratio * n as f64).floor() as usize;
    let min_aff: Vec<f64> = (0..n)
        .map(|i| flag.z.row(i).iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| min_aff[a].partial_cmp(&min_aff[b]).unwrap().then(a.cmp(&b)));
    let mut noisy = ds.clean_labels.clone();
    for &i in order.iter().take(flips) {
        let row = flag.z.row(i);
        let target = argmin_excluding(row, None);
        noisy[i] = if target != ds.clean_labels[i] {
            target
        } else {
            argmin_excluding(row, Some(target))
        };
    }
    noisy
}

fn argmin_excluding(row: &[f64], skip: Option<usize>) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in row.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        if best == usize::MAX || v < row[best] {
            best = j;
        }
    }
    best
}

/// Empirical transition matrix: `M(c, c')` is the fraction of clean-class-`c`
/// samples carrying noisy label `c'`. Returns the matrix and a per-class
/// presence flag for classes absent from the clean labels.
pub fn transition_matrix(labels: &NoisyLabels, class_count: usize) -> (Mat, Vec<bool>) {
    let mut counts = Mat::zeros(class_count, class_count);
    let mut totals = vec![0usize; class_count];
    for r in &labels.records {
        totals[r.clean_label] += 1;
        let v = counts.get(r.clean_label, r.noisy_label);
        counts.set(r.clean_label, r.noisy_label, v + 1.0);
    }
    for c in 0..class_count {
        if totals[c] > 0 {
            for v in counts.row_mut(c) {
                *v /= totals[c] as f64;
            }
        }
    }
    (counts, totals.iter().map(|&t| t > 0).collect())
}

/// Fraction of records whose noisy label differs from the clean one.
pub fn noise_rate(labels: &NoisyLabels) -> f64 {
    if labels.records.is_empty() {
        return 0.0;
    }
    let flipped = labels
        .records
        .iter()
        .filter(|r| r.clean_label != r.noisy_label)
        .count();
    flipped as f64 / labels.records.len() as f64
}

/// Euclidean distance from each sample to its own class centroid.
pub fn centroid_distances(ds: &Dataset) -> Vec<f64> {
    let centroids = ds.class_centroids();
    (0..ds.len())
        .map(|i| {
            let c = ds.clean_labels[i];
            ds.features
                .row(i)
                .iter()
                .zip(centroids.row(c))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}
