//! Robust DivideMix: warm-up with a confidence penalty, adversarial label
//! perturbation, mixture-based division of the training set with convergence
//! filtering, MixMatch cross-training of a network pair, and joint prediction.
//!
//! The "cross" lives in the loss computation: network 1's posterior comes from
//! a mixture fitted on network 2's per-sample losses and vice versa, so a
//! network never selects its own memorized samples as clean. A standard
//! training loop is included as the baseline the defense is measured against.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::data::Dataset;
use crate::gmm::{fit_em, fit_vb, posterior_low_mean, MixtureFit, VbConfig};
use crate::metrics::{accuracy, division_quality, EpochRecord, RunMetrics};
use crate::nn::{self, MlpModel, SgdConfig, SgdState};
use crate::{Error, Mat, Result};

#[derive(Debug, Clone)]
pub struct MixMatchConfig {
    /// Sharpening temperature for guessed labels.
    pub sharpen_temp: f64,
    /// Jitter-augmented copies averaged per unlabeled sample.
    pub augmentations: usize,
    /// Beta concentration for the mixup draw.
    pub mixup_alpha: f64,
    /// Peak weight of the unlabeled squared-error term.
    pub lambda_u_max: f64,
    /// Epochs over which lambda_u ramps linearly to its peak.
    pub rampup_epochs: usize,
    /// Std of the Gaussian feature jitter used as augmentation.
    pub jitter_std: f64,
}

impl Default for MixMatchConfig {
    fn default() -> Self {
        MixMatchConfig {
            sharpen_temp: 0.5,
            augmentations: 2,
            mixup_alpha: 4.0,
            lambda_u_max: 25.0,
            rampup_epochs: 16,
            jitter_std: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DivideConfig {
    pub warmup_epochs: usize,
    /// Confidence-penalty weight during warm-up.
    pub cp_weight: f64,
    /// Step size of the adversarial label perturbation.
    pub lambda: f64,
    /// Stage I selection threshold.
    pub tau_p: f64,
    /// Stage II selection threshold.
    pub tau_c: f64,
    /// Stage II MixMatch epochs (E).
    pub epochs: usize,
    pub gmm: VbConfig,
    pub mixmatch: MixMatchConfig,
    pub sgd: SgdConfig,
    pub mlp_dims: Vec<usize>,
    pub seed: u64,
    /// Re-initialize both networks after the Stage I division, so MixMatch
    /// starts from fresh weights instead of the warmed-up (memorizing) pair.
    pub reset_after_division: bool,
    /// Variational mixture (true) or classical EM (false).
    pub use_bayes_gmm: bool,
    /// Perturb labels before the Stage I division.
    pub use_perturbation: bool,
    /// Only accept a new division when the mixture fit converged.
    pub use_filtering: bool,
}

impl DivideConfig {
    /// Defaults for the synthetic testbed. Warm-up, perturbation step and the
    /// mixture prior are tuned so that the Stage I division stays precise on
    /// the adversarial noise; the unlabeled-loss weight and jitter are scaled
    /// down to the 2-D testbed.
    pub fn synthetic_default(d: usize, c: usize, seed: u64) -> Self {
        DivideConfig {
            warmup_epochs: 60,
            cp_weight: 0.0,
            lambda: 0.8,
            tau_p: 0.9,
            tau_c: 0.5,
            epochs: 30,
            gmm: VbConfig {
                seed,
                mean_prior_scale: 300.0,
                max_iter: 6,
                ..VbConfig::default()
            },
            mixmatch: MixMatchConfig {
                lambda_u_max: 3.0,
                jitter_std: 0.3,
                ..MixMatchConfig::default()
            },
            sgd: SgdConfig {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 1e-3,
                schedule: vec![(30, 0.1)],
                batch_size: 64,
            },
            mlp_dims: vec![d, 64, 64, c],
            seed,
            reset_after_division: true,
            use_bayes_gmm: true,
            use_perturbation: true,
            use_filtering: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs < 1 {
            return Err(Error::Config("warmup_epochs must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.cp_weight < 0.0 {
            return Err(Error::Config("cp_weight must be >= 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        for (name, t) in [("tau_p", self.tau_p), ("tau_c", self.tau_c)] {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1)")));
            }
        }
        if self.mixmatch.sharpen_temp <= 0.0 {
            return Err(Error::Config("sharpen_temp must be > 0".into()));
        }
        if self.mixmatch.augmentations < 1 {
            return Err(Error::Config("augmentations must be >= 1".into()));
        }
        self.sgd.validate()
    }
}

/// A split of the training set into a (mostly) clean labeled part and the
/// unlabeled rest, together with the posterior that produced it.
#[derive(Debug, Clone)]
pub struct Division {
    pub labeled: Vec<usize>,
    pub labeled_labels: Vec<usize>,
    pub unlabeled: Vec<usize>,
    pub posterior: Vec<f64>,
    pub threshold: f64,
}

/// The network pair with optimizer states and cached division posteriors.
#[derive(Debug, Clone)]
pub struct PairState {
    pub models: [MlpModel; 2],
    pub states: [SgdState; 2],
    pub epoch: usize,
    pub cached_w: [Vec<f64>; 2],
}

/// Standard training of both networks on the noisy labels with loss
/// `CE - cp_weight * H`, independent shuffles per network.
pub fn warmup(
    pair: &mut PairState,
    x: &Mat,
    y: &Mat,
    epochs: usize,
    cp_weight: f64,
    seed: u64,
) -> Result<()> {
    for k in 0..2 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (0x77a2_0001 + k as u64));
        for epoch in 0..epochs {
            nn::train_epoch(
                &mut pair.models[k],
                x,
                y,
                &mut pair.states[k],
                cp_weight,
                epoch,
                &mut rng,
            )?;
        }
    }
    pair.epoch = epochs;
    Ok(())
}

/// `Y~ = Y' + lambda * (-log P)`, the single-step adversarial label
/// perturbation. No projection back to the simplex.
pub fn perturb_labels(y_noisy: &Mat, p: &Mat, lambda: f64) -> Result<Mat> {
    if lambda < 0.0 {
        return Err(Error::Config("lambda must be >= 0".into()));
    }
    let grad = nn::label_gradient(y_noisy, p)?;
    let mut out = y_noisy.clone();
    for (v, &g) in out.data_mut().iter_mut().zip(grad.data()) {
        *v += lambda * g;
    }
    Ok(out)
}

/// Row-wise argmax, ties to the lowest class index.
pub fn harden(y: &Mat) -> Vec<usize> {
    (0..y.rows())
        .map(|i| {
            let row = y.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Threshold split: labeled = {i : w_i >= tau}, unlabeled = the rest.
pub fn divide(noisy_labels: &[usize], w: &[f64], tau: f64) -> Division {
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (i, &wi) in w.iter().enumerate() {
        if wi >= tau {
            labeled.push(i);
        } else {
            unlabeled.push(i);
        }
    }
    let labeled_labels = labeled.iter().map(|&i| noisy_labels[i]).collect();
    Division {
        labeled,
        labeled_labels,
        unlabeled,
        posterior: w.to_vec(),
        threshold: tau,
    }
}

/// `divide`, falling back to the top-ceil(0.1 n) samples by posterior when the
/// threshold selects nothing. Posterior ties (the mixture saturates easily)
/// are broken by ascending loss, then by index.
pub fn divide_with_fallback(
    noisy_labels: &[usize],
    w: &[f64],
    tau: f64,
    losses: &[f64],
) -> Division {
    let d = divide(noisy_labels, w, tau);
    if !d.labeled.is_empty() {
        return d;
    }
    let n = w.len();
    let take = (n as f64 * 0.1).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        w[b].partial_cmp(&w[a])
            .unwrap()
            .then(losses[a].partial_cmp(&losses[b]).unwrap())
            .then(a.cmp(&b))
    });
    let mut labeled: Vec<usize> = order.into_iter().take(take).collect();
    labeled.sort_unstable();
    let labeled_labels = labeled.iter().map(|&i| noisy_labels[i]).collect();
    let unlabeled = (0..n).filter(|i| !labeled.contains(i)).collect();
    Division {
        labeled,
        labeled_labels,
        unlabeled,
        posterior: w.to_vec(),
        threshold: tau,
    }
}

/// `p^(1/T)` renormalized.
pub fn sharpen(p: &[f64], temp: f64) -> Vec<f64> {
    let powered: Vec<f64> = p.iter().map(|&v| v.max(0.0).powf(1.0 / temp)).collect();
    let total: f64 = powered.iter().sum();
    powered.iter().map(|&v| v / total).collect()
}

fn mixup_coefficient(rng: &mut impl Rng, alpha: f64) -> f64 {
    let beta = Beta::new(alpha, alpha).expect("positive concentration");
    let b: f64 = beta.sample(rng);
    b.max(1.0 - b)
}

fn lambda_u_at(cfg: &MixMatchConfig, epoch: usize) -> f64 {
    if cfg.rampup_epochs == 0 {
        return cfg.lambda_u_max;
    }
    let frac = ((epoch + 1) as f64 / cfg.rampup_epochs as f64).min(1.0);
    cfg.lambda_u_max * frac
}

/// One epoch of semi-supervised MixMatch training of `student` on a division
/// produced by its peer. Returns the mean mixed-batch loss. `epoch` counts
/// MixMatch epochs (it drives the lambda_u ramp); `sgd_epoch` is the global
/// optimizer epoch, so the learning-rate schedule continues across the
/// warm-up boundary instead of restarting.
#[allow(clippy::too_many_arguments)]
pub fn mixmatch_epoch(
    model: &mut MlpModel,
    state: &mut SgdState,
    division: &Division,
    x: &Mat,
    noisy_labels: &[usize],
    cfg: &MixMatchConfig,
    epoch: usize,
    sgd_epoch: usize,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    if division.labeled.is_empty() {
        return Err(Error::Data("mixmatch needs a nonempty labeled set".into()));
    }
    let c = model.class_count();
    let d = x.cols();
    let n_l = division.labeled.len();
    let n_u = division.unlabeled.len();
    let m_aug = cfg.augmentations;
    let jitter = Normal::new(0.0, cfg.jitter_std.max(0.0))
        .map_err(|_| Error::Config("jitter_std must be finite and >= 0".into()))?;

    // one jittered copy per labeled sample, M per unlabeled sample; the
    // augmented copies themselves enter the mixup pool
    let jittered_row = |dst: &mut [f64], src: &[f64], rng: &mut ChaCha12Rng| {
        for (rv, &xv) in dst.iter_mut().zip(src) {
            *rv = xv + if cfg.jitter_std > 0.0 { jitter.sample(rng) } else { 0.0 };
        }
    };
    let mut aug = Mat::zeros(n_u * m_aug, d);
    for (u, &i) in division.unlabeled.iter().enumerate() {
        for m in 0..m_aug {
            jittered_row(aug.row_mut(u * m_aug + m), x.row(i), rng);
        }
    }

    // guess labels for the unlabeled part: average predictions over the M
    // copies, then sharpen
    let mut guessed = Mat::zeros(n_u, c);
    if n_u > 0 {
        let p = nn::softmax(&nn::forward(model, &aug)?)?;
        for u in 0..n_u {
            let mut mean = vec![0.0; c];
            for m in 0..m_aug {
                for (mv, &pv) in mean.iter_mut().zip(p.row(u * m_aug + m)) {
                    *mv += pv;
                }
            }
            for mv in mean.iter_mut() {
                *mv /= m_aug as f64;
            }
            guessed.row_mut(u).copy_from_slice(&sharpen(&mean, cfg.sharpen_temp));
        }
    }

    // combined pool: augmented labeled rows with one-hot targets, then every
    // augmented unlabeled copy with its shared guessed target
    let total = n_l + n_u * m_aug;
    let mut pool_x = Mat::zeros(total, d);
    let mut pool_t = Mat::zeros(total, c);
    let mut labeled_flag = vec![false; total];
    for (r, &i) in division.labeled.iter().enumerate() {
        let mut row = vec![0.0; d];
        jittered_row(&mut row, x.row(i), rng);
        pool_x.row_mut(r).copy_from_slice(&row);
        pool_t.set(r, noisy_labels[i], 1.0);
        labeled_flag[r] = true;
    }
    for u in 0..n_u {
        for m in 0..m_aug {
            let r = n_l + u * m_aug + m;
            pool_x.row_mut(r).copy_from_slice(aug.row(u * m_aug + m));
            pool_t.row_mut(r).copy_from_slice(guessed.row(u));
        }
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    let mut partner: Vec<usize> = (0..total).collect();
    partner.shuffle(rng);

    let lambda_u = lambda_u_at(cfg, epoch);
    let bs = state.cfg.batch_size;
    state.begin_epoch(sgd_epoch);
    let mut total_loss = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(bs) {
        let nb = chunk.len();
        let mut xb = Mat::zeros(nb, d);
        let mut tb = Mat::zeros(nb, c);
        let mut lb = vec![false; nb];
        for (r, &i) in chunk.iter().enumerate() {
            let j = partner[i];
            let lam = mixup_coefficient(rng, cfg.mixup_alpha);
            for (col, xv) in xb.row_mut(r).iter_mut().enumerate() {
                *xv = lam * pool_x.get(i, col) + (1.0 - lam) * pool_x.get(j, col);
            }
            for (col, tv) in tb.row_mut(r).iter_mut().enumerate() {
                *tv = lam * pool_t.get(i, col) + (1.0 - lam) * pool_t.get(j, col);
            }
            lb[r] = labeled_flag[i];
        }
        let p = nn::softmax(&nn::forward(model, &xb)?)?;
        let mut delta = Mat::zeros(nb, c);
        let mut loss = 0.0;
        for r in 0..nb {
            let pr = p.row(r);
            let tr = tb.row(r);
            let dr = delta.row_mut(r);
            if lb[r] {
                // cross-entropy against the mixed target (target rows sum to 1)
                for j in 0..c {
                    dr[j] = (pr[j] - tr[j]) / nb as f64;
                    loss -= tr[j] * pr[j].max(crate::nn::PROB_EPS).ln();
                }
            } else {
                // squared error on probabilities, weighted by lambda_u
                let s: f64 = (0..c).map(|j| (pr[j] - tr[j]) * pr[j]).sum();
                for j in 0..c {
                    dr[j] = lambda_u * (2.0 / c as f64) * pr[j] * ((pr[j] - tr[j]) - s)
                        / nb as f64;
                    loss += lambda_u * (pr[j] - tr[j]).powi(2) / c as f64;
                }
            }
        }
        let batch_loss = loss / nb as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Numeric("non-finite mixmatch batch loss".into()));
        }
        nn::train_step_from_logit_grad(model, &xb, &delta, state)?;
        total_loss += batch_loss;
        batches += 1;
    }
    Ok(total_loss / batches.max(1) as f64)
}

fn fit_mixture(losses: &[f64], cfg: &DivideConfig, stream: u64) -> Result<MixtureFit> {
    let gmm = VbConfig { seed: cfg.gmm.seed ^ stream, ..cfg.gmm.clone() };
    if cfg.use_bayes_gmm {
        fit_vb(losses, &gmm)
    } else {
        fit_em(losses, &gmm)
    }
}

/// Joint prediction: argmax of the summed softmax outputs, ties to the lowest
/// class index.
pub fn joint_predict(pair: &PairState, x: &Mat) -> Result<Vec<usize>> {
    let p1 = nn::softmax(&nn::forward(&pair.models[0], x)?)?;
    let p2 = nn::softmax(&nn::forward(&pair.models[1], x)?)?;
    Ok((0..x.rows())
        .map(|i| {
            let r1 = p1.row(i);
            let r2 = p2.row(i);
            let mut best = 0;
            let mut best_v = r1[0] + r2[0];
            for j in 1..r1.len() {
                let v = r1[j] + r2[j];
                if v > best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect())
}

fn record_epoch(
    metrics: &mut RunMetrics,
    epoch: usize,
    train_loss: f64,
    pair: &PairState,
    test: Option<&Dataset>,
    divisions: &[&Division; 2],
    clean_mask: &[bool],
    fit: &MixtureFit,
) -> Result<()> {
    let test_accuracy = match test {
        Some(t) => accuracy(&joint_predict(pair, &t.features)?, &t.clean_labels),
        None => f64::NAN,
    };
    let mut prec = 0.0;
    let mut rec = 0.0;
    for d in divisions {
        let (p, r) = division_quality(&d.labeled, clean_mask)?;
        prec += p / 2.0;
        rec += r / 2.0;
    }
    metrics.push(EpochRecord {
        epoch,
        train_loss,
        test_accuracy,
        labeled_precision: prec,
        labeled_recall: rec,
        gmm_converged: fit.converged,
        gmm_iterations: fit.iterations_used,
    })
}

/// The Stage I division (kept for the reduction-equivalence audit) alongside
/// the trained pair and per-epoch metrics.
pub struct RunOutput {
    pub pair: PairState,
    pub metrics: RunMetrics,
    pub stage1_divisions: [Division; 2],
}

/// Algorithm stages I and II end to end.
pub fn run(
    train: &Dataset,
    noisy_labels: &[usize],
    test: Option<&Dataset>,
    cfg: &DivideConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    if noisy_labels.len() != train.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            noisy_labels.len(),
            train.len()
        )));
    }
    if cfg.mlp_dims.first() != Some(&train.dim())
        || cfg.mlp_dims.last() != Some(&train.class_count)
    {
        return Err(Error::Config(format!(
            "mlp dims {:?} do not match data ({} features, {} classes)",
            cfg.mlp_dims,
            train.dim(),
            train.class_count
        )));
    }
    let x = &train.features;
    let y_noisy = nn::one_hot(noisy_labels, train.class_count)?;
    let clean_mask: Vec<bool> = train
        .clean_labels
        .iter()
        .zip(noisy_labels)
        .map(|(&c, &n)| c == n)
        .collect();

    let models = [
        nn::init_mlp(&cfg.mlp_dims, cfg.seed)?,
        nn::init_mlp(&cfg.mlp_dims, cfg.seed.wrapping_add(1))?,
    ];
    let states = [
        SgdState::new(cfg.sgd.clone(), &models[0])?,
        SgdState::new(cfg.sgd.clone(), &models[1])?,
    ];
    let mut pair = PairState {
        models,
        states,
        epoch: 0,
        cached_w: [vec![], vec![]],
    };
    let mut metrics = RunMetrics::new();

    // Stage I
    warmup(&mut pair, x, &y_noisy, cfg.warmup_epochs, cfg.cp_weight, cfg.seed)?;
    let lambda = if cfg.use_perturbation { cfg.lambda } else { 0.0 };
    let mut losses_p = [vec![], vec![]];
    for k in 0..2 {
        let p = nn::softmax(&nn::forward(&pair.models[k], x)?)?;
        let hardened = harden(&perturb_labels(&y_noisy, &p, lambda)?);
        losses_p[k] = nn::cross_entropy_soft(&nn::one_hot(&hardened, train.class_count)?, &p)?;
    }
    // W_1 from the peer's losses and vice versa
    let fit_for_1 = fit_mixture(&losses_p[1], cfg, 0x51)?;
    let fit_for_2 = fit_mixture(&losses_p[0], cfg, 0x52)?;
    let w1p = posterior_low_mean(&fit_for_1, &losses_p[1]);
    let w2p = posterior_low_mean(&fit_for_2, &losses_p[0]);
    let stage1_divisions = [
        divide_with_fallback(noisy_labels, &w1p, cfg.tau_p, &losses_p[1]),
        divide_with_fallback(noisy_labels, &w2p, cfg.tau_p, &losses_p[0]),
    ];
    // A small network that has partially memorized the noise cannot be
    // trained back out of that state, so the pair restarts from fresh weights
    // while keeping the divisions the warmed-up pair produced.
    let epoch_base = if cfg.reset_after_division {
        let models = [
            nn::init_mlp(&cfg.mlp_dims, cfg.seed ^ 0x5e5e_0001)?,
            nn::init_mlp(&cfg.mlp_dims, cfg.seed ^ 0x5e5e_0002)?,
        ];
        let states = [
            SgdState::new(cfg.sgd.clone(), &models[0])?,
            SgdState::new(cfg.sgd.clone(), &models[1])?,
        ];
        pair.models = models;
        pair.states = states;
        0
    } else {
        cfg.warmup_epochs
    };
    let mut mm_rngs = [
        ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x6d6d_0001),
        ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x6d6d_0002),
    ];
    let mut train_loss = 0.0;
    for k in 0..2 {
        train_loss += mixmatch_epoch(
            &mut pair.models[k],
            &mut pair.states[k],
            &stage1_divisions[k],
            x,
            noisy_labels,
            &cfg.mixmatch,
            0,
            epoch_base,
            &mut mm_rngs[k],
        )? / 2.0;
    }
    record_epoch(
        &mut metrics,
        0,
        train_loss,
        &pair,
        test,
        &[&stage1_divisions[0], &stage1_divisions[1]],
        &clean_mask,
        &fit_for_1,
    )?;

    // Stage II: cross-assigned caches, then E epochs of divide + cross-train
    pair.cached_w = [w2p, w1p];
    for e in 1..=cfg.epochs {
        let mut losses = [vec![], vec![]];
        for k in 0..2 {
            losses[k] = nn::per_sample_loss(&pair.models[k], x, noisy_labels)?;
        }
        let fit_for_1 = fit_mixture(&losses[1], cfg, 0x100 + e as u64)?;
        let fit_for_2 = fit_mixture(&losses[0], cfg, 0x200 + e as u64)?;
        if fit_for_1.converged || !cfg.use_filtering {
            pair.cached_w[0] = posterior_low_mean(&fit_for_1, &losses[1]);
        }
        if fit_for_2.converged || !cfg.use_filtering {
            pair.cached_w[1] = posterior_low_mean(&fit_for_2, &losses[0]);
        }
        let divisions = [
            divide_with_fallback(noisy_labels, &pair.cached_w[0], cfg.tau_c, &losses[1]),
            divide_with_fallback(noisy_labels, &pair.cached_w[1], cfg.tau_c, &losses[0]),
        ];
        let mut train_loss = 0.0;
        for k in 0..2 {
            train_loss += mixmatch_epoch(
                &mut pair.models[k],
                &mut pair.states[k],
                &divisions[k],
                x,
                noisy_labels,
                &cfg.mixmatch,
                e,
                epoch_base + e,
                &mut mm_rngs[k],
            )? / 2.0;
        }
        pair.epoch += 1;
        record_epoch(
            &mut metrics,
            e,
            train_loss,
            &pair,
            test,
            &[&divisions[0], &divisions[1]],
            &clean_mask,
            &fit_for_1,
        )?;
    }
    Ok(RunOutput {
        pair,
        metrics,
        stage1_divisions,
    })
}

/// Plain supervised training on the noisy labels, the baseline every defense
/// claim is measured against.
#[allow(clippy::too_many_arguments)]
pub fn train_standard(
    train: &Dataset,
    noisy_labels: &[usize],
    test: Option<&Dataset>,
    mlp_dims: &[usize],
    sgd: &SgdConfig,
    epochs: usize,
    cp_weight: f64,
    seed: u64,
) -> Result<(MlpModel, RunMetrics)> {
    if noisy_labels.len() != train.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} samples",
            noisy_labels.len(),
            train.len()
        )));
    }
    let y = nn::one_hot(noisy_labels, train.class_count)?;
    let mut model = nn::init_mlp(mlp_dims, seed)?;
    let mut state = SgdState::new(sgd.clone(), &model)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x57d0_0001);
    let mut metrics = RunMetrics::new();
    for epoch in 0..epochs {
        let train_loss =
            nn::train_epoch(&mut model, &train.features, &y, &mut state, cp_weight, epoch, &mut rng)?;
        let test_accuracy = match test {
            Some(t) => accuracy(&nn::predict(&model, &t.features)?, &t.clean_labels),
            None => f64::NAN,
        };
        metrics.push(EpochRecord {
            epoch,
            train_loss,
            test_accuracy,
            labeled_precision: f64::NAN,
            labeled_recall: f64::NAN,
            gmm_converged: false,
            gmm_iterations: 0,
        })?;
    }
    Ok((model, metrics))
}
