//! One-dimensional two-component mixture modeling of per-sample losses.
//!
//! Two fitters share the same initialization (quantile split with seeded
//! jitter) and the same convergence rule (objective improvement below `tol`):
//! classical EM maximizing the log-likelihood, and mean-field
//! variational Bayes maximizing the ELBO under Dirichlet / Gaussian-precision
//! conjugate priors. The variational fitter's `iterations_used` is the
//! convergence-speed signal: forcing two components onto unimodal data makes
//! it settle slowly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::{Error, Mat, Result};

const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    /// n x 2, rows on the simplex.
    pub responsibilities: Mat,
    pub converged: bool,
    pub iterations_used: usize,
    /// Final objective: total log-likelihood for EM, total ELBO for VB.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct VbConfig {
    /// Convergence tolerance on objective improvement.
    pub tol: f64,
    pub max_iter: usize,
    /// Dirichlet concentration prior per component.
    pub dirichlet_concentration: f64,
    /// Precision scale of the Gaussian mean prior (the prior mean itself is
    /// the data mean).
    pub mean_prior_scale: f64,
    /// Shape of the precision prior; its rate is the data variance.
    pub variance_prior_shape: f64,
    pub variance_floor: f64,
    /// Fraction of the sorted values seeded into the low component.
    pub init_quantile: f64,
    pub seed: u64,
}

impl Default for VbConfig {
    fn default() -> Self {
        VbConfig {
            tol: 0.01,
            max_iter: 20,
            dirichlet_concentration: 1.0,
            mean_prior_scale: 1.0,
            variance_prior_shape: 1.0,
            variance_floor: 1e-6,
            init_quantile: 0.5,
            seed: 0,
        }
    }
}

impl VbConfig {
    fn validate(&self) -> Result<()> {
        if self.tol <= 0.0 {
            return Err(Error::Config("tol must be > 0".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if !(self.init_quantile > 0.0 && self.init_quantile < 1.0) {
            return Err(Error::Config("init_quantile must be in (0, 1)".into()));
        }
        Ok(())
    }
}

struct DataStats {
    mean: f64,
    var: f64,
}

fn data_stats(values: &[f64]) -> DataStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    DataStats { mean, var }
}

fn degenerate_fit(values: &[f64], value: f64, floor: f64) -> MixtureFit {
    let n = values.len();
    let mut resp = Mat::zeros(n, 2);
    for i in 0..n {
        resp.set(i, 0, 0.5);
        resp.set(i, 1, 0.5);
    }
    MixtureFit {
        means: [value, value],
        variances: [floor, floor],
        weights: [0.5, 0.5],
        responsibilities: resp,
        converged: true,
        iterations_used: 0,
        objective: 0.0,
    }
}

/// Quantile-split initial responsibilities: soft assignment of the lower half
/// to component 0 and the upper half to component 1, with seeded jitter so
/// exact ties do not freeze the fit.
fn init_responsibilities(values: &[f64], seed: u64, quantile: f64) -> Mat {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut resp = Mat::zeros(n, 2);
    let cut = ((n as f64) * quantile) as usize;
    for (rank, &i) in order.iter().enumerate() {
        let low = rank < cut;
        let base = if low { 0.9 } else { 0.1 };
        let jitter: f64 = rng.gen_range(-0.05..0.05);
        let r0 = (base + jitter).clamp(1e-6, 1.0 - 1e-6);
        resp.set(i, 0, r0);
        resp.set(i, 1, 1.0 - r0);
    }
    resp
}

fn weighted_stats(values: &[f64], resp: &Mat) -> ([f64; 2], [f64; 2], [f64; 2]) {
    let mut nk = [1e-10f64; 2];
    let mut mean = [0.0f64; 2];
    for (i, &x) in values.iter().enumerate() {
        for k in 0..2 {
            let r = resp.get(i, k);
            nk[k] += r;
            mean[k] += r * x;
        }
    }
    for k in 0..2 {
        mean[k] /= nk[k];
    }
    let mut var = [0.0f64; 2];
    for (i, &x) in values.iter().enumerate() {
        for k in 0..2 {
            var[k] += resp.get(i, k) * (x - mean[k]).powi(2);
        }
    }
    for k in 0..2 {
        var[k] /= nk[k];
    }
    (nk, mean, var)
}

#[inline]
fn ln_gauss(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// Classical two-component EM.
pub fn fit_em(values: &[f64], config: &VbConfig) -> Result<MixtureFit> {
    config.validate()?;
    if values.len() < 2 {
        return Err(Error::Data("need at least 2 values to fit a mixture".into()));
    }
    let stats = data_stats(values);
    if stats.var < 1e-24 {
        return Ok(degenerate_fit(values, values[0], config.variance_floor));
    }
    let n = values.len();
    let mut resp = init_responsibilities(values, config.seed, config.init_quantile);
    let mut means = [0.0; 2];
    let mut vars = [0.0; 2];
    let mut weights = [0.5; 2];

    let mut objective = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations_used = config.max_iter;
    // sweep 0 initializes the parameters; counted sweeps refine them
    for iter in 0..=config.max_iter {
        // M-step
        let (nk, mean, var) = weighted_stats(values, &resp);
        for k in 0..2 {
            weights[k] = nk[k] / n as f64;
            means[k] = mean[k];
            vars[k] = var[k].max(config.variance_floor);
        }
        // E-step + log-likelihood
        let mut ll = 0.0;
        for (i, &x) in values.iter().enumerate() {
            let l0 = weights[0].max(1e-300).ln() + ln_gauss(x, means[0], vars[0]);
            let l1 = weights[1].max(1e-300).ln() + ln_gauss(x, means[1], vars[1]);
            let m = l0.max(l1);
            let s = (l0 - m).exp() + (l1 - m).exp();
            ll += m + s.ln();
            resp.set(i, 0, (l0 - m).exp() / s);
            resp.set(i, 1, (l1 - m).exp() / s);
        }
        let obj = ll;
        if iter > 0 && (obj - objective).abs() < config.tol {
            objective = obj;
            converged = true;
            iterations_used = iter;
            break;
        }
        objective = obj;
    }
    Ok(MixtureFit {
        means,
        variances: vars,
        weights,
        responsibilities: resp,
        converged,
        iterations_used,
        objective,
    })
}

/// Mean-field variational Bayes for the two-component Bayesian mixture.
pub fn fit_vb(values: &[f64], config: &VbConfig) -> Result<MixtureFit> {
    config.validate()?;
    if values.len() < 2 {
        return Err(Error::Data("need at least 2 values to fit a mixture".into()));
    }
    let stats = data_stats(values);
    if stats.var < 1e-24 {
        return Ok(degenerate_fit(values, values[0], config.variance_floor));
    }
    let alpha0 = config.dirichlet_concentration;
    let kappa0 = config.mean_prior_scale;
    let a0 = config.variance_prior_shape;
    let b0 = stats.var.max(config.variance_floor);
    let m0 = stats.mean;

    let mut resp = init_responsibilities(values, config.seed, config.init_quantile);
    let mut alpha = [alpha0; 2];
    let mut kappa = [kappa0; 2];
    let mut m = [m0; 2];
    let mut a = [a0; 2];
    let mut b = [b0; 2];

    let mut objective = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations_used = config.max_iter;
    for iter in 0..=config.max_iter {
        // variational M-step
        let (nk, xbar, s) = weighted_stats(values, &resp);
        for k in 0..2 {
            alpha[k] = alpha0 + nk[k];
            kappa[k] = kappa0 + nk[k];
            m[k] = (kappa0 * m0 + nk[k] * xbar[k]) / kappa[k];
            a[k] = a0 + nk[k] / 2.0;
            b[k] = b0
                + 0.5 * (nk[k] * s[k] + kappa0 * nk[k] / kappa[k] * (xbar[k] - m0).powi(2));
        }
        let alpha_sum = alpha[0] + alpha[1];
        let lp: [f64; 2] = [
            digamma(alpha[0]) - digamma(alpha_sum),
            digamma(alpha[1]) - digamma(alpha_sum),
        ];
        let lt: [f64; 2] = [
            digamma(a[0]) - b[0].ln(),
            digamma(a[1]) - b[1].ln(),
        ];
        let et: [f64; 2] = [a[0] / b[0], a[1] / b[1]];

        // variational E-step
        for (i, &x) in values.iter().enumerate() {
            let mut lr = [0.0f64; 2];
            for k in 0..2 {
                lr[k] = lp[k] + 0.5 * (lt[k] - LN_2PI)
                    - 0.5 * (et[k] * (x - m[k]).powi(2) + 1.0 / kappa[k]);
            }
            let mx = lr[0].max(lr[1]);
            let s = (lr[0] - mx).exp() + (lr[1] - mx).exp();
            resp.set(i, 0, (lr[0] - mx).exp() / s);
            resp.set(i, 1, (lr[1] - mx).exp() / s);
        }

        // ELBO with the refreshed responsibilities
        let (nk, xbar, sk) = weighted_stats(values, &resp);
        let mut elbo = 0.0;
        for k in 0..2 {
            // expected log-likelihood of the data
            elbo += 0.5
                * nk[k]
                * (lt[k] - LN_2PI - et[k] * (sk[k] + (xbar[k] - m[k]).powi(2)) - 1.0 / kappa[k]);
            // prior over (mean, precision) minus its variational counterpart
            elbo += 0.5 * ((kappa0 / (2.0 * std::f64::consts::PI)).ln() + lt[k])
                - 0.5 * (kappa0 / kappa[k] + kappa0 * et[k] * (m[k] - m0).powi(2))
                + a0 * b0.ln()
                - ln_gamma(a0)
                + (a0 - 1.0) * lt[k]
                - b0 * et[k];
            let h_gamma = a[k] - b[k].ln() + ln_gamma(a[k]) + (1.0 - a[k]) * digamma(a[k]);
            elbo -= 0.5 * lt[k] + 0.5 * (kappa[k] / (2.0 * std::f64::consts::PI)).ln() - 0.5
                - h_gamma;
        }
        // mixing weights: assignments, Dirichlet prior, and entropies
        for (i, _) in values.iter().enumerate() {
            for k in 0..2 {
                let r = resp.get(i, k);
                elbo += r * lp[k];
                if r > 0.0 {
                    elbo -= r * r.ln();
                }
            }
        }
        let ln_c = |v: &[f64; 2]| ln_gamma(v[0] + v[1]) - ln_gamma(v[0]) - ln_gamma(v[1]);
        elbo += ln_c(&[alpha0, alpha0]) + (alpha0 - 1.0) * (lp[0] + lp[1]);
        elbo -= ln_c(&alpha) + (alpha[0] - 1.0) * lp[0] + (alpha[1] - 1.0) * lp[1];

        let obj = elbo;
        if iter > 0 && (obj - objective).abs() < config.tol {
            objective = obj;
            converged = true;
            iterations_used = iter;
            break;
        }
        objective = obj;
    }
    let alpha_sum = alpha[0] + alpha[1];
    Ok(MixtureFit {
        means: m,
        variances: [
            (b[0] / a[0]).max(config.variance_floor),
            (b[1] / a[1]).max(config.variance_floor),
        ],
        weights: [alpha[0] / alpha_sum, alpha[1] / alpha_sum],
        responsibilities: resp,
        converged,
        iterations_used,
        objective,
    })
}

/// Posterior probability that each value belongs to the smaller-mean
/// component, evaluated at `values` from the fitted parameters.
pub fn posterior_low_mean(fit: &MixtureFit, values: &[f64]) -> Vec<f64> {
    if (fit.means[0] - fit.means[1]).abs() <= 1e-12 {
        return vec![0.5; values.len()];
    }
    let low = if fit.means[0] < fit.means[1] { 0 } else { 1 };
    values
        .iter()
        .map(|&x| {
            let l0 = fit.weights[0].max(1e-300).ln() + ln_gauss(x, fit.means[0], fit.variances[0]);
            let l1 = fit.weights[1].max(1e-300).ln() + ln_gauss(x, fit.means[1], fit.variances[1]);
            let m = l0.max(l1);
            let s = (l0 - m).exp() + (l1 - m).exp();
            let r = [(l0 - m).exp() / s, (l1 - m).exp() / s];
            r[low]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, Normal};

    fn bimodal(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let lo = Normal::new(0.0, 0.1).unwrap();
        let hi = Normal::new(5.0, 0.1).unwrap();
        let mut v: Vec<f64> = (0..100).map(|_| lo.sample(&mut rng)).collect();
        v.extend((0..100).map(|_| hi.sample(&mut rng)));
        v
    }

    fn unimodal(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let d = Normal::new(2.0, 0.3).unwrap();
        (0..200).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn em_degenerate_data() {
        let v = vec![3.0; 50];
        let fit = fit_em(&v, &VbConfig::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.means, [3.0, 3.0]);
        assert_eq!(fit.variances, [1e-6, 1e-6]);
    }

    #[test]
    fn em_recovers_bimodal_clusters() {
        let v = bimodal(1);
        let fit = fit_em(&v, &VbConfig { seed: 3, ..VbConfig::default() }).unwrap();
        // independent oracle: per-cluster sample means from the known split
        let lo_mean = v[..100].iter().sum::<f64>() / 100.0;
        let hi_mean = v[100..].iter().sum::<f64>() / 100.0;
        let (fit_lo, fit_hi) = if fit.means[0] < fit.means[1] {
            (fit.means[0], fit.means[1])
        } else {
            (fit.means[1], fit.means[0])
        };
        assert!((fit_lo - lo_mean).abs() < 0.1);
        assert!((fit_hi - hi_mean).abs() < 0.1);
        assert!((fit.weights[0] - 0.5).abs() < 0.05);
    }

    fn em_loglik(values: &[f64], weights: [f64; 2], means: [f64; 2], vars: [f64; 2]) -> f64 {
        values
            .iter()
            .map(|&x| {
                let p = weights[0] * (ln_gauss(x, means[0], vars[0])).exp()
                    + weights[1] * (ln_gauss(x, means[1], vars[1])).exp();
                p.ln()
            })
            .sum::<f64>()
            / values.len() as f64
    }

    #[test]
    fn em_loglik_is_monotone() {
        // re-run EM manually, asserting each sweep's log-likelihood
        let v = bimodal(2);
        let cfg = VbConfig { tol: 1e-9, max_iter: 50, ..VbConfig::default() };
        let mut resp = init_responsibilities(&v, cfg.seed, cfg.init_quantile);
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..30 {
            let (nk, mean, var) = weighted_stats(&v, &resp);
            let weights = [nk[0] / v.len() as f64, nk[1] / v.len() as f64];
            let vars = [var[0].max(1e-6), var[1].max(1e-6)];
            let ll = em_loglik(&v, weights, mean, vars);
            assert!(ll >= prev - 1e-8, "log-likelihood decreased: {prev} -> {ll}");
            prev = ll;
            for (i, &x) in v.iter().enumerate() {
                let l0 = weights[0].ln() + ln_gauss(x, mean[0], vars[0]);
                let l1 = weights[1].ln() + ln_gauss(x, mean[1], vars[1]);
                let m = l0.max(l1);
                let s = (l0 - m).exp() + (l1 - m).exp();
                resp.set(i, 0, (l0 - m).exp() / s);
                resp.set(i, 1, (l1 - m).exp() / s);
            }
        }
    }

    #[test]
    fn vb_bimodal_converges_early() {
        let fit = fit_vb(&bimodal(3), &VbConfig::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.iterations_used < 20, "used {}", fit.iterations_used);
    }

    #[test]
    fn vb_unimodal_is_slower_than_bimodal() {
        let cfg = VbConfig::default();
        let uni = fit_vb(&unimodal(4), &cfg).unwrap();
        let bi = fit_vb(&bimodal(4), &cfg).unwrap();
        assert!(
            !uni.converged || uni.iterations_used > bi.iterations_used,
            "unimodal {} vs bimodal {}",
            uni.iterations_used,
            bi.iterations_used
        );
    }

    #[test]
    fn vb_huge_tolerance_converges_immediately() {
        let cfg = VbConfig { tol: 1e9, ..VbConfig::default() };
        let fit = fit_vb(&bimodal(5), &cfg).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations_used, 1);
    }

    #[test]
    fn vb_elbo_is_monotone() {
        // record the objective trace by running with shrinking max_iter
        let v = bimodal(6);
        let mut prev = f64::NEG_INFINITY;
        for it in 1..=15 {
            let cfg = VbConfig { tol: 1e-12, max_iter: it, ..VbConfig::default() };
            let fit = fit_vb(&v, &cfg).unwrap();
            assert!(
                fit.objective >= prev - 1e-6,
                "ELBO decreased at iter {it}: {prev} -> {}",
                fit.objective
            );
            prev = fit.objective;
        }
    }

    #[test]
    fn responsibilities_and_weights_on_simplex() {
        for fit in [
            fit_em(&bimodal(7), &VbConfig::default()).unwrap(),
            fit_vb(&bimodal(7), &VbConfig::default()).unwrap(),
            fit_vb(&unimodal(7), &VbConfig::default()).unwrap(),
        ] {
            assert_relative_eq!(fit.weights[0] + fit.weights[1], 1.0, epsilon = 1e-9);
            for i in 0..fit.responsibilities.rows() {
                let s: f64 = fit.responsibilities.row(i).iter().sum();
                assert_relative_eq!(s, 1.0, epsilon = 1e-9);
            }
            assert!(fit.variances.iter().all(|&v| v >= 1e-6));
        }
    }

    #[test]
    fn posterior_low_mean_cases() {
        let v = bimodal(8);
        let fit = fit_em(&v, &VbConfig::default()).unwrap();
        let w = posterior_low_mean(&fit, &[0.0]);
        assert!(w[0] > 0.99);

        // symmetric midpoint
        let fit = MixtureFit {
            means: [0.0, 2.0],
            variances: [0.5, 0.5],
            weights: [0.5, 0.5],
            responsibilities: Mat::zeros(0, 2),
            converged: true,
            iterations_used: 1,
            objective: 0.0,
        };
        let w = posterior_low_mean(&fit, &[1.0]);
        assert_relative_eq!(w[0], 0.5, epsilon = 1e-6);

        // degenerate equal means
        let fit = MixtureFit { means: [1.0, 1.0], ..fit };
        assert_eq!(posterior_low_mean(&fit, &[0.0, 5.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn shift_equivariance() {
        let v = bimodal(9);
        let shifted: Vec<f64> = v.iter().map(|x| x + 7.5).collect();
        let cfg = VbConfig { tol: 1e-8, max_iter: 100, ..VbConfig::default() };
        for fitter in [fit_em, fit_vb] {
            let a = fitter(&v, &cfg).unwrap();
            let b = fitter(&shifted, &cfg).unwrap();
            let lo_a = a.means[0].min(a.means[1]);
            let lo_b = b.means[0].min(b.means[1]);
            assert!((lo_b - lo_a - 7.5).abs() < 1e-6);
            let wa = posterior_low_mean(&a, &v);
            let wb = posterior_low_mean(&b, &shifted);
            for (x, y) in wa.iter().zip(&wb) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn convergence_speed_ordering_over_seeds() {
        let cfg = VbConfig::default();
        let mut uni_iters = Vec::new();
        let mut bi_iters = Vec::new();
        for seed in 0..20u64 {
            uni_iters.push(fit_vb(&unimodal(seed), &cfg).unwrap().iterations_used);
            bi_iters.push(fit_vb(&bimodal(seed), &cfg).unwrap().iterations_used);
        }
        uni_iters.sort_unstable();
        bi_iters.sort_unstable();
        let med = |v: &[usize]| v[v.len() / 2];
        assert!(
            med(&uni_iters) > med(&bi_iters),
            "median unimodal {} vs bimodal {}",
            med(&uni_iters),
            med(&bi_iters)
        );
    }

    #[test]
    fn too_few_values_is_an_error() {
        assert!(fit_em(&[1.0], &VbConfig::default()).is_err());
        assert!(fit_vb(&[], &VbConfig::default()).is_err());
    }
}
