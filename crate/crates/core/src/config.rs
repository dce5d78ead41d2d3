//! Run configuration: a flat `key = value` text format with `#` comments and
//! dotted keys, merged over defaults. Unknown keys are rejected by name, and
//! the fully resolved config can be echoed back out so a run's output
//! directory always records exactly what produced it.

use crate::gmm::VbConfig;
use crate::nn::SgdConfig;
use crate::rdm::MixMatchConfig;
use crate::{Error, Result};

/// Knobs of the crafting loop that are worth exposing. Architecture and seed
/// come from the command line, not the config file.
#[derive(Debug, Clone)]
pub struct BadLabelKnobs {
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

/// Stage structure of the defense; the shared trainer and mixture knobs live
/// in their own sections.
#[derive(Debug, Clone)]
pub struct RdmKnobs {
    pub warmup_epochs: usize,
    pub cp_weight: f64,
    pub lambda: f64,
    pub tau_p: f64,
    pub tau_c: f64,
    pub epochs: usize,
    pub reset_after_division: bool,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub standard_epochs: usize,
    pub standard_cp_weight: f64,
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
    pub sgd: SgdConfig,
    pub rdm: RdmKnobs,
    pub gmm: VbConfig,
    pub mixmatch: MixMatchConfig,
    pub badlabel: BadLabelKnobs,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            standard_epochs: 30,
            standard_cp_weight: 0.0,
            hidden: vec![64, 64],
            sgd: SgdConfig {
                learning_rate: 0.1,
                momentum: 0.9,
                weight_decay: 1e-3,
                schedule: vec![(30, 0.1)],
                batch_size: 64,
            },
            rdm: RdmKnobs {
                warmup_epochs: 60,
                cp_weight: 0.0,
                lambda: 0.8,
                tau_p: 0.9,
                tau_c: 0.5,
                epochs: 30,
                reset_after_division: true,
            },
            gmm: VbConfig {
                mean_prior_scale: 300.0,
                max_iter: 6,
                ..VbConfig::default()
            },
            mixmatch: MixMatchConfig {
                lambda_u_max: 3.0,
                jitter_std: 0.3,
                ..MixMatchConfig::default()
            },
            badlabel: BadLabelKnobs {
                alpha: 0.1,
                epochs: 120,
                learning_rate: 0.1,
                momentum: 0.9,
                batch_size: 64,
            },
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for key `{key}`")))
}

/// `"15:0.1,25:0.5"` -> `[(15, 0.1), (25, 0.5)]`; empty string clears it.
fn parse_schedule(key: &str, value: &str) -> Result<Vec<(usize, f64)>> {
    if value.is_empty() {
        return Ok(vec![]);
    }
    value
        .split(',')
        .map(|part| {
            let (e, m) = part.split_once(':').ok_or_else(|| {
                Error::Config(format!(
                    "invalid value `{value}` for key `{key}`: expected epoch:multiplier pairs"
                ))
            })?;
            Ok((parse(key, e.trim())?, parse(key, m.trim())?))
        })
        .collect()
}

fn parse_dims(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|p| parse(key, p.trim())).collect()
}

fn format_schedule(s: &[(usize, f64)]) -> String {
    s.iter()
        .map(|(e, m)| format!("{e}:{m}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn format_dims(d: &[usize]) -> String {
    d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Sets a single dotted key. Unknown keys fail, naming the key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "standard.epochs" => self.standard_epochs = parse(key, value)?,
            "standard.cp_weight" => self.standard_cp_weight = parse(key, value)?,
            "mlp.hidden" => self.hidden = parse_dims(key, value)?,
            "sgd.learning_rate" => self.sgd.learning_rate = parse(key, value)?,
            "sgd.momentum" => self.sgd.momentum = parse(key, value)?,
            "sgd.weight_decay" => self.sgd.weight_decay = parse(key, value)?,
            "sgd.batch_size" => self.sgd.batch_size = parse(key, value)?,
            "sgd.schedule" => self.sgd.schedule = parse_schedule(key, value)?,
            "rdm.warmup_epochs" => self.rdm.warmup_epochs = parse(key, value)?,
            "rdm.cp_weight" => self.rdm.cp_weight = parse(key, value)?,
            "rdm.lambda" => self.rdm.lambda = parse(key, value)?,
            "rdm.tau_p" => self.rdm.tau_p = parse(key, value)?,
            "rdm.tau_c" => self.rdm.tau_c = parse(key, value)?,
            "rdm.epochs" => self.rdm.epochs = parse(key, value)?,
            "rdm.reset_after_division" => self.rdm.reset_after_division = parse(key, value)?,
            "gmm.tol" => self.gmm.tol = parse(key, value)?,
            "gmm.max_iter" => self.gmm.max_iter = parse(key, value)?,
            "gmm.dirichlet_concentration" => {
                self.gmm.dirichlet_concentration = parse(key, value)?
            }
            "gmm.mean_prior_scale" => self.gmm.mean_prior_scale = parse(key, value)?,
            "gmm.variance_prior_shape" => self.gmm.variance_prior_shape = parse(key, value)?,
            "gmm.variance_floor" => self.gmm.variance_floor = parse(key, value)?,
            "mixmatch.sharpen_temp" => self.mixmatch.sharpen_temp = parse(key, value)?,
            "mixmatch.augmentations" => self.mixmatch.augmentations = parse(key, value)?,
            "mixmatch.mixup_alpha" => self.mixmatch.mixup_alpha = parse(key, value)?,
            "mixmatch.lambda_u_max" => self.mixmatch.lambda_u_max = parse(key, value)?,
            "mixmatch.rampup_epochs" => self.mixmatch.rampup_epochs = parse(key, value)?,
            "mixmatch.jitter_std" => self.mixmatch.jitter_std = parse(key, value)?,
            "badlabel.alpha" => self.badlabel.alpha = parse(key, value)?,
            "badlabel.epochs" => self.badlabel.epochs = parse(key, value)?,
            "badlabel.learning_rate" => self.badlabel.learning_rate = parse(key, value)?,
            "badlabel.momentum" => self.badlabel.momentum = parse(key, value)?,
            "badlabel.batch_size" => self.badlabel.batch_size = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses and applies a whole config file body.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key = value`, got `{}`",
                    lineno + 1,
                    line
                ))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The fully resolved config in the same format `apply_text` reads, for
    /// writing next to a run's outputs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("standard.epochs", self.standard_epochs.to_string());
        kv("standard.cp_weight", self.standard_cp_weight.to_string());
        kv("mlp.hidden", format_dims(&self.hidden));
        kv("sgd.learning_rate", self.sgd.learning_rate.to_string());
        kv("sgd.momentum", self.sgd.momentum.to_string());
        kv("sgd.weight_decay", self.sgd.weight_decay.to_string());
        kv("sgd.batch_size", self.sgd.batch_size.to_string());
        kv("sgd.schedule", format_schedule(&self.sgd.schedule));
        kv("rdm.warmup_epochs", self.rdm.warmup_epochs.to_string());
        kv("rdm.cp_weight", self.rdm.cp_weight.to_string());
        kv("rdm.lambda", self.rdm.lambda.to_string());
        kv("rdm.tau_p", self.rdm.tau_p.to_string());
        kv("rdm.tau_c", self.rdm.tau_c.to_string());
        kv("rdm.epochs", self.rdm.epochs.to_string());
        kv(
            "rdm.reset_after_division",
            self.rdm.reset_after_division.to_string(),
        );
        kv("gmm.tol", self.gmm.tol.to_string());
        kv("gmm.max_iter", self.gmm.max_iter.to_string());
        kv(
            "gmm.dirichlet_concentration",
            self.gmm.dirichlet_concentration.to_string(),
        );
        kv("gmm.mean_prior_scale", self.gmm.mean_prior_scale.to_string());
        kv(
            "gmm.variance_prior_shape",
            self.gmm.variance_prior_shape.to_string(),
        );
        kv("gmm.variance_floor", self.gmm.variance_floor.to_string());
        kv("mixmatch.sharpen_temp", self.mixmatch.sharpen_temp.to_string());
        kv("mixmatch.augmentations", self.mixmatch.augmentations.to_string());
        kv("mixmatch.mixup_alpha", self.mixmatch.mixup_alpha.to_string());
        kv("mixmatch.lambda_u_max", self.mixmatch.lambda_u_max.to_string());
        kv("mixmatch.rampup_epochs", self.mixmatch.rampup_epochs.to_string());
        kv("mixmatch.jitter_std", self.mixmatch.jitter_std.to_string());
        kv("badlabel.alpha", self.badlabel.alpha.to_string());
        kv("badlabel.epochs", self.badlabel.epochs.to_string());
        kv("badlabel.learning_rate", self.badlabel.learning_rate.to_string());
        kv("badlabel.momentum", self.badlabel.momentum.to_string());
        kv("badlabel.batch_size", self.badlabel.batch_size.to_string());
        out
    }

    /// Full layer list for a `d`-feature, `c`-class dataset.
    pub fn mlp_dims(&self, d: usize, c: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(d);
        dims.extend_from_slice(&self.hidden);
        dims.push(c);
        dims
    }

    pub fn divide_config(&self, d: usize, c: usize, seed: u64) -> crate::rdm::DivideConfig {
        crate::rdm::DivideConfig {
            warmup_epochs: self.rdm.warmup_epochs,
            cp_weight: self.rdm.cp_weight,
            lambda: self.rdm.lambda,
            tau_p: self.rdm.tau_p,
            tau_c: self.rdm.tau_c,
            epochs: self.rdm.epochs,
            gmm: VbConfig { seed, ..self.gmm.clone() },
            mixmatch: self.mixmatch.clone(),
            sgd: self.sgd.clone(),
            mlp_dims: self.mlp_dims(d, c),
            seed,
            reset_after_division: self.rdm.reset_after_division,
            use_bayes_gmm: true,
            use_perturbation: true,
            use_filtering: true,
        }
    }
}
