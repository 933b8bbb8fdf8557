//! Training configuration and the flat `key = value` config file.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epoch (0-based) from which the rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub warmup_iters: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Write an intermediate checkpoint every this many epochs; 0 only at the end.
    pub checkpoint_every: usize,
    /// Append a metrics row every this many iterations.
    pub log_every: usize,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            batch_size: 4,
            learning_rate: 1e-4,
            lr_decay_epoch: 18,
            lr_decay_factor: 0.1,
            warmup_iters: 50,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 0.0,
            checkpoint_every: 0,
            log_every: 1,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.log_every == 0 {
            return fail("epochs, batch_size and log_every must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail("lr_decay_factor must lie in (0, 1]");
        }
        if self.lr_decay_epoch > self.epochs {
            return fail("lr_decay_epoch must not exceed epochs");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("beta1 and beta2 must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.adam_eps <= 0.0 || self.grad_clip < 0.0 {
            return fail("weight_decay and grad_clip must be non-negative, adam_eps positive");
        }
        if !(self.loss.tau > 0.0) {
            return fail("tau must be positive");
        }
        Ok(())
    }

    /// Learning rate at a 0-based iteration within a 0-based epoch: linear
    /// warmup, then a single step decay.
    pub fn lr_at(&self, iteration: usize, epoch: usize) -> f64 {
        let warm = if self.warmup_iters == 0 {
            1.0
        } else {
            ((iteration + 1) as f64 / self.warmup_iters as f64).min(1.0)
        };
        let decay = if epoch >= self.lr_decay_epoch {
            self.lr_decay_factor
        } else {
            1.0
        };
        self.learning_rate * warm * decay
    }
}

/// Everything a pre-training run needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub detector: DetectorConfig,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.train.validate()
    }

    /// Sets one field by its config-file key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let d = &mut self.detector;
        let t = &mut self.train;
        let l = &mut t.loss;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "lr_decay_epoch" => t.lr_decay_epoch = parse(key, value)?,
            "lr_decay_factor" => t.lr_decay_factor = parse(key, value)?,
            "warmup_iters" => t.warmup_iters = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "beta1" => t.beta1 = parse(key, value)?,
            "beta2" => t.beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "grad_clip" => t.grad_clip = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "tau" => l.tau = parse(key, value)?,
            "match_cls" => l.matching.cls = parse(key, value)?,
            "match_l1" => l.matching.l1 = parse(key, value)?,
            "match_giou" => l.matching.giou = parse(key, value)?,
            "match_ang" => l.matching.ang = parse(key, value)?,
            "loss_l1" => l.regression.l1 = parse(key, value)?,
            "loss_giou" => l.regression.giou = parse(key, value)?,
            "focal_alpha" => l.focal.alpha = parse(key, value)?,
            "focal_gamma" => l.focal.gamma = parse(key, value)?,
            "csl_sigma" => l.csl.sigma = parse(key, value)?,
            "csl_radius" => l.csl.radius = parse(key, value)?,
            "qfl_beta" => l.qfl_beta = parse(key, value)?,
            "deep_supervision" => l.deep_supervision = parse_bool(key, value)?,
            "encoder_det_loss" => l.encoder_det_loss = parse_bool(key, value)?,
            "image_size" => d.image_size = parse(key, value)?,
            "dim" => d.dim = parse(key, value)?,
            "n_heads" => d.n_heads = parse(key, value)?,
            "n_queries" => d.n_queries = parse(key, value)?,
            "k_cls" => d.k_cls = parse(key, value)?,
            "a_bins" => d.a_bins = parse(key, value)?,
            "encoder_layers" => d.encoder_layers = parse(key, value)?,
            "decoder_layers" => d.decoder_layers = parse(key, value)?,
            "enhancement_layers" => d.enhancement_layers = parse(key, value)?,
            "enhance" => d.enhance = parse_bool(key, value)?,
            "calibration_mode" => d.calibration_mode = value.parse()?,
            "two_stage_queries" => d.two_stage_queries = parse_bool(key, value)?,
            "init_seed" => d.init_seed = parse(key, value)?,
            "backbone_seed" => d.backbone_seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a config file on top of the defaults. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders every key; `parse_text` of the result reproduces `self`.
    pub fn to_text(&self) -> String {
        let d = &self.detector;
        let t = &self.train;
        let l = &t.loss;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", t.seed.to_string());
        kv("epochs", t.epochs.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("learning_rate", format!("{:e}", t.learning_rate));
        kv("lr_decay_epoch", t.lr_decay_epoch.to_string());
        kv("lr_decay_factor", format!("{:e}", t.lr_decay_factor));
        kv("warmup_iters", t.warmup_iters.to_string());
        kv("weight_decay", format!("{:e}", t.weight_decay));
        kv("beta1", format!("{:e}", t.beta1));
        kv("beta2", format!("{:e}", t.beta2));
        kv("adam_eps", format!("{:e}", t.adam_eps));
        kv("grad_clip", format!("{:e}", t.grad_clip));
        kv("checkpoint_every", t.checkpoint_every.to_string());
        kv("log_every", t.log_every.to_string());
        kv("tau", format!("{:e}", l.tau));
        kv("match_cls", format!("{:e}", l.matching.cls));
        kv("match_l1", format!("{:e}", l.matching.l1));
        kv("match_giou", format!("{:e}", l.matching.giou));
        kv("match_ang", format!("{:e}", l.matching.ang));
        kv("loss_l1", format!("{:e}", l.regression.l1));
        kv("loss_giou", format!("{:e}", l.regression.giou));
        kv("focal_alpha", format!("{:e}", l.focal.alpha));
        kv("focal_gamma", format!("{:e}", l.focal.gamma));
        kv("csl_sigma", format!("{:e}", l.csl.sigma));
        kv("csl_radius", l.csl.radius.to_string());
        kv("qfl_beta", format!("{:e}", l.qfl_beta));
        kv("deep_supervision", l.deep_supervision.to_string());
        kv("encoder_det_loss", l.encoder_det_loss.to_string());
        kv("image_size", d.image_size.to_string());
        kv("dim", d.dim.to_string());
        kv("n_heads", d.n_heads.to_string());
        kv("n_queries", d.n_queries.to_string());
        kv("k_cls", d.k_cls.to_string());
        kv("a_bins", d.a_bins.to_string());
        kv("encoder_layers", d.encoder_layers.to_string());
        kv("decoder_layers", d.decoder_layers.to_string());
        kv("enhancement_layers", d.enhancement_layers.to_string());
        kv("enhance", d.enhance.to_string());
        kv("calibration_mode", d.calibration_mode.to_string());
        kv("two_stage_queries", d.two_stage_queries.to_string());
        kv("init_seed", d.init_seed.to_string());
        kv("backbone_seed", d.backbone_seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.train.learning_rate = 3.7e-4;
        cfg.detector.enhance = false;
        cfg.detector.calibration_mode = crate::losses::CalibrationMode::DecoderDistill;
        let back = RunConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(RunConfig::parse_text("colour = red"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse_text("epochs = many"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse_text("epochs"), Err(Error::Config(_))));
        assert!(RunConfig::parse_text("# comment\n\nepochs = 3\nlr_decay_epoch = 2\n").is_ok());
    }

    #[test]
    fn schedule_warms_up_then_decays() {
        let t = TrainConfig {
            warmup_iters: 4,
            lr_decay_epoch: 2,
            ..TrainConfig::default()
        };
        assert_eq!(t.lr_at(0, 0), t.learning_rate / 4.0);
        assert_eq!(t.lr_at(3, 0), t.learning_rate);
        assert_eq!(t.lr_at(10, 1), t.learning_rate);
        assert!((t.lr_at(11, 2) - t.learning_rate * 0.1).abs() < 1e-20);
    }
}
