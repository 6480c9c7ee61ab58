//! Experiment configuration as `key = value` text.
//!
//! Keys are the kebab-case names listed in [`ExperimentConfig::KEYS`];
//! `#` starts a comment. Later assignments override earlier ones, which is
//! how command-line flags layer over a config file.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::SplitPolicy;
use crate::error::{Error, Result};
use crate::fusion::{ModalityMask, ModelConfig};
use crate::losses::LossConfig;
use crate::tensor::Precision;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Ratio,
    KFold,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seeds parameter initialisation and batch order.
    pub seed: u64,
    pub modalities: ModalityMask,
    pub precision: Precision,
    /// Keep the audio projection and shallow layers at their initial values.
    pub freeze_shallow: bool,
    pub split: SplitKind,
    pub train_ratio: f64,
    pub val_ratio: f64,
    pub folds: usize,
    pub fold: usize,
    pub split_seed: u64,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 16,
            epochs: 30,
            seed: 0,
            modalities: ModalityMask::ALL,
            precision: Precision::F64,
            freeze_shallow: false,
            split: SplitKind::Ratio,
            train_ratio: 0.8,
            val_ratio: 0.1,
            folds: 5,
            fold: 0,
            split_seed: 0,
            data_dir: None,
            out_dir: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

pub fn parse_precision(value: &str) -> Result<Precision> {
    match value {
        "f64" => Ok(Precision::F64),
        "f32" => Ok(Precision::F32),
        _ => Err(Error::Config(format!("precision: expected f64 or f32, got {value:?}"))),
    }
}

pub fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::F64 => "f64",
        Precision::F32 => "f32",
    }
}

impl ExperimentConfig {
    pub const KEYS: &'static [&'static str] = &[
        "d-model",
        "heads",
        "n-shallow",
        "n-deep",
        "lvc-codewords",
        "conv-kernel",
        "use-lvc",
        "fusion",
        "gate-input",
        "gate-placement",
        "audio-dim",
        "text-dim",
        "visual-dim",
        "classes",
        "margin",
        "lambda",
        "strict-margin",
        "optimizer",
        "lr",
        "beta1",
        "beta2",
        "epsilon",
        "batch-size",
        "epochs",
        "seed",
        "modalities",
        "precision",
        "freeze-shallow",
        "split",
        "train-ratio",
        "val-ratio",
        "folds",
        "fold",
        "split-seed",
        "data-dir",
        "out-dir",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key {
            "d-model" => m.d_model = parse_num(key, v)?,
            "heads" => m.heads = parse_num(key, v)?,
            "n-shallow" => m.n_shallow = parse_num(key, v)?,
            "n-deep" => m.n_deep = parse_num(key, v)?,
            "lvc-codewords" => m.lvc_codewords = parse_num(key, v)?,
            "conv-kernel" => m.conv_kernel = parse_num(key, v)?,
            "use-lvc" => m.use_lvc = parse_bool(key, v)?,
            "fusion" => m.fusion = v.parse()?,
            "gate-input" => m.gate_input = v.parse()?,
            "gate-placement" => m.gate_placement = v.parse()?,
            "audio-dim" => m.audio_dim = parse_num(key, v)?,
            "text-dim" => m.text_dim = parse_num(key, v)?,
            "visual-dim" => m.visual_dim = parse_num(key, v)?,
            "classes" => m.classes = parse_num(key, v)?,
            "margin" => self.loss.margin = parse_num(key, v)?,
            "lambda" => self.loss.balance = parse_num(key, v)?,
            "strict-margin" => self.loss.strict = parse_bool(key, v)?,
            "optimizer" => {
                if v != "adam" {
                    return Err(Error::Config(format!("optimizer: only adam is supported, got {v:?}")));
                }
            }
            "lr" => self.optimizer.learning_rate = parse_num(key, v)?,
            "beta1" => self.optimizer.beta1 = parse_num(key, v)?,
            "beta2" => self.optimizer.beta2 = parse_num(key, v)?,
            "epsilon" => self.optimizer.epsilon = parse_num(key, v)?,
            "batch-size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "modalities" => self.modalities = v.parse()?,
            "precision" => self.precision = parse_precision(v)?,
            "freeze-shallow" => self.freeze_shallow = parse_bool(key, v)?,
            "split" => {
                self.split = match v {
                    "ratio" => SplitKind::Ratio,
                    "kfold" => SplitKind::KFold,
                    _ => return Err(Error::Config(format!("split: expected ratio or kfold, got {v:?}"))),
                }
            }
            "train-ratio" => self.train_ratio = parse_num(key, v)?,
            "val-ratio" => self.val_ratio = parse_num(key, v)?,
            "folds" => self.folds = parse_num(key, v)?,
            "fold" => self.fold = parse_num(key, v)?,
            "split-seed" => self.split_seed = parse_num(key, v)?,
            "data-dir" => self.data_dir = Some(PathBuf::from(v)),
            "out-dir" => self.out_dir = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("d-model", &m.d_model);
        kv("heads", &m.heads);
        kv("n-shallow", &m.n_shallow);
        kv("n-deep", &m.n_deep);
        kv("lvc-codewords", &m.lvc_codewords);
        kv("conv-kernel", &m.conv_kernel);
        kv("use-lvc", &m.use_lvc);
        kv("fusion", &m.fusion);
        kv("gate-input", &m.gate_input);
        kv("gate-placement", &m.gate_placement);
        kv("audio-dim", &m.audio_dim);
        kv("text-dim", &m.text_dim);
        kv("visual-dim", &m.visual_dim);
        kv("classes", &m.classes);
        kv("margin", &self.loss.margin);
        kv("lambda", &self.loss.balance);
        kv("strict-margin", &self.loss.strict);
        kv("optimizer", &"adam");
        kv("lr", &self.optimizer.learning_rate);
        kv("beta1", &self.optimizer.beta1);
        kv("beta2", &self.optimizer.beta2);
        kv("epsilon", &self.optimizer.epsilon);
        kv("batch-size", &self.batch_size);
        kv("epochs", &self.epochs);
        kv("seed", &self.seed);
        kv("modalities", &self.modalities);
        kv("precision", &precision_name(self.precision));
        kv("freeze-shallow", &self.freeze_shallow);
        kv(
            "split",
            &match self.split {
                SplitKind::Ratio => "ratio",
                SplitKind::KFold => "kfold",
            },
        );
        kv("train-ratio", &self.train_ratio);
        kv("val-ratio", &self.val_ratio);
        kv("folds", &self.folds);
        kv("fold", &self.fold);
        kv("split-seed", &self.split_seed);
        if let Some(p) = &self.data_dir {
            kv("data-dir", &p.display());
        }
        if let Some(p) = &self.out_dir {
            kv("out-dir", &p.display());
        }
        s
    }

    pub fn split_policy(&self) -> SplitPolicy {
        match self.split {
            SplitKind::Ratio => SplitPolicy::Ratio {
                train: self.train_ratio,
                val: self.val_ratio,
                seed: self.split_seed,
            },
            SplitKind::KFold => SplitPolicy::KFold {
                k: self.folds,
                fold: self.fold,
                seed: self.split_seed,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be finite and >= 0, got {}",
                o.learning_rate
            )));
        }
        if !((0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if o.epsilon.is_nan() || o.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.split == SplitKind::KFold && self.fold >= self.folds {
            return Err(Error::Config(format!(
                "fold {} out of range for {} folds",
                self.fold, self.folds
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionMode;

    #[test]
    fn text_roundtrip() {
        let mut c = ExperimentConfig::default();
        c.apply_text("d-model = 32\nfusion=concat # baseline\nn-deep = 0\n\nlambda = 0.01\nmodalities = A+T\nprecision = f32\ndata-dir = /tmp/x y\n")
            .unwrap();
        assert_eq!(c.model.d_model, 32);
        assert_eq!(c.model.fusion, FusionMode::Concat);
        assert_eq!(c.loss.balance, 0.01);
        assert_eq!(c.precision, Precision::F32);
        assert_eq!(c.data_dir, Some(PathBuf::from("/tmp/x y")));
        let text = c.to_text();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
        for line in text.lines() {
            let key = line.split(" = ").next().unwrap();
            assert!(ExperimentConfig::KEYS.contains(&key), "{key}");
        }
    }

    #[test]
    fn every_key_is_settable() {
        let defaults = ExperimentConfig::default().to_text();
        let mut c = ExperimentConfig::default();
        for line in defaults.lines() {
            let (k, v) = line.split_once(" = ").unwrap();
            c.set(k, v).unwrap();
        }
        c.set("data-dir", "d").unwrap();
        c.set("out-dir", "o").unwrap();
        assert_eq!(c.to_text().lines().count(), ExperimentConfig::KEYS.len());
    }

    #[test]
    fn errors_name_the_line() {
        let err = ExperimentConfig::parse("heads = 2\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        assert!(ExperimentConfig::parse("heads 2").is_err());
        assert!(ExperimentConfig::parse("heads = two").is_err());
        assert!(ExperimentConfig::parse("optimizer = sgd").is_err());
        assert!(ExperimentConfig::parse("use-lvc = maybe").is_err());
        assert!(ExperimentConfig::parse("modalities = A+A").is_err());
    }

    #[test]
    fn validation() {
        let ok = ExperimentConfig::default();
        ok.validate().unwrap();
        for text in [
            "batch-size = 0",
            "margin = 3",
            "lambda = -1",
            "fusion = concat",
            "split = kfold\nfold = 5",
            "beta1 = 1",
            "heads = 5",
        ] {
            let c = ExperimentConfig::parse(text).unwrap();
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{text}");
        }
    }
}
