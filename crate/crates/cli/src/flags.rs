//! One `--key <VALUE>` flag per experiment configuration key.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Args, Command, FromArgMatches};
use wavfusion::train::ExperimentConfig;

#[derive(Clone, Debug, Default)]
pub struct ExperimentFlags {
    pub config: Option<PathBuf>,
    pub overrides: Vec<(&'static str, String)>,
}

fn help(key: &str) -> &'static str {
    match key {
        "d-model" => "model width d",
        "heads" => "attention heads",
        "n-shallow" => "self-attention layers over the audio stream",
        "n-deep" => "cross-modal layers after the shallow ones",
        "lvc-codewords" => "codebook size K of the visual center block",
        "conv-kernel" => "odd kernel size of the visual center stem",
        "use-lvc" => "include the visual center block (true/false)",
        "fusion" => "cross-attention or concat",
        "gate-input" => "f1-f2 or f1-f1",
        "gate-placement" => "per-layer or final-layer",
        "audio-dim" | "text-dim" | "visual-dim" => "input feature dim (taken from the dataset when training)",
        "classes" => "number of emotion classes",
        "margin" => "margin-loss hinge offset alpha, in (0, 2]",
        "lambda" => "margin-loss weight",
        "strict-margin" => "fail on zero-norm embeddings (true/false)",
        "optimizer" => "adam",
        "lr" => "learning rate",
        "beta1" | "beta2" | "epsilon" => "Adam moment parameter",
        "batch-size" => "utterances per batch",
        "epochs" => "training epochs",
        "seed" => "initialisation and shuffling seed",
        "modalities" => "modality mask such as A, A+T or A+V+T",
        "precision" => "f64 or f32",
        "freeze-shallow" => "keep audio projection and shallow layers fixed (true/false)",
        "split" => "ratio or kfold",
        "train-ratio" | "val-ratio" => "share of samples for ratio splits",
        "folds" => "number of folds for kfold splits",
        "fold" => "test fold index; validation is the next fold",
        "split-seed" => "seed of the split permutation",
        "data-dir" => "dataset directory holding manifest.tsv",
        "out-dir" => "directory for run artifacts",
        _ => "",
    }
}

impl FromArgMatches for ExperimentFlags {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut flags = ExperimentFlags::default();
        flags.update_from_arg_matches(m)?;
        Ok(flags)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        if let Some(p) = m.get_one::<PathBuf>("config") {
            self.config = Some(p.clone());
        }
        for &key in ExperimentConfig::KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.overrides.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for ExperimentFlags {
    fn augment_args(cmd: Command) -> Command {
        let cmd = cmd.arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(clap::value_parser!(PathBuf))
                .help("key = value configuration file; flags override it"),
        );
        ExperimentConfig::KEYS.iter().fold(cmd, |cmd, &key| {
            cmd.arg(Arg::new(key).long(key).value_name("VALUE").help(help(key)))
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

impl ExperimentFlags {
    /// Applies the config file then the flags on top of `base`.
    pub fn resolve(&self, mut base: ExperimentConfig) -> wavfusion::Result<ExperimentConfig> {
        if let Some(path) = &self.config {
            base = apply_file(base, path)?;
        }
        for (key, value) in &self.overrides {
            base.set(key, value)?;
        }
        Ok(base)
    }
}

fn apply_file(mut base: ExperimentConfig, path: &Path) -> wavfusion::Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| wavfusion::Error::Config(format!("{}: {e}", path.display())))?;
    base.apply_text(&text)
        .map_err(|e| wavfusion::Error::Config(format!("{}: {e}", path.display())))?;
    Ok(base)
}
