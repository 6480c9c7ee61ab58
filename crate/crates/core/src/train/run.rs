//! One experiment end to end: split, train, test, report.
//!
//! A run directory holds `config.txt` (the resolved configuration),
//! `model.wvfn` (best-validation checkpoint), `report.txt` and
//! `predictions.tsv`.

use std::fmt::Write as _;
use std::path::Path;

use super::trainer::{evaluate, timed, train, EpochRecord, TrainOutcome};
use super::ExperimentConfig;
use crate::data::{split, UtteranceSample};
use crate::error::{Error, Result};
use crate::fusion::{checkpoint, Modality, WavFusionModel};
use crate::metrics::Metrics;

pub const CONFIG_FILE: &str = "config.txt";
pub const CHECKPOINT_FILE: &str = "model.wvfn";
pub const REPORT_FILE: &str = "report.txt";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: Metrics,
    pub test_samples: usize,
    pub first_epoch_losses: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Tab-separated epoch table followed by a `key = value` block.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# epoch\ttrain_loss\tval_loss\tval_acc\n");
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        for e in &self.history {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}",
                e.epoch,
                e.train_loss,
                opt(e.val_loss),
                opt(e.val_accuracy)
            );
        }
        s.push('\n');
        let _ = writeln!(s, "seed = {}", self.config.seed);
        let _ = writeln!(s, "best-epoch = {}", self.best_epoch);
        let _ = writeln!(s, "test-samples = {}", self.test_samples);
        let _ = writeln!(s, "test-acc = {}", self.test.accuracy);
        let _ = writeln!(s, "test-wf1 = {}", self.test.weighted_f1);
        let trace: Vec<String> = self.first_epoch_losses.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "first-epoch-losses = {}", trace.join(","));
        let _ = writeln!(s, "wall-clock-secs = {:.3}", self.wall_clock_secs);
        for line in self.config.to_text().lines() {
            let _ = writeln!(s, "config.{line}");
        }
        s
    }
}

/// Looks up `key` in the `key = value` block of a report.
pub fn report_value<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k == key).then_some(v)
    })
}

pub fn predictions_to_text(predictions: &[Prediction]) -> String {
    let mut s = String::from("# id\tlabel\tprediction\n");
    for p in predictions {
        let _ = writeln!(s, "{}\t{}\t{}", p.id, p.label, p.predicted);
    }
    s
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Data(format!("predictions line {}: expected id, label, prediction", n + 1));
        let mut f = line.split('\t');
        let (Some(id), Some(label), Some(pred), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(bad());
        };
        out.push(Prediction {
            id: id.to_string(),
            label: label.parse().map_err(|_| bad())?,
            predicted: pred.parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Copies the feature dims of `samples` into `config.model`.
pub fn fit_dims(config: &mut ExperimentConfig, samples: &[UtteranceSample]) -> Result<()> {
    for m in Modality::ALL {
        let dims: Vec<usize> = samples.iter().filter_map(|s| s.get(m).map(|f| f.dim())).collect();
        let Some(&d) = dims.first() else { continue };
        if dims.iter().any(|&x| x != d) {
            return Err(Error::Data(format!("{} features have mixed dims", m.name())));
        }
        match m {
            Modality::Audio => config.model.audio_dim = d,
            Modality::Text => config.model.text_dim = d,
            Modality::Visual => config.model.visual_dim = d,
        }
    }
    Ok(())
}

pub struct RunOutput {
    pub report: RunReport,
    pub outcome: TrainOutcome,
    pub predictions: Vec<Prediction>,
}

/// Splits `samples` by the configured policy, trains, and evaluates the
/// best checkpoint on the test part.
pub fn run_experiment(config: &ExperimentConfig, samples: &[UtteranceSample]) -> Result<RunOutput> {
    config.validate()?;
    let parts = split(samples.len(), config.split_policy())?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect::<Vec<_>>();
    let (train_set, val_set, test_set) = (pick(&parts.train), pick(&parts.val), pick(&parts.test));
    if test_set.is_empty() {
        return Err(Error::Config(format!(
            "split leaves no test samples out of {}",
            samples.len()
        )));
    }
    let (outcome, secs) = timed(|| train(config, &train_set, &val_set));
    let outcome = outcome?;
    let eval = evaluate(&outcome.model, &test_set, config.modalities, config.precision)?;
    let predictions = test_set
        .iter()
        .zip(&eval.predictions)
        .map(|(s, &p)| Prediction {
            id: s.id.clone(),
            label: s.label,
            predicted: p,
        })
        .collect();
    Ok(RunOutput {
        report: RunReport {
            config: config.clone(),
            history: outcome.history.clone(),
            best_epoch: outcome.best_epoch,
            test: eval.metrics,
            test_samples: test_set.len(),
            first_epoch_losses: outcome.first_epoch_losses.clone(),
            wall_clock_secs: secs,
        },
        outcome,
        predictions,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(CONFIG_FILE), run.report.config.to_text().as_bytes())?;
    write_file(&dir.join(CHECKPOINT_FILE), &run.outcome.checkpoint)?;
    write_file(&dir.join(REPORT_FILE), run.report.to_text().as_bytes())?;
    write_file(
        &dir.join(PREDICTIONS_FILE),
        predictions_to_text(&run.predictions).as_bytes(),
    )
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::parse(&text).map_err(|e| e.in_file(path))
}

/// Builds the model described by `config` and loads `checkpoint` into it.
pub fn load_model(config: &ExperimentConfig, checkpoint_path: &Path) -> Result<WavFusionModel> {
    let mut model = WavFusionModel::new(config.model.clone(), config.seed)?;
    let records = checkpoint::load(checkpoint_path)?;
    model
        .params
        .load_records(records)
        .map_err(|e| e.in_file(checkpoint_path))?;
    Ok(model)
}

/// Test-split samples of `samples` under `config`'s split policy.
pub fn test_split(config: &ExperimentConfig, samples: &[UtteranceSample]) -> Result<Vec<UtteranceSample>> {
    let parts = split(samples.len(), config.split_policy())?;
    Ok(parts.test.iter().map(|&i| samples[i].clone()).collect())
}
