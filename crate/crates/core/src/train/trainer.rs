use std::time::Instant;

use super::{Adam, ExperimentConfig};
use crate::data::UtteranceSample;
use crate::error::{Error, Result};
use crate::fusion::{argmax, checkpoint, Modality, ModalityMask, WavFusionModel};
use crate::losses::{build_triplets, margin_loss, total_loss, LossConfig};
use crate::metrics::{metrics, Metrics};
use crate::rng::PortableRng;
use crate::tensor::{Graph, Precision, Tensor, Var};

/// Loss terms of one batch, recorded on the graph.
pub struct Objective {
    pub total: Var,
    pub task: Var,
    pub margin: Var,
}

/// Forward pass of every sample, cross-entropy over the stacked logits and
/// margin loss over the stacked shared-encoder embeddings (one per sample
/// and present modality).
pub fn batch_objective(
    g: &mut Graph,
    model: &WavFusionModel,
    batch: &[&UtteranceSample],
    mask: ModalityMask,
    loss: &LossConfig,
) -> Result<Objective> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut logits = Vec::with_capacity(batch.len());
    let mut labels = Vec::with_capacity(batch.len());
    let mut embeddings = Vec::new();
    let mut entries: Vec<(Modality, usize)> = Vec::new();
    for s in batch {
        let trace = model.forward(g, s, mask)?;
        logits.push(trace.logits);
        labels.push(s.label);
        for (m, e) in trace.common.iter() {
            embeddings.push(e);
            entries.push((m, s.label));
        }
    }
    let stacked = g.concat_rows(&logits)?;
    let task = g.cross_entropy(stacked, &labels)?;
    let margin = if loss.balance == 0.0 {
        g.constant(Tensor::scalar(0.0))
    } else {
        let x = g.concat_rows(&embeddings)?;
        margin_loss(g, x, &build_triplets(&entries), loss)?
    };
    let total = total_loss(g, task, margin, loss.balance)?;
    Ok(Objective { total, task, margin })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    /// Best-validation parameters after the checkpoint round trip.
    pub model: WavFusionModel,
    pub checkpoint: Vec<u8>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Total loss of every batch of the first epoch, in order.
    pub first_epoch_losses: Vec<f64>,
}

/// Batch order for `epoch`: a seeded shuffle on its own stream.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    PortableRng::with_stream(seed, 1 + epoch as u64).shuffle(&mut order);
    order
}

/// Mean objective over `samples` in inference mode.
pub fn mean_loss(model: &WavFusionModel, samples: &[UtteranceSample], config: &ExperimentConfig) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in samples.chunks(config.batch_size) {
        let refs: Vec<&UtteranceSample> = chunk.iter().collect();
        let mut g = Graph::inference(config.precision);
        let obj = batch_objective(&mut g, model, &refs, config.modalities, &config.loss)?;
        sum += g.value(obj.total).item() * chunk.len() as f64;
    }
    Ok(sum / samples.len() as f64)
}

pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<usize>,
}

pub fn evaluate(
    model: &WavFusionModel,
    samples: &[UtteranceSample],
    mask: ModalityMask,
    precision: Precision,
) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let mut g = Graph::inference(precision);
        let trace = model.forward(&mut g, s, mask)?;
        predictions.push(argmax(g.value(trace.logits).data()));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        metrics: metrics(&predictions, &labels, model.config.classes)?,
        predictions,
    })
}

/// Trains a fresh model seeded by `config.seed`.
pub fn train(
    config: &ExperimentConfig,
    train_set: &[UtteranceSample],
    val_set: &[UtteranceSample],
) -> Result<TrainOutcome> {
    config.validate()?;
    let model = WavFusionModel::new(config.model.clone(), config.seed)?;
    train_from(config, model, train_set, val_set)
}

pub fn train_from(
    config: &ExperimentConfig,
    mut model: WavFusionModel,
    train_set: &[UtteranceSample],
    val_set: &[UtteranceSample],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if config.precision == Precision::F32 {
        model.params.round_to_f32();
    }
    let frozen: Vec<bool> = model
        .params
        .iter()
        .map(|(_, p)| config.freeze_shallow && WavFusionModel::is_shallow_param(&p.name))
        .collect();
    let mut opt = Adam::new(config.optimizer, &model.params);
    let mut history = Vec::with_capacity(config.epochs);
    let mut first_epoch_losses = Vec::new();
    let mut best: Option<(usize, f64, f64, crate::tensor::ParamStore)> = None;

    for epoch in 0..config.epochs {
        let order = epoch_order(config.seed, epoch, train_set.len());
        let mut epoch_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&UtteranceSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let mut g = Graph::with_precision(config.precision);
            let obj = batch_objective(&mut g, &model, &batch, config.modalities, &config.loss)?;
            let loss = g.value(obj.total).item();
            if !loss.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            if epoch == 0 {
                first_epoch_losses.push(loss);
            }
            epoch_sum += loss * batch.len() as f64;
            g.backward(obj.total)?;
            opt.step(&mut model.params, |id| {
                if frozen[id.index()] {
                    None
                } else {
                    g.param_grad(id)
                }
            });
            if config.precision == Precision::F32 {
                model.params.round_to_f32();
            }
        }
        let train_loss = epoch_sum / train_set.len() as f64;

        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let loss = mean_loss(&model, val_set, config)?;
            let acc = evaluate(&model, val_set, config.modalities, config.precision)?
                .metrics
                .accuracy;
            (Some(loss), Some(acc))
        };
        log::info!(
            "epoch {} train-loss {train_loss:.6} val-loss {} val-acc {}",
            epoch + 1,
            val_loss.map_or("-".into(), |v| format!("{v:.6}")),
            val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
        );
        // Highest validation accuracy wins, then lower validation loss.
        // Without a validation set the last epoch wins.
        let better = match (&best, val_accuracy, val_loss) {
            (None, ..) => true,
            (Some(_), None, _) => true,
            (Some((_, acc, loss, _)), Some(a), Some(l)) => a > *acc || (a == *acc && l < *loss),
            _ => false,
        };
        if better {
            best = Some((
                epoch + 1,
                val_accuracy.unwrap_or(0.0),
                val_loss.unwrap_or(0.0),
                model.params.clone(),
            ));
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_accuracy,
        });
    }

    let best_epoch = match best {
        Some((epoch, _, _, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    let bytes = checkpoint::encode(&model.params)?;
    model.params.load_records(checkpoint::decode(&bytes)?)?;
    Ok(TrainOutcome {
        model,
        checkpoint: bytes,
        history,
        best_epoch,
        first_epoch_losses,
    })
}

/// Wall-clock seconds of `f`.
pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}
