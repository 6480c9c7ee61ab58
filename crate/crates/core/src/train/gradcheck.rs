//! Finite-difference check of the full training objective.

use std::fmt::Write as _;

use super::trainer::batch_objective;
use super::ExperimentConfig;
use crate::data::{generate, SynthSpec, UtteranceSample};
use crate::error::{Error, Result};
use crate::fusion::{ModelConfig, WavFusionModel};
use crate::tensor::{Graph, OpKind, Precision, Tensor};

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Relative error is `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            eps: 1e-4,
            tolerance: 1e-3,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

/// Layer a parameter belongs to: its name without the last component.
pub fn layer_of(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(layer, _)| layer)
}

impl GradcheckReport {
    pub fn worst(&self) -> &ParamCheck {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
            .expect("model has parameters")
    }

    pub fn max_rel_error(&self) -> f64 {
        self.worst().max_rel_error
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    /// Maximum relative error per layer, in parameter order.
    pub fn layers(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = Vec::new();
        for p in &self.params {
            let layer = layer_of(&p.name);
            match out.iter_mut().find(|(l, _)| l == layer) {
                Some((_, e)) => *e = e.max(p.max_rel_error),
                None => out.push((layer.to_string(), p.max_rel_error)),
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# layer\tmax_rel_error\n");
        for (layer, e) in self.layers() {
            let _ = writeln!(s, "{layer}\t{e:.3e}");
        }
        let worst = self.worst();
        let _ = writeln!(s, "\nparameters = {}", self.params.len());
        let _ = writeln!(s, "tolerance = {:e}", self.tolerance);
        let _ = writeln!(s, "max-rel-error = {:.3e}", worst.max_rel_error);
        let _ = writeln!(s, "worst-parameter = {}", worst.name);
        let _ = writeln!(s, "worst-layer = {}", layer_of(&worst.name));
        let _ = writeln!(s, "status = {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

/// Default small setup: `d = 8`, two shallow and one deep layer, trimodal,
/// `λ = 1`, `α = 0.5`, four utterances with at most 6 frames.
pub fn tiny_setup(seed: u64) -> (ExperimentConfig, Vec<UtteranceSample>) {
    let spec = SynthSpec {
        classes: 2,
        samples_per_class: 2,
        dims: [5, 4, 3],
        lengths: [(3, 6), (2, 4), (2, 5)],
        seed,
        ..SynthSpec::default()
    };
    let samples = generate(&spec).expect("valid spec");
    let config = ExperimentConfig {
        model: ModelConfig {
            d_model: 8,
            heads: 2,
            n_shallow: 2,
            n_deep: 1,
            lvc_codewords: 3,
            conv_kernel: 3,
            audio_dim: 5,
            text_dim: 4,
            visual_dim: 3,
            classes: 3,
            ..ModelConfig::default()
        },
        seed,
        batch_size: 4,
        ..ExperimentConfig::default()
    };
    (config, samples)
}

pub fn gradcheck(
    config: &ExperimentConfig,
    samples: &[UtteranceSample],
    options: &GradcheckOptions,
) -> Result<GradcheckReport> {
    run(config, samples, options, None)
}

/// [`gradcheck`] with the adjoint of every `kind` node scaled by `factor`
/// in the analytic pass. Exists to show the check catches a broken adjoint.
#[doc(hidden)]
pub fn gradcheck_with_fault(
    config: &ExperimentConfig,
    samples: &[UtteranceSample],
    options: &GradcheckOptions,
    kind: OpKind,
    factor: f64,
) -> Result<GradcheckReport> {
    run(config, samples, options, Some((kind, factor)))
}

fn run(
    config: &ExperimentConfig,
    samples: &[UtteranceSample],
    options: &GradcheckOptions,
    fault: Option<(OpKind, f64)>,
) -> Result<GradcheckReport> {
    config.validate()?;
    if config.precision != Precision::F64 {
        return Err(Error::Config("gradcheck needs precision f64".into()));
    }
    if samples.is_empty() {
        return Err(Error::Data("gradcheck needs at least one sample".into()));
    }
    let batch: Vec<&UtteranceSample> = samples.iter().collect();
    let mut model = WavFusionModel::new(config.model.clone(), config.seed)?;

    let mut g = Graph::new();
    if let Some((kind, factor)) = fault {
        g.inject_adjoint_fault(kind, factor);
    }
    let obj = batch_objective(&mut g, &model, &batch, config.modalities, &config.loss)?;
    g.backward(obj.total)?;
    let analytic: Vec<Tensor> = model
        .params
        .iter()
        .map(|(id, p)| {
            g.param_grad(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()))
        })
        .collect();
    drop(g);

    let eval = |model: &WavFusionModel| -> Result<f64> {
        let mut g = Graph::inference(Precision::F64);
        let obj = batch_objective(&mut g, model, &batch, config.modalities, &config.loss)?;
        Ok(g.value(obj.total).item())
    };

    let mut params = Vec::with_capacity(analytic.len());
    for id in model.params.ids() {
        let name = model.params.name(id).to_string();
        let (mut rel, mut abs) = (0.0f64, 0.0f64);
        for e in 0..model.params.get(id).numel() {
            let orig = model.params.get(id).data()[e];
            model.params.get_mut(id).data_mut()[e] = orig + options.eps;
            let plus = eval(&model)?;
            model.params.get_mut(id).data_mut()[e] = orig - options.eps;
            let minus = eval(&model)?;
            model.params.get_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * options.eps);
            let a = analytic[id.index()].data()[e];
            let diff = (a - numeric).abs();
            abs = abs.max(diff);
            rel = rel.max(diff / a.abs().max(numeric.abs()).max(options.floor));
        }
        params.push(ParamCheck {
            name,
            max_rel_error: rel,
            max_abs_error: abs,
        });
    }
    Ok(GradcheckReport {
        params,
        tolerance: options.tolerance,
    })
}
