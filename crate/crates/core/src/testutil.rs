//! Helpers shared by unit tests.

use crate::error::Result;
use crate::rng::PortableRng;
use crate::tensor::{Graph, Tensor, Var};

pub fn rng(seed: u64) -> PortableRng {
    PortableRng::new(seed)
}

pub fn random_tensor(rng: &mut PortableRng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Largest `|analytic − numeric| / (|numeric| + 1e-8)` over every element
/// of every input, using central differences with step `eps`.
pub fn fd_max_rel_error<F>(inputs: &[Tensor], eps: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = f(&mut g, &vars).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();

    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item()
    };

    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        for e in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[e] += eps;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[e] -= eps;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
            let a = analytic[which].data()[e];
            worst = worst.max((a - numeric).abs() / (numeric.abs() + 1e-8));
        }
    }
    worst
}

/// Same check as [`fd_max_rel_error`] but over every parameter in `store`.
pub fn fd_params_max_rel_error<F>(store: &crate::tensor::ParamStore, eps: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &crate::tensor::ParamStore) -> Result<Var>,
{
    fd_params_max_rel_error_with_floor(store, eps, 1e-8, f)
}

/// Whole-model checks see many gradients near 1e-9 where central
/// differences carry no significant digits, so they pass a larger floor.
pub fn fd_params_max_rel_error_with_floor<F>(store: &crate::tensor::ParamStore, eps: f64, floor: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &crate::tensor::ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store).unwrap();
    g.backward(loss).unwrap();
    let eval = |s: &crate::tensor::ParamStore| {
        let mut g = Graph::inference(crate::tensor::Precision::F64);
        let out = f(&mut g, s).unwrap();
        g.value(out).item()
    };
    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    for id in store.ids() {
        let analytic = g
            .param_grad(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape().to_vec()));
        for e in 0..store.get(id).numel() {
            let orig = store.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + eps;
            let plus = eval(&work);
            work.get_mut(id).data_mut()[e] = orig - eps;
            let minus = eval(&work);
            work.get_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max((analytic.data()[e] - numeric).abs() / (numeric.abs() + floor));
        }
    }
    worst
}

pub fn tiny_config() -> crate::fusion::ModelConfig {
    crate::fusion::ModelConfig {
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
        ..Default::default()
    }
}

pub fn random_sample(
    r: &mut PortableRng,
    cfg: &crate::fusion::ModelConfig,
    lens: (usize, usize, usize),
    label: usize,
) -> crate::data::UtteranceSample {
    let mut seq = |t: usize, d: usize| {
        let v = random_tensor(r, &[t, d]);
        crate::data::FeatureSequence::new(t, d, v.into_data()).unwrap()
    };
    crate::data::UtteranceSample {
        id: format!("s{label}"),
        label,
        audio: Some(seq(lens.0, cfg.audio_dim)),
        text: Some(seq(lens.1, cfg.text_dim)),
        visual: Some(seq(lens.2, cfg.visual_dim)),
    }
}
