//! Seeded synthetic trimodal dataset.
//!
//! For each class `k` and modality `m` a mean vector `μ_m·n` is drawn with
//! `n ~ N(0, I)`. Each utterance draws one latent `z ~ N(0, I_L)` shared by
//! its modalities; frame `t` of modality `m` is
//!
//! ```text
//! x_t = mean[k][m] + ρ·(R_m z) + σ·ε_t,   ε_t ~ N(0, I)
//! ```
//!
//! where `R_m` is a fixed random `[D_m×L]` map with entries `N(0, 1/L)`.
//! Values are rounded to `f32` so the in-memory dataset equals what the
//! feature files hold.
//!
//! Randomness: stream 0 of the seed draws class means then the `R_m`; the
//! utterance with index `i` uses stream `i + 1` for its length, latent and
//! noise, so utterances can be generated in any order.

use std::path::Path;

use super::{manifest, FeatureSequence, UtteranceSample};
use crate::error::{Error, Result};
use crate::fusion::Modality;
use crate::rng::PortableRng;

const LATENT_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    /// Feature dimension per modality, audio/text/visual.
    pub dims: [usize; 3],
    /// Inclusive sequence-length range per modality.
    pub lengths: [(usize, usize); 3],
    /// Class separation `μ` per modality.
    pub separation: [f64; 3],
    /// Weight `ρ ∈ [0, 1]` of the cross-modal shared latent.
    pub correlation: f64,
    /// Frame noise scale `σ`.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 4,
            samples_per_class: 50,
            dims: [12, 12, 8],
            lengths: [(4, 8), (2, 5), (3, 6)],
            separation: [1.0; 3],
            correlation: 0.3,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Config("synthetic dataset needs at least one class".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config(
                "synthetic dataset needs at least one sample per class".into(),
            ));
        }
        if self.dims.contains(&0) {
            return Err(Error::Config(format!(
                "feature dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.lengths.iter().any(|&(lo, hi)| lo == 0 || lo > hi) {
            return Err(Error::Config(format!("invalid length ranges {:?}", self.lengths)));
        }
        let scales = self.separation.iter().chain([&self.noise, &self.correlation]);
        if scales.clone().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config(
                "separation, noise and correlation must be finite and >= 0".into(),
            ));
        }
        if self.correlation > 1.0 {
            return Err(Error::Config(format!(
                "correlation must be in [0, 1], got {}",
                self.correlation
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes * self.samples_per_class
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn normal_vec(rng: &mut PortableRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.normal()).collect()
}

/// Generates the dataset in memory. Utterance `i` has id `u{i:05}` and label
/// `i / samples_per_class`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<UtteranceSample>> {
    spec.validate()?;
    let mut base = PortableRng::with_stream(spec.seed, 0);
    let means: Vec<[Vec<f64>; 3]> = (0..spec.classes)
        .map(|_| Modality::ALL.map(|m| normal_vec(&mut base, spec.dims[m as usize], spec.separation[m as usize])))
        .collect();
    let mixes: [Vec<f64>; 3] = Modality::ALL.map(|m| {
        normal_vec(
            &mut base,
            spec.dims[m as usize] * LATENT_DIM,
            (LATENT_DIM as f64).recip().sqrt(),
        )
    });

    let mut samples = Vec::with_capacity(spec.len());
    for i in 0..spec.len() {
        let label = i / spec.samples_per_class;
        let mut rng = PortableRng::with_stream(spec.seed, i as u64 + 1);
        let latent = normal_vec(&mut rng, LATENT_DIM, 1.0);
        let mut seqs = Modality::ALL.map(|m| {
            let mi = m as usize;
            let d = spec.dims[mi];
            let (lo, hi) = spec.lengths[mi];
            let frames = rng.range_inclusive(lo, hi);
            let shared: Vec<f64> = (0..d)
                .map(|r| {
                    (0..LATENT_DIM)
                        .map(|l| mixes[mi][r * LATENT_DIM + l] * latent[l])
                        .sum::<f64>()
                })
                .collect();
            let mut data = Vec::with_capacity(frames * d);
            for _ in 0..frames {
                for c in 0..d {
                    let v = means[label][mi][c] + spec.correlation * shared[c] + spec.noise * rng.normal();
                    data.push(v as f32 as f64);
                }
            }
            Some(FeatureSequence::new(frames, d, data))
        });
        let take = |s: &mut Option<Result<FeatureSequence>>| s.take().transpose();
        samples.push(UtteranceSample {
            id: format!("u{i:05}"),
            label,
            audio: take(&mut seqs[0])?,
            text: take(&mut seqs[1])?,
            visual: take(&mut seqs[2])?,
        });
    }
    Ok(samples)
}

/// Generates the dataset and writes `manifest.tsv` and `features/` into `dir`.
pub fn generate_to_dir(spec: &SynthSpec, dir: &Path) -> Result<Vec<UtteranceSample>> {
    let samples = generate(spec)?;
    manifest::write_dataset(dir, &samples)?;
    Ok(samples)
}
