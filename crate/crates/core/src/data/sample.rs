use crate::error::{Error, Result};
use crate::fusion::{Modality, ModalityMask};
use crate::tensor::Tensor;

/// Per-utterance feature matrix `[T×D]`, `T ≥ 1`, `D ≥ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    values: Tensor,
}

impl FeatureSequence {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::Data(format!("empty feature sequence {frames}×{dim}")));
        }
        Ok(FeatureSequence {
            values: Tensor::new(vec![frames, dim], data)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn data(&self) -> &[f64] {
        self.values.data()
    }
}

/// One labelled utterance with up to three modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceSample {
    pub id: String,
    pub label: usize,
    pub audio: Option<FeatureSequence>,
    pub text: Option<FeatureSequence>,
    pub visual: Option<FeatureSequence>,
}

impl UtteranceSample {
    pub fn get(&self, m: Modality) -> Option<&FeatureSequence> {
        match m {
            Modality::Audio => self.audio.as_ref(),
            Modality::Text => self.text.as_ref(),
            Modality::Visual => self.visual.as_ref(),
        }
    }

    pub fn require(&self, m: Modality) -> Result<&FeatureSequence> {
        self.get(m)
            .ok_or_else(|| Error::Data(format!("utterance {} has no {} features", self.id, m.name())))
    }

    pub fn available(&self) -> ModalityMask {
        ModalityMask {
            audio: self.audio.is_some(),
            text: self.text.is_some(),
            visual: self.visual.is_some(),
        }
    }
}
