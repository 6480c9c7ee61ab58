use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which modalities a forward pass uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModalityMask {
    pub audio: bool,
    pub text: bool,
    pub visual: bool,
}

impl ModalityMask {
    pub const ALL: ModalityMask = ModalityMask {
        audio: true,
        text: true,
        visual: true,
    };
    pub const AUDIO: ModalityMask = ModalityMask {
        audio: true,
        text: false,
        visual: false,
    };

    /// Rows of the modality ablation in reporting order.
    pub fn ablation_rows() -> [ModalityMask; 6] {
        ["A", "T", "V", "A+T", "A+V", "A+V+T"].map(|s| s.parse().expect("valid mask"))
    }

    pub fn count(&self) -> usize {
        self.audio as usize + self.text as usize + self.visual as usize
    }

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Audio => self.audio,
            Modality::Text => self.text,
            Modality::Visual => self.visual,
        }
    }

    pub fn modalities(&self) -> impl Iterator<Item = Modality> + '_ {
        Modality::ALL.into_iter().filter(|m| self.contains(*m))
    }
}

impl FromStr for ModalityMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut mask = ModalityMask {
            audio: false,
            text: false,
            visual: false,
        };
        for part in s.split('+') {
            let slot = match part.trim() {
                "A" | "a" => &mut mask.audio,
                "T" | "t" => &mut mask.text,
                "V" | "v" => &mut mask.visual,
                other => return Err(Error::Config(format!("unknown modality {other:?} in mask {s:?}"))),
            };
            if *slot {
                return Err(Error::Config(format!("modality repeated in mask {s:?}")));
            }
            *slot = true;
        }
        Ok(mask)
    }
}

impl fmt::Display for ModalityMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.audio {
            parts.push("A");
        }
        if self.visual {
            parts.push("V");
        }
        if self.text {
            parts.push("T");
        }
        f.write_str(&parts.join("+"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Audio,
    Text,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Audio, Modality::Text, Modality::Visual];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
            Modality::Visual => "visual",
        }
    }

    pub fn tag(self) -> char {
        match self {
            Modality::Audio => 'a',
            Modality::Text => 't',
            Modality::Visual => 'v',
        }
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "audio" => Ok(Modality::Audio),
            "t" | "text" => Ok(Modality::Text),
            "v" | "visual" => Ok(Modality::Visual),
            _ => Err(Error::Data(format!("unknown modality {s:?}"))),
        }
    }
}

/// How the audio stream meets the auxiliary streams.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FusionMode {
    /// Deep layers with cross-modal attention and gating.
    #[default]
    CrossAttention,
    /// No deep layers; pooled streams are concatenated and projected.
    Concat,
}

/// What the gate's linear layer sees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GateInput {
    /// `X_F1 ⊕ X_F2`.
    #[default]
    TextVisual,
    /// `X_F1 ⊕ X_F1`, the gate never sees the visual stream.
    TextOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GatePlacement {
    /// Gate inside every deep layer; the gated result feeds the next layer.
    #[default]
    PerLayer,
    /// Text- and visual-augmented streams run through the deep stack
    /// separately and are gated once in the last deep layer.
    FinalLayer,
}

macro_rules! keyword_enum {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), s
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(FusionMode, "cross-attention" => FusionMode::CrossAttention, "concat" => FusionMode::Concat);
keyword_enum!(GateInput, "f1-f2" => GateInput::TextVisual, "f1-f1" => GateInput::TextOnly);
keyword_enum!(GatePlacement, "per-layer" => GatePlacement::PerLayer, "final-layer" => GatePlacement::FinalLayer);

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub n_shallow: usize,
    pub n_deep: usize,
    pub lvc_codewords: usize,
    pub conv_kernel: usize,
    pub use_lvc: bool,
    pub fusion: FusionMode,
    pub gate_input: GateInput,
    pub gate_placement: GatePlacement,
    pub audio_dim: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            heads: 4,
            n_shallow: 9,
            n_deep: 3,
            lvc_codewords: 8,
            conv_kernel: 3,
            use_lvc: true,
            fusion: FusionMode::CrossAttention,
            gate_input: GateInput::TextVisual,
            gate_placement: GatePlacement::PerLayer,
            audio_dim: 768,
            text_dim: 768,
            visual_dim: 64,
            classes: 6,
        }
    }
}

impl ModelConfig {
    pub fn total_layers(&self) -> usize {
        self.n_shallow + self.n_deep
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "d-model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.lvc_codewords == 0 {
            return fail("lvc-codewords must be at least 1".into());
        }
        if self.conv_kernel.is_multiple_of(2) {
            return fail(format!("conv-kernel must be odd, got {}", self.conv_kernel));
        }
        if self.audio_dim == 0 || self.text_dim == 0 || self.visual_dim == 0 {
            return fail("input feature dims must be positive".into());
        }
        if self.fusion == FusionMode::Concat && self.n_deep != 0 {
            return fail(format!("concat fusion has no deep layers, got n-deep {}", self.n_deep));
        }
        Ok(())
    }
}
