use super::{FusionMode, GateInput, GatePlacement, Modality, ModalityMask, ModelConfig};
use crate::data::UtteranceSample;
use crate::error::{Error, Result};
use crate::layers::{Attention, FeedForward, Gru, Initializer, LayerNorm, Linear, Lvc, LvcOutput};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// GRU → self-attention → projection to the model width.
#[derive(Clone, Debug)]
pub struct TextBranch {
    pub gru: Gru,
    pub attention: Attention,
    pub projection: Linear,
}

pub struct TextOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

impl TextBranch {
    fn new(init: &mut Initializer, store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(TextBranch {
            gru: Gru::new(init, store, "text.gru", cfg.text_dim, d),
            attention: Attention::new(init, store, "text.attn", d, cfg.heads)?,
            projection: Linear::new(init, store, "text.proj", d, d),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e_t: Var) -> Result<TextOutput> {
        let h = self.gru.forward(g, store, e_t)?;
        let sa = self.attention.self_attend(g, store, h)?;
        let output = self.projection.forward(g, store, sa.output)?;
        Ok(TextOutput {
            output,
            attention: sa.weights,
        })
    }
}

/// Global path (GRU → self-attention) beside the local LVC path,
/// concatenated on the feature axis and projected to the model width.
#[derive(Clone, Debug)]
pub struct VisualBranch {
    pub gru: Gru,
    pub attention: Attention,
    pub lvc: Option<Lvc>,
    pub projection: Linear,
}

pub struct VisualOutput {
    pub output: Var,
    pub global: Var,
    pub local: Option<LvcOutput>,
    pub attention: Vec<Var>,
}

impl VisualBranch {
    fn new(init: &mut Initializer, store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        let gru = Gru::new(init, store, "visual.gru", cfg.visual_dim, d);
        let attention = Attention::new(init, store, "visual.attn", d, cfg.heads)?;
        let lvc = if cfg.use_lvc {
            Some(Lvc::new(
                init,
                store,
                "visual.lvc",
                cfg.visual_dim,
                d,
                cfg.lvc_codewords,
                cfg.conv_kernel,
            )?)
        } else {
            None
        };
        let width = if cfg.use_lvc { 2 * d } else { d };
        Ok(VisualBranch {
            gru,
            attention,
            lvc,
            projection: Linear::new(init, store, "visual.proj", width, d),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e_v: Var) -> Result<VisualOutput> {
        let h = self.gru.forward(g, store, e_v)?;
        let sa = self.attention.self_attend(g, store, h)?;
        let global = sa.output;
        let (joined, local) = match &self.lvc {
            Some(lvc) => {
                let local = lvc.forward(g, store, e_v)?;
                (g.concat_last(global, local.output)?, Some(local))
            }
            None => (global, None),
        };
        let output = self.projection.forward(g, store, joined)?;
        Ok(VisualOutput {
            output,
            global,
            local,
            attention: sa.weights,
        })
    }
}

/// Post-norm transformer layer: `y = LN(x + SA(x))`, `out = LN(y + FF(y))`.
#[derive(Clone, Debug)]
pub struct ShallowLayer {
    pub attention: Attention,
    pub norm_attn: LayerNorm,
    pub ff: FeedForward,
    pub norm_ff: LayerNorm,
}

impl ShallowLayer {
    fn new(init: &mut Initializer, store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(ShallowLayer {
            attention: Attention::new(init, store, &format!("{name}.attn"), d, cfg.heads)?,
            norm_attn: LayerNorm::new(init, store, &format!("{name}.norm_attn"), d),
            ff: FeedForward::new(init, store, &format!("{name}.ff"), d),
            norm_ff: LayerNorm::new(init, store, &format!("{name}.norm_ff"), d),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, attn_log: &mut Vec<Var>) -> Result<Var> {
        let sa = self.attention.self_attend(g, store, x)?;
        attn_log.extend(sa.weights);
        let res = g.add(x, sa.output)?;
        let y = self.norm_attn.forward(g, store, res)?;
        feed_forward_block(g, store, &self.ff, &self.norm_ff, y)
    }
}

fn feed_forward_block(g: &mut Graph, store: &ParamStore, ff: &FeedForward, norm: &LayerNorm, x: Var) -> Result<Var> {
    let h = ff.forward(g, store, x)?;
    let res = g.add(x, h)?;
    norm.forward(g, store, res)
}

pub struct CrossOutput {
    /// `LN(X_a + attention)`, the augmented audio stream.
    pub output: Var,
    /// Attention result before the residual connection.
    pub attended: Var,
    pub weights: Vec<Var>,
}

/// Audio-queried attention over an auxiliary stream with a residual
/// connection and layer norm. Output length follows `x_a`.
pub fn cross_modal_attention(
    g: &mut Graph,
    store: &ParamStore,
    attention: &Attention,
    norm: &LayerNorm,
    x_a: Var,
    x_aux: Var,
) -> Result<CrossOutput> {
    if g.shape(x_a).get(1) != g.shape(x_aux).get(1) {
        return Err(Error::dim("cross_modal_attention", g.shape(x_a), g.shape(x_aux)));
    }
    let att = attention.attend(g, store, x_a, x_aux)?;
    let res = g.add(x_a, att.output)?;
    let output = norm.forward(g, store, res)?;
    Ok(CrossOutput {
        output,
        attended: att.output,
        weights: att.weights,
    })
}

/// `P = σ(gate(X_F1 ⊕ X_F2))`, `X_F = P ⊙ X_F1 + (1 − P) ⊙ X_F2`.
///
/// Returns `(X_F, P)`.
pub fn gated_fuse(
    g: &mut Graph,
    store: &ParamStore,
    gate: &Linear,
    f1: Var,
    f2: Var,
    input: GateInput,
) -> Result<(Var, Var)> {
    if g.shape(f1) != g.shape(f2) {
        return Err(Error::dim("gated_fuse", g.shape(f1), g.shape(f2)));
    }
    let joined = match input {
        GateInput::TextVisual => g.concat_last(f1, f2)?,
        GateInput::TextOnly => g.concat_last(f1, f1)?,
    };
    let logits = gate.forward(g, store, joined)?;
    let p = g.sigmoid(logits);
    let keep = g.mul(p, f1)?;
    let q = g.one_minus(p);
    let other = g.mul(q, f2)?;
    Ok((g.add(keep, other)?, p))
}

/// Transformer layer whose self-attention is replaced by two cross-modal
/// attention blocks and a gate.
#[derive(Clone, Debug)]
pub struct DeepLayer {
    pub cm_text: Attention,
    pub norm_text: LayerNorm,
    pub cm_visual: Attention,
    pub norm_visual: LayerNorm,
    pub gate: Linear,
    pub ff: FeedForward,
    pub norm_ff: LayerNorm,
}

#[derive(Clone, Debug, Default)]
pub struct DeepTrace {
    pub f1: Option<Var>,
    pub f2: Option<Var>,
    pub gate: Option<Var>,
    pub fused: Option<Var>,
    /// One output per stream leaving the layer.
    pub outputs: Vec<Var>,
}

impl DeepLayer {
    fn new(init: &mut Initializer, store: &mut ParamStore, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(DeepLayer {
            cm_text: Attention::new(init, store, &format!("{name}.cm_text"), d, cfg.heads)?,
            norm_text: LayerNorm::new(init, store, &format!("{name}.norm_text"), d),
            cm_visual: Attention::new(init, store, &format!("{name}.cm_visual"), d, cfg.heads)?,
            norm_visual: LayerNorm::new(init, store, &format!("{name}.norm_visual"), d),
            gate: Linear::new(init, store, &format!("{name}.gate"), 2 * d, d),
            ff: FeedForward::new(init, store, &format!("{name}.ff"), d),
            norm_ff: LayerNorm::new(init, store, &format!("{name}.norm_ff"), d),
        })
    }

    /// Single-stream pass. Missing auxiliaries degrade the layer: one
    /// auxiliary skips the gate, none turns it into self-attention.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        state: Var,
        text: Option<Var>,
        visual: Option<Var>,
        gate_input: GateInput,
        attn_log: &mut Vec<Var>,
    ) -> Result<DeepTrace> {
        let mut trace = DeepTrace::default();
        let fused = match (text, visual) {
            (Some(t), Some(v)) => {
                let f1 = cross_modal_attention(g, store, &self.cm_text, &self.norm_text, state, t)?;
                let f2 = cross_modal_attention(g, store, &self.cm_visual, &self.norm_visual, state, v)?;
                attn_log.extend(f1.weights.iter().chain(&f2.weights));
                let (xf, p) = gated_fuse(g, store, &self.gate, f1.output, f2.output, gate_input)?;
                trace.f1 = Some(f1.output);
                trace.f2 = Some(f2.output);
                trace.gate = Some(p);
                xf
            }
            (Some(t), None) => {
                let f1 = cross_modal_attention(g, store, &self.cm_text, &self.norm_text, state, t)?;
                attn_log.extend(f1.weights);
                trace.f1 = Some(f1.output);
                f1.output
            }
            (None, Some(v)) => {
                let f2 = cross_modal_attention(g, store, &self.cm_visual, &self.norm_visual, state, v)?;
                attn_log.extend(f2.weights);
                trace.f2 = Some(f2.output);
                f2.output
            }
            (None, None) => {
                let sa = cross_modal_attention(g, store, &self.cm_text, &self.norm_text, state, state)?;
                attn_log.extend(sa.weights);
                sa.output
            }
        };
        trace.fused = Some(fused);
        trace.outputs = vec![feed_forward_block(g, store, &self.ff, &self.norm_ff, fused)?];
        Ok(trace)
    }

    /// Two-stream pass for final-layer gating: the text and visual streams
    /// stay apart until `last`, where they are gated into one.
    #[allow(clippy::too_many_arguments)]
    fn forward_streams(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        streams: (Var, Var),
        text: Var,
        visual: Var,
        gate_input: GateInput,
        last: bool,
        attn_log: &mut Vec<Var>,
    ) -> Result<DeepTrace> {
        let f1 = cross_modal_attention(g, store, &self.cm_text, &self.norm_text, streams.0, text)?;
        let f2 = cross_modal_attention(g, store, &self.cm_visual, &self.norm_visual, streams.1, visual)?;
        attn_log.extend(f1.weights.iter().chain(&f2.weights));
        let mut trace = DeepTrace {
            f1: Some(f1.output),
            f2: Some(f2.output),
            ..DeepTrace::default()
        };
        if last {
            let (xf, p) = gated_fuse(g, store, &self.gate, f1.output, f2.output, gate_input)?;
            trace.gate = Some(p);
            trace.fused = Some(xf);
            trace.outputs = vec![feed_forward_block(g, store, &self.ff, &self.norm_ff, xf)?];
        } else {
            trace.outputs = vec![
                feed_forward_block(g, store, &self.ff, &self.norm_ff, f1.output)?,
                feed_forward_block(g, store, &self.ff, &self.norm_ff, f2.output)?,
            ];
        }
        Ok(trace)
    }
}

/// Per-modality values, indexed by [`Modality`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerModality<T> {
    pub audio: Option<T>,
    pub text: Option<T>,
    pub visual: Option<T>,
}

impl<T> Default for PerModality<T> {
    fn default() -> Self {
        PerModality {
            audio: None,
            text: None,
            visual: None,
        }
    }
}

impl<T: Copy> PerModality<T> {
    pub fn get(&self, m: Modality) -> Option<T> {
        match m {
            Modality::Audio => self.audio,
            Modality::Text => self.text,
            Modality::Visual => self.visual,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, T)> + '_ {
        Modality::ALL.into_iter().filter_map(|m| self.get(m).map(|v| (m, v)))
    }
}

/// Intermediate activations of one forward pass.
pub struct FusionTrace {
    pub mask: ModalityMask,
    /// Audio stream after the shallow layers, `[T_a×d]`.
    pub audio: Option<Var>,
    /// Text branch output, `[T_t×d]`.
    pub text: Option<Var>,
    /// Visual branch output, `[T_v×d]`.
    pub visual: Option<Var>,
    /// Visual global path before concatenation, `[T_v×d]`.
    pub visual_global: Option<Var>,
    pub visual_local: Option<LvcOutput>,
    pub deep: Vec<DeepTrace>,
    /// Classifier input, `[1×d]`.
    pub pooled: Var,
    /// `[1×c]`.
    pub logits: Var,
    /// Shared-encoder embeddings of the unfused streams, each `[1×d]`.
    pub common: PerModality<Var>,
    /// Every attention weight matrix computed on the way.
    pub attention: Vec<Var>,
}

impl FusionTrace {
    pub fn recorded(&self) -> Vec<Var> {
        let mut vars: Vec<Var> = [self.audio, self.text, self.visual, self.visual_global]
            .into_iter()
            .flatten()
            .collect();
        if let Some(l) = &self.visual_local {
            vars.extend([l.output, l.stem, l.assignments, l.descriptor, l.gate]);
        }
        for d in &self.deep {
            vars.extend([d.f1, d.f2, d.gate, d.fused].into_iter().flatten());
            vars.extend(&d.outputs);
        }
        vars.extend([self.pooled, self.logits]);
        vars.extend(self.common.iter().map(|(_, v)| v));
        vars.extend(&self.attention);
        vars
    }

    pub fn all_finite(&self, g: &Graph) -> bool {
        self.recorded().into_iter().all(|v| g.value(v).is_finite())
    }
}

/// The full network: auxiliary branches, shallow and deep transformer
/// stacks over the audio stream, shared encoder, and classifier.
#[derive(Clone, Debug)]
pub struct WavFusionModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub audio_projection: Linear,
    pub text: TextBranch,
    pub visual: VisualBranch,
    pub shallow: Vec<ShallowLayer>,
    pub deep: Vec<DeepLayer>,
    pub concat_projection: Option<Linear>,
    pub shared: Linear,
    pub classifier: Linear,
}

impl WavFusionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Initializer::new(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let audio_projection = Linear::new(&mut init, &mut store, "audio.proj", config.audio_dim, d);
        let text = TextBranch::new(&mut init, &mut store, &config)?;
        let visual = VisualBranch::new(&mut init, &mut store, &config)?;
        let shallow = (0..config.n_shallow)
            .map(|i| ShallowLayer::new(&mut init, &mut store, &format!("shallow.{i}"), &config))
            .collect::<Result<Vec<_>>>()?;
        let deep = (0..config.n_deep)
            .map(|i| DeepLayer::new(&mut init, &mut store, &format!("deep.{i}"), &config))
            .collect::<Result<Vec<_>>>()?;
        let concat_projection =
            (config.fusion == FusionMode::Concat).then(|| Linear::new(&mut init, &mut store, "concat.proj", 3 * d, d));
        let shared = Linear::new(&mut init, &mut store, "shared", d, d);
        let classifier = Linear::new(&mut init, &mut store, "classifier", d, config.classes);
        Ok(WavFusionModel {
            config,
            params: store,
            audio_projection,
            text,
            visual,
            shallow,
            deep,
            concat_projection,
            shared,
            classifier,
        })
    }

    /// Names of parameters belonging to the audio projection and shallow
    /// stack.
    pub fn is_shallow_param(name: &str) -> bool {
        name.starts_with("audio.proj.") || name.starts_with("shallow.")
    }

    fn input(&self, g: &mut Graph, sample: &UtteranceSample, m: Modality) -> Result<Var> {
        let seq = sample.require(m)?;
        let expected = match m {
            Modality::Audio => self.config.audio_dim,
            Modality::Text => self.config.text_dim,
            Modality::Visual => self.config.visual_dim,
        };
        if seq.dim() != expected {
            return Err(Error::Data(format!(
                "utterance {}: {} features have dim {}, model expects {expected}",
                sample.id,
                m.name(),
                seq.dim()
            )));
        }
        Ok(g.constant(seq.values().clone()))
    }

    pub fn text_branch(&self, g: &mut Graph, e_t: Var) -> Result<TextOutput> {
        self.text.forward(g, &self.params, e_t)
    }

    pub fn visual_branch(&self, g: &mut Graph, e_v: Var) -> Result<VisualOutput> {
        self.visual.forward(g, &self.params, e_v)
    }

    /// Audio projection followed by the shallow stack.
    pub fn audio_encoder(&self, g: &mut Graph, s_a: Var, attn_log: &mut Vec<Var>) -> Result<Var> {
        let mut x = self.audio_projection.forward(g, &self.params, s_a)?;
        for layer in &self.shallow {
            x = layer.forward(g, &self.params, x, attn_log)?;
        }
        Ok(x)
    }

    pub fn forward(&self, g: &mut Graph, sample: &UtteranceSample, mask: ModalityMask) -> Result<FusionTrace> {
        if mask.count() == 0 {
            return Err(Error::Config("modality mask selects nothing".into()));
        }
        let store = &self.params;
        let mut attention = Vec::new();

        let text = if mask.text {
            let e_t = self.input(g, sample, Modality::Text)?;
            let out = self.text_branch(g, e_t)?;
            attention.extend(out.attention);
            Some(out.output)
        } else {
            None
        };
        let (visual, visual_global, visual_local) = if mask.visual {
            let e_v = self.input(g, sample, Modality::Visual)?;
            let out = self.visual_branch(g, e_v)?;
            attention.extend(out.attention);
            (Some(out.output), Some(out.global), out.local)
        } else {
            (None, None, None)
        };
        let audio = if mask.audio {
            let s_a = self.input(g, sample, Modality::Audio)?;
            Some(self.audio_encoder(g, s_a, &mut attention)?)
        } else {
            None
        };

        let mut deep = Vec::new();
        let pooled = match (self.config.fusion, audio) {
            (FusionMode::Concat, _) => {
                let proj = self.concat_projection.as_ref().expect("concat projection");
                let mut parts = Vec::with_capacity(3);
                for stream in [audio, text, visual] {
                    parts.push(match stream {
                        Some(x) => g.mean_rows(x)?,
                        None => g.constant(Tensor::zeros(vec![1, self.config.d_model])),
                    });
                }
                let at = g.concat_last(parts[0], parts[1])?;
                let atv = g.concat_last(at, parts[2])?;
                proj.forward(g, store, atv)?
            }
            (FusionMode::CrossAttention, Some(x_a)) => {
                let last = self.deep_stack(g, x_a, text, visual, &mut deep, &mut attention)?;
                g.mean_rows(last)?
            }
            (FusionMode::CrossAttention, None) => {
                let pooled: Vec<Var> = [text, visual]
                    .into_iter()
                    .flatten()
                    .map(|x| g.mean_rows(x))
                    .collect::<Result<_>>()?;
                match pooled[..] {
                    [one] => one,
                    [a, b] => {
                        let s = g.add(a, b)?;
                        g.scale(s, 0.5)
                    }
                    _ => unreachable!("mask has at least one auxiliary"),
                }
            }
        };
        let logits = self.classifier.forward(g, store, pooled)?;

        let mut trace = FusionTrace {
            mask,
            audio,
            text,
            visual,
            visual_global,
            visual_local,
            deep,
            pooled,
            logits,
            common: PerModality::default(),
            attention,
        };
        trace.common = self.shared_encode(g, &trace)?;
        Ok(trace)
    }

    fn deep_stack(
        &self,
        g: &mut Graph,
        x_a: Var,
        text: Option<Var>,
        visual: Option<Var>,
        traces: &mut Vec<DeepTrace>,
        attn_log: &mut Vec<Var>,
    ) -> Result<Var> {
        let store = &self.params;
        let gate_input = self.config.gate_input;
        match (self.config.gate_placement, text, visual) {
            (GatePlacement::FinalLayer, Some(t), Some(v)) if !self.deep.is_empty() => {
                let mut streams = (x_a, x_a);
                let n = self.deep.len();
                for (i, layer) in self.deep.iter().enumerate() {
                    let tr = layer.forward_streams(g, store, streams, t, v, gate_input, i + 1 == n, attn_log)?;
                    if let [a, b] = tr.outputs[..] {
                        streams = (a, b);
                    } else {
                        streams = (tr.outputs[0], tr.outputs[0]);
                    }
                    traces.push(tr);
                }
                Ok(streams.0)
            }
            _ => {
                let mut state = x_a;
                for layer in &self.deep {
                    let tr = layer.forward(g, store, state, text, visual, gate_input, attn_log)?;
                    state = tr.outputs[0];
                    traces.push(tr);
                }
                Ok(state)
            }
        }
    }

    /// Mean-pools each unfused stream and maps it through the one shared
    /// linear encoder.
    pub fn shared_encode(&self, g: &mut Graph, trace: &FusionTrace) -> Result<PerModality<Var>> {
        let mut encode = |x: Option<Var>| -> Result<Option<Var>> {
            x.map(|x| {
                let pooled = g.mean_rows(x)?;
                self.shared.forward(g, &self.params, pooled)
            })
            .transpose()
        };
        Ok(PerModality {
            audio: encode(trace.audio)?,
            text: encode(trace.text)?,
            visual: encode(trace.visual)?,
        })
    }

    /// Index of the largest logit.
    pub fn predict(&self, sample: &UtteranceSample, mask: ModalityMask) -> Result<usize> {
        let mut g = Graph::inference(Default::default());
        let trace = self.forward(&mut g, sample, mask)?;
        Ok(argmax(g.value(trace.logits).data()))
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
