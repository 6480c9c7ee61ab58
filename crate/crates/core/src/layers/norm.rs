use super::{Initializer, Linear};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalisation with learnable gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Initializer, store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: init.constant(store, &format!("{name}.gain"), &[d], 1.0),
            bias: init.zeros(store, &format!("{name}.bias"), &[d]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, LAYER_NORM_EPS);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain)?;
        g.add_row(y, bias)
    }
}

/// Position-wise `Linear(d→4d) → tanh → Linear(4d→d)`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Initializer, store: &mut ParamStore, name: &str, d: usize) -> Self {
        FeedForward {
            inner: Linear::new(init, store, &format!("{name}.fc1"), d, 4 * d),
            outer: Linear::new(init, store, &format!("{name}.fc2"), 4 * d, d),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, store, x)?;
        let h = g.tanh(h);
        self.outer.forward(g, store, h)
    }
}
