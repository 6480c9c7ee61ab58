use super::Initializer;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Affine map `xW + b` over the last dimension.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(init: &mut Initializer, store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: init.matrix(store, &format!("{name}.weight"), d_in, d_out),
            bias: init.zeros(store, &format!("{name}.bias"), &[d_out]),
            d_in,
            d_out,
        }
    }

    /// `x` is `[T×d_in]`; returns `[T×d_out]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        if g.shape(x).len() != 2 || g.shape(x)[1] != self.d_in {
            return Err(Error::dim("linear", g.shape(x), &[self.d_in, self.d_out]));
        }
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}
