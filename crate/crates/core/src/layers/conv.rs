use super::Initializer;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Same-length 1-D convolution over time.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub kernel_size: usize,
    pub d_in: usize,
    pub d_out: usize,
}

impl Conv1d {
    pub fn new(
        init: &mut Initializer,
        store: &mut ParamStore,
        name: &str,
        kernel_size: usize,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv kernel size must be odd, got {kernel_size}"
            )));
        }
        Ok(Conv1d {
            kernel: init.glorot(
                store,
                &format!("{name}.kernel"),
                &[kernel_size, d_in, d_out],
                kernel_size * d_in,
                kernel_size * d_out,
            ),
            bias: init.zeros(store, &format!("{name}.bias"), &[d_out]),
            kernel_size,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv1d(x, k, b)
    }
}
