use super::Initializer;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Single-layer unidirectional GRU starting from a zero hidden state.
///
/// ```text
/// z_t = σ(x_t W_z + h_{t−1} U_z + b_z)
/// r_t = σ(x_t W_r + h_{t−1} U_r + b_r)
/// h̃_t = tanh(x_t W_h + (r_t ⊙ h_{t−1}) U_h + b_h)
/// h_t = (1 − z_t) ⊙ h_{t−1} + z_t ⊙ h̃_t
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub d_in: usize,
    pub d_hidden: usize,
}

impl Gru {
    pub fn new(init: &mut Initializer, store: &mut ParamStore, name: &str, d_in: usize, d_hidden: usize) -> Self {
        let mut m = |s: &str, r, c| init.matrix(store, &format!("{name}.{s}"), r, c);
        let (w_z, w_r, w_h) = (
            m("w_z", d_in, d_hidden),
            m("w_r", d_in, d_hidden),
            m("w_h", d_in, d_hidden),
        );
        let (u_z, u_r, u_h) = (
            m("u_z", d_hidden, d_hidden),
            m("u_r", d_hidden, d_hidden),
            m("u_h", d_hidden, d_hidden),
        );
        let mut b = |s: &str| init.zeros(store, &format!("{name}.{s}"), &[d_hidden]);
        let (b_z, b_r, b_h) = (b("b_z"), b("b_r"), b("b_h"));
        Gru {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            d_in,
            d_hidden,
        }
    }

    /// `x` is `[T×d_in]`; returns every hidden state as `[T×d_hidden]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.d_in {
            return Err(Error::dim("gru", &shape, &[self.d_in, self.d_hidden]));
        }
        let mut input_proj = |w, b| -> Result<Var> {
            let w = g.param(store, w);
            let b = g.param(store, b);
            let xw = g.matmul(x, w)?;
            g.add_row(xw, b)
        };
        let xz = input_proj(self.w_z, self.b_z)?;
        let xr = input_proj(self.w_r, self.b_r)?;
        let xh = input_proj(self.w_h, self.b_h)?;
        let u_z = g.param(store, self.u_z);
        let u_r = g.param(store, self.u_r);
        let u_h = g.param(store, self.u_h);

        let mut h = g.constant(Tensor::zeros(vec![1, self.d_hidden]));
        let mut states = Vec::with_capacity(shape[0]);
        for t in 0..shape[0] {
            let hz = g.matmul(h, u_z)?;
            let xz_t = g.row(xz, t)?;
            let z_in = g.add(xz_t, hz)?;
            let z = g.sigmoid(z_in);

            let hr = g.matmul(h, u_r)?;
            let xr_t = g.row(xr, t)?;
            let r_in = g.add(xr_t, hr)?;
            let r = g.sigmoid(r_in);

            let rh = g.mul(r, h)?;
            let rhu = g.matmul(rh, u_h)?;
            let xh_t = g.row(xh, t)?;
            let c_in = g.add(xh_t, rhu)?;
            let candidate = g.tanh(c_in);

            let keep = g.one_minus(z);
            let old = g.mul(keep, h)?;
            let new = g.mul(z, candidate)?;
            h = g.add(old, new)?;
            states.push(h);
        }
        g.concat_rows(&states)
    }
}
