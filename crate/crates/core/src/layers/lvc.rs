use super::{Conv1d, Initializer, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

/// Learnable visual center over a 1-D convolutional stem.
///
/// For stem features `x̃_i` and codewords `b_k` with scales `s_k`:
///
/// ```text
/// w_ik = softmax_k(−s_k ‖x̃_i − b_k‖²)
/// e    = (1/T) Σ_i Σ_k w_ik (x̃_i − b_k)
/// δ    = σ(Linear(e))
/// Z    = x̃ ⊙ δ            (δ shared across time steps)
/// ```
#[derive(Clone, Debug)]
pub struct Lvc {
    pub stem: Conv1d,
    pub codebook: ParamId,
    pub scales: ParamId,
    pub projection: Linear,
    pub codewords: usize,
    pub d: usize,
}

pub struct LvcOutput {
    pub output: Var,
    /// Stem features `x̃`, `[T×d]`.
    pub stem: Var,
    /// Soft assignments `w`, `[T×K]`.
    pub assignments: Var,
    /// Aggregated residual descriptor `e`, `[1×d]`.
    pub descriptor: Var,
    /// Channel gate `δ`, `[1×d]`.
    pub gate: Var,
}

impl Lvc {
    pub fn new(
        init: &mut Initializer,
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d: usize,
        codewords: usize,
        kernel_size: usize,
    ) -> Result<Self> {
        if codewords < 1 {
            return Err(Error::Config("LVC needs at least one codeword".into()));
        }
        Ok(Lvc {
            stem: Conv1d::new(init, store, &format!("{name}.stem"), kernel_size, d_in, d)?,
            codebook: init.normal(store, &format!("{name}.codebook"), &[codewords, d], 0.1),
            scales: init.constant(store, &format!("{name}.scales"), &[codewords], 1.0),
            projection: Linear::new(init, store, &format!("{name}.proj"), d, d),
            codewords,
            d,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, e_v: Var) -> Result<LvcOutput> {
        let stem = self.stem.forward(g, store, e_v)?;
        let t_len = g.shape(stem)[0];
        let codebook = g.param(store, self.codebook);
        let scales = g.param(store, self.scales);

        let dist = g.sq_dist(stem, codebook)?;
        let scaled = g.mul_row(dist, scales)?;
        let logits = g.scale(scaled, -1.0);
        let assignments = g.softmax(logits, 1)?;

        // Σ_i Σ_k w_ik x̃_i  =  (w·1_K)ᵀ x̃
        let ones_k = g.constant(Tensor::full(vec![self.codewords, 1], 1.0));
        let mass_per_step = g.matmul(assignments, ones_k)?;
        let mass_row = g.transpose(mass_per_step)?;
        let feature_sum = g.matmul(mass_row, stem)?;
        // Σ_i Σ_k w_ik b_k  =  (1_Tᵀ w) B
        let ones_t = g.constant(Tensor::full(vec![1, t_len], 1.0));
        let mass_per_code = g.matmul(ones_t, assignments)?;
        let center_sum = g.matmul(mass_per_code, codebook)?;

        let residual = g.sub(feature_sum, center_sum)?;
        let descriptor = g.scale(residual, 1.0 / t_len as f64);
        let gate_in = self.projection.forward(g, store, descriptor)?;
        let gate = g.sigmoid(gate_in);
        let output = g.mul_row(stem, gate)?;
        Ok(LvcOutput {
            output,
            stem,
            assignments,
            descriptor,
            gate,
        })
    }
}
