use super::Initializer;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Var};

/// Multi-head scaled dot-product attention without masking.
///
/// Self-attention passes the same stream as queries and keys/values;
/// cross-modal attention takes queries from one stream and keys/values
/// from another. Output length follows the query stream.
#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub d_model: usize,
    pub d_head: usize,
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

pub struct AttentionOutput {
    pub output: Var,
    /// One `[T_q×T_kv]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

impl Attention {
    pub fn new(
        init: &mut Initializer,
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model width {d_model} is not divisible by {heads} attention heads"
            )));
        }
        let d_head = d_model / heads;
        let heads = (0..heads)
            .map(|h| HeadParams {
                w_q: init.matrix(store, &format!("{name}.head{h}.w_q"), d_model, d_head),
                w_k: init.matrix(store, &format!("{name}.head{h}.w_k"), d_model, d_head),
                w_v: init.matrix(store, &format!("{name}.head{h}.w_v"), d_model, d_head),
            })
            .collect::<Vec<_>>();
        let w_o = init.matrix(store, &format!("{name}.w_o"), heads.len() * d_head, d_model);
        Ok(Attention {
            heads,
            w_o,
            d_model,
            d_head,
        })
    }

    pub fn attend(&self, g: &mut Graph, store: &ParamStore, queries: Var, keys: Var) -> Result<AttentionOutput> {
        for v in [queries, keys] {
            if g.shape(v).len() != 2 || g.shape(v)[1] != self.d_model {
                return Err(Error::dim("attention", g.shape(v), &[self.d_model]));
            }
        }
        let scale = 1.0 / (self.d_head as f64).sqrt();
        let mut weights = Vec::with_capacity(self.heads.len());
        let mut merged: Option<Var> = None;
        for head in &self.heads {
            let (wq, wk, wv) = (
                g.param(store, head.w_q),
                g.param(store, head.w_k),
                g.param(store, head.w_v),
            );
            let q = g.matmul(queries, wq)?;
            let k = g.matmul(keys, wk)?;
            let v = g.matmul(keys, wv)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let attn = g.softmax(scores, 1)?;
            let ctx = g.matmul(attn, v)?;
            weights.push(attn);
            merged = Some(match merged {
                None => ctx,
                Some(prev) => g.concat_last(prev, ctx)?,
            });
        }
        let w_o = g.param(store, self.w_o);
        let output = g.matmul(merged.expect("at least one head"), w_o)?;
        Ok(AttentionOutput { output, weights })
    }

    pub fn self_attend(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<AttentionOutput> {
        self.attend(g, store, x, x)
    }
}
