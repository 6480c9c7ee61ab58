//! Training objectives: cross-modal margin loss over mined triplets, the
//! classification loss, and their weighted sum.

use crate::error::{Error, Result};
use crate::fusion::Modality;
use crate::tensor::{Graph, Var};

/// Anchor, positive and negative indices into a batch of tagged embeddings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Hinge margin `α`, in `(0, 2]`.
    pub margin: f64,
    /// Weight `λ` of the margin loss, `≥ 0`.
    pub balance: f64,
    /// Fail on zero-norm embeddings instead of treating their cosine as 0.
    pub strict: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.5,
            balance: 1.0,
            strict: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin <= 2.0) {
            return Err(Error::Config(format!("margin must be in (0, 2], got {}", self.margin)));
        }
        if !(self.balance >= 0.0 && self.balance.is_finite()) {
            return Err(Error::Config(format!(
                "balance must be finite and >= 0, got {}",
                self.balance
            )));
        }
        Ok(())
    }
}

/// Every `(i, j, k)` with `m[i] ≠ m[j]`, `m[i] = m[k]`, `c[i] = c[j]` and
/// `c[i] ≠ c[k]`, in lexicographic order.
pub fn build_triplets(entries: &[(Modality, usize)]) -> Vec<Triplet> {
    let mut out = Vec::new();
    for (i, &(mi, ci)) in entries.iter().enumerate() {
        for (j, &(mj, cj)) in entries.iter().enumerate() {
            if mi == mj || ci != cj {
                continue;
            }
            for (k, &(mk, ck)) in entries.iter().enumerate() {
                if mk == mi && ck != ci {
                    out.push(Triplet {
                        anchor: i,
                        positive: j,
                        negative: k,
                    });
                }
            }
        }
    }
    out
}

/// Mean of `max(0, α − cos(x_i, x_j) + cos(x_i, x_k))` over `triplets`.
///
/// `embeddings` is `[M×d]`, one row per batch entry. An empty triplet set
/// gives a constant 0.
pub fn margin_loss(g: &mut Graph, embeddings: Var, triplets: &[Triplet], config: &LossConfig) -> Result<Var> {
    let shape = g.shape(embeddings).to_vec();
    if shape.len() != 2 {
        return Err(Error::dim("margin_loss", &shape, &[]));
    }
    let m = shape[0];
    if let Some(t) = triplets.iter().find(|t| t.anchor.max(t.positive).max(t.negative) >= m) {
        return Err(Error::Contract(format!(
            "triplet {t:?} out of range for {m} embeddings"
        )));
    }
    if triplets.is_empty() {
        log::info!("margin loss: no valid triplets in batch, contributing 0");
        return Ok(g.constant(crate::tensor::Tensor::scalar(0.0)));
    }
    let zero_rows: Vec<usize> = {
        let v = g.value(embeddings);
        (0..m).filter(|&r| v.row(r).iter().all(|&x| x == 0.0)).collect()
    };
    if !zero_rows.is_empty() {
        if config.strict {
            return Err(Error::Data(format!(
                "zero-norm embeddings at rows {zero_rows:?}; cosine undefined"
            )));
        }
        log::warn!("margin loss: zero-norm embeddings at rows {zero_rows:?}, using cosine 0");
    }

    let unit = g.l2_normalize_rows(embeddings);
    let unit_t = g.transpose(unit)?;
    let cos = g.matmul(unit, unit_t)?;
    let pos = g.gather(cos, triplets.iter().map(|t| t.anchor * m + t.positive).collect())?;
    let neg = g.gather(cos, triplets.iter().map(|t| t.anchor * m + t.negative).collect())?;
    let diff = g.sub(neg, pos)?;
    let shifted = g.add_scalar(diff, config.margin);
    let hinge = g.relu(shifted);
    Ok(g.mean_all(hinge))
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.cross_entropy(logits, labels)
}

/// `task + λ·margin`. With `λ = 0` the task loss is returned unchanged.
pub fn total_loss(g: &mut Graph, task: Var, margin: Var, balance: f64) -> Result<Var> {
    if balance == 0.0 {
        return Ok(task);
    }
    let weighted = g.scale(margin, balance);
    g.add(task, weighted)
}
