use super::AdamConfig;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: i32,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
                .collect()
        };
        Adam {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Applies one update to every parameter for which `grad` returns a
    /// gradient. Parameters without one keep their value and moments.
    pub fn step<'a>(&mut self, store: &mut ParamStore, grad: impl Fn(ParamId) -> Option<&'a Tensor>) {
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step);
        let bias2 = 1.0 - c.beta2.powi(self.step);
        for id in store.ids() {
            let Some(g) = grad(id) else { continue };
            let i = id.index();
            let (m, v) = (self.first[i].data_mut(), self.second[i].data_mut());
            let p = store.get_mut(id).data_mut();
            for e in 0..p.len() {
                let ge = g.data()[e];
                m[e] = c.beta1 * m[e] + (1.0 - c.beta1) * ge;
                v[e] = c.beta2 * v[e] + (1.0 - c.beta2) * ge * ge;
                let m_hat = m[e] / bias1;
                let v_hat = v[e] / bias2;
                p[e] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}
