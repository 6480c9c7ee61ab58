use crate::rng::PortableRng;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Seeded parameter factory.
///
/// Matrices draw from `U(−a, a)` with `a = sqrt(6 / (fan_in + fan_out))`;
/// biases start at zero.
pub struct Initializer {
    rng: PortableRng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: PortableRng::new(seed),
        }
    }

    pub fn glorot(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform_in(-a, a)).collect();
        store.add(name, Tensor::new(shape.to_vec(), data).expect("init shape"))
    }

    pub fn matrix(&mut self, store: &mut ParamStore, name: &str, rows: usize, cols: usize) -> ParamId {
        self.glorot(store, name, &[rows, cols], rows, cols)
    }

    pub fn normal(&mut self, store: &mut ParamStore, name: &str, shape: &[usize], std: f64) -> ParamId {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.normal() * std).collect();
        store.add(name, Tensor::new(shape.to_vec(), data).expect("init shape"))
    }

    pub fn constant(&mut self, store: &mut ParamStore, name: &str, shape: &[usize], value: f64) -> ParamId {
        store.add(name, Tensor::full(shape.to_vec(), value))
    }

    pub fn zeros(&mut self, store: &mut ParamStore, name: &str, shape: &[usize]) -> ParamId {
        self.constant(store, name, shape, 0.0)
    }
}
