use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::{Graph, Tensor, Var};

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
#[derive(Debug)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Self {
        Dropout {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply(&mut self, graph: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = graph.shape(x).to_vec();
        let mut mask = Tensor::zeros(&shape);
        for m in mask.data_mut() {
            if self.rng.random::<f64>() >= self.rate {
                *m = keep;
            }
        }
        let mask = graph.constant(mask);
        graph.mul(x, mask)
    }
}
