use burn::{
    module::{Module, ModuleMapper, Param},
    tensor::{backend::Backend, Tensor, TensorData},
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic Kaiming-uniform fill of every convolution kernel.
///
/// Only parameters of rank ≥ 2 are touched; biases and normalization
/// affines keep their construction values. Drawing from a private
/// seeded stream keeps initialization independent of the backend's
/// process-global RNG.
pub struct SeededInit {
    rng: ChaCha8Rng,
}

impl SeededInit {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn apply<B: Backend, M: Module<B>>(seed: u64, module: M) -> M {
        module.map(&mut Self::new(seed))
    }
}

impl<B: Backend> ModuleMapper<B> for SeededInit {
    fn map_float<const D: usize>(&mut self, param: Param<Tensor<B, D>>) -> Param<Tensor<B, D>> {
        if D < 2 {
            return param;
        }
        let (id, tensor, mapper) = param.consume();
        let dims = tensor.dims();
        let fan_in: usize = dims[1..].iter().product();
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let values: Vec<f32> = (0..dims.iter().product::<usize>())
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        let fresh = Tensor::<B, D>::from_data(TensorData::new(values, dims), &tensor.device())
            .set_require_grad(tensor.is_require_grad());
        Param::from_mapped_value(id, fresh, mapper)
    }
}
