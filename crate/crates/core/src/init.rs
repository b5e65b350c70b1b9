//! Deterministic parameter initializers and seed derivation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::{cst, Real};
use crate::tensor::Tensor;

pub type SeedRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> SeedRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Normal(0, std^2) entries.
pub fn normal<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        cst(z * std)
    })
}

/// Normal with std `1/sqrt(fan_in)`; `fan_in` is the product of all but the
/// leading extent (`in` for `[out, in]`, `c_in*k*k` for kernels).
pub fn lecun_normal<T: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product::<usize>().max(1);
    normal(shape, 1.0 / num_traits::Float::sqrt(fan_in as f64), rng)
}
