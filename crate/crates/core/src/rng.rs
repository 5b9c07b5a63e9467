//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a run seed mixed with a stream tag and an index, so streams are
//! independent of each other and of evaluation order.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

/// Stream tags.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const FLIP: u64 = 3;
    pub const REGRESSOR_INIT: u64 = 4;
    pub const SPLIT: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn seeded(seed: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, index))
}

/// Tensor with entries drawn from `U(-halfwidth, halfwidth)`.
pub fn uniform_tensor(shape: &[usize], halfwidth: Scalar, rng: &mut Rng) -> Result<Tensor> {
    if !(halfwidth > 0.0 && halfwidth.is_finite()) {
        return Err(Error::invalid(
            "uniform_tensor",
            alloc::format!("half-width must be positive and finite, got {halfwidth}"),
        ));
    }
    Tensor::from_fn(shape, |_| rng.random_range(-halfwidth..halfwidth))
}
