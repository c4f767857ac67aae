//! Splittable seed streams.
//!
//! All randomness flows from explicit seeds; a stream is derived by mixing a
//! parent seed with tags, so independent consumers (frames, steps, samples)
//! never share state and results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self(splitmix64(seed ^ 0x6a09_e667_f3bc_c908))
    }

    pub fn seed(&self) -> u64 {
        self.0
    }

    pub fn derive(&self, tag: u64) -> Self {
        Self(splitmix64(self.0 ^ splitmix64(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub fn derive2(&self, a: u64, b: u64) -> Self {
        self.derive(a).derive(b)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// `rows×cols` standard normal draws from this stream.
    pub fn normal_matrix(&self, rows: usize, cols: usize) -> Matrix {
        let mut rng = self.rng();
        normal_matrix(&mut rng, rows, cols)
    }

    pub fn normal_vec(&self, len: usize) -> Vec<f64> {
        let mut rng = self.rng();
        (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
    }
}

pub fn normal_matrix<R: rand::Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
