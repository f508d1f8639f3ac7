//! Seeded random streams. Everything stochastic in the crate goes through
//! [`SeededRng`] so runs are reproducible from a single `u64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream derived from `seed` and a label.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.normal()).collect()
    }

    /// Uniformly random unit vector.
    pub fn unit_vec(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v = self.normal_vec(n);
            let norm = crate::linalg::norm2(&v);
            if norm > 1e-8 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}
