use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::DenseMatrix;

/// He (Kaiming) normal initialisation: i.i.d. `N(0, 2 / cols)`.
pub fn he_init(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    assert!(rows >= 1 && cols >= 1, "he_init needs a non-empty shape");
    let std = (2.0 / cols as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("finite normal draws")
}
