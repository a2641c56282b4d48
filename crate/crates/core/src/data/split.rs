//! Seeded train/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Deterministic shuffle under `seed`, then a `floor(ratio * N)` cut.
/// The two halves are disjoint and their union is the input.
pub fn split_train_test<T>(items: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0,1)")));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} items")));
    }
    let n_train = ((ratio * n as f64).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (pos, &idx) in order.iter().enumerate() {
        let item = slots[idx].take().expect("each index visited once");
        if pos < n_train {
            train.push(item);
        } else {
            test.push(item);
        }
    }
    Ok((train, test))
}
