//! Seeded random instances.
//!
//! Every random quantity comes from ChaCha8 seeded with `seed_from_u64(seed)`,
//! on a fixed stream per purpose so that, e.g., changing the `w` mode never
//! perturbs the generated MDP.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mdp::{flat_index_unchecked, Mdp, QVector};

/// Recorded in `report.json`.
pub const RNG_ALGORITHM: &str =
    "ChaCha8Rng (rand_chacha 0.9, seed_from_u64; stream 0 = MDP, 1 = Q0, 2 = w)";

pub const MDP_STREAM: u64 = 0;
pub const Q0_STREAM: u64 = 1;
pub const W_STREAM: u64 = 2;

/// Lower end of the uniform range for random positive weights.
pub const W_MIN: f64 = 0.1;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Transition rows are normalized draws from `(0, 1]`; rewards are uniform on `[-1, 1]`.
pub fn generate_mdp(seed: u64, num_states: usize, num_actions: usize, gamma: f64) -> Result<Mdp> {
    let mut rng = rng_for(seed, MDP_STREAM);
    let n = num_states * num_actions;
    let mut p = DMatrix::zeros(n, num_states);
    for a in 0..num_actions {
        for s in 0..num_states {
            let i = flat_index_unchecked(s, a, num_states);
            let row: Vec<f64> = (0..num_states).map(|_| 1.0 - rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            for (t, x) in row.into_iter().enumerate() {
                p[(i, t)] = x / total;
            }
        }
    }
    let rewards = DVector::from_iterator(n, (0..n).map(|_| rng.random_range(-1.0..=1.0)));
    Mdp::new(num_states, num_actions, gamma, p, rewards)
}

/// Uniform on `[-2/(1-gamma), 2/(1-gamma)]` per component.
pub fn random_q0(mdp: &Mdp, seed: u64) -> QVector {
    let mut rng = rng_for(seed, Q0_STREAM);
    let r = 2.0 * mdp.qstar_norm_bound();
    let values = DVector::from_iterator(mdp.dim(), (0..mdp.dim()).map(|_| rng.random_range(-r..=r)));
    QVector::new(mdp, values).expect("finite draws of the right length")
}

/// `count` positive weight vectors, uniform on `[W_MIN, 1]` per component.
pub fn random_weights(dim: usize, seed: u64, count: usize) -> Vec<DVector<f64>> {
    let mut rng = rng_for(seed, W_STREAM);
    (0..count)
        .map(|_| DVector::from_iterator(dim, (0..dim).map(|_| rng.random_range(W_MIN..=1.0))))
        .collect()
}
