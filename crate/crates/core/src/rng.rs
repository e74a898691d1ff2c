//! Seeded random streams.
//!
//! Every random draw descends from one master seed. Independent tasks (scan
//! points, Monte Carlo trials) get their own ChaCha stream: the generator is
//! seeded with the master seed and its stream id set to the task index, so a
//! task's draws do not depend on how many other tasks ran or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn master(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
