//! Independent random streams derived from a run seed.
//!
//! Every consumer draws from its own ChaCha stream keyed by purpose and task
//! index, so enabling one strategy never shifts another consumer's draws and
//! a run resumed at a task boundary needs no saved generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Schedule = 2,
    Dropout = 3,
    Memory = 4,
    Importance = 5,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | (index & 0xffff_ffff));
    rng
}
