//! Self-play environment and joint training of the policy, value and
//! reward-estimator networks.

pub mod episode;
pub mod features;
pub mod memory;
pub mod reward;
pub mod simulator;
pub mod trainer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use episode::{rollout_episode, Episode, Outcome, Transition};
pub use memory::{EpisodeMemory, MemoryEntry};
pub use reward::{
    discounted_return, discounted_tail_sums, shaped_reward, supervision_targets, terminal_reward, TerminalOutcome,
};
pub use simulator::{SimulatorMode, UserSimulator};
pub use trainer::{train, value_step, EpochLog, MdpConfig, NetworkBundle};

pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for item `index` under a base seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
