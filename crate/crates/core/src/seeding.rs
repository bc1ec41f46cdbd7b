//! Counter-based seed derivation.
//!
//! Every random stream in an experiment is keyed by a short path of
//! integers (phase, run, episode, stream) hashed together with the base
//! seed, so adding runs or episodes never perturbs existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Training episodes.
pub const PHASE_TRAIN: u64 = 1;
/// Greedy evaluation episodes (shared with the planner baseline).
pub const PHASE_EVAL: u64 = 2;

/// World initialisation stream; agent `j` uses `STREAM_AGENT + j`.
pub const STREAM_WORLD: u64 = 0;
pub const STREAM_AGENT: u64 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn rng_for(base: u64, path: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(base, path))
}

/// The world and per-agent generators for one episode.
pub struct EpisodeRngs {
    pub world: Rng,
    pub agents: Vec<Rng>,
}

impl EpisodeRngs {
    pub fn new(base: u64, phase: u64, run: u64, episode: u64, num_agents: usize) -> Self {
        EpisodeRngs {
            world: rng_for(base, &[phase, run, episode, STREAM_WORLD]),
            agents: (0..num_agents as u64)
                .map(|j| rng_for(base, &[phase, run, episode, STREAM_AGENT + j]))
                .collect(),
        }
    }
}
