//! Seed derivation.
//!
//! Every random stream is a pure function of the master seed:
//! `stage_seed = first 8 bytes (LE) of SHA-256(master_le || stage || 0x00 || index_le)`,
//! and each prompt gets its own ChaCha8 stream (`set_stream(prompt_id)`) under
//! that stage seed. Results therefore do not depend on the order in which
//! prompts or runs are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const STAGE_SYNTH: &str = "synth";
pub const STAGE_TRAIN_OUTCOMES: &str = "train-outcomes";
pub const STAGE_TRAIN_FIT: &str = "train-fit";
pub const STAGE_CENSOR: &str = "censor";
pub const STAGE_OUTCOME: &str = "outcome";
pub const STAGE_RUN: &str = "run";

pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(stage.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

/// Independent RNG stream for one prompt under a stage seed.
pub fn prompt_rng(stage_seed: u64, prompt_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed);
    rng.set_stream(prompt_id);
    rng
}
