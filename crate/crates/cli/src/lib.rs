//! Pipeline driver: synthetic data, per-stage commands and the full
//! experiment, with exit-code classification of failures.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod synth;

/// Derives the seed of a named stage from the root seed (FNV-1a over the
/// name, mixed with the root), so stages draw independent streams.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ root.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}
