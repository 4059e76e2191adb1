#![allow(dead_code)]

use proptest::test_runner::{Config, RngSeed};

/// Fixed-seed proptest config without failure persistence files.
pub fn props(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x5d1a_b0de),
        failure_persistence: None,
        ..Config::default()
    }
}
