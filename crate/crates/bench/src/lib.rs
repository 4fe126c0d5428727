//! Fixtures shared by the criterion benches.

use refshare_core::crypto::seeded_rng;
use refshare_core::runner::{load_scenario, Scenario};
use refshare_core::sharing::split;
use refshare_core::{FieldElement, PlayerId, PrimeField, Share};
use std::path::PathBuf;

pub fn holders(n: usize) -> Vec<PlayerId> {
    (0..n as u32).map(|i| PlayerId(PlayerId::FIRST_PLAYER + i)).collect()
}

/// A fixed secret dealt to `n` holders with threshold `k`.
pub fn dealt(n: usize, k: usize) -> (FieldElement, Vec<Share>) {
    let mut rng = seeded_rng(7);
    let secret = FieldElement::random(&mut rng);
    let hs = holders(n);
    let shares = split(&secret, hs[0], 1, &hs, k, &mut rng).expect("valid threshold");
    (secret, shares)
}

pub fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"));
    load_scenario(&path).expect("shipped scenario loads")
}
