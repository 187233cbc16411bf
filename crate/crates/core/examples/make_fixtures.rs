//! Regenerates the checked-in test bundles under `tests/fixtures/`.
//!
//! `cargo run --example make_fixtures [-- <out_dir>]`

use std::path::PathBuf;

use sarcam::synth::{make_fixture, Pattern};

pub const SEED: u64 = 7;
pub const N: usize = 32;
pub const G: usize = 8;
pub const K: usize = 4;

fn main() {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));
    for pattern in Pattern::ALL {
        let dir = out.join(pattern.name().replace('-', "_"));
        std::fs::create_dir_all(&dir).expect("create fixture dir");
        make_fixture(SEED, N, G, K, pattern)
            .and_then(|f| f.write(&dir))
            .unwrap_or_else(|e| panic!("{}: {e}", pattern.name()));
        println!("{}", dir.display());
    }
}
