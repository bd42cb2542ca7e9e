//! Fixtures shared by the kernel benchmarks.

use plr_core::pipeline::{generate_synthetic, SyntheticData, SyntheticSpec};

/// A synthetic split with `n_identities` people at the given embedding width.
pub fn split(n_identities: usize, dim: usize) -> SyntheticData {
    generate_synthetic(&SyntheticSpec {
        n_identities,
        dim,
        seed: 17,
        ..SyntheticSpec::default()
    })
    .expect("valid synthetic spec")
}
