//! Fixtures shared by the benchmarks.

use eventlab_core::sim::{random_panel, RandomPanelSpec};
use eventlab_core::Panel;
use rand::SeedableRng;

/// Random panel with the case study's shape: 41 units over 33 periods.
pub fn case_study_sized(seed: u64, covariates: usize) -> Panel {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    random_panel(&mut rng, RandomPanelSpec { units: 41, times: 33, covariates, never_share: 0.15 })
}
