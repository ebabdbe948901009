//! Every numeric default of the command line tool.
//!
//! | setting                          | value      |
//! |----------------------------------|------------|
//! | seed                             | 0          |
//! | gen: walks per channel           | 1 024 000  |
//! | gen: walks per incident direction| 2 000      |
//! | gen: sv (wi, uv) pairs           | 1 000 000  |
//! | train-flow: epochs               | 500        |
//! | train-flow: learning rate        | 0.003      |
//! | train-flow: batch size           | 4 096      |
//! | train-flow: Euler steps          | 50         |
//! | train-flow: texture              | 256x256x32 |
//! | train-flow: TV weight            | 1e-4       |
//! | train-albedo: iterations         | 3 000      |
//! | train-albedo: learning rate      | 0.003      |
//! | train-albedo: weight decay       | 1.0        |
//! | train-albedo: sv groups          | 100 000    |
//! | train-albedo: walks per group    | 100        |
//! | reflow: epochs                   | 40         |
//! | reflow: pairs per epoch          | 131 072    |
//! | reflow: learning rate            | 0.001      |
//! | reflow: student steps            | 10         |
//! | eval / sample / pdf: queries     | 16         |
//! | validate: samples per chi-square | 100 000    |
//! | validate: walks per furnace dir  | 10 000     |

pub const SEED: u64 = 0;

pub const GEN_COUNT: usize = 1_024_000;
pub const GEN_WALKS_PER_DIRECTION: usize = 2000;
pub const GEN_SV_PAIRS: usize = 1_000_000;

pub const FLOW_EPOCHS: usize = 500;
pub const FLOW_LR: f64 = 3e-3;

pub const ALBEDO_ITERATIONS: usize = 3000;
pub const ALBEDO_LR: f64 = 3e-3;
pub const ALBEDO_SV_GROUPS: usize = 100_000;
pub const ALBEDO_SV_WALKS: usize = 100;

pub const REFLOW_EPOCHS: usize = 40;
pub const REFLOW_LR: f64 = 1e-3;

pub const QUERIES: usize = 16;

pub const VALIDATE_SAMPLES: usize = 100_000;
pub const FURNACE_WALKS: usize = 10_000;
