//! Weight files, golden fixtures, synthetic inputs, invariant checks and
//! benchmarks around `mmfuse-core`.

pub mod bench;
pub mod checks;
pub mod fixtures;
pub mod format;
pub mod stats;
pub mod synth;
