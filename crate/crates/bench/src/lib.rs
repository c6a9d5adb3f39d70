//! Re-exports the criterion API for the workspace benchmarks.

pub use criterion::*;
