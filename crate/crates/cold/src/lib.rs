//! File formats, a rayon-backed executor, benchmarks and the `cold`
//! command-line interface over `cold-core`.

pub mod bench;
pub mod cli;
pub mod formats;
pub mod parallel;
pub mod run;
