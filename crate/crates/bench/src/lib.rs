//! Benchmarks for `masc-core`; see `benches/kernels.rs`.
