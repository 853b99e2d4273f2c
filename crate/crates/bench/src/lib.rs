//! Criterion benchmarks for the probdet kernels; see `benches/`.
