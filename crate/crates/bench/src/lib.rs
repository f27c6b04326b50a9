//! Criterion benchmarks for slim-core kernels; see `benches/`.
