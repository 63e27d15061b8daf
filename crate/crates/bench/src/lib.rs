//! Criterion benchmarks for the hierarchy core; see `benches/`.
