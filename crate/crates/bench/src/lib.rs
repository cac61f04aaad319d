//! Criterion benchmarks for `rfkit`; see `benches/`.
