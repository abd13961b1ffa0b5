//! Criterion benchmarks for the iris defense pipeline live in `benches/`.
