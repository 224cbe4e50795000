//! Criterion benchmarks for the hgtrack pipeline live under `benches/`.
