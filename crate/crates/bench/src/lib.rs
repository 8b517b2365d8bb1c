//! Criterion microbenchmarks for the fitting pipeline live under `benches/`.
