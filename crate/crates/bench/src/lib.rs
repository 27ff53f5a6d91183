//! Benchmarks for the exact engines live in `benches/`.
