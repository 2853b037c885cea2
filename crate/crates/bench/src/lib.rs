//! Criterion benchmarks for the ctxaug hot paths live in `benches/`.
