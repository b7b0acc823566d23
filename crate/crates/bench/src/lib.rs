//! Criterion benchmarks for the forecasting engine live in `benches/`.
