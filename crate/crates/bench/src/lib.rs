//! Criterion benchmarks for `sde-moments`; run with `cargo bench -p sde-moments-bench`.
