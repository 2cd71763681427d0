//! Benchmark-only package. The kernels live in `benches/kernels.rs`; run them
//! with `cargo bench -p homocell-bench`.
