//! Criterion benchmarks for the numeric kernels, forward passes and NMS. Run with `cargo bench -p jnn-bench`.
