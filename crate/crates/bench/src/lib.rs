//! Criterion benchmarks for the generator, the training step and the
//! post-processing stages. Run with `cargo bench -p gath-bench`.
