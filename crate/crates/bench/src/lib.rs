//! Benchmarks for the autodiff kernels and training loop; see `benches/`.
