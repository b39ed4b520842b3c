//! Benchmarks for the solver, the adjoint gradient, Jacobian assembly and
//! representation evaluation live in `benches/`. Run with `cargo bench -p crfwi-bench`.
