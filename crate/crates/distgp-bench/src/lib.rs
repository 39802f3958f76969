//! Bench-only crate; see `benches/core.rs`.
