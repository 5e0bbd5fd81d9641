//! Bench-only crate; see `benches/hotpaths.rs`.
