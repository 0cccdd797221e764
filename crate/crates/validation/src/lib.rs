//! Acceptance checks live in `tests/acceptance.rs`; run them with
//! `cargo test -p robust-forward-validation --test acceptance`.
