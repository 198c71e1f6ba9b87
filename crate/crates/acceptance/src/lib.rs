//! Acceptance checks for `bwsched` live in `tests/acceptance.rs`; run them with
//! `cargo test -p bwsched-acceptance`.
