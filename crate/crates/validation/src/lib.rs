//! Holds the `acceptance` test target. It sorts after the other workspace
//! packages, so a red criterion does not stop `cargo test --workspace`
//! before the unit and integration tests have run.
