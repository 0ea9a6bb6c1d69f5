//! End-to-end acceptance checks for `orl-impute`; see `tests/acceptance.rs`.
