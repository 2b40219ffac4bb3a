//! Library face of the `eyefield` binary: typed option structs and the
//! command implementations, kept callable so integration tests can drive
//! the full pipeline in-process.

pub mod commands;
