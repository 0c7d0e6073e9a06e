//! Library half of the `daif` binary, exposed so the server can be driven
//! in-process by tests.

pub mod server;
