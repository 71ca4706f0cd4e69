//! Simplex channels for remote calls: handler stacks around a marshalling
//! boundary, with fault recovery, a wire format and the services built on them.

pub mod binding;
pub mod engine;
pub mod env;
pub mod fnv;
pub mod handler;
pub mod marshal;
pub mod message;
pub mod services;
pub mod stream;
