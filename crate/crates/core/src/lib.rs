#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod debugger;
pub mod dram;
pub mod emulator;
pub mod experiments;
pub mod isa;
pub mod platform;
pub mod program;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
