//! Pipeline orchestration for the `unifier` binary: layered configuration,
//! directory locks, and one function per subcommand.

pub mod config;
pub mod lock;
pub mod pipeline;

pub use config::{Overrides, RunConfig};
pub use pipeline::Variant;
