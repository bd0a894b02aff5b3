//! Squeeze-and-Excitation networks on a small, exact CPU tensor engine.

pub mod arch;
pub mod complexity;
pub mod error;
pub mod gradcheck;
pub mod kv;
pub mod probe;
pub mod ops;
pub mod se;
pub mod tape;
pub mod tensor;
pub mod train;

pub use arch::{build_network, ArchSpec, IntegrationVariant, Mode, Network};
pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Dims, Tensor};
