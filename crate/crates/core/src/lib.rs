//! Reversible speaker-embedding networks with exact activation recomputation,
//! a per-category memory ledger and 8-bit blockwise optimizer states.

pub mod check;
pub mod cli;
pub mod error;
pub mod ops;
pub mod optim;
pub mod param;
pub mod rev;
pub mod scalar;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{rel_error, Shape, Tensor};
pub use param::Param;
pub use rev::{Mode, MemoryLedger, Network};
