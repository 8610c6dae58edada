//! Reversible blocks, dual-mode network execution and the memory ledger.

pub mod block;
pub mod chain;
pub mod engine;
pub mod ledger;
pub mod residual;

pub use block::{BlockStats, RevBlock, RevGrads, INVERSE_TOL_F32, INVERSE_TOL_F64};
pub use chain::{BatchNorm, Chain, Prim, Stats, Trace};
pub use engine::{max_batch, plan, run_backward, run_forward, Layer, Mode, Network, Projection, SavedStore};
pub use ledger::{gpus_required, Category, MemoryLedger};
pub use residual::{ResidualFn, ResidualKind};
