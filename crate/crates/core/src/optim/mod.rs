//! Optimizers with 32-bit or blockwise-quantized 8-bit state.

pub mod dtree;
pub mod optimizer;
pub mod quant;

pub use dtree::{DynamicTreeMap, ZERO_CODE};
pub use optimizer::{Hyper, OptimKind, Optimizer};
pub use quant::{
    dequantize_blockwise, dequantize_tensor, linear_scan_code, linear_scan_quantize, quantize_blockwise,
    quantize_tensor, state_bytes, QuantizedState, DEFAULT_BLOCK_SIZE,
};
