//! Stochastic parameter mixing regularizers with a small dense-network trainer,
//! exact expectation oracles and a pretrain/finetune sweep harness.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod math;
pub mod mixreg;
pub mod net;
pub mod optim;
pub mod theory;

pub use error::{Error, Result};
