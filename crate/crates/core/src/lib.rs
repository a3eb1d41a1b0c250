//! An actor-critic CNN-LSTM agent with pixel-control, reward-prediction and
//! value-replay auxiliary tasks, trained asynchronously on procedurally
//! generated pixel gridworlds.
//!
//! Layout mirrors the training pipeline: [`tensor`]/[`graph`]/[`kernels`]
//! provide the numerics and reverse-mode differentiation, [`env`] the
//! environments, [`net`] the shared trunk and heads, [`replay`] the
//! experience buffer, [`losses`] the objectives, [`optim`] the shared
//! RMSProp store and [`trainer`] the asynchronous loop. [`config`],
//! [`metrics`], [`sweep`] and [`checkpoint`] are the harness around it.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod losses;
pub mod maze;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod replay;
pub mod sweep;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
