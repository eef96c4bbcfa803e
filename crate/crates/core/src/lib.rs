//! Label enhancement: recovering label distributions from logical labels
//! with a variational bottleneck, plus the usual distribution-recovery
//! measures.
//!
//! The crate carries its own small reverse-mode autodiff ([`autodiff`]) over
//! dense `f64` matrices ([`matrix`]), the model and its losses ([`model`],
//! [`objective`]), data handling ([`data`], [`binarize`]), evaluation
//! ([`metrics`]) and the optimisation loop ([`trainer`]).

pub mod autodiff;
pub mod binarize;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod params;
pub mod trainer;

pub use binarize::{binarize, BinarizeStrategy};
pub use checkpoint::Checkpoint;
pub use data::{load_dataset, read_dataset, write_dataset, Dataset};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::{average_rank, evaluate, EvalReport};
pub use model::{loss_lib, loss_lib_gap, LossBreakdown, ModelDims, ModelParams, ObjectiveKind};
pub use trainer::{grid_search, recover, train, Batch, GridResult, TrainConfig, TrainHistory};
