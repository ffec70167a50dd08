//! Repetition-reduction networks with condensed decoding connections:
//! tensors and reverse-mode differentiation, network blocks, graph building,
//! complexity profiling, depth metrics and a toy trainer.

pub mod autodiff;
pub mod blocks;
pub mod config;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod ops;
pub mod pnm;
pub mod profiler;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use config::{parse_config, preset, ConnectionMode, GraphSpec};
pub use error::{Error, Result};
pub use graph::{build, NetworkGraph};
pub use tensor::{DType, Element, Shape, Tensor};
