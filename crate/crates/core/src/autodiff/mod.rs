//! Dense `f64` tensors with a define-by-run reverse-mode tape, 3D
//! convolutions, an LSTM cell, Adam and a flat checkpoint format.

pub mod checkpoint;
mod conv;
mod nn;
mod optim;
mod tape;
mod tensor;

use std::path::{Path, PathBuf};

pub use conv::ConvGeom;
pub use nn::{
    he_uniform, lstm_cell, uniform, Bound, Conv3d, ConvTranspose3d, Linear, Lstm, LstmParams,
    LstmState, ParamId, ParamSet,
};
pub use optim::Adam;
pub use tape::{sigmoid, Gradients, Tape, Var, BCE_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("backward needs a one-element loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any differentiable input")]
    Detached,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TensorError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
