//! Recurrent 3D reconstruction GAN: shared per-view convolutional encoder, LSTM
//! fusion over views, transposed-convolution decoder and a convolutional
//! discriminator trained with a feature-matching adversarial term.

mod data;
mod model;
mod train;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use data::{
    load_dataset, perturbed_toy_dataset, sample_from_mesh, save_dataset, toy_dataset, Sample,
    FRAME_MARGIN,
};
pub use model::{Discriminator, Generator};
pub use train::{write_log, EpochLog, Rgan, StepLosses};

use crate::autodiff::TensorError;
use crate::scan::ScanError;
use crate::voxel::VoxelError;

#[derive(Debug, thiserror::Error)]
pub enum RganError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("expected a {expected}^3 grid, got {got:?}")]
    GridSize { expected: usize, got: [usize; 3] },
    #[error("views do not share one frame")]
    FrameMismatch,
    #[error("view sequence is empty")]
    EmptySequence,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Voxel(#[from] VoxelError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RganError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn json(path: &Path, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RganConfig {
    pub grid_dim: usize,
    pub encoder_channels: [usize; 5],
    /// length of each per-view feature vector
    pub latent: usize,
    pub lstm_hidden: usize,
    pub decoder_channels: [usize; 5],
    pub upscale_layers: usize,
    pub disc_channels: [usize; 6],
    pub lambda_adv: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// longest view sequence drawn during training
    pub max_views: usize,
    /// stop once the mean training IoU reaches this value
    pub target_iou: Option<f64>,
}

impl Default for RganConfig {
    fn default() -> Self {
        Self {
            grid_dim: 32,
            encoder_channels: [8, 16, 32, 64, 64],
            latent: 256,
            lstm_hidden: 256,
            decoder_channels: [64, 64, 32, 16, 8],
            upscale_layers: 2,
            disc_channels: [8, 16, 32, 64, 64, 1],
            lambda_adv: 0.1,
            lr: 1e-3,
            batch: 4,
            epochs: 200,
            seed: 0,
            max_views: 3,
            target_iou: None,
        }
    }
}

impl RganConfig {
    pub fn validate(&self) -> Result<(), RganError> {
        let bad = |msg: String| Err(RganError::Config(msg));
        if self.grid_dim == 0 {
            return bad("grid_dim must be positive".into());
        }
        let channels = self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain(&self.disc_channels);
        if channels.copied().any(|c| c == 0) || self.latent == 0 || self.lstm_hidden == 0 {
            return bad("channel counts must be at least 1".into());
        }
        if self.upscale_layers == 0 {
            return bad("need at least one upscaling layer".into());
        }
        let (_, base) = model::halving_schedule(self.grid_dim, 5);
        if !self.lstm_hidden.is_multiple_of(base * base * base) {
            return bad(format!(
                "lstm_hidden {} must be a multiple of {} for grid_dim {}",
                self.lstm_hidden,
                base * base * base,
                self.grid_dim
            ));
        }
        if !(self.lambda_adv >= 0.0 && self.lambda_adv.is_finite()) {
            return bad(format!("lambda_adv {} must be non-negative", self.lambda_adv));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if self.batch == 0 || self.max_views == 0 {
            return bad("batch and max_views must be positive".into());
        }
        Ok(())
    }
}
