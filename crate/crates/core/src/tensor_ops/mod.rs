//! Small dense-tensor engine for training equivariant networks on the CPU.
//!
//! Everything is `f64` and `[batch][channel][row][col]`. Group features
//! store orientation `k` of feature `f` at channel `f·|S| + index(k)`.

pub mod checkpoint;
pub mod conv;
pub mod layers;
pub mod model;
pub mod optim;
pub mod train;

use ndarray::Array4;

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use conv::{
    correlate2d_backward, correlate2d_forward, groupconv_backward, groupconv_forward, lifting_backward, lifting_forward,
};
pub use layers::{group_batchnorm, group_batchnorm_backward, orientation_pool, BnMode, BnStats};
pub use model::{Arch, Model, ModelConfig};
pub use optim::{step_decay_lr, Optimizer, OptimizerKind};
pub use train::{evaluate, metrics_csv, train, EpochMetrics, Trained};

/// A batch of planar or group-indexed feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub data: Array4<f64>,
    /// 1 for planar images, `|S|` for group features.
    pub orientation_arity: usize,
    pub h: f64,
}

impl FeatureMap {
    pub fn new(data: Array4<f64>, orientation_arity: usize, h: f64) -> Result<Self> {
        let c = data.dim().1;
        if orientation_arity == 0 || c % orientation_arity != 0 {
            return Err(Error::Shape(format!("{c} channels not divisible by orientation arity {orientation_arity}")));
        }
        Ok(FeatureMap { data: data.as_standard_layout().into_owned(), orientation_arity, h })
    }

    /// Planar images with unit mesh size.
    pub fn planar(data: Array4<f64>) -> Self {
        FeatureMap::new(data, 1, 1.0).expect("arity 1 always divides")
    }

    pub fn batch(&self) -> usize {
        self.data.dim().0
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    /// Number of features, i.e. channels divided by the orientation arity.
    pub fn features(&self) -> usize {
        self.channels() / self.orientation_arity
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, _, h, w) = self.data.dim();
        (h, w)
    }

    pub(crate) fn like(&self, data: Array4<f64>) -> Self {
        FeatureMap { data, orientation_arity: self.orientation_arity, h: self.h }
    }

    pub(crate) fn slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }
}

/// Worker pool sized by `PDEQ_THREADS` (default 1).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("PDEQ_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::InvalidArgument(format!("PDEQ_THREADS must be a positive integer, got {v:?}")))?,
        Err(_) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}
