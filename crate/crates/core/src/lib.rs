//! Hierarchical coherence segmenter for concealed object segmentation.
//!
//! The network is generic over the burn [`Backend`](burn::tensor::backend::Backend),
//! which fixes the float element type; the metrics are generic over
//! [`num_traits::Float`]. Concrete aliases for the CPU backends live here.

pub mod cli;
pub mod csc;
pub mod data;
pub mod encoder;
pub mod engine;
pub mod error;
pub mod isc;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rrd;

pub use error::{HcmError, Result};

/// CPU inference backend, single precision.
pub type CpuBackend = burn::backend::NdArray<f32>;
/// CPU inference backend, double precision (gradient checks, oracles).
pub type CpuBackend64 = burn::backend::NdArray<f64>;
/// CPU training backend, single precision.
pub type TrainBackend = burn::backend::Autodiff<CpuBackend>;
/// CPU training backend, double precision.
pub type TrainBackend64 = burn::backend::Autodiff<CpuBackend64>;

pub use encoder::{FeaturePyramid, ImageBatch};
pub use model::{HcmConfig, HcmModel};
pub use rrd::PredictionPyramid;

/// Single-precision model for inference.
pub type Hcm = HcmModel<CpuBackend>;
/// Single-precision model for training.
pub type HcmTrain = HcmModel<TrainBackend>;
