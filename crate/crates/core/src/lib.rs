//! Personalized human activity recognition from wearable accelerometers.
//!
//! The pipeline turns tri-axial acceleration streams into fixed windows,
//! smooths and discretizes each channel, looks the bin ids up in a shared
//! embedding table and runs the result through a stack of
//! `conv1d -> ReLU -> max-pool -> dropout` blocks topped by a dense
//! classification layer.
//!
//! Personalization (TrC, "transfer convolutional") freezes every parameter
//! except the classification layer and fine-tunes that layer on a handful of
//! labeled windows from the new user. [`eval`] drives leave-one-subject-out
//! experiments that compare the personalized model against the unadapted
//! source model and a logistic-regression baseline.
//!
//! Module map:
//!
//! - [`tensor`], [`layers`], [`optim`]: numeric arrays, layer forward/backward
//!   pairs and the Adam optimizer.
//! - [`signal`]: smoothing, segmentation, discretization and channel stacking.
//! - [`model`]: network construction, training, inference and the `HARM`
//!   checkpoint format.
//! - [`transfer`]: freezing, transfer-instance sampling and fine-tuning.
//! - [`datasets`]: WISDM / SDA loaders, synthetic data and the CSV directory
//!   format.
//! - [`eval`]: LOSO folds, metrics, the shallow baseline and reports.

pub mod datasets;
pub mod digest;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod transfer;

pub use datasets::{Dataset, SynthConfig};
pub use error::{HarError, Result};
pub use eval::{EvalReport, FoldResult, Variant};
pub use layers::Mode;
pub use model::{ConvBlock, NetworkConfig, TrainOptions, TrainedModel, TrainingHistory};
pub use optim::{AdamConfig, OptimizerState};
pub use signal::{ActivityLabel, DiscretizerSpec, RawSample, SegmentTensor};
pub use tensor::{Parameter, Tensor};
pub use transfer::{TransferSpec, TransferSplit};
