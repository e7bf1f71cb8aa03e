//! Losses, training stages, end-to-end transmission, datasets and sweeps.

pub mod dataset;
pub mod losses;
pub mod sweep;
pub mod train;
pub mod transmit;

pub use dataset::{load_dataset, Dataset, DatasetOptions, Sample};
pub use losses::{loss_distance, rgan_losses, FeatureBank, LossWeights, RganLosses};
pub use sweep::{robustness_gap, sweep, Cell, ModelSet, SweepGrid, SweepReport, SweepSetup};
pub use train::{retrain_lowdata, train_base, train_joint, train_residual, InterleaverKind, Stage, TrainConfig, TrainLog};
pub use transmit::{latent_plane, structure_comparison, transmit_image, EvalTag, Transmission};
