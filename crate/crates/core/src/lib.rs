pub mod cam;
pub mod error;
pub mod imaging;
pub mod io;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod ndgrad;
pub mod nets;
pub mod refine;
pub mod selfcheck;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
pub use imaging::{BinaryMask, CategoryLabel, ImageRgb, Provenance, PseudoLabel, Sample, ScoreMap};
pub use labels::{FuseMode, LabelPair};
pub use metrics::{ImageMetrics, MetricsReport, ThresholdPolicy};
pub use nets::{ArchConfig, Architecture, FeatureTap};
pub use trainer::{AblationSpec, TrainConfig};
