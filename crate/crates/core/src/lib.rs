pub mod ablation;
pub mod autograd;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod training;
pub mod types;

pub use config::{LabelSampling, LossToggles, RunConfig};
pub use error::{Error, Result};
pub use types::{convert_value, label_planes, onehot_spatial, DomainLabel, ImageTensor, RangeTag};
