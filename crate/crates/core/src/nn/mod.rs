//! Layers and the two network builders.

pub mod attention;
pub mod checkpoint;
pub mod config;
mod features;
mod layers;
pub mod mobilevit;
mod model;
pub mod tcn;
mod vit;

pub use attention::{multihead_attention, multihead_attention_with_weights, separable_attention};
pub use config::{FrontEnd, StudentConfig, TeacherConfig};
pub use layers::{update_running_stats, Session, BN_MOMENTUM};
pub use mobilevit::{fold, unfold};
pub use model::{Arch, Model, ModelConfig, ParamCount};
