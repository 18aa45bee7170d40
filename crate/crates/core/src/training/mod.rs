//! Contrastive pretraining, linear-probe transfer, and classification
//! metrics.

mod loss;
mod metrics;
mod pretrain;
mod probe;

pub use loss::{contrastive_loss, contrastive_loss_direct, cosine_sim};
pub use metrics::{classification_metrics, merge_labels, Metrics, EXPERIENCE_MERGE};
pub use pretrain::{pretrain, ContrastiveConfig, PretrainReport};
pub use probe::{cross_entropy_grad, train_probe, ProbeConfig, ProbeParams};
