use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters for the user encoder.
///
/// The encoder has two optional branches: a transformer over per-session
/// command-frequency vectors and an MLP over the whole-history frequency
/// vector. Their outputs are fused by a combiner MLP into the user
/// representation. A further projection head (used only while pretraining)
/// maps representations into the space the contrastive loss operates on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of distinct commands the input frequency vectors cover.
    pub vocab_size: usize,
    /// Width of every internal representation.
    pub dim: usize,
    /// Attention heads per transformer block; must divide `dim`.
    pub heads: usize,
    /// Number of transformer blocks in the session branch.
    pub depth: usize,
    /// Hidden width of each block's feed-forward layer, as a multiple of
    /// `dim`.
    pub ffn_mult: usize,
    /// Upper bound on sessions fed to the transformer; older sessions are
    /// dropped first when a user exceeds it.
    pub max_sessions: usize,
    /// Stabilizer added to the variance in layer normalization.
    pub ln_eps: f64,
    /// Include the transformer branch over session frequency vectors.
    pub use_session_branch: bool,
    /// Include the MLP branch over the whole-history frequency vector.
    pub use_user_branch: bool,
    /// Restrict the user branch to the surviving sessions' events when a
    /// dropout view is encoded. On by default: with the full-history vector
    /// in both views the user branch is identical across every view pair,
    /// handing the contrastive objective a view-invariant pathway that lets
    /// it stop shaping the representation. Turning this off restores that
    /// behavior.
    pub dropout_user_branch: bool,
    /// Attach the projection head used during contrastive pretraining.
    pub with_projection_head: bool,
}

impl ModelConfig {
    /// Desk-scale defaults for the given vocabulary.
    pub fn for_vocab(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            dim: 64,
            heads: 4,
            depth: 2,
            ffn_mult: 4,
            max_sessions: 64,
            ln_eps: 1e-5,
            use_session_branch: true,
            use_user_branch: true,
            dropout_user_branch: true,
            with_projection_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be positive".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads must be positive and divide dim ({} % {} != 0)",
                self.dim, self.heads
            )));
        }
        if self.use_session_branch && self.depth == 0 {
            return Err(Error::Config("depth must be positive".into()));
        }
        if self.use_session_branch && self.ffn_mult == 0 {
            return Err(Error::Config("ffn_mult must be positive".into()));
        }
        if self.use_session_branch && self.max_sessions == 0 {
            return Err(Error::Config("max_sessions must be positive".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        if !self.use_session_branch && !self.use_user_branch {
            return Err(Error::Config(
                "at least one of the session and user branches must be enabled".into(),
            ));
        }
        Ok(())
    }

    /// Width of each attention head.
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Input width of the combiner MLP: one `dim`-wide block per enabled
    /// branch.
    pub fn combiner_input(&self) -> usize {
        let mut w = 0;
        if self.use_session_branch {
            w += self.dim;
        }
        if self.use_user_branch {
            w += self.dim;
        }
        w
    }
}
