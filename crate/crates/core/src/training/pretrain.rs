use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::UserSequence;
use crate::error::{Error, Result};
use crate::model::{
    session_feature_matrix, user_feature_row, user_feature_row_for_sessions, BoundEncoder,
    EncoderParams,
};
use crate::numerics::{AdamConfig, AdamState, NodeId, Tape, Tensor};
use crate::seeding::rng_for;
use crate::sessions::{make_view_pair, Session};
use crate::training::loss::contrastive_loss;

/// Settings for contrastive pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub batch_size: usize,
    /// Softmax temperature of the contrastive loss.
    pub tau: f64,
    /// Session-dropout rate used to build the two views of each user.
    pub rho_pre: f64,
    pub epochs: usize,
    pub lr: f64,
    /// Keep the positive pair in the loss denominator (the conventional
    /// form). Off by default: each anchor competes only against the other
    /// `2B - 2` embeddings.
    pub include_positive: bool,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            batch_size: 64,
            tau: 1.0,
            rho_pre: 0.3,
            epochs: 30,
            lr: 1e-3,
            include_positive: false,
            seed: 0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.rho_pre) {
            return Err(Error::Config(format!(
                "rho_pre must be in [0, 1), got {}",
                self.rho_pre
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Loss trajectory of one pretraining run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean per-anchor loss of each epoch.
    pub epoch_mean_loss: Vec<f64>,
}

/// Builds one view's embedding on the tape: session features and
/// view-restricted user features through the encoder, then the projection
/// head.
fn view_embedding(
    tape: &mut Tape,
    bound: &BoundEncoder,
    user: &UserSequence,
    kept: &[Session],
) -> Result<NodeId> {
    let cfg = &bound.config;
    let session_feats = if cfg.use_session_branch {
        Some(session_feature_matrix(user, kept, cfg.vocab_size, cfg.max_sessions)?)
    } else {
        None
    };
    let user_feats = if cfg.use_user_branch {
        Some(if cfg.dropout_user_branch {
            user_feature_row_for_sessions(user, kept, cfg.vocab_size)?
        } else {
            user_feature_row(user, cfg.vocab_size)?
        })
    } else {
        None
    };
    let rep =
        bound.representation(tape, session_feats.as_ref(), user_feats.as_ref(), None)?;
    bound.project(tape, rep)
}

/// Contrastive pretraining over the given users. Each epoch shuffles the
/// users with a seed derived from `cfg.seed`, walks them in batches, builds
/// two dropout views per user, and applies one Adam update per batch.
/// Batches left with a single user are skipped. The projection head stays in
/// `params`; discard it when persisting the encoder.
pub fn pretrain(
    params: &mut EncoderParams,
    users: &[&UserSequence],
    sessions: &BTreeMap<u64, Vec<Session>>,
    cfg: &ContrastiveConfig,
) -> Result<PretrainReport> {
    cfg.validate()?;
    params.config.validate()?;
    if users.len() < 2 {
        return Err(Error::Contract(format!(
            "pretraining needs at least 2 users, got {}",
            users.len()
        )));
    }
    for user in users {
        match sessions.get(&user.user_id) {
            Some(list) if !list.is_empty() => {}
            _ => {
                return Err(Error::Contract(format!(
                    "user {} has no segmented sessions",
                    user.user_id
                )))
            }
        }
    }

    let shapes: Vec<Vec<usize>> =
        params.flatten().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut adam =
        AdamState::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &shapes);

    let mut report = PretrainReport { epoch_mean_loss: Vec::with_capacity(cfg.epochs) };
    let mut order: Vec<usize> = (0..users.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, "batch-order", &[epoch as u64]));
        let mut loss_sum = 0.0;
        let mut anchors = 0usize;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            if batch.len() < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut view1 = Vec::with_capacity(batch.len());
            let mut view2 = Vec::with_capacity(batch.len());
            for &idx in batch {
                let user = users[idx];
                let list = &sessions[&user.user_id];
                let (kept1, kept2) = make_view_pair(
                    list,
                    cfg.rho_pre,
                    cfg.seed,
                    user.user_id,
                    epoch as u64,
                );
                for (kept, out) in
                    [(&kept1, &mut view1), (&kept2, &mut view2)]
                {
                    let z = view_embedding(&mut tape, &bound, user, kept)?;
                    let norm: f64 =
                        tape.value(z).data().iter().map(|v| v * v).sum::<f64>().sqrt();
                    if !(norm > 1e-12) {
                        return Err(Error::Loss {
                            user_id: user.user_id,
                            detail: format!(
                                "embedding norm {norm} at epoch {epoch} batch {batch_index}"
                            ),
                        });
                    }
                    out.push(z);
                }
            }
            let loss =
                contrastive_loss(&mut tape, &view1, &view2, cfg.tau, cfg.include_positive)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                let ids: Vec<u64> = batch.iter().map(|&i| users[i].user_id).collect();
                return Err(Error::Training(format!(
                    "non-finite loss {value} at epoch {epoch} batch {batch_index} (users {ids:?})"
                )));
            }
            loss_sum += value;
            anchors += 2 * batch.len();

            tape.backward(loss)?;
            let grads: Vec<Tensor> =
                bound.flat.iter().map(|&id| tape.grad_or_zeros(id)).collect();
            let mut named = params.flatten_mut();
            let mut pairs: Vec<(&str, &mut Tensor)> =
                named.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
            adam.step(&mut pairs, &grads)?;
        }
        report.epoch_mean_loss.push(loss_sum / anchors as f64);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GenConfig};
    use crate::model::ModelConfig;
    use crate::sessions::{segment_corpus, SegmentationConfig};

    fn tiny_setup() -> (crate::corpus::Corpus, BTreeMap<u64, Vec<Session>>, ModelConfig) {
        let gen = generate_synthetic(&GenConfig {
            n_users: 24,
            vocab_size: 30,
            archetype_count: 3,
            seed: 77,
            ..GenConfig::default()
        })
        .unwrap();
        let sessions = segment_corpus(&gen.corpus, &SegmentationConfig::default()).unwrap();
        let mut model = ModelConfig::for_vocab(30);
        model.dim = 16;
        model.heads = 2;
        model.depth = 1;
        model.ffn_mult = 2;
        model.max_sessions = 16;
        (gen.corpus, sessions, model)
    }

    fn tiny_train_cfg() -> ContrastiveConfig {
        ContrastiveConfig {
            batch_size: 12,
            epochs: 10,
            lr: 3e-3,
            seed: 5,
            ..ContrastiveConfig::default()
        }
    }

    #[test]
    fn loss_curve_is_finite_and_improves() {
        let (corpus, sessions, model) = tiny_setup();
        let users: Vec<&UserSequence> = corpus.users.iter().collect();
        let mut params = EncoderParams::init(&model, 1).unwrap();
        let report = pretrain(&mut params, &users, &sessions, &tiny_train_cfg()).unwrap();
        assert_eq!(report.epoch_mean_loss.len(), 10);
        assert!(report.epoch_mean_loss.iter().all(|l| l.is_finite()));
        let first = report.epoch_mean_loss[0];
        let last = *report.epoch_mean_loss.last().unwrap();
        assert!(last < first, "loss did not improve: {first} -> {last}");
    }

    #[test]
    fn pretraining_is_deterministic() {
        let (corpus, sessions, model) = tiny_setup();
        let users: Vec<&UserSequence> = corpus.users.iter().collect();
        let cfg = ContrastiveConfig { epochs: 2, ..tiny_train_cfg() };
        let run = || {
            let mut params = EncoderParams::init(&model, 1).unwrap();
            let report = pretrain(&mut params, &users, &sessions, &cfg).unwrap();
            (params, report)
        };
        let (params_a, report_a) = run();
        let (params_b, report_b) = run();
        assert_eq!(report_a, report_b);
        assert_eq!(params_a, params_b);
    }

    #[test]
    fn zero_dropout_still_trains() {
        let (corpus, sessions, model) = tiny_setup();
        let users: Vec<&UserSequence> = corpus.users.iter().collect();
        let mut params = EncoderParams::init(&model, 2).unwrap();
        let cfg = ContrastiveConfig {
            rho_pre: 0.0,
            epochs: 1,
            ..tiny_train_cfg()
        };
        let report = pretrain(&mut params, &users, &sessions, &cfg).unwrap();
        assert!(report.epoch_mean_loss[0].is_finite());
    }

    #[test]
    fn missing_sessions_are_rejected() {
        let (corpus, mut sessions, model) = tiny_setup();
        let users: Vec<&UserSequence> = corpus.users.iter().collect();
        sessions.remove(&corpus.users[0].user_id);
        let mut params = EncoderParams::init(&model, 3).unwrap();
        let err = pretrain(&mut params, &users, &sessions, &tiny_train_cfg());
        assert!(err.is_err());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut cfg = ContrastiveConfig::default();
        cfg.batch_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ContrastiveConfig::default();
        cfg.rho_pre = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ContrastiveConfig::default();
        cfg.tau = 0.0;
        assert!(cfg.validate().is_err());
    }
}
