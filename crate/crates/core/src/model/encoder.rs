use crate::corpus::UserSequence;
use crate::error::{Error, Result};
use crate::features;
use crate::model::params::{BoundAttentionBlock, BoundEncoder, BoundLayerNorm, BoundLinear, BoundMlp};
use crate::numerics::{NodeId, Tape, Tensor};
use crate::sessions::Session;

/// Additive attention-score mask for padded key slots. Large enough that the
/// padded entries underflow to exactly zero attention weight, while keeping
/// every intermediate value finite.
pub const MASKED_SCORE: f64 = -1e30;

/// Sinusoidal position encodings for positions `0..count`, one row each.
/// Even columns carry sines, odd columns the matching cosines, with
/// wavelengths spaced geometrically from 1 to 10000.
pub fn positional_encoding(count: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; count * dim];
    for p in 0..count {
        for k in 0..dim.div_ceil(2) {
            let rate = 10000f64.powf(-((2 * k) as f64) / dim as f64);
            let angle = p as f64 * rate;
            data[p * dim + 2 * k] = angle.sin();
            if 2 * k + 1 < dim {
                data[p * dim + 2 * k + 1] = angle.cos();
            }
        }
    }
    Tensor::matrix(count, dim, data).unwrap()
}

/// Stacks per-session frequency vectors into a `[sessions, vocab]` matrix,
/// keeping only the `max_sessions` most recent sessions.
pub fn session_feature_matrix(
    user: &UserSequence,
    sessions: &[Session],
    vocab_size: usize,
    max_sessions: usize,
) -> Result<Tensor> {
    if sessions.is_empty() {
        return Err(Error::Feature(format!("user {} has no sessions", user.user_id)));
    }
    let keep = if sessions.len() > max_sessions {
        &sessions[sessions.len() - max_sessions..]
    } else {
        sessions
    };
    let mut data = Vec::with_capacity(keep.len() * vocab_size);
    for session in keep {
        let f = features::session_features(session.events(user), vocab_size)?;
        data.extend_from_slice(&f.values);
    }
    Tensor::matrix(keep.len(), vocab_size, data)
}

/// Whole-history frequency vector as a `[1, vocab]` matrix.
pub fn user_feature_row(user: &UserSequence, vocab_size: usize) -> Result<Tensor> {
    let f = features::user_features(user, vocab_size)?;
    Tensor::matrix(1, vocab_size, f.values)
}

/// Frequency vector over the events of the given sessions only, as a
/// `[1, vocab]` matrix. With every session present this equals
/// [`user_feature_row`], since sessions partition the event sequence; under
/// session dropout it is the user-branch input of the surviving view.
pub fn user_feature_row_for_sessions(
    user: &UserSequence,
    sessions: &[Session],
    vocab_size: usize,
) -> Result<Tensor> {
    if sessions.is_empty() {
        return Err(Error::Feature(format!("user {} has no sessions", user.user_id)));
    }
    let mut counts = vec![0.0f64; vocab_size];
    let mut total = 0.0f64;
    for session in sessions {
        for event in session.events(user) {
            let c = event.command_id as usize;
            if c >= vocab_size {
                return Err(Error::Feature(format!(
                    "command id {c} outside vocabulary of {vocab_size}"
                )));
            }
            counts[c] += 1.0;
            total += 1.0;
        }
    }
    if total == 0.0 {
        return Err(Error::Feature(format!(
            "user {} has only empty sessions",
            user.user_id
        )));
    }
    for c in &mut counts {
        *c /= total;
    }
    Tensor::matrix(1, vocab_size, counts)
}

impl BoundLinear {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let h = tape.matmul(x, self.weight)?;
        tape.add_row(h, self.bias)
    }
}

impl BoundMlp {
    fn apply(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.apply(tape, x)?;
        let h = tape.relu(h);
        self.fc2.apply(tape, h)
    }
}

fn layer_norm_affine(
    tape: &mut Tape,
    x: NodeId,
    eps: f64,
    ln: &BoundLayerNorm,
) -> Result<NodeId> {
    let n = tape.layer_norm_rows(x, eps)?;
    let scaled = tape.mul_row(n, ln.gamma)?;
    tape.add_row(scaled, ln.beta)
}

impl BoundAttentionBlock {
    fn apply(
        &self,
        tape: &mut Tape,
        x: NodeId,
        key_mask: Option<NodeId>,
        heads: usize,
        ln_eps: f64,
    ) -> Result<NodeId> {
        let h = layer_norm_affine(tape, x, ln_eps, &self.ln1)?;
        let q = self.wq.apply(tape, h)?;
        let k = self.wk.apply(tape, h)?;
        let v = self.wv.apply(tape, h)?;
        let dim = tape.value(q).cols();
        let head_dim = dim / heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut per_head = Vec::with_capacity(heads);
        for i in 0..heads {
            let qi = tape.slice_cols(q, i * head_dim, head_dim)?;
            let ki = tape.slice_cols(k, i * head_dim, head_dim)?;
            let vi = tape.slice_cols(v, i * head_dim, head_dim)?;
            let kt = tape.transpose(ki)?;
            let scores = tape.matmul(qi, kt)?;
            let mut scores = tape.scale(scores, scale);
            if let Some(mask) = key_mask {
                scores = tape.add_row(scores, mask)?;
            }
            let attn = tape.softmax_rows(scores)?;
            per_head.push(tape.matmul(attn, vi)?);
        }
        let merged = tape.concat_cols(&per_head)?;
        let projected = self.wo.apply(tape, merged)?;
        let x = tape.add(x, projected)?;
        let h2 = layer_norm_affine(tape, x, ln_eps, &self.ln2)?;
        let f = self.ffn.apply(tape, h2)?;
        tape.add(x, f)
    }
}

impl BoundEncoder {
    /// Builds the user representation on the tape and returns its `[1, dim]`
    /// node. Inputs for disabled branches are ignored; inputs for enabled
    /// branches are required.
    ///
    /// `pad_to` appends zero-feature slots up to the given session count and
    /// masks them out of attention; the result is identical to the unpadded
    /// forward pass.
    pub fn representation(
        &self,
        tape: &mut Tape,
        session_feats: Option<&Tensor>,
        user_feats: Option<&Tensor>,
        pad_to: Option<usize>,
    ) -> Result<NodeId> {
        let mut parts = Vec::with_capacity(2);
        if let Some(branch) = &self.session {
            let feats = session_feats.ok_or_else(|| {
                Error::Contract("session branch enabled but no session features given".into())
            })?;
            parts.push(self.session_forward(tape, branch, feats, pad_to)?);
        }
        if let Some(mlp) = &self.user {
            let feats = user_feats.ok_or_else(|| {
                Error::Contract("user branch enabled but no user features given".into())
            })?;
            if feats.rows() != 1 || feats.cols() != self.config.vocab_size {
                return Err(Error::Dimension {
                    op: "user_branch",
                    detail: format!(
                        "expected [1, {}], got {:?}",
                        self.config.vocab_size,
                        feats.shape()
                    ),
                });
            }
            let x = tape.input(feats.clone());
            parts.push(mlp.apply(tape, x)?);
        }
        let joined =
            if parts.len() == 1 { parts[0] } else { tape.concat_cols(&parts)? };
        self.combiner.apply(tape, joined)
    }

    /// Maps a representation into the contrastive-loss space. Identity when
    /// the projection head is absent.
    pub fn project(&self, tape: &mut Tape, rep: NodeId) -> Result<NodeId> {
        match &self.projection {
            Some(head) => head.apply(tape, rep),
            None => Ok(rep),
        }
    }

    fn session_forward(
        &self,
        tape: &mut Tape,
        branch: &crate::model::params::BoundSessionBranch,
        feats: &Tensor,
        pad_to: Option<usize>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let t = feats.rows();
        if feats.cols() != cfg.vocab_size || t == 0 {
            return Err(Error::Dimension {
                op: "session_branch",
                detail: format!(
                    "expected [>=1, {}], got {:?}",
                    cfg.vocab_size,
                    feats.shape()
                ),
            });
        }
        if t > cfg.max_sessions {
            return Err(Error::Contract(format!(
                "{t} sessions exceed max_sessions {}; truncate first",
                cfg.max_sessions
            )));
        }
        let pad = match pad_to {
            Some(p) if p < t => {
                return Err(Error::Contract(format!(
                    "pad_to {p} is smaller than the {t} given sessions"
                )))
            }
            Some(p) => p - t,
            None => 0,
        };

        let pe = positional_encoding(t + 1, cfg.dim);
        let token_pe =
            tape.input(Tensor::matrix(1, cfg.dim, pe.row_slice(0).to_vec())?);
        let token = tape.add(branch.rep_token, token_pe)?;
        let session_pe = tape.input(Tensor::matrix(
            t,
            cfg.dim,
            pe.data()[cfg.dim..].to_vec(),
        )?);
        let x = tape.input(feats.clone());
        let x = branch.input.apply(tape, x)?;
        let x = tape.add(x, session_pe)?;

        let mut rows = vec![token, x];
        if pad > 0 {
            rows.push(tape.input(Tensor::zeros(vec![pad, cfg.dim])));
        }
        let mut x = tape.concat_rows(&rows)?;

        let key_mask = if pad > 0 {
            let mut mask = vec![0.0; 1 + t + pad];
            for slot in mask.iter_mut().skip(1 + t) {
                *slot = MASKED_SCORE;
            }
            Some(tape.input(Tensor::matrix(1, 1 + t + pad, mask)?))
        } else {
            None
        };

        for block in &branch.blocks {
            x = block.apply(tape, x, key_mask, cfg.heads, cfg.ln_eps)?;
        }
        let x = layer_norm_affine(tape, x, cfg.ln_eps, &branch.final_ln)?;
        tape.slice_rows(x, 0, 1)
    }
}

impl crate::model::params::EncoderParams {
    /// Runs the encoder outside any training loop and returns the `[1, dim]`
    /// representation value. `sessions` is the (possibly dropout-reduced)
    /// session list fed to the session branch; the user branch sees the full
    /// history unless `dropout_user_branch` restricts it to the same set.
    pub fn representation_for(
        &self,
        user: &UserSequence,
        sessions: &[Session],
    ) -> Result<Tensor> {
        let cfg = &self.config;
        let session_feats = if cfg.use_session_branch {
            Some(session_feature_matrix(user, sessions, cfg.vocab_size, cfg.max_sessions)?)
        } else {
            None
        };
        let user_feats = if cfg.use_user_branch {
            Some(if cfg.dropout_user_branch {
                user_feature_row_for_sessions(user, sessions, cfg.vocab_size)?
            } else {
                user_feature_row(user, cfg.vocab_size)?
            })
        } else {
            None
        };
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let rep = bound.representation(
            &mut tape,
            session_feats.as_ref(),
            user_feats.as_ref(),
            None,
        )?;
        Ok(tape.value(rep).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CommandEvent;
    use crate::model::config::ModelConfig;
    use crate::model::params::EncoderParams;
    use crate::numerics::gradcheck::{central_diff, max_rel_err};
    use crate::seeding::rng_for;
    use rand::Rng;

    fn toy_config() -> ModelConfig {
        let mut cfg = ModelConfig::for_vocab(6);
        cfg.dim = 8;
        cfg.heads = 2;
        cfg.depth = 1;
        cfg.ffn_mult = 2;
        cfg.max_sessions = 8;
        cfg
    }

    /// L1-normalized random rows, shaped like real frequency features.
    fn random_features(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = rng_for(seed, "test-feats", &[rows as u64, cols as u64]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let mut row: Vec<f64> = (0..cols).map(|_| rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            for x in &mut row {
                *x /= total;
            }
            data.extend(row);
        }
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn positional_encoding_matches_frozen_values() {
        let pe = positional_encoding(3, 8);
        // Position 0: sines vanish, cosines are 1.
        assert_eq!(pe.row_slice(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        // Position 1 with dim 8: angles 1, 0.1, 0.01, 0.001.
        let expected = [
            0.8414709848078965,
            0.5403023058681398,
            0.09983341664682815,
            0.9950041652780258,
            0.009999833334166664,
            0.9999500004166653,
            0.0009999998333333417,
            0.9999995000000417,
        ];
        for (got, want) in pe.row_slice(1).iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        assert!((pe.at(2, 0) - (2.0f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn positional_encoding_handles_odd_dim() {
        let pe = positional_encoding(2, 5);
        assert_eq!(pe.cols(), 5);
        // Last column of an odd dim is a lone sine.
        let rate = 10000f64.powf(-4.0 / 5.0);
        assert!((pe.at(1, 4) - rate.sin()).abs() < 1e-15);
    }

    #[test]
    fn padded_forward_matches_unpadded() {
        let params = EncoderParams::init(&toy_config(), 9).unwrap();
        let session_feats = random_features(3, 6, 1);
        let user_feats = random_features(1, 6, 2);

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let plain = bound
            .representation(&mut tape, Some(&session_feats), Some(&user_feats), None)
            .unwrap();
        let plain = tape.value(plain).clone();

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let padded = bound
            .representation(&mut tape, Some(&session_feats), Some(&user_feats), Some(7))
            .unwrap();
        let padded = tape.value(padded).clone();

        assert_eq!(plain, padded, "masked padding must not change the output");
    }

    #[test]
    fn representation_is_deterministic() {
        let params = EncoderParams::init(&toy_config(), 4).unwrap();
        let session_feats = random_features(2, 6, 3);
        let user_feats = random_features(1, 6, 4);
        let run = || {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let rep = bound
                .representation(&mut tape, Some(&session_feats), Some(&user_feats), None)
                .unwrap();
            tape.value(rep).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn within_session_shuffle_leaves_representation_unchanged() {
        let make_user = |order: &[u32]| UserSequence {
            user_id: 1,
            events: order
                .iter()
                .enumerate()
                .map(|(i, &c)| CommandEvent { command_id: c, timestamp: i as f64 })
                .collect(),
        };
        // Two sessions of three events each; the second triple is a
        // permutation of the original in the shuffled user.
        let user_a = make_user(&[0, 1, 2, 3, 4, 5]);
        let user_b = make_user(&[0, 1, 2, 5, 3, 4]);
        let sessions = [
            Session { index: 0, peak_time: 1.0, start: 0, end: 3 },
            Session { index: 1, peak_time: 4.0, start: 3, end: 6 },
        ];
        let params = EncoderParams::init(&toy_config(), 8).unwrap();
        let rep_a = params.representation_for(&user_a, &sessions).unwrap();
        let rep_b = params.representation_for(&user_b, &sessions).unwrap();
        assert_eq!(rep_a, rep_b);
    }

    #[test]
    fn feature_matrix_keeps_most_recent_sessions() {
        let user = UserSequence {
            user_id: 2,
            events: (0..6)
                .map(|i| CommandEvent { command_id: i as u32, timestamp: i as f64 })
                .collect(),
        };
        let sessions: Vec<Session> = (0..3)
            .map(|s| Session {
                index: s,
                peak_time: (2 * s) as f64,
                start: 2 * s,
                end: 2 * s + 2,
            })
            .collect();
        let full = session_feature_matrix(&user, &sessions, 6, 8).unwrap();
        let trimmed = session_feature_matrix(&user, &sessions, 6, 2).unwrap();
        assert_eq!(full.rows(), 3);
        assert_eq!(trimmed.rows(), 2);
        assert_eq!(trimmed.row_slice(0), full.row_slice(1));
        assert_eq!(trimmed.row_slice(1), full.row_slice(2));
    }

    #[test]
    fn single_branch_models_run_and_ignore_the_other_input() {
        let session_feats = random_features(2, 6, 5);
        let user_feats = random_features(1, 6, 6);

        let mut cfg = toy_config();
        cfg.use_user_branch = false;
        let params = EncoderParams::init(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        // The user features are ignored rather than rejected.
        let rep = bound
            .representation(&mut tape, Some(&session_feats), Some(&user_feats), None)
            .unwrap();
        assert_eq!(tape.value(rep).shape(), &[1, 8]);

        let mut cfg = toy_config();
        cfg.use_session_branch = false;
        let params = EncoderParams::init(&cfg, 1).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let rep = bound.representation(&mut tape, None, Some(&user_feats), None).unwrap();
        assert_eq!(tape.value(rep).shape(), &[1, 8]);

        let err = bound.representation(&mut tape, Some(&session_feats), None, None);
        assert!(err.is_err(), "missing enabled-branch input must fail");
    }

    #[test]
    fn oversized_session_count_is_rejected_by_forward() {
        let params = EncoderParams::init(&toy_config(), 1).unwrap();
        let feats = random_features(9, 6, 7);
        let user_feats = random_features(1, 6, 8);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let err = bound.representation(&mut tape, Some(&feats), Some(&user_feats), None);
        assert!(err.is_err());
    }

    fn params_to_vec(params: &EncoderParams) -> Vec<f64> {
        params.flatten().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    fn load_params_vec(params: &mut EncoderParams, flat: &[f64]) {
        let mut offset = 0;
        for (_, tensor) in params.flatten_mut() {
            let n = tensor.numel();
            tensor.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len());
    }

    /// Full-model gradient check: every parameter of every component, against
    /// central differences, on a readout that mixes the projected embedding
    /// with fixed random weights.
    #[test]
    fn fd_full_encoder_gradients() {
        let cfg = toy_config();
        for seed in 0..20u64 {
            let params = EncoderParams::init(&cfg, 1000 + seed).unwrap();
            let session_feats = random_features(3, 6, 100 + seed);
            let user_feats = random_features(1, 6, 200 + seed);
            let readout = {
                let mut rng = rng_for(seed, "test-readout", &[]);
                let data: Vec<f64> =
                    (0..cfg.dim).map(|_| rng.random_range(0.25..1.75)).collect();
                Tensor::matrix(1, cfg.dim, data).unwrap()
            };

            let scalar = |p: &EncoderParams| -> f64 {
                let mut tape = Tape::new();
                let bound = p.bind(&mut tape);
                let rep = bound
                    .representation(
                        &mut tape,
                        Some(&session_feats),
                        Some(&user_feats),
                        None,
                    )
                    .unwrap();
                let z = bound.project(&mut tape, rep).unwrap();
                let w = tape.input(readout.clone());
                let prod = tape.mul(z, w).unwrap();
                let total = tape.sum(prod);
                tape.value(total).item().unwrap()
            };

            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let rep = bound
                .representation(&mut tape, Some(&session_feats), Some(&user_feats), None)
                .unwrap();
            let z = bound.project(&mut tape, rep).unwrap();
            let w = tape.input(readout.clone());
            let prod = tape.mul(z, w).unwrap();
            let total = tape.sum(prod);
            tape.backward(total).unwrap();
            let analytic: Vec<f64> = bound
                .flat
                .iter()
                .flat_map(|&id| tape.grad_or_zeros(id).data().to_vec())
                .collect();

            let x0 = params_to_vec(&params);
            let mut probe = params.clone();
            let mut f = |x: &[f64]| -> f64 {
                load_params_vec(&mut probe, x);
                scalar(&probe)
            };
            let numeric = central_diff(&mut f, &x0, 1e-6);
            let err = max_rel_err(&analytic, &numeric, 1e-8);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }
}
