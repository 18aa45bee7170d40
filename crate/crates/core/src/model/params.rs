use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::numerics::{NodeId, Tape, Tensor};
use crate::seeding::rng_for;

/// Dense layer: `x [m, in] -> x * weight + bias [m, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: xavier_uniform(input, output, rng),
            bias: Tensor::zeros(vec![1, output]),
        }
    }
}

/// Two dense layers with a ReLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp {
            fc1: Linear::init(input, hidden, rng),
            fc2: Linear::init(hidden, output, rng),
        }
    }
}

/// Learned scale and shift applied after row standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormAffine {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormAffine {
    fn init(dim: usize) -> Self {
        LayerNormAffine {
            gamma: Tensor::new(vec![1, dim], vec![1.0; dim]).unwrap(),
            beta: Tensor::zeros(vec![1, dim]),
        }
    }
}

/// One pre-norm transformer block: multi-head self-attention followed by a
/// position-wise feed-forward layer, each with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub ln1: LayerNormAffine,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2: LayerNormAffine,
    pub ffn: Mlp,
}

impl AttentionBlock {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.dim;
        AttentionBlock {
            ln1: LayerNormAffine::init(d),
            wq: Linear::init(d, d, rng),
            wk: Linear::init(d, d, rng),
            wv: Linear::init(d, d, rng),
            wo: Linear::init(d, d, rng),
            ln2: LayerNormAffine::init(d),
            ffn: Mlp::init(d, d * cfg.ffn_mult, d, rng),
        }
    }
}

/// Transformer over the sequence of per-session frequency vectors. A learned
/// token is prepended at position zero and read back out as the branch
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionBranch {
    pub input: Linear,
    pub rep_token: Tensor,
    pub blocks: Vec<AttentionBlock>,
    pub final_ln: LayerNormAffine,
}

impl SessionBranch {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        SessionBranch {
            input: Linear::init(cfg.vocab_size, cfg.dim, rng),
            rep_token: unit_direction(cfg.dim, rng),
            blocks: (0..cfg.depth).map(|_| AttentionBlock::init(cfg, rng)).collect(),
            final_ln: LayerNormAffine::init(cfg.dim),
        }
    }
}

/// All trainable tensors of the user encoder.
///
/// Tensor traversal order is fixed: session branch, user branch, combiner,
/// projection head. Initialization, flattening, tape binding, and checkpoints
/// all rely on this order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: ModelConfig,
    pub session: Option<SessionBranch>,
    pub user: Option<Mlp>,
    pub combiner: Mlp,
    pub projection: Option<Mlp>,
}

fn xavier_uniform(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (input + output) as f64).sqrt();
    let data: Vec<f64> =
        (0..input * output).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::matrix(input, output, data).unwrap()
}

/// Uniformly random unit vector, via normalized Gaussian coordinates.
fn unit_direction(dim: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut data = Vec::with_capacity(dim);
    while data.len() < dim {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        data.push(radius * angle.cos());
        if data.len() < dim {
            data.push(radius * angle.sin());
        }
    }
    let norm = data.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for x in &mut data {
        *x /= norm;
    }
    Tensor::matrix(1, dim, data).unwrap()
}

impl EncoderParams {
    /// Fresh parameters drawn from the seed: Xavier-uniform weights, zero
    /// biases, identity layer norms, unit-norm representation token.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "encoder-init", &[]);
        let session =
            config.use_session_branch.then(|| SessionBranch::init(config, &mut rng));
        let user = config
            .use_user_branch
            .then(|| Mlp::init(config.vocab_size, config.dim, config.dim, &mut rng));
        let combiner =
            Mlp::init(config.combiner_input(), config.dim, config.dim, &mut rng);
        let projection = config
            .with_projection_head
            .then(|| Mlp::init(config.dim, config.dim, config.dim, &mut rng));
        Ok(EncoderParams { config: config.clone(), session, user, combiner, projection })
    }

    /// Named tensors in traversal order.
    pub fn flatten(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        if let Some(sb) = &self.session {
            push_linear(&mut out, "session.input", &sb.input);
            out.push(("session.rep_token".into(), &sb.rep_token));
            for (b, block) in sb.blocks.iter().enumerate() {
                let p = format!("session.block{b}");
                push_ln(&mut out, &format!("{p}.ln1"), &block.ln1);
                push_linear(&mut out, &format!("{p}.wq"), &block.wq);
                push_linear(&mut out, &format!("{p}.wk"), &block.wk);
                push_linear(&mut out, &format!("{p}.wv"), &block.wv);
                push_linear(&mut out, &format!("{p}.wo"), &block.wo);
                push_ln(&mut out, &format!("{p}.ln2"), &block.ln2);
                push_mlp(&mut out, &format!("{p}.ffn"), &block.ffn);
            }
            push_ln(&mut out, "session.final_ln", &sb.final_ln);
        }
        if let Some(mlp) = &self.user {
            push_mlp(&mut out, "user", mlp);
        }
        push_mlp(&mut out, "combiner", &self.combiner);
        if let Some(mlp) = &self.projection {
            push_mlp(&mut out, "projection", mlp);
        }
        out
    }

    /// Mutable variant of [`flatten`](Self::flatten); same names, same order.
    pub fn flatten_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        if let Some(sb) = &mut self.session {
            out.push(("session.input.weight".into(), &mut sb.input.weight));
            out.push(("session.input.bias".into(), &mut sb.input.bias));
            out.push(("session.rep_token".into(), &mut sb.rep_token));
            for (b, block) in sb.blocks.iter_mut().enumerate() {
                let p = format!("session.block{b}");
                out.push((format!("{p}.ln1.gamma"), &mut block.ln1.gamma));
                out.push((format!("{p}.ln1.beta"), &mut block.ln1.beta));
                for (tag, lin) in [
                    ("wq", &mut block.wq),
                    ("wk", &mut block.wk),
                    ("wv", &mut block.wv),
                    ("wo", &mut block.wo),
                ] {
                    out.push((format!("{p}.{tag}.weight"), &mut lin.weight));
                    out.push((format!("{p}.{tag}.bias"), &mut lin.bias));
                }
                out.push((format!("{p}.ln2.gamma"), &mut block.ln2.gamma));
                out.push((format!("{p}.ln2.beta"), &mut block.ln2.beta));
                out.push((format!("{p}.ffn.fc1.weight"), &mut block.ffn.fc1.weight));
                out.push((format!("{p}.ffn.fc1.bias"), &mut block.ffn.fc1.bias));
                out.push((format!("{p}.ffn.fc2.weight"), &mut block.ffn.fc2.weight));
                out.push((format!("{p}.ffn.fc2.bias"), &mut block.ffn.fc2.bias));
            }
            out.push(("session.final_ln.gamma".into(), &mut sb.final_ln.gamma));
            out.push(("session.final_ln.beta".into(), &mut sb.final_ln.beta));
        }
        if let Some(mlp) = &mut self.user {
            out.push(("user.fc1.weight".into(), &mut mlp.fc1.weight));
            out.push(("user.fc1.bias".into(), &mut mlp.fc1.bias));
            out.push(("user.fc2.weight".into(), &mut mlp.fc2.weight));
            out.push(("user.fc2.bias".into(), &mut mlp.fc2.bias));
        }
        out.push(("combiner.fc1.weight".into(), &mut self.combiner.fc1.weight));
        out.push(("combiner.fc1.bias".into(), &mut self.combiner.fc1.bias));
        out.push(("combiner.fc2.weight".into(), &mut self.combiner.fc2.weight));
        out.push(("combiner.fc2.bias".into(), &mut self.combiner.fc2.bias));
        if let Some(mlp) = &mut self.projection {
            out.push(("projection.fc1.weight".into(), &mut mlp.fc1.weight));
            out.push(("projection.fc1.bias".into(), &mut mlp.fc1.bias));
            out.push(("projection.fc2.weight".into(), &mut mlp.fc2.weight));
            out.push(("projection.fc2.bias".into(), &mut mlp.fc2.bias));
        }
        out
    }

    /// Registers every tensor on the tape as a trainable parameter and
    /// returns the node-id mirror of this structure. `flat` lists the ids in
    /// [`flatten`](Self::flatten) order.
    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        let mut flat = Vec::new();
        let session = self.session.as_ref().map(|sb| BoundSessionBranch {
            input: BoundLinear {
                weight: push_param(tape, &sb.input.weight, &mut flat),
                bias: push_param(tape, &sb.input.bias, &mut flat),
            },
            rep_token: push_param(tape, &sb.rep_token, &mut flat),
            blocks: sb
                .blocks
                .iter()
                .map(|block| BoundAttentionBlock {
                    ln1: BoundLayerNorm {
                        gamma: push_param(tape, &block.ln1.gamma, &mut flat),
                        beta: push_param(tape, &block.ln1.beta, &mut flat),
                    },
                    wq: BoundLinear {
                        weight: push_param(tape, &block.wq.weight, &mut flat),
                        bias: push_param(tape, &block.wq.bias, &mut flat),
                    },
                    wk: BoundLinear {
                        weight: push_param(tape, &block.wk.weight, &mut flat),
                        bias: push_param(tape, &block.wk.bias, &mut flat),
                    },
                    wv: BoundLinear {
                        weight: push_param(tape, &block.wv.weight, &mut flat),
                        bias: push_param(tape, &block.wv.bias, &mut flat),
                    },
                    wo: BoundLinear {
                        weight: push_param(tape, &block.wo.weight, &mut flat),
                        bias: push_param(tape, &block.wo.bias, &mut flat),
                    },
                    ln2: BoundLayerNorm {
                        gamma: push_param(tape, &block.ln2.gamma, &mut flat),
                        beta: push_param(tape, &block.ln2.beta, &mut flat),
                    },
                    ffn: BoundMlp {
                        fc1: BoundLinear {
                            weight: push_param(tape, &block.ffn.fc1.weight, &mut flat),
                            bias: push_param(tape, &block.ffn.fc1.bias, &mut flat),
                        },
                        fc2: BoundLinear {
                            weight: push_param(tape, &block.ffn.fc2.weight, &mut flat),
                            bias: push_param(tape, &block.ffn.fc2.bias, &mut flat),
                        },
                    },
                })
                .collect(),
            final_ln: BoundLayerNorm {
                gamma: push_param(tape, &sb.final_ln.gamma, &mut flat),
                beta: push_param(tape, &sb.final_ln.beta, &mut flat),
            },
        });
        let user = self.user.as_ref().map(|mlp| bind_mlp(tape, mlp, &mut flat));
        let combiner = bind_mlp(tape, &self.combiner, &mut flat);
        let projection =
            self.projection.as_ref().map(|mlp| bind_mlp(tape, mlp, &mut flat));
        BoundEncoder { config: self.config.clone(), session, user, combiner, projection, flat }
    }
}

fn push_linear<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, lin: &'a Linear) {
    out.push((format!("{prefix}.weight"), &lin.weight));
    out.push((format!("{prefix}.bias"), &lin.bias));
}

fn push_ln<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, ln: &'a LayerNormAffine) {
    out.push((format!("{prefix}.gamma"), &ln.gamma));
    out.push((format!("{prefix}.beta"), &ln.beta));
}

fn push_mlp<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, mlp: &'a Mlp) {
    push_linear(out, &format!("{prefix}.fc1"), &mlp.fc1);
    push_linear(out, &format!("{prefix}.fc2"), &mlp.fc2);
}

fn bind_mlp(tape: &mut Tape, mlp: &Mlp, flat: &mut Vec<NodeId>) -> BoundMlp {
    let fc1 = BoundLinear {
        weight: push_param(tape, &mlp.fc1.weight, flat),
        bias: push_param(tape, &mlp.fc1.bias, flat),
    };
    let fc2 = BoundLinear {
        weight: push_param(tape, &mlp.fc2.weight, flat),
        bias: push_param(tape, &mlp.fc2.bias, flat),
    };
    BoundMlp { fc1, fc2 }
}

fn push_param(tape: &mut Tape, t: &Tensor, flat: &mut Vec<NodeId>) -> NodeId {
    let id = tape.param(t.clone());
    flat.push(id);
    id
}

/// Tape node ids mirroring [`Linear`].
#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub weight: NodeId,
    pub bias: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundMlp {
    pub fc1: BoundLinear,
    pub fc2: BoundLinear,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLayerNorm {
    pub gamma: NodeId,
    pub beta: NodeId,
}

#[derive(Debug, Clone)]
pub struct BoundAttentionBlock {
    pub ln1: BoundLayerNorm,
    pub wq: BoundLinear,
    pub wk: BoundLinear,
    pub wv: BoundLinear,
    pub wo: BoundLinear,
    pub ln2: BoundLayerNorm,
    pub ffn: BoundMlp,
}

#[derive(Debug, Clone)]
pub struct BoundSessionBranch {
    pub input: BoundLinear,
    pub rep_token: NodeId,
    pub blocks: Vec<BoundAttentionBlock>,
    pub final_ln: BoundLayerNorm,
}

/// Tape node ids for a full parameter set, produced by
/// [`EncoderParams::bind`].
#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub config: ModelConfig,
    pub session: Option<BoundSessionBranch>,
    pub user: Option<BoundMlp>,
    pub combiner: BoundMlp,
    pub projection: Option<BoundMlp>,
    pub flat: Vec<NodeId>,
}
