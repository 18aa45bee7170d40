//! Flat key=value run configuration: one key per line, `#` comments,
//! unknown keys rejected. The canonical serialization is total (every key,
//! fixed order), so identical settings always produce identical bytes, and
//! the corpus-defining subset of it is hashed into the run fingerprint.

use sha2::{Digest, Sha256};

use crate::corpus::{GenConfig, SplitRatios};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sessions::{Kernel, SegmentationConfig};
use crate::training::{ContrastiveConfig, ProbeConfig};

/// Which consolidated table an evaluation artifact feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportTable {
    Main,
    Fewshot,
    Ablation,
    Grid,
}

impl ReportTable {
    pub fn name(self) -> &'static str {
        match self {
            ReportTable::Main => "main",
            ReportTable::Fewshot => "fewshot",
            ReportTable::Ablation => "ablation",
            ReportTable::Grid => "grid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(ReportTable::Main),
            "fewshot" => Ok(ReportTable::Fewshot),
            "ablation" => Ok(ReportTable::Ablation),
            "grid" => Ok(ReportTable::Grid),
            other => Err(Error::Config(format!("unknown report.table `{other}`"))),
        }
    }
}

/// Every tunable of the pipeline in one flat namespace.
///
/// `seed` is the root seed: encoder initialization, pretraining, and probe
/// training all derive their randomness from it under distinct purpose
/// strings. Corpus generation and splitting keep their own seeds so the
/// dataset stays fixed while the root seed varies across repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub gen: GenConfig,
    pub segmentation: SegmentationConfig,
    pub split_seed: u64,
    pub split_ratios: SplitRatios,
    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub ffn_mult: usize,
    pub max_sessions: usize,
    pub ln_eps: f64,
    pub use_session_branch: bool,
    pub use_user_branch: bool,
    pub dropout_user_branch: bool,
    pub contrastive: ContrastiveConfig,
    pub probe: ProbeConfig,
    /// Table this run's evaluation artifacts belong to when consolidated.
    pub report_table: ReportTable,
    /// Free-form row label for the ablation table.
    pub report_row: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::for_vocab(0);
        RunConfig {
            seed: 0,
            gen: GenConfig::default(),
            segmentation: SegmentationConfig::default(),
            split_seed: 0,
            split_ratios: SplitRatios::default(),
            dim: model.dim,
            heads: model.heads,
            depth: model.depth,
            ffn_mult: model.ffn_mult,
            max_sessions: model.max_sessions,
            ln_eps: model.ln_eps,
            use_session_branch: model.use_session_branch,
            use_user_branch: model.use_user_branch,
            dropout_user_branch: model.dropout_user_branch,
            contrastive: ContrastiveConfig::default(),
            probe: ProbeConfig::default(),
            report_table: ReportTable::Main,
            report_row: String::new(),
        }
    }
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected integer, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected integer, got `{v}`")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Config(format!("{key}: expected number, got `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    /// Parses the flat key=value text. Unknown and duplicated keys are
    /// rejected; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("duplicate key `{key}`")));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::parse(&text)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_u64(key, v)?,
            "gen.n_users" => self.gen.n_users = parse_usize(key, v)?,
            "gen.vocab_size" => self.gen.vocab_size = parse_usize(key, v)?,
            "gen.archetype_count" => self.gen.archetype_count = parse_usize(key, v)?,
            "gen.zipf_exponent" => self.gen.zipf_exponent = parse_f64(key, v)?,
            "gen.labeled_fraction" => self.gen.labeled_fraction = parse_f64(key, v)?,
            "gen.bursts_per_user" => self.gen.bursts_per_user = parse_f64(key, v)?,
            "gen.events_per_burst" => self.gen.events_per_burst = parse_f64(key, v)?,
            "gen.min_events" => self.gen.min_events = parse_usize(key, v)?,
            "gen.intra_burst_gap_min" => self.gen.intra_burst_gap.0 = parse_f64(key, v)?,
            "gen.intra_burst_gap_max" => self.gen.intra_burst_gap.1 = parse_f64(key, v)?,
            "gen.inter_burst_gap_min" => self.gen.inter_burst_gap.0 = parse_f64(key, v)?,
            "gen.inter_burst_gap_max" => self.gen.inter_burst_gap.1 = parse_f64(key, v)?,
            "gen.archetype_boost" => self.gen.archetype_boost = parse_f64(key, v)?,
            "gen.seed" => self.gen.seed = parse_u64(key, v)?,
            "segmentation.kernel" => self.segmentation.kernel = Kernel::parse(v)?,
            "segmentation.sigma" => self.segmentation.sigma = parse_f64(key, v)?,
            "segmentation.bins" => self.segmentation.bins = parse_usize(key, v)?,
            "segmentation.bins_per_sigma" => {
                self.segmentation.bins_per_sigma = parse_f64(key, v)?
            }
            "segmentation.window" => self.segmentation.window = parse_usize(key, v)?,
            "split.seed" => self.split_seed = parse_u64(key, v)?,
            "split.unlabeled_train" => self.split_ratios.unlabeled.0 = parse_usize(key, v)?,
            "split.unlabeled_val" => self.split_ratios.unlabeled.1 = parse_usize(key, v)?,
            "split.unlabeled_test" => self.split_ratios.unlabeled.2 = parse_usize(key, v)?,
            "split.labeled_train" => self.split_ratios.labeled.0 = parse_usize(key, v)?,
            "split.labeled_val" => self.split_ratios.labeled.1 = parse_usize(key, v)?,
            "split.labeled_test" => self.split_ratios.labeled.2 = parse_usize(key, v)?,
            "model.dim" => self.dim = parse_usize(key, v)?,
            "model.heads" => self.heads = parse_usize(key, v)?,
            "model.depth" => self.depth = parse_usize(key, v)?,
            "model.ffn_mult" => self.ffn_mult = parse_usize(key, v)?,
            "model.max_sessions" => self.max_sessions = parse_usize(key, v)?,
            "model.ln_eps" => self.ln_eps = parse_f64(key, v)?,
            "model.use_session_branch" => self.use_session_branch = parse_bool(key, v)?,
            "model.use_user_branch" => self.use_user_branch = parse_bool(key, v)?,
            "model.dropout_user_branch" => self.dropout_user_branch = parse_bool(key, v)?,
            "contrastive.batch_size" => self.contrastive.batch_size = parse_usize(key, v)?,
            "contrastive.tau" => self.contrastive.tau = parse_f64(key, v)?,
            "contrastive.rho_pre" => self.contrastive.rho_pre = parse_f64(key, v)?,
            "contrastive.epochs" => self.contrastive.epochs = parse_usize(key, v)?,
            "contrastive.lr" => self.contrastive.lr = parse_f64(key, v)?,
            "contrastive.include_positive" => {
                self.contrastive.include_positive = parse_bool(key, v)?
            }
            "probe.task" => self.probe.task = v.to_string(),
            "probe.rho_tr" => self.probe.rho_tr = parse_f64(key, v)?,
            "probe.epochs" => self.probe.epochs = parse_usize(key, v)?,
            "probe.lr" => self.probe.lr = parse_f64(key, v)?,
            "probe.fraction" => self.probe.fraction = parse_f64(key, v)?,
            "report.table" => self.report_table = ReportTable::parse(v)?,
            "report.row" => self.report_row = v.to_string(),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// The corpus-identity lines: everything that decides which dataset and
    /// session segmentation the run is about.
    fn identity_lines(&self) -> Vec<String> {
        let g = &self.gen;
        let s = &self.segmentation;
        vec![
            format!("gen.n_users = {}", g.n_users),
            format!("gen.vocab_size = {}", g.vocab_size),
            format!("gen.archetype_count = {}", g.archetype_count),
            format!("gen.zipf_exponent = {}", g.zipf_exponent),
            format!("gen.labeled_fraction = {}", g.labeled_fraction),
            format!("gen.bursts_per_user = {}", g.bursts_per_user),
            format!("gen.events_per_burst = {}", g.events_per_burst),
            format!("gen.min_events = {}", g.min_events),
            format!("gen.intra_burst_gap_min = {}", g.intra_burst_gap.0),
            format!("gen.intra_burst_gap_max = {}", g.intra_burst_gap.1),
            format!("gen.inter_burst_gap_min = {}", g.inter_burst_gap.0),
            format!("gen.inter_burst_gap_max = {}", g.inter_burst_gap.1),
            format!("gen.archetype_boost = {}", g.archetype_boost),
            format!("gen.seed = {}", g.seed),
            format!("segmentation.kernel = {}", s.kernel.name()),
            format!("segmentation.sigma = {}", s.sigma),
            format!("segmentation.bins = {}", s.bins),
            format!("segmentation.bins_per_sigma = {}", s.bins_per_sigma),
            format!("segmentation.window = {}", s.window),
            format!("split.seed = {}", self.split_seed),
            format!("split.unlabeled_train = {}", self.split_ratios.unlabeled.0),
            format!("split.unlabeled_val = {}", self.split_ratios.unlabeled.1),
            format!("split.unlabeled_test = {}", self.split_ratios.unlabeled.2),
            format!("split.labeled_train = {}", self.split_ratios.labeled.0),
            format!("split.labeled_val = {}", self.split_ratios.labeled.1),
            format!("split.labeled_test = {}", self.split_ratios.labeled.2),
        ]
    }

    /// Total canonical serialization: every key, fixed order, one per line.
    pub fn canonical(&self) -> String {
        let c = &self.contrastive;
        let p = &self.probe;
        let mut lines = vec![format!("seed = {}", self.seed)];
        lines.extend(self.identity_lines());
        lines.extend([
            format!("model.dim = {}", self.dim),
            format!("model.heads = {}", self.heads),
            format!("model.depth = {}", self.depth),
            format!("model.ffn_mult = {}", self.ffn_mult),
            format!("model.max_sessions = {}", self.max_sessions),
            format!("model.ln_eps = {}", self.ln_eps),
            format!("model.use_session_branch = {}", self.use_session_branch),
            format!("model.use_user_branch = {}", self.use_user_branch),
            format!("model.dropout_user_branch = {}", self.dropout_user_branch),
            format!("contrastive.batch_size = {}", c.batch_size),
            format!("contrastive.tau = {}", c.tau),
            format!("contrastive.rho_pre = {}", c.rho_pre),
            format!("contrastive.epochs = {}", c.epochs),
            format!("contrastive.lr = {}", c.lr),
            format!("contrastive.include_positive = {}", c.include_positive),
            format!("probe.task = {}", p.task),
            format!("probe.rho_tr = {}", p.rho_tr),
            format!("probe.epochs = {}", p.epochs),
            format!("probe.lr = {}", p.lr),
            format!("probe.fraction = {}", p.fraction),
            format!("report.table = {}", self.report_table.name()),
            format!("report.row = {}", self.report_row),
        ]);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Hash of the corpus-identity lines. Artifacts carry this so a
    /// consolidated report can refuse to mix numbers computed on different
    /// datasets; hyperparameters under comparison stay out of it.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for line in self.identity_lines() {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.segmentation.validate()?;
        self.contrastive.validate()?;
        self.probe.validate()?;
        self.model_config(self.gen.vocab_size.max(1)).validate()
    }

    /// The encoder shape for a corpus of the given vocabulary size. The
    /// projection head is attached; callers evaluating a frozen encoder
    /// drop it when loading a checkpoint.
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            dim: self.dim,
            heads: self.heads,
            depth: self.depth,
            ffn_mult: self.ffn_mult,
            max_sessions: self.max_sessions,
            ln_eps: self.ln_eps,
            use_session_branch: self.use_session_branch,
            use_user_branch: self.use_user_branch,
            dropout_user_branch: self.dropout_user_branch,
            with_projection_head: true,
        }
    }

    /// Pretraining settings with randomness rooted at the run seed.
    pub fn contrastive_config(&self) -> ContrastiveConfig {
        ContrastiveConfig { seed: self.seed, ..self.contrastive.clone() }
    }

    /// Probe settings with randomness rooted at the run seed.
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig { seed: self.seed, ..self.probe.clone() }
    }
}
