//! Python bindings: synthetic corpora, density-based session segmentation,
//! contrastive pretraining of the user encoder, and linear-probe evaluation,
//! mirroring the `simcurl` command-line pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use simcurl_core::checkpoint::{load_encoder, save_encoder};
use simcurl_core::config::RunConfig;
use simcurl_core::corpus::{
    generate_synthetic, read_corpus_jsonl, read_labels_jsonl, split, write_corpus_jsonl,
    write_labels_jsonl, Corpus as CoreCorpus, GenConfig, LabeledTask, SessionTruth, SplitRatios,
    UserSequence,
};
use simcurl_core::error::Error;
use simcurl_core::eval::{evaluate_task, EvalReport, EvalRow, EvalSetup, Method};
use simcurl_core::model::{EncoderParams, ModelConfig};
use simcurl_core::numerics::{Tape, Tensor};
use simcurl_core::sessions::{segment_corpus, Kernel, SegmentationConfig, Session};
use simcurl_core::training::{
    contrastive_loss as tape_contrastive_loss, pretrain, ContrastiveConfig, ProbeConfig,
};

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A synthetic or loaded corpus together with its labeled tasks.
#[pyclass]
struct Corpus {
    corpus: CoreCorpus,
    tasks: Vec<LabeledTask>,
    truth: Option<SessionTruth>,
}

impl Corpus {
    fn user(&self, user_id: u64) -> PyResult<&UserSequence> {
        self.corpus
            .users
            .binary_search_by_key(&user_id, |u| u.user_id)
            .map(|i| &self.corpus.users[i])
            .map_err(|_| PyKeyError::new_err(format!("no user {user_id}")))
    }
}

#[pymethods]
impl Corpus {
    /// Generates a reproducible synthetic corpus of bursty command histories.
    #[staticmethod]
    #[pyo3(signature = (
        n_users = 2000,
        vocab_size = 200,
        archetype_count = 6,
        labeled_fraction = 0.3,
        bursts_per_user = 5.0,
        events_per_burst = 14.0,
        min_events = 50,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        n_users: usize,
        vocab_size: usize,
        archetype_count: usize,
        labeled_fraction: f64,
        bursts_per_user: f64,
        events_per_burst: f64,
        min_events: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = GenConfig {
            n_users,
            vocab_size,
            archetype_count,
            labeled_fraction,
            bursts_per_user,
            events_per_burst,
            min_events,
            seed,
            ..GenConfig::default()
        };
        let gen = generate_synthetic(&cfg).map_err(err)?;
        Ok(Corpus { corpus: gen.corpus, tasks: gen.tasks, truth: Some(gen.truth) })
    }

    /// Loads a corpus written by `save` or by the `gen` subcommand. The
    /// vocabulary sidecar must sit next to the corpus file.
    #[staticmethod]
    #[pyo3(signature = (corpus_path, labels_path = None))]
    fn load(corpus_path: PathBuf, labels_path: Option<PathBuf>) -> PyResult<Self> {
        let corpus = read_corpus_jsonl(&corpus_path).map_err(err)?;
        let tasks = match labels_path {
            Some(path) => read_labels_jsonl(&path).map_err(err)?,
            None => Vec::new(),
        };
        Ok(Corpus { corpus, tasks, truth: None })
    }

    #[pyo3(signature = (corpus_path, labels_path = None))]
    fn save(&self, corpus_path: PathBuf, labels_path: Option<PathBuf>) -> PyResult<()> {
        write_corpus_jsonl(&self.corpus, &corpus_path).map_err(err)?;
        if let Some(path) = labels_path {
            write_labels_jsonl(&self.tasks, &path).map_err(err)?;
        }
        Ok(())
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.corpus.users.len()
    }

    #[getter]
    fn vocab(&self) -> Vec<String> {
        self.corpus.vocab.clone()
    }

    fn user_ids(&self) -> Vec<u64> {
        self.corpus.users.iter().map(|u| u.user_id).collect()
    }

    /// `(command_id, timestamp)` pairs of one user, time-ordered.
    fn events(&self, user_id: u64) -> PyResult<Vec<(u32, f64)>> {
        Ok(self.user(user_id)?.events.iter().map(|e| (e.command_id, e.timestamp)).collect())
    }

    /// Task name -> class count.
    fn tasks(&self) -> BTreeMap<String, usize> {
        self.tasks.iter().map(|t| (t.name.clone(), t.classes)).collect()
    }

    /// User id -> class label for one task.
    fn labels(&self, task: &str) -> PyResult<BTreeMap<u64, usize>> {
        self.tasks
            .iter()
            .find(|t| t.name == task)
            .map(|t| t.labels.clone())
            .ok_or_else(|| PyKeyError::new_err(format!("no task `{task}`")))
    }

    /// Ground-truth session count for one user; only present on generated
    /// corpora.
    fn true_session_count(&self, user_id: u64) -> PyResult<usize> {
        self.truth
            .as_ref()
            .and_then(|t| t.session_count(user_id))
            .ok_or_else(|| PyKeyError::new_err(format!("no session truth for user {user_id}")))
    }

    fn __len__(&self) -> usize {
        self.corpus.users.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Corpus({} users, {} commands, {} tasks)",
            self.corpus.users.len(),
            self.corpus.vocab.len(),
            self.tasks.len()
        )
    }
}

/// Density-based segmentation of every user's history.
#[pyclass]
struct Sessions {
    map: BTreeMap<u64, Vec<Session>>,
}

impl Sessions {
    fn list(&self, user_id: u64) -> PyResult<&[Session]> {
        self.map
            .get(&user_id)
            .map(|v| v.as_slice())
            .ok_or_else(|| PyKeyError::new_err(format!("no sessions for user {user_id}")))
    }
}

#[pymethods]
impl Sessions {
    /// Segments each user's events by nearest density peak.
    #[staticmethod]
    #[pyo3(signature = (corpus, sigma = 30.0, kernel = "gaussian", window = 1, bins = 0, bins_per_sigma = 2.0))]
    fn segment(
        corpus: &Corpus,
        sigma: f64,
        kernel: &str,
        window: usize,
        bins: usize,
        bins_per_sigma: f64,
    ) -> PyResult<Self> {
        let cfg = SegmentationConfig {
            kernel: Kernel::parse(kernel).map_err(err)?,
            sigma,
            bins,
            bins_per_sigma,
            window,
        };
        Ok(Sessions { map: segment_corpus(&corpus.corpus, &cfg).map_err(err)? })
    }

    /// `[start, end)` event index ranges of one user's sessions.
    fn spans(&self, user_id: u64) -> PyResult<Vec<(usize, usize)>> {
        Ok(self.list(user_id)?.iter().map(|s| (s.start, s.end)).collect())
    }

    fn count(&self, user_id: u64) -> PyResult<usize> {
        Ok(self.list(user_id)?.len())
    }

    fn user_ids(&self) -> Vec<u64> {
        self.map.keys().copied().collect()
    }

    fn __repr__(&self) -> String {
        let total: usize = self.map.values().map(|v| v.len()).sum();
        format!("Sessions({} users, {} sessions)", self.map.len(), total)
    }
}

/// The user-session encoder: a transformer over per-session command
/// frequencies combined with an MLP over whole-history frequencies.
#[pyclass]
struct Encoder {
    params: EncoderParams,
}

#[pymethods]
impl Encoder {
    /// Fresh random initialization, including the projection head used
    /// during pretraining.
    #[staticmethod]
    #[pyo3(signature = (vocab_size, dim = 64, heads = 4, depth = 2, ffn_mult = 4, max_sessions = 64, seed = 0))]
    fn init(
        vocab_size: usize,
        dim: usize,
        heads: usize,
        depth: usize,
        ffn_mult: usize,
        max_sessions: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            dim,
            heads,
            depth,
            ffn_mult,
            max_sessions,
            ..ModelConfig::for_vocab(vocab_size)
        };
        cfg.validate().map_err(err)?;
        Ok(Encoder { params: EncoderParams::init(&cfg, seed).map_err(err)? })
    }

    /// Loads a checkpoint written by `save` or the `pretrain` subcommand.
    /// Saved encoders carry no projection head.
    #[staticmethod]
    #[pyo3(signature = (manifest_path, blob_path = None))]
    fn load(manifest_path: PathBuf, blob_path: Option<PathBuf>) -> PyResult<Self> {
        let blob = blob_path.unwrap_or_else(|| default_blob_path(&manifest_path));
        Ok(Encoder { params: load_encoder(&manifest_path, &blob).map_err(err)? })
    }

    /// Writes the manifest plus tensor blob, dropping the projection head.
    #[pyo3(signature = (manifest_path, blob_path = None))]
    fn save(&self, manifest_path: PathBuf, blob_path: Option<PathBuf>) -> PyResult<()> {
        let blob = blob_path.unwrap_or_else(|| default_blob_path(&manifest_path));
        save_encoder(&self.params, "", &manifest_path, &blob).map_err(err)
    }

    /// Contrastive pretraining over all corpus users; returns the mean loss
    /// per anchor for each epoch.
    #[pyo3(signature = (corpus, sessions, epochs = 30, batch_size = 64, tau = 1.0, rho_pre = 0.3, lr = 1e-3, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn pretrain(
        &mut self,
        corpus: &Corpus,
        sessions: &Sessions,
        epochs: usize,
        batch_size: usize,
        tau: f64,
        rho_pre: f64,
        lr: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let cfg = ContrastiveConfig {
            batch_size,
            tau,
            rho_pre,
            epochs,
            lr,
            seed,
            ..ContrastiveConfig::default()
        };
        let users: Vec<&UserSequence> = corpus.corpus.users.iter().collect();
        let report = pretrain(&mut self.params, &users, &sessions.map, &cfg).map_err(err)?;
        Ok(report.epoch_mean_loss)
    }

    /// The frozen representation of one user over their full session list.
    fn representation(
        &self,
        corpus: &Corpus,
        sessions: &Sessions,
        user_id: u64,
    ) -> PyResult<Vec<f64>> {
        let user = corpus.user(user_id)?;
        let list = sessions.list(user_id)?;
        let rep = self.params.representation_for(user, list).map_err(err)?;
        Ok(rep.data().to_vec())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.params.config.dim
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.params.config.vocab_size
    }

    fn __repr__(&self) -> String {
        let c = &self.params.config;
        format!(
            "Encoder(vocab={}, dim={}, heads={}, depth={}, projection={})",
            c.vocab_size,
            c.dim,
            c.heads,
            c.depth,
            c.with_projection_head
        )
    }
}

fn default_blob_path(manifest: &Path) -> PathBuf {
    let name = manifest.file_name().and_then(|n| n.to_str()).unwrap_or("");
    match name.strip_suffix(".manifest.json") {
        Some(stem) => manifest.with_file_name(format!("{stem}.blob")),
        None => manifest.with_extension("blob"),
    }
}

fn row_dict<'py>(py: Python<'py>, row: &EvalRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("task", &row.task)?;
    d.set_item("accuracy", row.accuracy)?;
    d.set_item("weighted_f1", row.weighted_f1)?;
    d.set_item("per_class_f1", &row.per_class_f1)?;
    d.set_item("support", &row.support)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, report: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", &report.method)?;
    d.set_item("fraction", report.fraction)?;
    let sizes = PyDict::new(py);
    sizes.set_item("train", report.split_sizes.train)?;
    sizes.set_item("val", report.split_sizes.val)?;
    sizes.set_item("test", report.split_sizes.test)?;
    d.set_item("split_sizes", sizes)?;
    let rows: Vec<Bound<'py, PyDict>> =
        report.rows.iter().map(|r| row_dict(py, r)).collect::<PyResult<_>>()?;
    d.set_item("rows", rows)?;
    let merged: Vec<Bound<'py, PyDict>> =
        report.merged.iter().map(|r| row_dict(py, r)).collect::<PyResult<_>>()?;
    d.set_item("merged", merged)?;
    Ok(d)
}

/// Trains a linear probe on frozen features and scores it on held-out users.
///
/// `method` is one of `simcurl` (needs `encoder`), `random-encoder` (uses
/// `encoder` if given, otherwise a fresh default-shaped initialization),
/// `bow`, or `cfiuf`.
#[pyfunction]
#[pyo3(signature = (
    corpus,
    sessions,
    task,
    method = "simcurl",
    encoder = None,
    fraction = 1.0,
    rho_tr = 0.5,
    epochs = 200,
    lr = 0.05,
    seed = 0,
    split_seed = 0,
    merge_classes = false,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    corpus: &Corpus,
    sessions: &Sessions,
    task: &str,
    method: &str,
    encoder: Option<&Encoder>,
    fraction: f64,
    rho_tr: f64,
    epochs: usize,
    lr: f64,
    seed: u64,
    split_seed: u64,
    merge_classes: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let method = Method::parse(method).map_err(err)?;
    let params: Option<EncoderParams> = match method {
        Method::SimCurl => Some(
            encoder
                .ok_or_else(|| {
                    PyValueError::new_err("method `simcurl` needs a pretrained encoder")
                })?
                .params
                .clone(),
        ),
        Method::RandomEncoder => Some(match encoder {
            Some(e) => e.params.clone(),
            None => {
                let cfg = ModelConfig::for_vocab(corpus.corpus.vocab_size());
                EncoderParams::init(&cfg, seed).map_err(err)?
            }
        }),
        Method::Bow | Method::CfIuf => None,
    };
    let splits =
        split(&corpus.corpus, &corpus.tasks, SplitRatios::default(), split_seed).map_err(err)?;
    let setup = EvalSetup {
        corpus: &corpus.corpus,
        sessions: &sessions.map,
        tasks: &corpus.tasks,
        splits: &splits,
    };
    let probe_cfg = ProbeConfig { task: task.to_string(), rho_tr, epochs, lr, fraction, seed };
    probe_cfg.validate().map_err(err)?;
    let report =
        evaluate_task(&setup, method, params.as_ref(), &probe_cfg, merge_classes).map_err(err)?;
    report_dict(py, &report)
}

/// The batch contrastive loss over two augmented views (lists of equal-length
/// embedding rows; row i of each view belongs to the same user).
#[pyfunction]
#[pyo3(signature = (view1, view2, tau = 1.0, include_positive = false))]
fn contrastive_loss(
    view1: Vec<Vec<f64>>,
    view2: Vec<Vec<f64>>,
    tau: f64,
    include_positive: bool,
) -> PyResult<f64> {
    let dim = view1.first().map(|r| r.len()).unwrap_or(0);
    if dim == 0 || view1.iter().chain(&view2).any(|r| r.len() != dim) {
        return Err(PyValueError::new_err("views must be nonempty rows of equal length"));
    }
    let mut tape = Tape::new();
    let ids = |tape: &mut Tape, rows: &[Vec<f64>]| -> PyResult<Vec<_>> {
        rows.iter()
            .map(|r| Ok(tape.input(Tensor::matrix(1, dim, r.clone()).map_err(err)?)))
            .collect()
    };
    let v1 = ids(&mut tape, &view1)?;
    let v2 = ids(&mut tape, &view2)?;
    let loss =
        tape_contrastive_loss(&mut tape, &v1, &v2, tau, include_positive).map_err(err)?;
    tape.value(loss).item().map_err(err)
}

/// The configuration fingerprint the CLI stamps into artifacts: a hash of
/// the corpus-identity keys (generation, segmentation, splits).
#[pyfunction]
fn config_fingerprint(config_text: &str) -> PyResult<String> {
    let cfg = RunConfig::parse(config_text).map_err(err)?;
    Ok(cfg.fingerprint())
}

#[pymodule]
fn simcurl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Sessions>()?;
    m.add_class::<Encoder>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(config_fingerprint, m)?)?;
    Ok(())
}
