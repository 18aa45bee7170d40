//! Frozen-encoder evaluation: linear probes over cached representations,
//! classical baselines, few-shot sweeps, and the ablation table.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{subsample_labels, Corpus, LabeledTask, Splits, UserSequence};
use crate::error::{Error, Result};
use crate::features::{cf_iuf, fit_iuf, user_features, IufWeights};
use crate::model::EncoderParams;
use crate::numerics::Tensor;
use crate::seeding::rng_for;
use crate::sessions::{session_dropout, Session};
use crate::training::{
    classification_metrics, merge_labels, train_probe, Metrics, ProbeConfig, ProbeParams,
    EXPERIENCE_MERGE,
};

/// How feature vectors for the probe are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Pretrained encoder, frozen.
    SimCurl,
    /// Freshly initialized encoder, frozen: the no-pretraining control.
    RandomEncoder,
    /// Whole-history command frequency vector.
    Bow,
    /// Command frequency weighted by log inverse user frequency.
    CfIuf,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::SimCurl => "simcurl",
            Method::RandomEncoder => "random-encoder",
            Method::Bow => "bow",
            Method::CfIuf => "cfiuf",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "simcurl" => Ok(Method::SimCurl),
            "random-encoder" => Ok(Method::RandomEncoder),
            "bow" => Ok(Method::Bow),
            "cfiuf" => Ok(Method::CfIuf),
            other => Err(Error::Eval(format!(
                "unknown method `{other}` (expected simcurl, random-encoder, bow, or cfiuf)"
            ))),
        }
    }

    pub fn needs_encoder(&self) -> bool {
        matches!(self, Method::SimCurl | Method::RandomEncoder)
    }
}

/// Caches encoder outputs keyed by (user, surviving-session set), so probe
/// epochs that redraw the same dropout view never recompute the forward
/// pass. The session set is keyed by a bitmask over session indices; users
/// with more than 64 sessions bypass the cache.
pub struct RepCache<'a> {
    params: &'a EncoderParams,
    cache: HashMap<(u64, u64), Vec<f64>>,
}

impl<'a> RepCache<'a> {
    pub fn new(params: &'a EncoderParams) -> Self {
        RepCache { params, cache: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }

    pub fn rep(&mut self, user: &UserSequence, kept: &[Session]) -> Result<Vec<f64>> {
        let key = session_mask(kept);
        if let Some(mask) = key {
            if let Some(hit) = self.cache.get(&(user.user_id, mask)) {
                return Ok(hit.clone());
            }
        }
        let rep = self.params.representation_for(user, kept)?.data().to_vec();
        if let Some(mask) = key {
            self.cache.insert((user.user_id, mask), rep.clone());
        }
        Ok(rep)
    }
}

fn session_mask(kept: &[Session]) -> Option<u64> {
    let mut mask = 0u64;
    for s in kept {
        if s.index >= 64 {
            return None;
        }
        mask |= 1 << s.index;
    }
    Some(mask)
}

/// Per-example feature rows for probe training (dropout-augmented per epoch)
/// and evaluation (full sequences).
enum FeatureSource<'a> {
    Encoder {
        cache: RepCache<'a>,
        sessions: &'a BTreeMap<u64, Vec<Session>>,
        rho_tr: f64,
        seed: u64,
    },
    Static {
        rows: HashMap<u64, Vec<f64>>,
    },
}

impl<'a> FeatureSource<'a> {
    fn train_row(&mut self, user: &UserSequence, epoch: usize) -> Result<Vec<f64>> {
        match self {
            FeatureSource::Encoder { cache, sessions, rho_tr, seed } => {
                let all = sessions.get(&user.user_id).ok_or_else(|| {
                    Error::Eval(format!("user {} has no sessions", user.user_id))
                })?;
                let kept = if *rho_tr == 0.0 {
                    all.clone()
                } else {
                    // The dropout stream depends only on (seed, user, epoch),
                    // so probes over different tasks and fractions share
                    // cached representations.
                    let mut rng =
                        rng_for(*seed, "probe-view", &[user.user_id, epoch as u64]);
                    session_dropout(all, *rho_tr, &mut rng)
                };
                cache.rep(user, &kept)
            }
            FeatureSource::Static { rows } => rows
                .get(&user.user_id)
                .cloned()
                .ok_or_else(|| Error::Eval(format!("no features for user {}", user.user_id))),
        }
    }

    fn eval_row(&mut self, user: &UserSequence) -> Result<Vec<f64>> {
        match self {
            FeatureSource::Encoder { cache, sessions, .. } => {
                let all = sessions.get(&user.user_id).ok_or_else(|| {
                    Error::Eval(format!("user {} has no sessions", user.user_id))
                })?;
                cache.rep(user, all)
            }
            FeatureSource::Static { rows } => rows
                .get(&user.user_id)
                .cloned()
                .ok_or_else(|| Error::Eval(format!("no features for user {}", user.user_id))),
        }
    }
}

/// Everything a probe run reads. The corpus and sessions are shared by all
/// methods; splits decide which users train and which evaluate.
pub struct EvalSetup<'a> {
    pub corpus: &'a Corpus,
    pub sessions: &'a BTreeMap<u64, Vec<Session>>,
    pub tasks: &'a [LabeledTask],
    pub splits: &'a Splits,
}

/// One scored (sub-)task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub task: String,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub support: Vec<usize>,
}

impl EvalRow {
    fn from_metrics(task: &str, m: &Metrics) -> Self {
        EvalRow {
            task: task.to_string(),
            accuracy: m.accuracy,
            weighted_f1: m.weighted_f1,
            per_class_f1: m.per_class_f1.clone(),
            support: m.support.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Result of evaluating one method at one label fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub fraction: f64,
    pub split_sizes: SplitSizes,
    /// One row per probed task, plus an `archetype_mean` aggregate when
    /// several archetype tasks are present.
    pub rows: Vec<EvalRow>,
    /// Scores after applying the class-merge map to predictions and truths.
    pub merged: Vec<EvalRow>,
    /// Hash of the run configuration; fills in when the run harness knows it.
    pub fingerprint: String,
    /// Free-form provenance tags (dropout rates, depth, batch, ablation row).
    pub context: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn row(&self, task: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.task == task)
    }
}

fn build_source<'a>(
    setup: &EvalSetup<'a>,
    method: Method,
    encoder: Option<&'a EncoderParams>,
    probe_cfg: &ProbeConfig,
) -> Result<FeatureSource<'a>> {
    match method {
        Method::SimCurl | Method::RandomEncoder => {
            let params = encoder.ok_or_else(|| {
                Error::Eval(format!("method {} needs an encoder", method.name()))
            })?;
            Ok(FeatureSource::Encoder {
                cache: RepCache::new(params),
                sessions: setup.sessions,
                rho_tr: probe_cfg.rho_tr,
                seed: probe_cfg.seed,
            })
        }
        Method::Bow => {
            let vocab = setup.corpus.vocab_size();
            let mut rows = HashMap::new();
            for user in &setup.corpus.users {
                rows.insert(user.user_id, user_features(user, vocab)?.values);
            }
            Ok(FeatureSource::Static { rows })
        }
        Method::CfIuf => {
            let weights = fit_iuf_on_train(setup)?;
            let mut rows = HashMap::new();
            for user in &setup.corpus.users {
                rows.insert(user.user_id, cf_iuf(user, &weights)?);
            }
            Ok(FeatureSource::Static { rows })
        }
    }
}

/// IUF statistics come from the pretraining split only, so evaluation users
/// never influence the weighting.
fn fit_iuf_on_train(setup: &EvalSetup) -> Result<IufWeights> {
    let train: Vec<&UserSequence> = setup
        .splits
        .unlabeled
        .train
        .iter()
        .filter_map(|&id| setup.corpus.user(id))
        .collect();
    if train.is_empty() {
        return Err(Error::Eval("empty pretraining split for IUF fitting".into()));
    }
    fit_iuf(&train, setup.corpus.vocab_size())
}

struct TaskScore {
    probe: ProbeParams,
    metrics: Metrics,
    merged: Option<Metrics>,
}

/// Trains and scores one probe for one task. Training rows are re-augmented
/// every epoch; evaluation uses full sequences. The optional merge map is
/// applied to predictions and truths before scoring, without retraining.
fn probe_task(
    setup: &EvalSetup,
    source: &mut FeatureSource,
    task: &LabeledTask,
    probe_cfg: &ProbeConfig,
    merge: Option<&[usize]>,
) -> Result<TaskScore> {
    let train_task = task.restricted_to(&setup.splits.labeled.train);
    let train_task = if probe_cfg.fraction < 1.0 {
        subsample_labels(&train_task, probe_cfg.fraction, probe_cfg.seed)?
    } else {
        train_task
    };
    let test_task = task.restricted_to(&setup.splits.labeled.test);
    if train_task.labels.is_empty() {
        return Err(Error::Eval(format!("task {} has no training labels", task.name)));
    }
    if test_task.labels.is_empty() {
        return Err(Error::Eval(format!("task {} has no test labels", task.name)));
    }

    let train_users: Vec<&UserSequence> = train_task
        .labels
        .keys()
        .map(|&id| {
            setup
                .corpus
                .user(id)
                .ok_or_else(|| Error::Eval(format!("labeled user {id} not in corpus")))
        })
        .collect::<Result<_>>()?;
    let y_train: Vec<usize> = train_task.labels.values().copied().collect();

    let matrix_for = |users: &[&UserSequence],
                          source: &mut FeatureSource,
                          epoch: Option<usize>|
     -> Result<Tensor> {
        let mut data = Vec::new();
        let mut dim = 0;
        for user in users {
            let row = match epoch {
                Some(e) => source.train_row(user, e)?,
                None => source.eval_row(user)?,
            };
            dim = row.len();
            data.extend(row);
        }
        Tensor::matrix(users.len(), dim, data)
    };

    let probe: ProbeParams = train_probe(
        |epoch| matrix_for(&train_users, &mut *source, Some(epoch)),
        &y_train,
        task.classes,
        probe_cfg,
    )?;

    let test_users: Vec<&UserSequence> = test_task
        .labels
        .keys()
        .map(|&id| {
            setup
                .corpus
                .user(id)
                .ok_or_else(|| Error::Eval(format!("labeled user {id} not in corpus")))
        })
        .collect::<Result<_>>()?;
    let y_test: Vec<usize> = test_task.labels.values().copied().collect();
    let x_test = matrix_for(&test_users, source, None)?;
    let predictions = probe.predict(&x_test)?;
    let metrics = classification_metrics(&y_test, &predictions, task.classes)?;

    let merged = match merge {
        Some(map) => {
            let classes = map.iter().max().map(|&m| m + 1).unwrap_or(0);
            let y_merged = merge_labels(&y_test, map)?;
            let p_merged = merge_labels(&predictions, map)?;
            Some(classification_metrics(&y_merged, &p_merged, classes)?)
        }
        None => None,
    };
    Ok(TaskScore { probe, metrics, merged })
}

fn split_sizes(setup: &EvalSetup) -> SplitSizes {
    SplitSizes {
        train: setup.splits.labeled.train.len(),
        val: setup.splits.labeled.val.len(),
        test: setup.splits.labeled.test.len(),
    }
}

/// Probes every task in the setup with one method and collects the report:
/// per-task rows, an `archetype_mean` aggregate, and merged-class scores for
/// the eight-level experience task.
pub fn evaluate_method(
    setup: &EvalSetup,
    method: Method,
    encoder: Option<&EncoderParams>,
    probe_cfg: &ProbeConfig,
) -> Result<EvalReport> {
    let mut source = build_source(setup, method, encoder, probe_cfg)?;
    let mut rows = Vec::new();
    let mut merged_rows = Vec::new();
    let mut archetype_acc = Vec::new();
    let mut archetype_f1 = Vec::new();
    for task in setup.tasks {
        let merge = if task.name == "experience" && task.classes == EXPERIENCE_MERGE.len()
        {
            Some(&EXPERIENCE_MERGE[..])
        } else {
            None
        };
        let score = probe_task(setup, &mut source, task, probe_cfg, merge)?;
        rows.push(EvalRow::from_metrics(&task.name, &score.metrics));
        if task.name.starts_with("archetype_") {
            archetype_acc.push(score.metrics.accuracy);
            archetype_f1.push(score.metrics.weighted_f1);
        }
        if let Some(m) = score.merged {
            merged_rows.push(EvalRow::from_metrics(&format!("{}_merged", task.name), &m));
        }
    }
    if !archetype_acc.is_empty() {
        let n = archetype_acc.len() as f64;
        rows.push(EvalRow {
            task: "archetype_mean".into(),
            accuracy: archetype_acc.iter().sum::<f64>() / n,
            weighted_f1: archetype_f1.iter().sum::<f64>() / n,
            per_class_f1: Vec::new(),
            support: Vec::new(),
        });
    }
    Ok(EvalReport {
        method: method.name().to_string(),
        fraction: probe_cfg.fraction,
        split_sizes: split_sizes(setup),
        rows,
        merged: merged_rows,
        fingerprint: String::new(),
        context: BTreeMap::new(),
    })
}

/// Probes a single named task (the `evaluate` entry point used by the
/// single-task CLI path).
pub fn evaluate_task(
    setup: &EvalSetup,
    method: Method,
    encoder: Option<&EncoderParams>,
    probe_cfg: &ProbeConfig,
    merge_classes: bool,
) -> Result<EvalReport> {
    evaluate_task_with_probe(setup, method, encoder, probe_cfg, merge_classes)
        .map(|(_, report)| report)
}

/// [`evaluate_task`], additionally handing back the trained probe so it can
/// be persisted.
pub fn evaluate_task_with_probe(
    setup: &EvalSetup,
    method: Method,
    encoder: Option<&EncoderParams>,
    probe_cfg: &ProbeConfig,
    merge_classes: bool,
) -> Result<(ProbeParams, EvalReport)> {
    let task = setup
        .tasks
        .iter()
        .find(|t| t.name == probe_cfg.task)
        .ok_or_else(|| Error::Eval(format!("unknown task `{}`", probe_cfg.task)))?;
    let merge = if merge_classes {
        if task.classes != EXPERIENCE_MERGE.len() {
            return Err(Error::Eval(format!(
                "--merge-classes needs an {}-class task, `{}` has {}",
                EXPERIENCE_MERGE.len(),
                task.name,
                task.classes
            )));
        }
        Some(&EXPERIENCE_MERGE[..])
    } else {
        None
    };
    let mut source = build_source(setup, method, encoder, probe_cfg)?;
    let score = probe_task(setup, &mut source, task, probe_cfg, merge)?;
    let rows = vec![EvalRow::from_metrics(&task.name, &score.metrics)];
    let mut merged_rows = Vec::new();
    if let Some(m) = score.merged {
        merged_rows.push(EvalRow::from_metrics(&format!("{}_merged", task.name), &m));
    }
    let report = EvalReport {
        method: method.name().to_string(),
        fraction: probe_cfg.fraction,
        split_sizes: split_sizes(setup),
        rows,
        merged: merged_rows,
        fingerprint: String::new(),
        context: BTreeMap::new(),
    };
    Ok((score.probe, report))
}

/// Few-shot transfer comparison: one probe per (method, fraction) on the
/// named task, sharing the test split. Label subsets are nested across
/// fractions by construction.
pub fn fewshot_sweep(
    setup: &EvalSetup,
    task_name: &str,
    pretrained: &EncoderParams,
    random_encoder: &EncoderParams,
    fractions: &[f64],
    probe_cfg: &ProbeConfig,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for &fraction in fractions {
        for method in [Method::SimCurl, Method::RandomEncoder, Method::Bow, Method::CfIuf]
        {
            let encoder = match method {
                Method::SimCurl => Some(pretrained),
                Method::RandomEncoder => Some(random_encoder),
                _ => None,
            };
            let cfg = ProbeConfig {
                task: task_name.to_string(),
                fraction,
                ..probe_cfg.clone()
            };
            let mut report = evaluate_task(setup, method, encoder, &cfg, false)?;
            report.context.insert("sweep".into(), "fewshot".into());
            reports.push(report);
        }
    }
    Ok(reports)
}
