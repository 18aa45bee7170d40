//! Command implementations. Every command resolves its configuration the
//! same way (file, then --seed override, then validation), logs the resolved
//! form into the output directory, and stamps each artifact with the run
//! fingerprint so later stages can detect mismatched inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use simcurl_core::checkpoint::{load_encoder, save_encoder, save_probe};
use simcurl_core::config::RunConfig;
use simcurl_core::corpus::{
    generate_synthetic, read_corpus_jsonl, read_fingerprint, read_labels_jsonl,
    read_sessions_jsonl, split, write_corpus_tagged, write_labels_tagged,
    write_sessions_tagged, Corpus, LabeledTask, Splits,
};
use simcurl_core::error::{Error, Result};
use simcurl_core::eval::{
    evaluate_method, evaluate_task_with_probe, EvalReport, EvalSetup, Method,
};
use simcurl_core::model::EncoderParams;
use simcurl_core::sessions::{
    segment_corpus, sessions_from_truth, truth_from_sessions, Session,
};
use simcurl_core::training::pretrain;

pub fn resolve_config(path: Option<&Path>, seed: Option<u64>, seed_goes_to_gen: bool) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        if seed_goes_to_gen {
            cfg.gen.seed = s;
        } else {
            cfg.seed = s;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved.txt"), cfg.canonical())?;
    Ok(())
}

fn check_fingerprint(path: &Path, expected: &str) -> Result<()> {
    if let Some(found) = read_fingerprint(path)? {
        if found != expected {
            return Err(Error::Validation(format!(
                "{} was produced under fingerprint {}, this config resolves to {}",
                path.display(),
                &found[..found.len().min(12)],
                &expected[..expected.len().min(12)]
            )));
        }
    }
    Ok(())
}

fn load_corpus(path: &Path, fingerprint: &str) -> Result<Corpus> {
    check_fingerprint(path, fingerprint)?;
    read_corpus_jsonl(path)
}

fn load_sessions(
    corpus: &Corpus,
    sessions_path: Option<&Path>,
    cfg: &RunConfig,
    fingerprint: &str,
) -> Result<BTreeMap<u64, Vec<Session>>> {
    match sessions_path {
        Some(p) => {
            check_fingerprint(p, fingerprint)?;
            sessions_from_truth(corpus, &read_sessions_jsonl(p)?)
        }
        None => segment_corpus(corpus, &cfg.segmentation),
    }
}

/// Blob path sitting next to a checkpoint manifest.
pub fn blob_path_for(manifest: &Path) -> PathBuf {
    let name = manifest.file_name().and_then(|n| n.to_str()).unwrap_or("");
    match name.strip_suffix(".manifest.json") {
        Some(stem) => manifest.with_file_name(format!("{stem}.blob")),
        None => manifest.with_file_name(format!("{name}.blob")),
    }
}

pub fn cmd_gen(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = resolve_config(config, seed, true)?;
    write_resolved(&cfg, out)?;
    let fp = cfg.fingerprint();
    let generated = generate_synthetic(&cfg.gen)?;
    write_corpus_tagged(&generated.corpus, &out.join("corpus.jsonl"), &fp)?;
    write_labels_tagged(&generated.tasks, &out.join("labels.jsonl"), &fp)?;
    write_sessions_tagged(&generated.truth, &out.join("sessions.truth.jsonl"), &fp)?;
    println!(
        "gen: {} users, {} commands, {} tasks -> {}",
        generated.corpus.users.len(),
        generated.corpus.vocab_size(),
        generated.tasks.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_segment(
    corpus_path: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = resolve_config(config, seed, false)?;
    write_resolved(&cfg, out)?;
    let fp = cfg.fingerprint();
    let corpus = load_corpus(corpus_path, &fp)?;
    let sessions = segment_corpus(&corpus, &cfg.segmentation)?;
    let truth = truth_from_sessions(&sessions);
    write_sessions_tagged(&truth, &out.join("sessions.jsonl"), &fp)?;
    let total: usize = sessions.values().map(|s| s.len()).sum();
    println!("segment: {} sessions across {} users -> {}", total, sessions.len(), out.display());
    Ok(())
}

pub fn cmd_pretrain(
    corpus_path: &Path,
    sessions_path: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = resolve_config(config, seed, false)?;
    write_resolved(&cfg, out)?;
    let fp = cfg.fingerprint();
    let corpus = load_corpus(corpus_path, &fp)?;
    let sessions = load_sessions(&corpus, sessions_path, &cfg, &fp)?;

    let model_cfg = cfg.model_config(corpus.vocab_size());
    let mut params = EncoderParams::init(&model_cfg, cfg.seed)?;
    let users: Vec<_> = corpus.users.iter().collect();
    let report = pretrain(&mut params, &users, &sessions, &cfg.contrastive_config())?;

    save_encoder(&params, &fp, &out.join("encoder.manifest.json"), &out.join("encoder.blob"))?;
    let mut loss_csv = format!("# fingerprint = {fp}\nepoch,mean_loss\n");
    for (epoch, loss) in report.epoch_mean_loss.iter().enumerate() {
        loss_csv.push_str(&format!("{epoch},{loss}\n"));
    }
    fs::write(out.join("loss.csv"), loss_csv)?;
    println!(
        "pretrain: {} epochs, final mean loss {:.4} -> {}",
        report.epoch_mean_loss.len(),
        report.epoch_mean_loss.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn context_tags(cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut tags = BTreeMap::new();
    tags.insert("table".into(), cfg.report_table.name().to_string());
    if !cfg.report_row.is_empty() {
        tags.insert("row".into(), cfg.report_row.clone());
    }
    tags.insert("rho_pre".into(), format!("{}", cfg.contrastive.rho_pre));
    tags.insert("rho_tr".into(), format!("{}", cfg.probe.rho_tr));
    tags.insert("depth".into(), format!("{}", cfg.depth));
    tags.insert("batch".into(), format!("{}", cfg.contrastive.batch_size));
    tags.insert("seed".into(), format!("{}", cfg.seed));
    tags
}

fn write_report_files(report: &EvalReport, out: &Path, stem: &str) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Eval(format!("report encode: {e}")))?;
    fs::write(out.join(format!("{stem}.json")), json + "\n")?;

    let mut csv = format!("# fingerprint = {}\n", report.fingerprint);
    csv.push_str("method,fraction,task,accuracy,weighted_f1\n");
    for row in report.rows.iter().chain(&report.merged) {
        csv.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            report.method, report.fraction, row.task, row.accuracy, row.weighted_f1
        ));
    }
    fs::write(out.join(format!("{stem}.csv")), csv)?;
    Ok(())
}

struct LoadedEval {
    corpus: Corpus,
    tasks: Vec<LabeledTask>,
    sessions: BTreeMap<u64, Vec<Session>>,
    splits: Splits,
}

fn load_eval_inputs(
    corpus_path: &Path,
    labels_path: &Path,
    sessions_path: Option<&Path>,
    cfg: &RunConfig,
    fp: &str,
) -> Result<LoadedEval> {
    let corpus = load_corpus(corpus_path, fp)?;
    check_fingerprint(labels_path, fp)?;
    let tasks = read_labels_jsonl(labels_path)?;
    let sessions = load_sessions(&corpus, sessions_path, cfg, fp)?;
    let splits = split(&corpus, &tasks, cfg.split_ratios, cfg.split_seed)?;
    Ok(LoadedEval { corpus, tasks, sessions, splits })
}

pub fn cmd_probe(
    corpus_path: &Path,
    labels_path: &Path,
    checkpoint: &Path,
    sessions_path: Option<&Path>,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let cfg = resolve_config(config, seed, false)?;
    write_resolved(&cfg, out)?;
    let fp = cfg.fingerprint();
    let loaded = load_eval_inputs(corpus_path, labels_path, sessions_path, &cfg, &fp)?;
    let encoder = load_encoder(checkpoint, &blob_path_for(checkpoint))?;
    let setup = EvalSetup {
        corpus: &loaded.corpus,
        sessions: &loaded.sessions,
        tasks: &loaded.tasks,
        splits: &loaded.splits,
    };
    let (probe, mut report) = evaluate_task_with_probe(
        &setup,
        Method::SimCurl,
        Some(&encoder),
        &cfg.probe_config(),
        false,
    )?;
    report.fingerprint = fp.clone();
    report.context = context_tags(&cfg);
    save_probe(
        &probe,
        &encoder.config,
        &fp,
        &out.join("probe.manifest.json"),
        &out.join("probe.blob"),
    )?;
    write_report_files(&report, out, "eval")?;
    let row = &report.rows[0];
    println!(
        "probe: task {} accuracy {:.4} weighted F1 {:.4} -> {}",
        row.task,
        row.accuracy,
        row.weighted_f1,
        out.display()
    );
    Ok(())
}

pub struct EvalArgs<'a> {
    pub corpus: &'a Path,
    pub labels: &'a Path,
    pub checkpoint: Option<&'a Path>,
    pub sessions: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: Option<u64>,
    pub baseline: Option<&'a str>,
    pub merge_classes: bool,
    pub fraction: Option<f64>,
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = resolve_config(args.config, args.seed, false)?;
    write_resolved(&cfg, args.out)?;
    let fp = cfg.fingerprint();
    let loaded = load_eval_inputs(args.corpus, args.labels, args.sessions, &cfg, &fp)?;
    let setup = EvalSetup {
        corpus: &loaded.corpus,
        sessions: &loaded.sessions,
        tasks: &loaded.tasks,
        splits: &loaded.splits,
    };

    let method = match args.baseline {
        Some(name) => Method::parse(name)?,
        None => Method::SimCurl,
    };
    let encoder = match method {
        Method::SimCurl => {
            let manifest = args.checkpoint.ok_or_else(|| {
                Error::Eval("--checkpoint is required unless --baseline is given".into())
            })?;
            Some(load_encoder(manifest, &blob_path_for(manifest))?)
        }
        Method::RandomEncoder => Some(EncoderParams::init(
            &cfg.model_config(loaded.corpus.vocab_size()),
            cfg.seed,
        )?),
        Method::Bow | Method::CfIuf => None,
    };

    let mut probe_cfg = cfg.probe_config();
    if let Some(f) = args.fraction {
        probe_cfg.fraction = f;
    }

    // The main table wants every task; sweep artifacts probe only the
    // configured task to keep grid and few-shot runs cheap.
    use simcurl_core::config::ReportTable;
    let mut report = match cfg.report_table {
        ReportTable::Main | ReportTable::Ablation => {
            evaluate_method(&setup, method, encoder.as_ref(), &probe_cfg)?
        }
        ReportTable::Fewshot | ReportTable::Grid => {
            let (_, report) = evaluate_task_with_probe(
                &setup,
                method,
                encoder.as_ref(),
                &probe_cfg,
                args.merge_classes,
            )?;
            report
        }
    };
    if !args.merge_classes {
        report.merged.clear();
    }
    report.fingerprint = fp;
    report.context = context_tags(&cfg);
    write_report_files(&report, args.out, "eval")?;
    println!(
        "eval: method {} over {} task rows -> {}",
        report.method,
        report.rows.len(),
        args.out.display()
    );
    Ok(())
}
