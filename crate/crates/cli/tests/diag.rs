//! Temporary diagnostics (run with --ignored): per-task probe scores for
//! every method on the default corpus, plus pretraining loss curves.

use std::collections::BTreeMap;
use std::time::Instant;

use simcurl_core::corpus::{generate_synthetic, split, GenConfig, SplitRatios};
use simcurl_core::eval::{evaluate_method, EvalReport, EvalSetup, Method};
use simcurl_core::model::{EncoderParams, ModelConfig};
use simcurl_core::sessions::{segment_corpus, SegmentationConfig};
use simcurl_core::training::{pretrain, ContrastiveConfig, ProbeConfig};

fn f1s(report: &EvalReport) -> BTreeMap<String, f64> {
    report.rows.iter().map(|r| (r.task.clone(), r.weighted_f1)).collect()
}

fn gen_config() -> GenConfig {
    let mut cfg = GenConfig::default();
    let read = |name: &str, slot: &mut f64| {
        if let Ok(v) = std::env::var(name) {
            *slot = v.parse().unwrap();
        }
    };
    read("DIAG_BOOST", &mut cfg.archetype_boost);
    read("DIAG_ZIPF", &mut cfg.zipf_exponent);
    read("DIAG_BURSTS", &mut cfg.bursts_per_user);
    read("DIAG_EVENTS", &mut cfg.events_per_burst);
    if let Ok(v) = std::env::var("DIAG_MIN_EVENTS") {
        cfg.min_events = v.parse().unwrap();
    }
    cfg
}

#[test]
#[ignore]
fn diag_probe_table() {
    let gen_cfg = gen_config();
    eprintln!(
        "corpus: boost {} zipf {} bursts {} events/burst {} min_events {}",
        gen_cfg.archetype_boost,
        gen_cfg.zipf_exponent,
        gen_cfg.bursts_per_user,
        gen_cfg.events_per_burst,
        gen_cfg.min_events
    );
    let gen = generate_synthetic(&gen_cfg).unwrap();
    let total_events: usize = gen.corpus.users.iter().map(|u| u.events.len()).sum();
    eprintln!(
        "{} users, mean {:.1} events/user",
        gen.corpus.users.len(),
        total_events as f64 / gen.corpus.users.len() as f64
    );
    let sessions = segment_corpus(&gen.corpus, &SegmentationConfig::default()).unwrap();
    let splits = split(&gen.corpus, &gen.tasks, SplitRatios::default(), 0).unwrap();
    let s = EvalSetup {
        corpus: &gen.corpus,
        sessions: &sessions,
        tasks: &gen.tasks,
        splits: &splits,
    };

    let epochs: usize =
        std::env::var("DIAG_EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(30);
    let seed: u64 = std::env::var("DIAG_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(1);
    let mut cfg = ModelConfig::for_vocab(gen.corpus.vocab_size());
    if std::env::var("DIAG_DROPOUT_USER").is_ok() {
        cfg.dropout_user_branch = true;
        eprintln!("dropout_user_branch = true");
    }
    let random = EncoderParams::init(&cfg, seed).unwrap();
    let mut pretrained = random.clone();
    let users: Vec<_> = gen.corpus.users.iter().collect();
    let t0 = Instant::now();
    let report = pretrain(
        &mut pretrained,
        &users,
        &sessions,
        &ContrastiveConfig { seed, epochs, ..ContrastiveConfig::default() },
    )
    .unwrap();
    let curve: Vec<String> =
        report.epoch_mean_loss.iter().map(|l| format!("{l:.4}")).collect();
    eprintln!("pretrain seed {seed}, {epochs} epochs, {:.0}s: {}", t0.elapsed().as_secs_f64(), curve.join(" "));

    let pc = ProbeConfig { seed, ..ProbeConfig::default() };
    let t1 = Instant::now();
    let sc = f1s(&evaluate_method(&s, Method::SimCurl, Some(&pretrained), &pc).unwrap());
    let re = f1s(&evaluate_method(&s, Method::RandomEncoder, Some(&random), &pc).unwrap());
    let bw = f1s(&evaluate_method(&s, Method::Bow, None, &pc).unwrap());
    let cf = f1s(&evaluate_method(&s, Method::CfIuf, None, &pc).unwrap());
    eprintln!("probes took {:.0}s", t1.elapsed().as_secs_f64());
    eprintln!("{:16} {:>8} {:>8} {:>8} {:>8} {:>8}", "task", "simcurl", "random", "gain", "bow", "cfiuf");
    for (task, v) in &sc {
        eprintln!(
            "{:16} {:8.4} {:8.4} {:8.4} {:8.4} {:8.4}",
            task,
            v,
            re[task],
            v - re[task],
            bw[task],
            cf[task]
        );
    }
}
