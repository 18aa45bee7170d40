//! JSONL serialization for corpora, labels, and session boundaries.
//!
//! Files are line-oriented so they stream and diff well. Writing is
//! deterministic (fixed field order, shortest-round-trip floats), so
//! write → read → write reproduces a file byte for byte.
//!
//! A corpus file `foo.jsonl` travels with a vocabulary sidecar
//! `foo.vocab.json` holding `{"commands": [...]}`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{CommandEvent, Corpus, LabeledTask, SessionTruth, UserSequence};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct UserLine {
    user_id: u64,
    /// `[command_id, timestamp]` pairs.
    events: Vec<(u32, f64)>,
}

#[derive(Serialize, Deserialize)]
struct VocabSidecar {
    commands: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LabelLine {
    task: String,
    classes: usize,
    user_id: u64,
    label: usize,
}

#[derive(Serialize, Deserialize)]
struct SessionLine {
    user_id: u64,
    /// Event index at which each session starts; first entry is 0.
    boundaries: Vec<usize>,
}

/// Optional first line of any JSONL artifact, tying it to the run
/// configuration that produced it.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    fingerprint: String,
}

fn header_fingerprint(line: &str) -> Option<String> {
    serde_json::from_str::<HeaderLine>(line).ok().map(|h| h.fingerprint)
}

fn write_header(w: &mut impl Write, fingerprint: &str) -> Result<()> {
    if !fingerprint.is_empty() {
        serde_json::to_writer(&mut *w, &HeaderLine { fingerprint: fingerprint.to_string() })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads the fingerprint header of a JSONL artifact, if it has one.
pub fn read_fingerprint(path: &Path) -> Result<Option<String>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    Ok(header_fingerprint(first.trim_end()))
}

/// Vocabulary sidecar path for a corpus file.
pub fn vocab_path(corpus_path: &Path) -> PathBuf {
    corpus_path.with_extension("vocab.json")
}

pub fn write_corpus_jsonl(corpus: &Corpus, path: &Path) -> Result<()> {
    write_corpus_tagged(corpus, path, "")
}

/// Like [`write_corpus_jsonl`] with a fingerprint header line.
pub fn write_corpus_tagged(corpus: &Corpus, path: &Path, fingerprint: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, fingerprint)?;
    for user in &corpus.users {
        let line = UserLine {
            user_id: user.user_id,
            events: user.events.iter().map(|e| (e.command_id, e.timestamp)).collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let sidecar = VocabSidecar { commands: corpus.vocab.clone() };
    let mut vw = BufWriter::new(File::create(vocab_path(path))?);
    serde_json::to_writer(&mut vw, &sidecar)?;
    vw.write_all(b"\n")?;
    vw.flush()?;
    Ok(())
}

pub fn read_corpus_jsonl(path: &Path) -> Result<Corpus> {
    let vocab_file = vocab_path(path);
    let sidecar: VocabSidecar = serde_json::from_reader(File::open(&vocab_file).map_err(|e| {
        Error::Validation(format!("missing vocabulary sidecar {}: {e}", vocab_file.display()))
    })?)?;

    let reader = BufReader::new(File::open(path)?);
    let mut users = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (idx == 0 && header_fingerprint(&line).is_some()) {
            continue;
        }
        let parsed: UserLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, detail: e.to_string() })?;
        users.push(UserSequence {
            user_id: parsed.user_id,
            events: parsed
                .events
                .into_iter()
                .map(|(command_id, timestamp)| CommandEvent { command_id, timestamp })
                .collect(),
        });
    }
    let corpus = Corpus { users, vocab: sidecar.commands };
    corpus.validate()?;
    Ok(corpus)
}

/// One line per (task, user) pair, tasks contiguous in declaration order.
pub fn write_labels_jsonl(tasks: &[LabeledTask], path: &Path) -> Result<()> {
    write_labels_tagged(tasks, path, "")
}

/// Like [`write_labels_jsonl`] with a fingerprint header line.
pub fn write_labels_tagged(tasks: &[LabeledTask], path: &Path, fingerprint: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, fingerprint)?;
    for task in tasks {
        for (&user_id, &label) in &task.labels {
            let line = LabelLine { task: task.name.clone(), classes: task.classes, user_id, label };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_jsonl(path: &Path) -> Result<Vec<LabeledTask>> {
    let reader = BufReader::new(File::open(path)?);
    let mut order: Vec<String> = Vec::new();
    let mut tasks: BTreeMap<String, LabeledTask> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (idx == 0 && header_fingerprint(&line).is_some()) {
            continue;
        }
        let parsed: LabelLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, detail: e.to_string() })?;
        let entry = tasks.entry(parsed.task.clone()).or_insert_with(|| {
            order.push(parsed.task.clone());
            LabeledTask { name: parsed.task.clone(), classes: parsed.classes, labels: BTreeMap::new() }
        });
        if entry.classes != parsed.classes {
            return Err(Error::Parse {
                line: idx + 1,
                detail: format!(
                    "task {} class count changed from {} to {}",
                    parsed.task, entry.classes, parsed.classes
                ),
            });
        }
        if entry.labels.insert(parsed.user_id, parsed.label).is_some() {
            return Err(Error::Parse {
                line: idx + 1,
                detail: format!("duplicate label for user {} in task {}", parsed.user_id, parsed.task),
            });
        }
    }
    let out: Vec<LabeledTask> =
        order.into_iter().map(|name| tasks.remove(&name).expect("tracked")).collect();
    for task in &out {
        task.validate()?;
    }
    Ok(out)
}

pub fn write_sessions_jsonl(truth: &SessionTruth, path: &Path) -> Result<()> {
    write_sessions_tagged(truth, path, "")
}

/// Like [`write_sessions_jsonl`] with a fingerprint header line.
pub fn write_sessions_tagged(truth: &SessionTruth, path: &Path, fingerprint: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, fingerprint)?;
    for (&user_id, starts) in &truth.starts {
        let line = SessionLine { user_id, boundaries: starts.clone() };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sessions_jsonl(path: &Path) -> Result<SessionTruth> {
    let reader = BufReader::new(File::open(path)?);
    let mut starts = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || (idx == 0 && header_fingerprint(&line).is_some()) {
            continue;
        }
        let parsed: SessionLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, detail: e.to_string() })?;
        if !parsed.boundaries.is_empty() && parsed.boundaries[0] != 0 {
            return Err(Error::Parse {
                line: idx + 1,
                detail: "session boundaries must start at event 0".into(),
            });
        }
        if parsed.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Parse {
                line: idx + 1,
                detail: "session boundaries must be strictly increasing".into(),
            });
        }
        starts.insert(parsed.user_id, parsed.boundaries);
    }
    Ok(SessionTruth { starts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_corpus() -> Corpus {
        Corpus {
            users: vec![
                UserSequence {
                    user_id: 3,
                    events: vec![
                        CommandEvent { command_id: 0, timestamp: 1.5 },
                        CommandEvent { command_id: 2, timestamp: 2.25 },
                    ],
                },
                UserSequence {
                    user_id: 9,
                    events: vec![CommandEvent { command_id: 1, timestamp: 0.125 }],
                },
            ],
            vocab: vec!["ls".into(), "cd".into(), "make".into()],
        }
    }

    #[test]
    fn corpus_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = tiny_corpus();
        write_corpus_jsonl(&corpus, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let first_vocab = std::fs::read(vocab_path(&path)).unwrap();

        let reread = read_corpus_jsonl(&path).unwrap();
        assert_eq!(reread, corpus);

        write_corpus_jsonl(&reread, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
        assert_eq!(std::fs::read(vocab_path(&path)).unwrap(), first_vocab);
    }

    #[test]
    fn fingerprint_header_is_written_read_and_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = tiny_corpus();
        write_corpus_tagged(&corpus, &path, "abc123").unwrap();
        assert_eq!(read_fingerprint(&path).unwrap().as_deref(), Some("abc123"));
        assert_eq!(read_corpus_jsonl(&path).unwrap(), corpus);

        let untagged = dir.path().join("plain.jsonl");
        write_corpus_jsonl(&corpus, &untagged).unwrap();
        assert_eq!(read_fingerprint(&untagged).unwrap(), None);

        let labels_path = dir.path().join("labels.jsonl");
        let tasks = vec![LabeledTask {
            name: "t".into(),
            classes: 2,
            labels: [(1u64, 0usize)].into_iter().collect(),
        }];
        write_labels_tagged(&tasks, &labels_path, "abc123").unwrap();
        assert_eq!(read_fingerprint(&labels_path).unwrap().as_deref(), Some("abc123"));
        assert_eq!(read_labels_jsonl(&labels_path).unwrap(), tasks);

        let sessions_path = dir.path().join("sessions.jsonl");
        let truth =
            SessionTruth { starts: [(1u64, vec![0usize, 4])].into_iter().collect() };
        write_sessions_tagged(&truth, &sessions_path, "abc123").unwrap();
        assert_eq!(read_fingerprint(&sessions_path).unwrap().as_deref(), Some("abc123"));
        assert_eq!(read_sessions_jsonl(&sessions_path).unwrap(), truth);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus_jsonl(&tiny_corpus(), &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{\"user_id\": oops}\n");
        std::fs::write(&path, text).unwrap();

        match read_corpus_jsonl(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error with line number, got {other:?}"),
        }
    }

    #[test]
    fn missing_vocab_sidecar_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus_jsonl(&tiny_corpus(), &path).unwrap();
        std::fs::remove_file(vocab_path(&path)).unwrap();
        assert!(matches!(read_corpus_jsonl(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn labels_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let tasks = vec![
            LabeledTask {
                name: "experience".into(),
                classes: 8,
                labels: [(1u64, 3usize), (2, 7)].into_iter().collect(),
            },
            LabeledTask {
                name: "archetype_0".into(),
                classes: 3,
                labels: [(1u64, 0usize), (2, 2)].into_iter().collect(),
            },
        ];
        write_labels_jsonl(&tasks, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let reread = read_labels_jsonl(&path).unwrap();
        assert_eq!(reread, tasks);
        write_labels_jsonl(&reread, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn duplicate_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        std::fs::write(
            &path,
            "{\"task\":\"t\",\"classes\":2,\"user_id\":1,\"label\":0}\n\
             {\"task\":\"t\",\"classes\":2,\"user_id\":1,\"label\":1}\n",
        )
        .unwrap();
        match read_labels_jsonl(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn sessions_round_trip_and_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let truth = SessionTruth {
            starts: [(5u64, vec![0usize, 10, 25]), (6, vec![0])].into_iter().collect(),
        };
        write_sessions_jsonl(&truth, &path).unwrap();
        let first = std::fs::read(&path).unwrap();
        let reread = read_sessions_jsonl(&path).unwrap();
        assert_eq!(reread, truth);
        write_sessions_jsonl(&reread, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);

        std::fs::write(&path, "{\"user_id\":1,\"boundaries\":[4,10]}\n").unwrap();
        assert!(read_sessions_jsonl(&path).is_err());
    }
}
