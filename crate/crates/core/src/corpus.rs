//! Loading a directory of session files plus optional `labels.json`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::assessment::LabeledSession;
use crate::items::{ItemId, ItemScores};
use crate::transcript::{parse_transcript, SessionTranscript, TranscriptError};

pub const LABELS_FILE: &str = "labels.json";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {source}", path.display())]
    Transcript {
        path: PathBuf,
        #[source]
        source: TranscriptError,
    },
    #[error("session `{id}` appears in both {} and {}", first.display(), second.display())]
    DuplicateSession { id: String, first: PathBuf, second: PathBuf },
    #[error("no *.jsonl session files in {}", .0.display())]
    NoSessions(PathBuf),
    #[error("labels file not found: {}", .0.display())]
    MissingLabels(PathBuf),
    #[error("{}: {reason}", path.display())]
    Labels { path: PathBuf, reason: String },
    #[error("session `{0}` has no entry in labels.json")]
    Unlabeled(String),
    #[error("session `{0}` has no clinician item sheet in its header")]
    MissingClinicianItems(String),
}

/// Sessions sorted by id, with labels when present.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub root: PathBuf,
    pub sessions: Vec<SessionTranscript>,
    pub labels: Option<BTreeMap<String, ItemScores>>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn load_corpus(dir: &Path) -> Result<Corpus, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "jsonl") && p.is_file());
    files.sort();
    if files.is_empty() {
        return Err(CorpusError::NoSessions(dir.to_path_buf()));
    }

    let mut seen: BTreeMap<String, (PathBuf, SessionTranscript)> = BTreeMap::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let t = parse_transcript(&text).map_err(|source| CorpusError::Transcript {
            path: path.clone(),
            source,
        })?;
        if let Some((first, _)) = seen.get(t.session_id()) {
            return Err(CorpusError::DuplicateSession {
                id: t.session_id().to_string(),
                first: first.clone(),
                second: path,
            });
        }
        seen.insert(t.session_id().to_string(), (path, t));
    }
    let sessions: Vec<SessionTranscript> = seen.into_values().map(|(_, t)| t).collect();

    let labels_path = dir.join(LABELS_FILE);
    let labels = if labels_path.exists() {
        Some(load_labels(&labels_path, &sessions)?)
    } else {
        None
    };
    Ok(Corpus {
        root: dir.to_path_buf(),
        sessions,
        labels,
    })
}

fn load_labels(path: &Path, sessions: &[SessionTranscript]) -> Result<BTreeMap<String, ItemScores>, CorpusError> {
    let bad = |reason: String| CorpusError::Labels {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let labels: BTreeMap<String, ItemScores> = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    for (id, scores) in &labels {
        if !sessions.iter().any(|s| s.session_id() == id) {
            return Err(bad(format!("label for unknown session `{id}`")));
        }
        if let Some((item, v)) = scores.iter().find(|(_, v)| **v > 3) {
            return Err(bad(format!("session `{id}`: {item} = {v} is outside 0..=3")));
        }
    }
    Ok(labels)
}

impl Corpus {
    pub fn session(&self, id: &str) -> Option<&SessionTranscript> {
        self.sessions.iter().find(|s| s.session_id() == id)
    }

    /// Every session paired with its labels and clinician items.
    pub fn labeled_sessions(&self) -> Result<Vec<LabeledSession>, CorpusError> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| CorpusError::MissingLabels(self.root.join(LABELS_FILE)))?;
        self.sessions
            .iter()
            .map(|s| {
                let id = s.session_id();
                let truth = *labels.get(id).ok_or_else(|| CorpusError::Unlabeled(id.to_string()))?;
                let clinician = *s
                    .clinician_items()
                    .ok_or_else(|| CorpusError::MissingClinicianItems(id.to_string()))?;
                Ok(LabeledSession {
                    session_id: id.to_string(),
                    truth,
                    clinician,
                })
            })
            .collect()
    }

    /// Per-item label means, for prompt statistics.
    pub fn label_means(&self) -> Option<BTreeMap<ItemId, f64>> {
        let labels = self.labels.as_ref().filter(|l| !l.is_empty())?;
        let n = labels.len() as f64;
        Some(
            ItemId::ALL
                .into_iter()
                .map(|id| (id, labels.values().map(|s| f64::from(s[id])).sum::<f64>() / n))
                .collect(),
        )
    }
}
