//! Session transcripts: data model, line-delimited JSON format and
//! whitespace/merge normalization.
//!
//! A session file is UTF-8 JSON lines. The first line is a header:
//!
//! ```text
//! {"session_id": "s01", "age_months": 96, "gender": "m", "clinician_items": {"A9": 0, ...}}
//! ```
//!
//! Every following line is one utterance:
//!
//! ```text
//! {"speaker": "doctor", "text": "What did you do today?", "t0": 1.5, "t1": 3.0}
//! ```
//!
//! Blank lines are skipped. Text is NFC-normalized at parse time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use unicode_normalization::UnicodeNormalization;

use crate::assessment::ClinicianItemSheet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranscriptError {
    #[error("line {line}: malformed line ({reason})")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: unknown speaker `{label}`")]
    UnknownSpeaker { line: usize, label: String },
    #[error("session has no utterances")]
    EmptySession,
    #[error("line {line}: duplicate header")]
    DuplicateHeader { line: usize },
}

impl TranscriptError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        TranscriptError::MalformedLine {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Doctor,
    Child,
    Other,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Doctor => "doctor",
            Speaker::Child => "child",
            Speaker::Other => "other",
        }
    }

    /// Label used when rendering dialogue for prompts.
    pub fn display_label(self) -> &'static str {
        match self {
            Speaker::Doctor => "Doctor",
            Speaker::Child => "Child",
            Speaker::Other => "Other",
        }
    }

    /// Swaps doctor and child; other speakers are unchanged.
    pub fn swapped(self) -> Speaker {
        match self {
            Speaker::Doctor => Speaker::Child,
            Speaker::Child => Speaker::Doctor,
            Speaker::Other => Speaker::Other,
        }
    }
}

impl FromStr for Speaker {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "doctor" => Ok(Speaker::Doctor),
            "child" => Ok(Speaker::Child),
            "other" => Ok(Speaker::Other),
            _ => Err(s.to_string()),
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gender {
    #[serde(rename = "m")]
    Male,
    #[serde(rename = "f")]
    Female,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Utterance {
            speaker,
            text: text.into(),
            index: 0,
            t0: None,
            t1: None,
        }
    }

    pub fn with_times(mut self, t0: f64, t1: f64) -> Self {
        self.t0 = Some(t0);
        self.t1 = Some(t1);
        self
    }
}

/// One assessment session: ordered utterances plus metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    session_id: String,
    utterances: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    age_months: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clinician_items: Option<ClinicianItemSheet>,
}

impl SessionTranscript {
    /// Builds a transcript, renumbering utterance indexes `0..n`.
    pub fn new(
        session_id: impl Into<String>,
        utterances: Vec<Utterance>,
    ) -> Result<Self, TranscriptError> {
        if utterances.is_empty() {
            return Err(TranscriptError::EmptySession);
        }
        let mut utterances = utterances;
        for (i, u) in utterances.iter_mut().enumerate() {
            u.index = i;
        }
        Ok(SessionTranscript {
            session_id: session_id.into(),
            utterances,
            age_months: None,
            gender: None,
            clinician_items: None,
        })
    }

    /// Convenience constructor from `(speaker, text)` pairs.
    pub fn from_turns<'a>(
        session_id: impl Into<String>,
        turns: impl IntoIterator<Item = (Speaker, &'a str)>,
    ) -> Result<Self, TranscriptError> {
        let utterances = turns
            .into_iter()
            .map(|(s, t)| Utterance::new(s, t.nfc().collect::<String>()))
            .collect();
        Self::new(session_id, utterances)
    }

    pub fn with_age_months(mut self, months: u32) -> Self {
        self.age_months = Some(months);
        self
    }

    pub fn with_gender(mut self, gender: Gender) -> Self {
        self.gender = Some(gender);
        self
    }

    pub fn with_clinician_items(mut self, sheet: ClinicianItemSheet) -> Self {
        self.clinician_items = Some(sheet);
        self
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn age_months(&self) -> Option<u32> {
        self.age_months
    }

    pub fn gender(&self) -> Option<Gender> {
        self.gender
    }

    pub fn clinician_items(&self) -> Option<&ClinicianItemSheet> {
        self.clinician_items.as_ref()
    }

    /// Same transcript with doctor and child labels exchanged.
    pub fn with_speakers_swapped(&self) -> SessionTranscript {
        let mut out = self.clone();
        for u in &mut out.utterances {
            u.speaker = u.speaker.swapped();
        }
        out
    }

    /// Renders the dialogue as `Speaker: text` lines.
    pub fn dialogue_text(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(u.speaker.display_label());
            out.push_str(": ");
            out.push_str(&u.text);
            out.push('\n');
        }
        out
    }

    /// Renders the dialogue with utterance indexes, `[i] Speaker: text`.
    pub fn indexed_dialogue_text(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&format!(
                "[{}] {}: {}\n",
                u.index,
                u.speaker.display_label(),
                u.text
            ));
        }
        out
    }

    /// Serializes to the session file format. `parse_transcript` inverts this.
    pub fn to_jsonl(&self) -> String {
        let mut header = Map::new();
        header.insert("session_id".into(), Value::from(self.session_id.clone()));
        if let Some(age) = self.age_months {
            header.insert("age_months".into(), Value::from(age));
        }
        if let Some(g) = self.gender {
            header.insert("gender".into(), serde_json::to_value(g).expect("gender"));
        }
        if let Some(items) = &self.clinician_items {
            header.insert(
                "clinician_items".into(),
                serde_json::to_value(items).expect("clinician items"),
            );
        }
        let mut out = Value::Object(header).to_string();
        out.push('\n');
        for u in &self.utterances {
            let mut line = Map::new();
            line.insert("speaker".into(), Value::from(u.speaker.as_str()));
            line.insert("text".into(), Value::from(u.text.clone()));
            if let Some(t0) = u.t0 {
                line.insert("t0".into(), Value::from(t0));
            }
            if let Some(t1) = u.t1 {
                line.insert("t1".into(), Value::from(t1));
            }
            out.push_str(&Value::Object(line).to_string());
            out.push('\n');
        }
        out
    }
}

fn parse_time(obj: &Map<String, Value>, key: &str, line: usize) -> Result<Option<f64>, TranscriptError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => {
            let t = v
                .as_f64()
                .ok_or_else(|| TranscriptError::malformed(line, format!("`{key}` is not a number")))?;
            if !t.is_finite() || t < 0.0 {
                return Err(TranscriptError::malformed(
                    line,
                    format!("`{key}` must be a finite number >= 0"),
                ));
            }
            Ok(Some(t))
        }
    }
}

fn parse_header(obj: Map<String, Value>, line: usize) -> Result<SessionTranscript, TranscriptError> {
    let session_id = match obj.get("session_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.nfc().collect::<String>(),
        _ => return Err(TranscriptError::malformed(line, "header needs a non-empty `session_id`")),
    };
    let age_months = match obj.get("age_months") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_u64() {
            Some(n) if n > 0 && n <= u64::from(u32::MAX) => Some(n as u32),
            _ => {
                return Err(TranscriptError::malformed(
                    line,
                    "`age_months` must be a positive integer",
                ))
            }
        },
    };
    let gender = match obj.get("gender") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<Gender>(v.clone())
                .map_err(|_| TranscriptError::malformed(line, "`gender` must be \"m\" or \"f\""))?,
        ),
    };
    let clinician_items = match obj.get("clinician_items") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value::<ClinicianItemSheet>(v.clone())
                .map_err(|e| TranscriptError::malformed(line, format!("clinician_items: {e}")))?,
        ),
    };
    Ok(SessionTranscript {
        session_id,
        utterances: Vec::new(),
        age_months,
        gender,
        clinician_items,
    })
}

/// Parses one session file.
pub fn parse_transcript(input: &str) -> Result<SessionTranscript, TranscriptError> {
    let input = input.strip_prefix('\u{feff}').unwrap_or(input);
    let mut session: Option<SessionTranscript> = None;

    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let obj = match serde_json::from_str::<Value>(raw) {
            Ok(Value::Object(obj)) => obj,
            Ok(_) => return Err(TranscriptError::malformed(line, "expected a JSON object")),
            Err(e) => return Err(TranscriptError::malformed(line, e.to_string())),
        };

        let Some(s) = session.as_mut() else {
            session = Some(parse_header(obj, line)?);
            continue;
        };
        if obj.contains_key("session_id") {
            return Err(TranscriptError::DuplicateHeader { line });
        }

        let speaker = match obj.get("speaker") {
            Some(Value::String(label)) => label
                .parse::<Speaker>()
                .map_err(|label| TranscriptError::UnknownSpeaker { line, label })?,
            _ => return Err(TranscriptError::malformed(line, "missing string `speaker`")),
        };
        let text = match obj.get("text") {
            Some(Value::String(t)) => t.nfc().collect::<String>(),
            _ => return Err(TranscriptError::malformed(line, "missing string `text`")),
        };
        let t0 = parse_time(&obj, "t0", line)?;
        let t1 = parse_time(&obj, "t1", line)?;
        if let (Some(a), Some(b)) = (t0, t1) {
            if a > b {
                return Err(TranscriptError::malformed(line, "t0 > t1"));
            }
        }
        let index = s.utterances.len();
        s.utterances.push(Utterance {
            speaker,
            text,
            index,
            t0,
            t1,
        });
    }

    match session {
        Some(s) if !s.utterances.is_empty() => Ok(s),
        _ => Err(TranscriptError::EmptySession),
    }
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn merge_times(a: Option<f64>, b: Option<f64>, pick: fn(f64, f64) -> f64) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(pick(x, y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Collapses whitespace, drops empty utterances and optionally merges
/// adjacent same-speaker utterances. Idempotent.
pub fn normalize(
    t: &SessionTranscript,
    merge_consecutive: bool,
) -> Result<SessionTranscript, TranscriptError> {
    let mut out: Vec<Utterance> = Vec::with_capacity(t.utterances.len());
    for u in &t.utterances {
        let text = collapse_whitespace(&u.text);
        if text.is_empty() {
            continue;
        }
        if merge_consecutive {
            if let Some(prev) = out.last_mut() {
                if prev.speaker == u.speaker {
                    prev.text.push(' ');
                    prev.text.push_str(&text);
                    prev.t0 = merge_times(prev.t0, u.t0, f64::min);
                    prev.t1 = merge_times(prev.t1, u.t1, f64::max);
                    continue;
                }
            }
        }
        out.push(Utterance {
            speaker: u.speaker,
            text,
            index: out.len(),
            t0: u.t0,
            t1: u.t1,
        });
    }
    if out.is_empty() {
        return Err(TranscriptError::EmptySession);
    }
    Ok(SessionTranscript {
        utterances: out,
        ..t.clone()
    })
}
