//! Response parsing for both prompt stages.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PromptError, PromptMode};
use crate::items::{ItemId, ItemMap, ItemScores};
use crate::transcript::SessionTranscript;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmItemResult {
    pub item: ItemId,
    pub score: u8,
    /// Empty for score-only responses.
    pub justification: String,
}

/// `A4: 2 — reason`, tolerating markdown bullets and emphasis, with `—`,
/// `–`, `-`, `:` or `|` before the justification.
static SCORE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^[\s>*#\-]*\**\s*(A4|A7|A8|B4|B7|B9|B10|B11)\b\**\s*[:：=]\s*\**\s*(-?\d+)\b\**\s*(?:(?:—|–|-|:|：|\|)\s*(.*))?$",
    )
    .expect("score line regex")
});

fn check_score(item: ItemId, raw: i64) -> Result<u8, PromptError> {
    match u8::try_from(raw) {
        Ok(s) if s <= 3 => Ok(s),
        _ => Err(PromptError::ScoreOutOfRange(item, raw)),
    }
}

/// Extracts exactly one result per item, in item order.
///
/// A JSON object keyed by item (values either a score or
/// `{"score", "justification"}`) is accepted; otherwise one canonical line
/// per item is expected and other lines are ignored.
pub fn parse_scoring_response(text: &str, mode: PromptMode) -> Result<Vec<LlmItemResult>, PromptError> {
    let found = match json_entries(text)? {
        Some(entries) => entries,
        None => line_entries(text)?,
    };
    if found.is_empty() {
        return Err(PromptError::Unparseable("no item scores found".into()));
    }
    let map = ItemMap::try_from_fn(|id| found.get(&id).cloned().ok_or(PromptError::MissingItem(id)))?;
    let mut out = Vec::with_capacity(8);
    for (item, (score, justification)) in map.iter() {
        let justification = if mode.wants_justification() {
            if justification.is_empty() {
                return Err(PromptError::MissingJustification(item));
            }
            justification.clone()
        } else {
            String::new()
        };
        out.push(LlmItemResult {
            item,
            score: *score,
            justification,
        });
    }
    Ok(out)
}

fn insert(
    found: &mut BTreeMap<ItemId, (u8, String)>,
    item: ItemId,
    raw: i64,
    justification: String,
) -> Result<(), PromptError> {
    let score = check_score(item, raw)?;
    if found.insert(item, (score, justification)).is_some() {
        return Err(PromptError::DuplicateItem(item));
    }
    Ok(())
}

fn line_entries(text: &str) -> Result<BTreeMap<ItemId, (u8, String)>, PromptError> {
    let mut found = BTreeMap::new();
    for line in text.lines() {
        let Some(c) = SCORE_LINE.captures(line.trim_end()) else { continue };
        let item: ItemId = c[1].parse().expect("regex only matches item labels");
        let raw: i64 = c[2]
            .parse()
            .map_err(|_| PromptError::Unparseable(format!("score `{}` for {item}", &c[2])))?;
        let justification = c.get(3).map_or("", |m| m.as_str()).trim().trim_matches('*').trim();
        insert(&mut found, item, raw, justification.to_string())?;
    }
    Ok(found)
}

type Entries = BTreeMap<ItemId, (u8, String)>;

/// `Ok(None)` when the text holds no JSON object at all.
fn json_entries(text: &str) -> Result<Option<Entries>, PromptError> {
    let (Some(start), Some(end)) = (text.find('{'), text.rfind('}')) else {
        return Ok(None);
    };
    if end < start {
        return Ok(None);
    }
    // Duplicate keys must be caught, so walk the raw map entries ourselves.
    let Ok(entries) = serde_json::from_str::<RawObject>(&text[start..=end]) else {
        return Ok(None);
    };
    let mut found = BTreeMap::new();
    for (key, value) in entries.0 {
        let Ok(item) = key.parse::<ItemId>() else { continue };
        let (raw, justification) = match &value {
            Value::Number(n) => (n.as_i64(), String::new()),
            Value::Object(o) => (
                o.get("score").and_then(Value::as_i64),
                o.get("justification")
                    .and_then(Value::as_str)
                    .unwrap_or("")
                    .trim()
                    .to_string(),
            ),
            _ => (None, String::new()),
        };
        let raw = raw.ok_or_else(|| PromptError::Unparseable(format!("no integer score for {item}")))?;
        insert(&mut found, item, raw, justification)?;
    }
    if found.is_empty() {
        return Ok(None);
    }
    Ok(Some(found))
}

/// JSON object entries in document order, duplicates kept.
struct RawObject(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for RawObject {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> serde::de::Visitor<'de> for V {
            type Value = RawObject;
            fn expecting(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: serde::de::MapAccess<'de>>(self, mut m: A) -> Result<RawObject, A::Error> {
                let mut v = Vec::new();
                while let Some(entry) = m.next_entry::<String, Value>()? {
                    v.push(entry);
                }
                Ok(RawObject(v))
            }
        }
        d.deserialize_map(V)
    }
}

/// Canonical response text; `parse_scoring_response` inverts it.
pub fn format_scoring_response(results: &[LlmItemResult]) -> String {
    let mut s = String::new();
    for r in results {
        if r.justification.is_empty() {
            s.push_str(&format!("{}: {}\n", r.item, r.score));
        } else {
            s.push_str(&format!("{}: {} — {}\n", r.item, r.score, r.justification));
        }
    }
    s
}

pub fn results_to_scores(results: &[LlmItemResult]) -> Result<ItemScores, PromptError> {
    let by_item: BTreeMap<ItemId, u8> = results.iter().map(|r| (r.item, r.score)).collect();
    ItemMap::try_from_fn(|id| by_item.get(&id).copied().ok_or(PromptError::MissingItem(id)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub text: String,
    /// Inclusive utterance index range, when the quote was found.
    pub span: Option<(usize, usize)>,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub item: ItemId,
    pub first_stage_score: u8,
    pub confirmed_score: u8,
    /// Whether the confirmed score equals the first-stage score.
    pub consistent: bool,
    pub excerpts: Vec<Excerpt>,
    pub rationale: String,
}

static SCORE_FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[\s*#>\-]*\**score\**\s*[:：]\s*\**\s*(-?\d+)").expect("score field"));
static EXCERPT_FIELD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)^[\s*#>\-]*\**excerpt\s*\d*\**\s*[:：]\s*(.+?)\s*$").expect("excerpt field")
});
static RATIONALE_FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?ims)^[\s*#>\-]*\**rationale\**\s*[:：]\s*(.*)").expect("rationale field"));
static SPEAKER_TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(\[\d+\]\s*)|\b(doctor|child|other)\s*[:：]").expect("speaker tag")
});

/// Lowercases and reduces every run of non-alphanumeric characters to one space.
fn fold(text: &str) -> String {
    let mut out = String::new();
    let mut gap = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if gap && !out.is_empty() {
                out.push(' ');
            }
            gap = false;
            out.extend(ch.to_lowercase());
        } else {
            gap = true;
        }
    }
    out
}

fn locate(quote: &str, t: &SessionTranscript) -> Option<(usize, usize)> {
    let needle = fold(&SPEAKER_TAG.replace_all(quote, " "));
    if needle.is_empty() {
        return None;
    }
    let mut joined = String::new();
    let mut starts = Vec::new();
    for u in t.utterances() {
        let folded = fold(&u.text);
        if folded.is_empty() {
            continue;
        }
        if !joined.is_empty() {
            joined.push(' ');
        }
        starts.push((joined.len(), u.index));
        joined.push_str(&folded);
    }
    let at = joined.find(&needle)?;
    let last_byte = at + needle.len() - 1;
    let owner = |pos: usize| starts.iter().rev().find(|(s, _)| *s <= pos).map(|&(_, i)| i);
    Some((owner(at)?, owner(last_byte)?))
}

/// Parses a second-stage answer and matches each quote back to the transcript.
pub fn parse_explanation_response(
    text: &str,
    item: ItemId,
    first_stage_score: u8,
    t: &SessionTranscript,
) -> Result<ExplanationRecord, PromptError> {
    let caps = SCORE_FIELD
        .captures(text)
        .ok_or_else(|| PromptError::Unparseable("no SCORE line".into()))?;
    let raw: i64 = caps[1]
        .parse()
        .map_err(|_| PromptError::Unparseable(format!("score `{}`", &caps[1])))?;
    let confirmed_score = check_score(item, raw)?;

    let excerpts = EXCERPT_FIELD
        .captures_iter(text)
        .map(|c| {
            let quote = c[1]
                .trim_matches(|ch: char| matches!(ch, '"' | '\'' | '“' | '”' | '‘' | '’' | '「' | '」') || ch.is_whitespace())
                .to_string();
            let span = locate(&quote, t);
            Excerpt {
                verified: span.is_some(),
                text: quote,
                span,
            }
        })
        .collect();

    let rationale = RATIONALE_FIELD
        .captures(text)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();

    Ok(ExplanationRecord {
        item,
        first_stage_score,
        confirmed_score,
        consistent: confirmed_score == first_stage_score,
        excerpts,
        rationale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::{Speaker, Utterance};
    use proptest::prelude::*;

    fn canonical() -> Vec<LlmItemResult> {
        ItemId::ALL
            .iter()
            .map(|&item| LlmItemResult {
                item,
                score: (item.index() % 4) as u8,
                justification: format!("reason for {item}"),
            })
            .collect()
    }

    #[test]
    fn canonical_lines_round_trip() {
        let text = format_scoring_response(&canonical());
        assert_eq!(
            parse_scoring_response(&text, PromptMode::ScoreExplainZeroShot).unwrap(),
            canonical()
        );
    }

    #[test]
    fn tolerates_surrounding_prose_and_markdown() {
        let text = "Here are my scores.\n\n- **A4**: 1 – some repetition\n* A7: 0 - told a story\n\
                    A8: 1 | ok\nB4: 2 — flat\nB7: 1 — few overtures\nB9: 1 — brief\n\
                    B10: 2 — little exchange\n**B11: 2** — awkward\nHope this helps.";
        let r = parse_scoring_response(text, PromptMode::ScoreExplainZeroShot).unwrap();
        assert_eq!(r[0].justification, "some repetition");
        assert_eq!(r[7].score, 2);
    }

    #[test]
    fn error_modes() {
        let mut lines: Vec<String> = format_scoring_response(&canonical()).lines().map(String::from).collect();
        let missing = lines[..7].join("\n");
        assert_eq!(
            parse_scoring_response(&missing, PromptMode::ScoreExplainZeroShot),
            Err(PromptError::MissingItem(ItemId::B11))
        );
        lines[1] = "A7: 5 — too high".into();
        assert_eq!(
            parse_scoring_response(&lines.join("\n"), PromptMode::ScoreExplainZeroShot),
            Err(PromptError::ScoreOutOfRange(ItemId::A7, 5))
        );
        lines[1] = "A4: 1 — again".into();
        assert_eq!(
            parse_scoring_response(&lines.join("\n"), PromptMode::ScoreExplainZeroShot),
            Err(PromptError::DuplicateItem(ItemId::A4))
        );
        assert!(matches!(
            parse_scoring_response("no scores here", PromptMode::OnlyScoring),
            Err(PromptError::Unparseable(_))
        ));
    }

    #[test]
    fn score_only_drops_justification() {
        let text = "A4: 0\nA7: 1\nA8: 1\nB4: 0\nB7: 2\nB9: 1\nB10: 0\nB11: 3\n";
        let r = parse_scoring_response(text, PromptMode::OnlyScoring).unwrap();
        assert!(r.iter().all(|x| x.justification.is_empty()));
        assert_eq!(
            parse_scoring_response(text, PromptMode::ScoreExplainZeroShot),
            Err(PromptError::MissingJustification(ItemId::A4))
        );
        assert_eq!(format_scoring_response(&r), text);
    }

    #[test]
    fn json_responses() {
        let text = r#"Sure: {"A4": {"score": 1, "justification": "x"}, "A7": 0, "A8": 1, "B4": 0,
            "B7": 2, "B9": 1, "B10": 0, "B11": 3} done"#;
        let r = parse_scoring_response(text, PromptMode::OnlyScoring).unwrap();
        assert_eq!(results_to_scores(&r).unwrap().values(), &[1, 0, 1, 0, 2, 1, 0, 3]);
        let dup = r#"{"A4": 1, "a4": 2}"#;
        assert_eq!(
            parse_scoring_response(dup, PromptMode::OnlyScoring),
            Err(PromptError::DuplicateItem(ItemId::A4))
        );
    }

    fn transcript() -> SessionTranscript {
        SessionTranscript::new(
            "s",
            vec![
                Utterance::new(Speaker::Doctor, "How was school today?"),
                Utterance::new(Speaker::Child, "Fine."),
                Utterance::new(Speaker::Doctor, "What did you eat for lunch?"),
                Utterance::new(Speaker::Child, "Noodles, my favourite!"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn excerpts_are_matched_to_utterances() {
        let text = "SCORE: 1\nEXCERPT: \"Fine.\"\nEXCERPT: \"[3] Child: noodles, my favourite\"\n\
                    EXCERPT: \"I love trains\"\nRATIONALE: Short but relevant answers.\nSecond line.";
        let rec = parse_explanation_response(text, ItemId::B9, 1, &transcript()).unwrap();
        assert_eq!(rec.excerpts.len(), 3);
        assert_eq!(rec.excerpts[0].span, Some((1, 1)));
        assert_eq!(rec.excerpts[1].span, Some((3, 3)));
        assert!(!rec.excerpts[2].verified);
        assert_eq!(rec.excerpts[2].text, "I love trains");
        assert!(rec.consistent);
        assert_eq!(rec.rationale, "Short but relevant answers.\nSecond line.");
    }

    #[test]
    fn excerpt_spanning_turns() {
        let text = "SCORE: 2\nEXCERPT: Fine. What did you eat\nRATIONALE: -";
        let rec = parse_explanation_response(text, ItemId::B9, 1, &transcript()).unwrap();
        assert_eq!(rec.excerpts[0].span, Some((1, 2)));
        assert!(!rec.consistent);
        assert_eq!(rec.confirmed_score, 2);
    }

    #[test]
    fn explanation_errors() {
        assert!(matches!(
            parse_explanation_response("nothing", ItemId::A4, 0, &transcript()),
            Err(PromptError::Unparseable(_))
        ));
        assert_eq!(
            parse_explanation_response("SCORE: 4", ItemId::A4, 0, &transcript()),
            Err(PromptError::ScoreOutOfRange(ItemId::A4, 4))
        );
    }

    proptest! {
        #[test]
        fn generated_fixtures_round_trip(
            scores in proptest::array::uniform8(0u8..=3),
            words in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,5}", 8),
            score_only in any::<bool>(),
        ) {
            let mode = if score_only { PromptMode::OnlyScoring } else { PromptMode::ScoreExplainFewShot };
            let results: Vec<LlmItemResult> = ItemId::ALL.iter().map(|&item| LlmItemResult {
                item,
                score: scores[item.index()],
                justification: if score_only { String::new() } else { words[item.index()].clone() },
            }).collect();
            let text = format_scoring_response(&results);
            prop_assert_eq!(parse_scoring_response(&text, mode).unwrap(), results);
        }

        #[test]
        fn verified_spans_exist(picks in proptest::collection::vec(0usize..4, 1..4)) {
            let t = transcript();
            let mut text = String::from("SCORE: 0\n");
            for p in &picks {
                text.push_str(&format!("EXCERPT: \"{}\"\n", t.utterances()[*p].text));
            }
            let rec = parse_explanation_response(&text, ItemId::A8, 0, &t).unwrap();
            for (e, p) in rec.excerpts.iter().zip(&picks) {
                prop_assert_eq!(e.span, Some((*p, *p)));
                let (a, b) = e.span.unwrap();
                prop_assert!(a <= b && b < t.len());
            }
        }
    }
}
