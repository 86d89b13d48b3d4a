use std::collections::{HashMap, HashSet};
use std::fmt;

use super::FeatureError;

/// Bundled English polarity lexicon (`term<TAB>+1|-1`).
pub const DEFAULT_LEXICON: &str = include_str!("../../assets/lexicon.en.tsv");

pub const DEFAULT_NEGATORS: &[&str] = &[
    "not", "no", "never", "don't", "doesn't", "didn't", "isn't", "aren't", "wasn't", "weren't",
    "can't", "cannot", "won't", "wouldn't", "nothing", "nobody", "neither", "nor", "hardly", "不",
    "没", "没有", "别",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

/// Classifies one utterance. Implementations must be deterministic.
pub trait SentimentAnalyzer: Send + Sync + fmt::Debug {
    fn polarity(&self, text: &str) -> Polarity;
}

/// Splits into lowercase tokens: runs of letters, digits and apostrophes,
/// with each CJK ideograph as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        let ch = if ch == '\u{2019}' { '\'' } else { ch };
        if is_cjk(ch) {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(ch.to_string());
        } else if ch.is_alphanumeric() || ch == '\'' {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            tokens.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

fn is_cjk(ch: char) -> bool {
    matches!(ch as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF)
}

/// Token polarity sum with negation flipping.
///
/// A lexicon hit is flipped when any negator occurs among the
/// `negation_window` tokens before it. Positive sums are positive
/// utterances, negative sums negative, zero neutral.
#[derive(Debug, Clone)]
pub struct LexiconAnalyzer {
    terms: HashMap<String, i32>,
    negators: HashSet<String>,
    negation_window: usize,
}

impl LexiconAnalyzer {
    pub fn new(
        terms: HashMap<String, i32>,
        negators: impl IntoIterator<Item = String>,
        negation_window: usize,
    ) -> Self {
        LexiconAnalyzer {
            terms,
            negators: negators.into_iter().map(|n| n.to_lowercase()).collect(),
            negation_window,
        }
    }

    /// Parses the lexicon file format. Lines starting with `#` and blank
    /// lines are ignored.
    pub fn parse_lexicon(text: &str) -> Result<HashMap<String, i32>, FeatureError> {
        let mut terms = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let err = |reason: &str| FeatureError::LexiconLoad {
                line: line_no,
                reason: reason.to_string(),
            };
            let (term, value) = trimmed.split_once('\t').ok_or_else(|| err("expected term<TAB>polarity"))?;
            let polarity = match value.trim() {
                "+1" | "1" => 1,
                "-1" => -1,
                _ => return Err(err("polarity must be +1 or -1")),
            };
            let tokens = tokenize(term);
            if tokens.len() != 1 {
                return Err(err("term must be a single token"));
            }
            terms.insert(tokens.into_iter().next().expect("one token"), polarity);
        }
        if terms.is_empty() {
            return Err(FeatureError::LexiconLoad {
                line: 0,
                reason: "lexicon has no entries".into(),
            });
        }
        Ok(terms)
    }

    pub fn from_lexicon_text(text: &str, negation_window: usize) -> Result<Self, FeatureError> {
        Ok(Self::new(
            Self::parse_lexicon(text)?,
            DEFAULT_NEGATORS.iter().map(|s| s.to_string()),
            negation_window,
        ))
    }

    pub fn bundled(negation_window: usize) -> Self {
        Self::from_lexicon_text(DEFAULT_LEXICON, negation_window).expect("bundled lexicon parses")
    }

    pub fn score(&self, text: &str) -> i32 {
        let tokens = tokenize(text);
        let mut sum = 0;
        for (i, tok) in tokens.iter().enumerate() {
            let Some(&p) = self.terms.get(tok) else { continue };
            let start = i.saturating_sub(self.negation_window);
            let negated = tokens[start..i].iter().any(|t| self.negators.contains(t));
            sum += if negated { -p } else { p };
        }
        sum
    }
}

impl SentimentAnalyzer for LexiconAnalyzer {
    fn polarity(&self, text: &str) -> Polarity {
        match self.score(text) {
            s if s > 0 => Polarity::Positive,
            s if s < 0 => Polarity::Negative,
            _ => Polarity::Neutral,
        }
    }
}
