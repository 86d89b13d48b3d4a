//! The seven conversational rates computed from a normalized transcript.
//!
//! All rates are dimensionless ratios in `[0, 1]`:
//!
//! - **echolalia**: child utterances whose edit similarity to the most recent
//!   preceding doctor utterance reaches the threshold, over all child utterances
//! - **alternation**: speaker changes between adjacent doctor/child
//!   utterances, over adjacent pairs
//! - **participation**: child share of all utterances (or tokens)
//! - **enjoyment** / **passive**: positive / negative child utterances under
//!   the sentiment analyzer, over child utterances
//! - **suggestion**: child utterances matching a suggestion pattern
//! - **response**: doctor questions immediately followed by the child, over
//!   doctor questions
//!
//! Utterances by other speakers only count toward the participation
//! denominator.

mod sentiment;
mod similarity;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::transcript::{SessionTranscript, Speaker};

pub use sentiment::{
    tokenize, LexiconAnalyzer, Polarity, SentimentAnalyzer, DEFAULT_LEXICON, DEFAULT_NEGATORS,
};
pub use similarity::{levenshtein, normalized_edit_similarity};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("transcript has no child speech")]
    NoChildSpeech,
    #[error("lexicon line {line}: {reason}")]
    LexiconLoad { line: usize, reason: String },
    #[error("invalid feature config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticipationMode {
    #[default]
    Utterances,
    Tokens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternMatch {
    #[default]
    Substring,
    Prefix,
}

/// Serializable feature settings, as they appear in the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSettings {
    pub echolalia_threshold: f64,
    pub negation_window: usize,
    pub negators: Vec<String>,
    pub question_markers: Vec<String>,
    pub interrogatives: Vec<String>,
    pub suggestion_patterns: Vec<String>,
    pub suggestion_match: PatternMatch,
    pub participation: ParticipationMode,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        FeatureSettings {
            echolalia_threshold: 0.8,
            negation_window: 3,
            negators: s(DEFAULT_NEGATORS),
            question_markers: s(&["?", "？", "吗", "呢"]),
            interrogatives: s(&[
                "what", "who", "whom", "whose", "where", "when", "why", "which", "how", "do",
                "does", "did", "is", "are", "was", "were", "can", "could", "would", "will",
                "have", "has", "should",
            ]),
            suggestion_patterns: s(&[
                "let's",
                "let us",
                "how about",
                "why don't we",
                "shall we",
                "we could",
                "do you want to",
                "can we",
            ]),
            suggestion_match: PatternMatch::Substring,
            participation: ParticipationMode::Utterances,
        }
    }
}

impl FeatureSettings {
    /// Builds a config using `lexicon` (file contents) or the bundled lexicon.
    pub fn build(&self, lexicon: Option<&str>) -> Result<FeatureConfig, FeatureError> {
        let terms = LexiconAnalyzer::parse_lexicon(lexicon.unwrap_or(DEFAULT_LEXICON))?;
        let analyzer = LexiconAnalyzer::new(terms, self.negators.iter().cloned(), self.negation_window);
        FeatureConfig::new(self.clone(), Arc::new(analyzer))
    }
}

/// Validated settings plus the sentiment analyzer.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    settings: FeatureSettings,
    analyzer: Arc<dyn SentimentAnalyzer>,
}

impl FeatureConfig {
    pub fn new(
        settings: FeatureSettings,
        analyzer: Arc<dyn SentimentAnalyzer>,
    ) -> Result<Self, FeatureError> {
        let theta = settings.echolalia_threshold;
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(FeatureError::InvalidConfig(format!(
                "echolalia_threshold {theta} is outside (0, 1]"
            )));
        }
        for (name, list) in [
            ("question_markers", &settings.question_markers),
            ("suggestion_patterns", &settings.suggestion_patterns),
        ] {
            if list.is_empty() || list.iter().any(|p| p.trim().is_empty()) {
                return Err(FeatureError::InvalidConfig(format!(
                    "{name} must be a non-empty list of non-empty strings"
                )));
            }
        }
        Ok(FeatureConfig { settings, analyzer })
    }

    pub fn settings(&self) -> &FeatureSettings {
        &self.settings
    }

    pub fn with_threshold(&self, theta: f64) -> Result<Self, FeatureError> {
        let mut settings = self.settings.clone();
        settings.echolalia_threshold = theta;
        FeatureConfig::new(settings, self.analyzer.clone())
    }

    pub fn analyzer(&self) -> &dyn SentimentAnalyzer {
        self.analyzer.as_ref()
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureSettings::default()
            .build(None)
            .expect("default feature settings are valid")
    }
}

pub const FEATURE_NAMES: [&str; 7] = [
    "echolalia_rate",
    "alternation_rate",
    "participation_rate",
    "enjoyment_rate",
    "passive_rate",
    "suggestion_rate",
    "response_rate",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub echolalia_rate: f64,
    pub alternation_rate: f64,
    pub participation_rate: f64,
    pub enjoyment_rate: f64,
    pub passive_rate: f64,
    pub suggestion_rate: f64,
    pub response_rate: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; 7] {
        [
            self.echolalia_rate,
            self.alternation_rate,
            self.participation_rate,
            self.enjoyment_rate,
            self.passive_rate,
            self.suggestion_rate,
            self.response_rate,
        ]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        FeatureVector {
            echolalia_rate: v[0],
            alternation_rate: v[1],
            participation_rate: v[2],
            enjoyment_rate: v[3],
            passive_rate: v[4],
            suggestion_rate: v[5],
            response_rate: v[6],
        }
    }

    /// Looks a feature up by its snake_case name.
    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.to_array()[i])
    }
}

/// Side information from an extraction run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureDiagnostics {
    pub child_utterances: usize,
    pub doctor_questions: usize,
    pub answered_questions: usize,
    /// Set when the transcript has no doctor questions; response rate is 0.
    pub response_degenerate: bool,
}

fn child_texts(t: &SessionTranscript) -> Result<Vec<&str>, FeatureError> {
    let texts: Vec<&str> = t
        .utterances()
        .iter()
        .filter(|u| u.speaker == Speaker::Child)
        .map(|u| u.text.as_str())
        .collect();
    if texts.is_empty() {
        Err(FeatureError::NoChildSpeech)
    } else {
        Ok(texts)
    }
}

pub fn echolalia_rate(t: &SessionTranscript, cfg: &FeatureConfig) -> Result<f64, FeatureError> {
    let theta = cfg.settings.echolalia_threshold;
    let mut last_doctor: Option<&str> = None;
    let (mut child, mut echoes) = (0usize, 0usize);
    for u in t.utterances() {
        match u.speaker {
            Speaker::Doctor => last_doctor = Some(&u.text),
            Speaker::Child => {
                child += 1;
                if let Some(prev) = last_doctor {
                    if normalized_edit_similarity(&u.text, prev) >= theta {
                        echoes += 1;
                    }
                }
            }
            Speaker::Other => {}
        }
    }
    if child == 0 {
        return Err(FeatureError::NoChildSpeech);
    }
    Ok(echoes as f64 / child as f64)
}

pub fn alternation_rate(t: &SessionTranscript) -> f64 {
    let speakers: Vec<Speaker> = t
        .utterances()
        .iter()
        .map(|u| u.speaker)
        .filter(|s| *s != Speaker::Other)
        .collect();
    if speakers.len() < 2 {
        return 0.0;
    }
    let switches = speakers.windows(2).filter(|w| w[0] != w[1]).count();
    switches as f64 / (speakers.len() - 1) as f64
}

fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

pub fn participation_rate(t: &SessionTranscript, cfg: &FeatureConfig) -> f64 {
    let weight = |text: &str| match cfg.settings.participation {
        ParticipationMode::Utterances => 1,
        ParticipationMode::Tokens => token_count(text),
    };
    let (mut child, mut total) = (0usize, 0usize);
    for u in t.utterances() {
        let w = weight(&u.text);
        total += w;
        if u.speaker == Speaker::Child {
            child += w;
        }
    }
    if total == 0 {
        0.0
    } else {
        child as f64 / total as f64
    }
}

/// `(enjoyment_rate, passive_rate)`.
pub fn sentiment_rates(t: &SessionTranscript, cfg: &FeatureConfig) -> Result<(f64, f64), FeatureError> {
    let texts = child_texts(t)?;
    let (mut pos, mut neg) = (0usize, 0usize);
    for text in &texts {
        match cfg.analyzer.polarity(text) {
            Polarity::Positive => pos += 1,
            Polarity::Negative => neg += 1,
            Polarity::Neutral => {}
        }
    }
    let n = texts.len() as f64;
    Ok((pos as f64 / n, neg as f64 / n))
}

fn matches_suggestion(text: &str, cfg: &FeatureConfig) -> bool {
    let text = text.to_lowercase().replace('\u{2019}', "'");
    cfg.settings.suggestion_patterns.iter().any(|p| {
        let p = p.to_lowercase();
        match cfg.settings.suggestion_match {
            PatternMatch::Substring => text.contains(&p),
            PatternMatch::Prefix => text.trim_start().starts_with(&p),
        }
    })
}

pub fn suggestion_rate(t: &SessionTranscript, cfg: &FeatureConfig) -> Result<f64, FeatureError> {
    let texts = child_texts(t)?;
    let hits = texts.iter().filter(|text| matches_suggestion(text, cfg)).count();
    Ok(hits as f64 / texts.len() as f64)
}

/// Whether a doctor utterance counts as a question.
pub fn is_question(text: &str, cfg: &FeatureConfig) -> bool {
    let trimmed = text.trim_end();
    if cfg
        .settings
        .question_markers
        .iter()
        .any(|m| trimmed.ends_with(m.as_str()))
    {
        return true;
    }
    match tokenize(text).first() {
        Some(first) => cfg.settings.interrogatives.iter().any(|w| w.eq_ignore_ascii_case(first)),
        None => false,
    }
}

/// `(rate, questions, answered)`; rate is 0 when there are no questions.
pub fn response_stats(t: &SessionTranscript, cfg: &FeatureConfig) -> (f64, usize, usize) {
    let utts = t.utterances();
    let (mut questions, mut answered) = (0usize, 0usize);
    for (i, u) in utts.iter().enumerate() {
        if u.speaker != Speaker::Doctor || !is_question(&u.text, cfg) {
            continue;
        }
        questions += 1;
        if utts.get(i + 1).is_some_and(|next| next.speaker == Speaker::Child) {
            answered += 1;
        }
    }
    let rate = if questions == 0 {
        0.0
    } else {
        answered as f64 / questions as f64
    };
    (rate, questions, answered)
}

pub fn response_rate(t: &SessionTranscript, cfg: &FeatureConfig) -> f64 {
    response_stats(t, cfg).0
}

pub fn extract_features(t: &SessionTranscript, cfg: &FeatureConfig) -> Result<FeatureVector, FeatureError> {
    extract_with_diagnostics(t, cfg).map(|(f, _)| f)
}

pub fn extract_with_diagnostics(
    t: &SessionTranscript,
    cfg: &FeatureConfig,
) -> Result<(FeatureVector, FeatureDiagnostics), FeatureError> {
    let child_utterances = child_texts(t)?.len();
    let (enjoyment_rate, passive_rate) = sentiment_rates(t, cfg)?;
    let (response_rate, questions, answered) = response_stats(t, cfg);
    let features = FeatureVector {
        echolalia_rate: echolalia_rate(t, cfg)?,
        alternation_rate: alternation_rate(t),
        participation_rate: participation_rate(t, cfg),
        enjoyment_rate,
        passive_rate,
        suggestion_rate: suggestion_rate(t, cfg)?,
        response_rate,
    };
    let diagnostics = FeatureDiagnostics {
        child_utterances,
        doctor_questions: questions,
        answered_questions: answered,
        response_degenerate: questions == 0,
    };
    Ok((features, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::normalize;
    use proptest::prelude::*;
    use Speaker::{Child as C, Doctor as D, Other as O};

    fn tr(turns: &[(Speaker, &str)]) -> SessionTranscript {
        SessionTranscript::from_turns("t", turns.iter().copied()).unwrap()
    }

    fn cfg() -> FeatureConfig {
        FeatureConfig::default()
    }

    #[test]
    fn verbatim_echo_is_full_rate() {
        let t = tr(&[(D, "do you like cars?"), (C, "do you like cars?"), (D, "tell me more"), (C, "tell me more")]);
        assert_eq!(echolalia_rate(&t, &cfg()).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_text_is_zero_rate() {
        let t = tr(&[(D, "abc"), (C, "xyz"), (D, "def"), (C, "uvw")]);
        assert_eq!(echolalia_rate(&t, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn one_echo_in_two() {
        // "the red car" vs "the red cars": distance 1 over 12 chars, similarity 11/12 >= 0.8.
        // "the red car" vs "no": similarity well below 0.8.
        let t = tr(&[(D, "the red cars"), (C, "the red car"), (D, "the red car"), (C, "no")]);
        assert!(normalized_edit_similarity("the red car", "the red cars") >= 0.8);
        assert_eq!(echolalia_rate(&t, &cfg()).unwrap(), 0.5);
    }

    #[test]
    fn child_before_any_doctor_is_not_an_echo() {
        let t = tr(&[(C, "hello"), (D, "hello"), (C, "hello")]);
        assert_eq!(echolalia_rate(&t, &cfg()).unwrap(), 0.5);
    }

    #[test]
    fn no_child_speech_errors() {
        let t = tr(&[(D, "hello?"), (O, "hi")]);
        assert_eq!(echolalia_rate(&t, &cfg()), Err(FeatureError::NoChildSpeech));
        assert_eq!(extract_features(&t, &cfg()), Err(FeatureError::NoChildSpeech));
        assert_eq!(suggestion_rate(&t, &cfg()), Err(FeatureError::NoChildSpeech));
        assert_eq!(sentiment_rates(&t, &cfg()), Err(FeatureError::NoChildSpeech));
    }

    #[test]
    fn alternation_cases() {
        assert_eq!(alternation_rate(&tr(&[(D, "a"), (C, "b"), (D, "c"), (C, "d")])), 1.0);
        assert!((alternation_rate(&tr(&[(D, "a"), (D, "b"), (C, "c"), (C, "d")])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(alternation_rate(&tr(&[(D, "a")])), 0.0);
        assert_eq!(alternation_rate(&tr(&[(D, "a"), (O, "x"), (C, "b")])), 1.0);
    }

    #[test]
    fn participation_cases() {
        let t = tr(&[(D, "a"), (C, "b"), (D, "c"), (C, "d"), (D, "e"), (C, "f")]);
        assert_eq!(participation_rate(&t, &cfg()), 0.5);
        assert_eq!(participation_rate(&tr(&[(D, "a"), (D, "b")]), &cfg()), 0.0);
        assert_eq!(participation_rate(&tr(&[(C, "a"), (C, "b"), (D, "c"), (O, "d")]), &cfg()), 0.5);
    }

    #[test]
    fn participation_by_tokens() {
        let settings = FeatureSettings {
            participation: ParticipationMode::Tokens,
            ..FeatureSettings::default()
        };
        let cfg = settings.build(None).unwrap();
        let t = tr(&[(D, "one two three"), (C, "four")]);
        assert_eq!(participation_rate(&t, &cfg), 0.25);
    }

    #[test]
    fn sentiment_fixture() {
        let t = tr(&[
            (D, "what do you think?"),
            (C, "I like this game"),
            (D, "and this one?"),
            (C, "I don't like it"),
            (D, "what is it?"),
            (C, "a table"),
            (D, "and that?"),
            (C, "a chair"),
        ]);
        assert_eq!(sentiment_rates(&t, &cfg()).unwrap(), (0.25, 0.25));
        let t = tr(&[(D, "hi"), (C, "fun"), (D, "ok"), (C, "great toy")]);
        assert_eq!(sentiment_rates(&t, &cfg()).unwrap(), (1.0, 0.0));
        let t = tr(&[(D, "hi"), (C, "a table")]);
        assert_eq!(sentiment_rates(&t, &cfg()).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn suggestion_cases() {
        let settings = FeatureSettings {
            suggestion_patterns: vec!["let's".into()],
            ..FeatureSettings::default()
        };
        let c = settings.build(None).unwrap();
        let t = tr(&[(D, "hi"), (C, "Let's play"), (D, "ok"), (C, "a car")]);
        assert_eq!(suggestion_rate(&t, &c).unwrap(), 0.5);
        let t = tr(&[(D, "hi"), (C, "a car")]);
        assert_eq!(suggestion_rate(&t, &c).unwrap(), 0.0);
        let t = tr(&[(D, "hi"), (C, "let's go"), (D, "ok"), (C, "then let's stop")]);
        assert_eq!(suggestion_rate(&t, &c).unwrap(), 1.0);

        let prefix = FeatureSettings {
            suggestion_patterns: vec!["let's".into()],
            suggestion_match: PatternMatch::Prefix,
            ..FeatureSettings::default()
        }
        .build(None)
        .unwrap();
        assert_eq!(suggestion_rate(&t, &prefix).unwrap(), 0.5);
    }

    #[test]
    fn response_cases() {
        let t = tr(&[(D, "what is this?"), (C, "a car"), (D, "where is it?"), (C, "there")]);
        assert_eq!(response_rate(&t, &cfg()), 1.0);
        let t = tr(&[(D, "what is this?"), (C, "a car"), (D, "Is it red"), (D, "hmm, ok")]);
        assert_eq!(response_stats(&t, &cfg()), (0.5, 2, 1));
        let t = tr(&[(D, "hello"), (C, "hi")]);
        let (_, diag) = extract_with_diagnostics(&t, &cfg()).unwrap();
        assert_eq!(response_rate(&t, &cfg()), 0.0);
        assert!(diag.response_degenerate);
    }

    #[test]
    fn composed_fixture_vector() {
        let t = tr(&[(D, "what is this?"), (C, "what is this?"), (D, "a toy car."), (C, "a toy car.")]);
        let f = extract_features(&t, &cfg()).unwrap();
        assert_eq!(f.to_array(), [1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(extract_features(&t, &cfg()).unwrap(), f);
    }

    #[test]
    fn rejects_bad_threshold() {
        for theta in [0.0, 1.5, f64::NAN] {
            let s = FeatureSettings {
                echolalia_threshold: theta,
                ..FeatureSettings::default()
            };
            assert!(matches!(s.build(None), Err(FeatureError::InvalidConfig(_))));
        }
        let s = FeatureSettings {
            suggestion_patterns: vec![],
            ..FeatureSettings::default()
        };
        assert!(s.build(None).is_err());
    }

    #[test]
    fn feature_lookup_by_name() {
        let f = FeatureVector::from_array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
        assert_eq!(f.get("passive_rate"), Some(0.5));
        assert_eq!(f.get("volume"), None);
    }

    fn arb_transcript() -> impl Strategy<Value = SessionTranscript> {
        let speaker = prop_oneof![3 => Just(D), 3 => Just(C), 1 => Just(O)];
        let text = prop_oneof![
            "[a-z ?]{0,12}",
            Just("I like it".to_string()),
            Just("I don't like it".to_string()),
            Just("let's play".to_string()),
            Just("what is that?".to_string()),
        ];
        proptest::collection::vec((speaker, text), 1..16)
            .prop_map(|turns| SessionTranscript::from_turns("p", turns.iter().map(|(s, t)| (*s, t.as_str()))).unwrap())
    }

    proptest! {
        #[test]
        fn rates_stay_in_unit_interval(t in arb_transcript()) {
            if let Ok(n) = normalize(&t, false) {
                if let Ok(f) = extract_features(&n, &cfg()) {
                    for v in f.to_array() {
                        prop_assert!((0.0..=1.0).contains(&v));
                    }
                    prop_assert!(f.enjoyment_rate + f.passive_rate <= 1.0);
                    let again = extract_features(&normalize(&n, false).unwrap(), &cfg()).unwrap();
                    prop_assert_eq!(again, f);
                }
            }
        }

        #[test]
        fn echolalia_is_monotone_in_threshold(t in arb_transcript(), a in 0.05f64..1.0, b in 0.05f64..1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let c = cfg();
            if let Ok(r_lo) = echolalia_rate(&t, &c.with_threshold(lo).unwrap()) {
                let r_hi = echolalia_rate(&t, &c.with_threshold(hi).unwrap()).unwrap();
                prop_assert!(r_hi <= r_lo);
            }
        }

        #[test]
        fn participation_complements_under_swap(t in arb_transcript()) {
            let no_other = t.utterances().iter().all(|u| u.speaker != O);
            if no_other {
                let p = participation_rate(&t, &cfg());
                let q = participation_rate(&t.with_speakers_swapped(), &cfg());
                prop_assert!((p + q - 1.0).abs() < 1e-12);
            }
        }
    }
}
