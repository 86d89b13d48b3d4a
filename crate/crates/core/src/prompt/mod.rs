//! Prompt assembly for item scoring and excerpt-backed explanations.

mod parse;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::items::{ItemId, ItemMap};
use crate::transcript::SessionTranscript;

pub use parse::{
    format_scoring_response, parse_explanation_response, parse_scoring_response, results_to_scores,
    Excerpt, ExplanationRecord, LlmItemResult,
};

pub const DEFAULT_CRITERIA: &str = include_str!("../../assets/criteria.en.json");
pub const DEFAULT_PROCEDURES: &str = include_str!("../../assets/procedures.en.txt");
pub const DEFAULT_FEW_SHOT: &str = include_str!("../../assets/few_shot.en.json");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("few-shot mode needs at least one example")]
    MissingFewShot,
    #[error("invalid prompt context: {0}")]
    InvalidContext(String),
    #[error("first-stage result is for {got}, expected {expected}")]
    ItemMismatch { expected: ItemId, got: ItemId },
    #[error("prompt asset `{name}`: {reason}")]
    Asset { name: String, reason: String },
    #[error("response is missing item {0}")]
    MissingItem(ItemId),
    #[error("{0}: score {1} is outside 0..=3")]
    ScoreOutOfRange(ItemId, i64),
    #[error("item {0} appears more than once")]
    DuplicateItem(ItemId),
    #[error("{0}: justification is empty")]
    MissingJustification(ItemId),
    #[error("unparseable response: {0}")]
    Unparseable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriteriaMode {
    Concise,
    #[default]
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    OnlyScoring,
    #[default]
    ScoreExplainZeroShot,
    ScoreExplainFewShot,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [
        PromptMode::OnlyScoring,
        PromptMode::ScoreExplainZeroShot,
        PromptMode::ScoreExplainFewShot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::OnlyScoring => "only_scoring",
            PromptMode::ScoreExplainZeroShot => "score_explain_zero_shot",
            PromptMode::ScoreExplainFewShot => "score_explain_few_shot",
        }
    }

    pub fn wants_justification(self) -> bool {
        self != PromptMode::OnlyScoring
    }
}

/// Population statistics shown to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorStats {
    #[serde(default)]
    pub item_means: BTreeMap<ItemId, f64>,
    pub asd_proportion: f64,
    pub td_proportion: f64,
    #[serde(default)]
    pub total_mean: Option<f64>,
    #[serde(default)]
    pub total_sd: Option<f64>,
}

impl Default for PriorStats {
    fn default() -> Self {
        PriorStats {
            item_means: BTreeMap::new(),
            asd_proportion: 16.0 / 28.0,
            td_proportion: 12.0 / 28.0,
            total_mean: Some(7.25),
            total_sd: Some(4.56),
        }
    }
}

impl PriorStats {
    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::InvalidContext(m));
        let (a, t) = (self.asd_proportion, self.td_proportion);
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&t) || (a + t - 1.0).abs() > 1e-9 {
            return bad(format!("class proportions {a} and {t} must be in [0,1] and sum to 1"));
        }
        if let Some((id, m)) = self.item_means.iter().find(|(_, m)| !m.is_finite() || **m < 0.0) {
            return bad(format!("item mean for {id} is {m}"));
        }
        for v in [self.total_mean, self.total_sd].into_iter().flatten() {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("total statistic {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }

    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "Reference group: {:.1}% ASD, {:.1}% typically developing.",
            self.asd_proportion * 100.0,
            self.td_proportion * 100.0
        );
        match (self.total_mean, self.total_sd) {
            (Some(m), Some(sd)) => {
                let _ = writeln!(s, "Total score: mean {m:.2}, standard deviation {sd:.2}.");
            }
            (Some(m), None) => {
                let _ = writeln!(s, "Total score: mean {m:.2}.");
            }
            _ => {}
        }
        if !self.item_means.is_empty() {
            let means: Vec<String> = self
                .item_means
                .iter()
                .map(|(id, m)| format!("{id} {m:.2}"))
                .collect();
            let _ = writeln!(s, "Item means: {}.", means.join(", "));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub dialogue: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub criteria_mode: CriteriaMode,
    pub include_procedures: bool,
    pub include_stats: bool,
    pub stats: PriorStats,
    pub mode: PromptMode,
    #[serde(default)]
    pub few_shot_examples: Option<Vec<FewShotExample>>,
}

impl Default for PromptContext {
    /// Standard criteria with procedures and statistics, zero-shot.
    fn default() -> Self {
        PromptContext {
            criteria_mode: CriteriaMode::Standard,
            include_procedures: true,
            include_stats: true,
            stats: PriorStats::default(),
            mode: PromptMode::ScoreExplainZeroShot,
            few_shot_examples: None,
        }
    }
}

impl PromptContext {
    /// Context for an ablation arm label: `Concise`, `C`, `C+M`, `C+S` or `C+M+S`.
    pub fn for_arm(arm: &str, mode: PromptMode, assets: &PromptAssets) -> Result<Self, PromptError> {
        let (criteria_mode, include_procedures, include_stats) = match arm.trim() {
            a if a.eq_ignore_ascii_case("concise") => (CriteriaMode::Concise, false, false),
            "C" => (CriteriaMode::Standard, false, false),
            "C+M" => (CriteriaMode::Standard, true, false),
            "C+S" => (CriteriaMode::Standard, false, true),
            "C+M+S" => (CriteriaMode::Standard, true, true),
            other => return Err(PromptError::InvalidContext(format!("unknown arm `{other}`"))),
        };
        Ok(PromptContext {
            criteria_mode,
            include_procedures,
            include_stats,
            stats: PriorStats::default(),
            mode,
            few_shot_examples: (mode == PromptMode::ScoreExplainFewShot)
                .then(|| assets.few_shot.clone()),
        })
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        self.stats.validate()?;
        match (&self.few_shot_examples, self.mode) {
            (None, PromptMode::ScoreExplainFewShot) => Err(PromptError::MissingFewShot),
            (Some(v), PromptMode::ScoreExplainFewShot) if v.is_empty() => Err(PromptError::MissingFewShot),
            (Some(_), m) if m != PromptMode::ScoreExplainFewShot => Err(PromptError::InvalidContext(
                "few-shot examples given for a non-few-shot mode".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub token_estimate: usize,
}

impl PromptBundle {
    fn new(system_text: String, user_text: String) -> Self {
        let chars = system_text.chars().count() + user_text.chars().count();
        PromptBundle {
            system_text,
            user_text,
            token_estimate: chars.div_ceil(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriteriaEntry {
    pub name: String,
    pub description: String,
    pub levels: [String; 4],
}

impl CriteriaEntry {
    /// The one line shared by concise and standard rendering.
    pub fn header(&self, item: ItemId) -> String {
        format!("{item} {}: score 0-3 (0 = typical, 3 = most atypical)", self.name)
    }
}

/// Criteria, procedure notes and few-shot examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptAssets {
    pub criteria: ItemMap<CriteriaEntry>,
    pub procedures: String,
    pub few_shot: Vec<FewShotExample>,
}

impl PromptAssets {
    pub fn bundled() -> Self {
        Self::from_texts(DEFAULT_CRITERIA, DEFAULT_PROCEDURES, DEFAULT_FEW_SHOT)
            .expect("bundled prompt assets parse")
    }

    pub fn from_texts(criteria: &str, procedures: &str, few_shot: &str) -> Result<Self, PromptError> {
        let asset = |name: &str, reason: String| PromptError::Asset {
            name: name.into(),
            reason,
        };
        let criteria: ItemMap<CriteriaEntry> =
            serde_json::from_str(criteria).map_err(|e| asset("criteria", e.to_string()))?;
        let few_shot: Vec<FewShotExample> =
            serde_json::from_str(few_shot).map_err(|e| asset("few_shot", e.to_string()))?;
        if procedures.trim().is_empty() {
            return Err(asset("procedures", "empty".into()));
        }
        Ok(PromptAssets {
            criteria,
            procedures: procedures.trim_end().to_string(),
            few_shot,
        })
    }

    /// Loads `criteria.json`, `procedures.txt` and `few_shot.json` from a
    /// directory; any file that is absent falls back to the bundled copy.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str, fallback: &str| -> Result<String, PromptError> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(s),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(fallback.to_string()),
                Err(e) => Err(PromptError::Asset {
                    name: path.display().to_string(),
                    reason: e.to_string(),
                }),
            }
        };
        Self::from_texts(
            &read("criteria.json", DEFAULT_CRITERIA)?,
            &read("procedures.txt", DEFAULT_PROCEDURES)?,
            &read("few_shot.json", DEFAULT_FEW_SHOT)?,
        )
    }

    pub fn criteria_block(&self, mode: CriteriaMode) -> String {
        let mut s = String::new();
        for (item, _) in self.criteria.iter() {
            match mode {
                CriteriaMode::Concise => {
                    let _ = writeln!(s, "{}", self.criteria[item].header(item));
                }
                CriteriaMode::Standard => s.push_str(&self.item_criteria(item)),
            }
        }
        s
    }

    /// Full criteria for one item.
    pub fn item_criteria(&self, item: ItemId) -> String {
        let c = &self.criteria[item];
        let mut s = String::new();
        let _ = writeln!(s, "{}", c.header(item));
        let _ = writeln!(s, "  {}", c.description);
        for (score, text) in c.levels.iter().enumerate() {
            let _ = writeln!(s, "  {score} = {text}");
        }
        s
    }
}

impl Default for PromptAssets {
    fn default() -> Self {
        Self::bundled()
    }
}

const ROLE: &str = "You are an experienced clinician scoring the ADOS-2 Module 3 language items \
from a transcript of a doctor-child session. Base every score on the transcript only.";

pub const CRITERIA_HEADING: &str = "## Scoring criteria";
pub const PROCEDURES_HEADING: &str = "## Module 3 procedures";
pub const STATS_HEADING: &str = "## Prior statistics";
pub const DIALOGUE_HEADING: &str = "## Dialogue";

fn format_instruction(mode: PromptMode) -> String {
    let items: Vec<&str> = ItemId::ALL.iter().map(|i| i.as_str()).collect();
    let mut s = String::new();
    match mode {
        PromptMode::OnlyScoring => {
            let _ = writeln!(
                s,
                "Score each item from 0 to 3. Output scores only, one line per item in the form \
                 `<item>: <score>`, for items {}.",
                items.join(", ")
            );
        }
        PromptMode::ScoreExplainZeroShot | PromptMode::ScoreExplainFewShot => {
            let _ = writeln!(
                s,
                "Score each item from 0 to 3 and justify each score from the dialogue. Output one \
                 line per item in the form `<item>: <score> — <justification>`, for items {}.",
                items.join(", ")
            );
        }
    }
    s
}

/// Builds the first-stage scoring prompt. Output is a pure function of the inputs.
pub fn build_scoring_prompt(
    t: &SessionTranscript,
    ctx: &PromptContext,
    assets: &PromptAssets,
) -> Result<PromptBundle, PromptError> {
    ctx.validate()?;
    let mut system = String::new();
    let _ = writeln!(system, "{ROLE}\n");
    let _ = writeln!(system, "{CRITERIA_HEADING}");
    system.push_str(&assets.criteria_block(ctx.criteria_mode));
    if ctx.include_procedures {
        let _ = writeln!(system, "\n{PROCEDURES_HEADING}");
        let _ = writeln!(system, "{}", assets.procedures);
    }
    if ctx.include_stats {
        let _ = writeln!(system, "\n{STATS_HEADING}");
        system.push_str(&ctx.stats.render());
    }

    let mut user = format_instruction(ctx.mode);
    if let Some(examples) = &ctx.few_shot_examples {
        for (i, ex) in examples.iter().enumerate() {
            let _ = write!(
                user,
                "\n## Example {}\nDialogue:\n{}\nResponse:\n{}",
                i + 1,
                ex.dialogue.trim_end(),
                ex.response
            );
            if !ex.response.ends_with('\n') {
                user.push('\n');
            }
        }
    }
    let _ = writeln!(user, "\n{DIALOGUE_HEADING}");
    user.push_str(&t.dialogue_text());
    Ok(PromptBundle::new(system, user))
}

/// Builds the second-stage prompt asking for verbatim supporting excerpts.
pub fn build_interpretability_prompt(
    item: ItemId,
    first_stage: &LlmItemResult,
    t: &SessionTranscript,
    assets: &PromptAssets,
) -> Result<PromptBundle, PromptError> {
    if first_stage.item != item {
        return Err(PromptError::ItemMismatch {
            expected: item,
            got: first_stage.item,
        });
    }
    let mut system = String::new();
    let _ = writeln!(system, "{ROLE}\n");
    let _ = writeln!(system, "{CRITERIA_HEADING}");
    system.push_str(&assets.item_criteria(item));

    let mut user = String::new();
    let _ = writeln!(user, "First-stage result for {item}: score: {}", first_stage.score);
    if !first_stage.justification.is_empty() {
        let _ = writeln!(user, "Justification: {}", first_stage.justification);
    }
    let _ = writeln!(
        user,
        "\nReread the dialogue. Copy word for word the utterances that support or contradict the \
         score for {item}, then confirm or revise the score against the criteria. Answer in this \
         format, with one EXCERPT line per excerpt:\nSCORE: <0-3>\nEXCERPT: \"<verbatim text>\"\n\
         RATIONALE: <how the excerpts map to the criteria>"
    );
    let _ = writeln!(user, "\n{DIALOGUE_HEADING}");
    user.push_str(&t.indexed_dialogue_text());
    Ok(PromptBundle::new(system, user))
}
