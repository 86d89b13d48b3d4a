//! Seeded synthetic labeled sessions with canned model responses.
//!
//! Synthetic data only. Transcripts come from small template banks and
//! labels from fixed formulas over each session's behaviour knobs; none of
//! it is clinical data.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assessment::{classify, total_score, ClinicianItemSheet, Ternary};
use crate::items::{ItemId, ItemMap, ItemScores};
use crate::prompt::{format_scoring_response, LlmItemResult, PromptMode};
use crate::transcript::{SessionTranscript, Speaker, Utterance, Gender};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorKnobs {
    pub echo_prob: f64,
    pub answer_prob: f64,
    pub positive_prob: f64,
    pub negative_prob: f64,
    pub suggestion_prob: f64,
}

impl BehaviorKnobs {
    fn validate(&self, class: &str) -> Result<(), SynthError> {
        let named = [
            ("echo_prob", self.echo_prob),
            ("answer_prob", self.answer_prob),
            ("positive_prob", self.positive_prob),
            ("negative_prob", self.negative_prob),
            ("suggestion_prob", self.suggestion_prob),
        ];
        for (name, v) in named {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::InvalidProfile(format!("{class}.{name} = {v} is outside [0,1]")));
            }
        }
        if self.positive_prob + self.negative_prob > 1.0 {
            return Err(SynthError::InvalidProfile(format!(
                "{class}: positive_prob + negative_prob exceeds 1"
            )));
        }
        Ok(())
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, jitter: f64) -> BehaviorKnobs {
        let mut j = |v: f64| {
            if jitter == 0.0 {
                v
            } else {
                (v + rng.random_range(-jitter..=jitter)).clamp(0.0, 1.0)
            }
        };
        let mut k = BehaviorKnobs {
            echo_prob: j(self.echo_prob),
            answer_prob: j(self.answer_prob),
            positive_prob: j(self.positive_prob),
            negative_prob: j(self.negative_prob),
            suggestion_prob: j(self.suggestion_prob),
        };
        k.negative_prob = k.negative_prob.min(1.0 - k.positive_prob);
        k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassKnobs {
    pub td: BehaviorKnobs,
    pub asd: BehaviorKnobs,
    pub autism: BehaviorKnobs,
}

impl ClassKnobs {
    pub fn get(&self, class: Ternary) -> &BehaviorKnobs {
        match class {
            Ternary::NonSpectrum => &self.td,
            Ternary::SpectrumDisorder => &self.asd,
            Ternary::Autism => &self.autism,
        }
    }
}

impl Default for ClassKnobs {
    fn default() -> Self {
        let k = |echo_prob, answer_prob, positive_prob, negative_prob, suggestion_prob| BehaviorKnobs {
            echo_prob,
            answer_prob,
            positive_prob,
            negative_prob,
            suggestion_prob,
        };
        ClassKnobs {
            td: k(0.05, 0.9, 0.5, 0.1, 0.35),
            asd: k(0.3, 0.7, 0.3, 0.2, 0.15),
            autism: k(0.65, 0.45, 0.1, 0.3, 0.05),
        }
    }
}

/// Fault injected into a session's scoring fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureError {
    /// Drops the B11 line.
    MissingItem,
    /// Scores A7 as 5.
    OutOfRange,
    /// Repeats the A4 line.
    Duplicate,
    /// Surrounds a valid response with prose.
    ProseWrapped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorProfile {
    pub n_sessions: usize,
    /// `[td, asd, autism]` session counts.
    pub class_mix: [usize; 3],
    pub knobs: ClassKnobs,
    /// Half-width of the uniform per-session perturbation of each knob.
    pub jitter: f64,
    /// Inclusive range of doctor turns per session.
    pub turns: [usize; 2],
    pub question_prob: f64,
    /// Chance that a fixture score is moved one step away from the label.
    pub llm_noise: f64,
    /// Chance that a fixture response is wrapped in prose.
    pub prose_rate: f64,
    pub fixture_errors: BTreeMap<String, FixtureError>,
    pub seed: u64,
}

impl Default for GeneratorProfile {
    fn default() -> Self {
        GeneratorProfile {
            n_sessions: 28,
            class_mix: [12, 4, 12],
            knobs: ClassKnobs::default(),
            jitter: 0.1,
            turns: [30, 50],
            question_prob: 0.75,
            llm_noise: 0.3,
            prose_rate: 0.2,
            fixture_errors: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl GeneratorProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidProfile(m));
        if self.n_sessions == 0 {
            return bad("n_sessions must be positive".into());
        }
        if self.class_mix.iter().sum::<usize>() != self.n_sessions {
            return bad(format!(
                "class_mix {:?} does not sum to n_sessions {}",
                self.class_mix, self.n_sessions
            ));
        }
        self.knobs.td.validate("td")?;
        self.knobs.asd.validate("asd")?;
        self.knobs.autism.validate("autism")?;
        for (name, v) in [
            ("jitter", self.jitter),
            ("question_prob", self.question_prob),
            ("llm_noise", self.llm_noise),
            ("prose_rate", self.prose_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} is outside [0,1]"));
            }
        }
        if self.question_prob == 0.0 {
            return bad("question_prob must be positive".into());
        }
        if self.turns[0] == 0 || self.turns[0] > self.turns[1] {
            return bad(format!("turns {:?} must satisfy 1 <= min <= max", self.turns));
        }
        Ok(())
    }

    pub fn session_id(i: usize) -> String {
        format!("syn{:03}", i + 1)
    }
}

/// One generated session and everything known about it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub transcript: SessionTranscript,
    pub labels: ItemScores,
    pub class: Ternary,
    pub knobs: BehaviorKnobs,
    /// File stem (`only_scoring`, `explain_B9`, ...) to response text.
    pub fixtures: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub sessions: Vec<SynthSession>,
}

#[derive(Serialize)]
struct MetaEntry<'a> {
    class: Ternary,
    knobs: &'a BehaviorKnobs,
}

impl SynthCorpus {
    pub fn labels(&self) -> BTreeMap<String, ItemScores> {
        self.sessions
            .iter()
            .map(|s| (s.transcript.session_id().to_string(), s.labels))
            .collect()
    }

    /// Writes `<id>.jsonl` files, `labels.json`, `synth_meta.json` and
    /// `fixtures/<id>/<name>.txt` under `dir`.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for s in &self.sessions {
            let id = s.transcript.session_id();
            fs::write(dir.join(format!("{id}.jsonl")), s.transcript.to_jsonl())?;
            let fx = dir.join("fixtures").join(id);
            fs::create_dir_all(&fx)?;
            for (name, text) in &s.fixtures {
                fs::write(fx.join(format!("{name}.txt")), text)?;
            }
        }
        let labels = serde_json::to_string_pretty(&self.labels()).map_err(io::Error::other)?;
        fs::write(dir.join("labels.json"), labels + "\n")?;
        let meta: BTreeMap<&str, MetaEntry> = self
            .sessions
            .iter()
            .map(|s| {
                (
                    s.transcript.session_id(),
                    MetaEntry {
                        class: s.class,
                        knobs: &s.knobs,
                    },
                )
            })
            .collect();
        let meta = serde_json::to_string_pretty(&meta).map_err(io::Error::other)?;
        fs::write(dir.join("synth_meta.json"), meta + "\n")
    }
}

const DOCTOR_QUESTIONS: &[&str] = &[
    "What did you do at school today?",
    "Can you tell me about your family?",
    "Where do you live?",
    "What is happening in this picture?",
    "Who sits next to you in class?",
    "What do you do on weekends?",
    "How did you get here today?",
    "Which toy is this?",
    "What happened in the story?",
    "Do you have any pets?",
    "What would you do if you lost your bag?",
    "Can you show me how you brush your teeth?",
];

const DOCTOR_STATEMENTS: &[&str] = &[
    "Here are some blocks for you.",
    "Let me show you a picture.",
    "I see a bird in the tree.",
    "This book has a story in it.",
    "I went to the market yesterday.",
    "Now we will try something new.",
    "Take a look at these toys.",
    "That is a tall tower.",
];

const CHILD_NEUTRAL: &[&str] = &[
    "The car is red.",
    "My brother has a bike.",
    "We went to the shop after school.",
    "There are three blocks here.",
    "I have a dog at home.",
    "The train goes under the bridge.",
    "My teacher is called Anna.",
    "It is a blue box.",
    "I ate rice for dinner.",
    "The dinosaur lives in a cave.",
];

const CHILD_POSITIVE: &[&str] = &[
    "This is fun.",
    "I like the blocks.",
    "That was great.",
    "I love trains.",
    "The picture is nice.",
    "The dog is funny.",
];

const CHILD_NEGATIVE: &[&str] = &[
    "This is boring.",
    "I am tired.",
    "That was scary.",
    "I hate puzzles.",
    "My arm is hurt.",
    "The story is sad.",
];

const CHILD_SUGGESTIONS: &[&str] = &[
    "Let's build a tower.",
    "How about the red one.",
    "We could make a road.",
    "Shall we draw a house.",
    "Let us read the book.",
];

fn pick<'a>(rng: &mut ChaCha8Rng, bank: &[&'a str]) -> &'a str {
    bank.choose(rng).expect("non-empty bank")
}

fn ladder_up(v: f64, t1: f64, t2: f64) -> u8 {
    if v >= t2 {
        2
    } else if v >= t1 {
        1
    } else {
        0
    }
}

fn ladder_down(v: f64, t1: f64, t2: f64) -> u8 {
    if v >= t1 {
        0
    } else if v >= t2 {
        1
    } else {
        2
    }
}

/// Ground-truth item scores from realized knobs.
///
/// ```text
/// A4  echo:                    >= 0.85 -> 3, >= 0.6 -> 2, >= 0.25 -> 1
/// A7  answer:                  >= 0.8 -> 0, >= 0.55 -> 1, >= 0.3 -> 2, else 3
/// A8  (answer + 1 - echo) / 2: >= 0.8 -> 0, >= 0.6 -> 1, else 2
/// B4  positive - negative:     >= 0.25 -> 0, >= 0 -> 1, else 2
/// B7  suggestion:              >= 0.25 -> 0, >= 0.1 -> 1, else 2
/// B9  answer:                  >= 0.85 -> 0, >= 0.6 -> 1, else 2
/// B10 (answer + suggestion + 1 - echo) / 3: >= 0.65 -> 0, >= 0.45 -> 1, else 2
/// B11 rounded mean of the other seven, capped at 2
/// ```
pub fn label_formula(k: &BehaviorKnobs) -> ItemScores {
    let a4 = if k.echo_prob >= 0.85 { 3 } else { ladder_up(k.echo_prob, 0.25, 0.6) };
    let a7 = if k.answer_prob < 0.3 { 3 } else { ladder_down(k.answer_prob, 0.8, 0.55) };
    let a8 = ladder_down((k.answer_prob + 1.0 - k.echo_prob) / 2.0, 0.8, 0.6);
    let b4 = ladder_down(k.positive_prob - k.negative_prob, 0.25, 0.0);
    let b7 = ladder_down(k.suggestion_prob, 0.25, 0.1);
    let b9 = ladder_down(k.answer_prob, 0.85, 0.6);
    let b10 = ladder_down((k.answer_prob + k.suggestion_prob + 1.0 - k.echo_prob) / 3.0, 0.65, 0.45);
    let seven = [a4, a7, a8, b4, b7, b9, b10];
    let sum: u32 = seven.iter().map(|&v| u32::from(v)).sum();
    let b11 = ((sum + 3) / 7).min(2) as u8;
    let all = [a4, a7, a8, b4, b7, b9, b10, b11];
    ItemMap::from_fn(|id| all[id.index()])
}

fn class_range(class: Ternary) -> (u32, u32) {
    match class {
        Ternary::NonSpectrum => (0, 6),
        Ternary::SpectrumDisorder => (7, 8),
        Ternary::Autism => (9, 28),
    }
}

/// Clinician sheet bringing the total into the class range, if one exists.
fn clinician_for(rng: &mut ChaCha8Rng, labels: &ItemScores, class: Ternary) -> Option<ClinicianItemSheet> {
    let item_part: u32 = labels.values().iter().map(|&v| u32::from(v.min(2))).sum();
    let (lo, hi) = class_range(class);
    let c_lo = lo.saturating_sub(item_part);
    let c_hi = hi.checked_sub(item_part)?.min(12).min(c_lo + 6);
    if c_lo > c_hi {
        return None;
    }
    let mut remaining = rng.random_range(c_lo..=c_hi);
    let mut sheet = [0u8; 6];
    while remaining > 0 {
        let open: Vec<usize> = (0..6).filter(|&i| sheet[i] < 2).collect();
        let &i = open.choose(rng)?;
        sheet[i] += 1;
        remaining -= 1;
    }
    for v in sheet.iter_mut() {
        if *v == 2 && rng.random_bool(0.15) {
            *v = 3;
        }
    }
    ClinicianItemSheet::new(sheet).ok()
}

fn utterances(rng: &mut ChaCha8Rng, k: &BehaviorKnobs, profile: &GeneratorProfile) -> Vec<Utterance> {
    let turns = rng.random_range(profile.turns[0]..=profile.turns[1]);
    let mut out = Vec::new();
    for _ in 0..turns {
        let doctor = if rng.random_bool(profile.question_prob) {
            pick(rng, DOCTOR_QUESTIONS)
        } else {
            pick(rng, DOCTOR_STATEMENTS)
        };
        out.push(Utterance::new(Speaker::Doctor, doctor));
        if !rng.random_bool(k.answer_prob) {
            continue;
        }
        let child = if rng.random_bool(k.echo_prob) {
            doctor.to_string()
        } else {
            let u: f64 = rng.random();
            let clause = if u < k.positive_prob {
                pick(rng, CHILD_POSITIVE)
            } else if u < k.positive_prob + k.negative_prob {
                pick(rng, CHILD_NEGATIVE)
            } else {
                pick(rng, CHILD_NEUTRAL)
            };
            if rng.random_bool(k.suggestion_prob) {
                format!("{} {}", pick(rng, CHILD_SUGGESTIONS), clause)
            } else {
                clause.to_string()
            }
        };
        out.push(Utterance::new(Speaker::Child, child));
    }
    if !out.iter().any(|u| u.speaker == Speaker::Child) {
        out.push(Utterance::new(Speaker::Child, pick(rng, CHILD_NEUTRAL)));
    }
    out
}

fn noisy(rng: &mut ChaCha8Rng, labels: &ItemScores, noise: f64) -> ItemScores {
    labels.map(|_, &v| {
        if rng.random_bool(noise) {
            if v == 0 || (v < 3 && rng.random_bool(0.5)) {
                v + 1
            } else {
                v - 1
            }
        } else {
            v
        }
    })
}

fn scoring_fixture(
    rng: &mut ChaCha8Rng,
    scores: &ItemScores,
    mode: PromptMode,
    prose_rate: f64,
    fault: Option<FixtureError>,
) -> String {
    let results: Vec<LlmItemResult> = scores
        .iter()
        .map(|(item, &score)| LlmItemResult {
            item,
            score,
            justification: if mode.wants_justification() {
                format!("Synthetic justification for {item} at level {score}.")
            } else {
                String::new()
            },
        })
        .collect();
    let mut text = format_scoring_response(&results);
    match fault {
        Some(FixtureError::MissingItem) => {
            text = text.lines().filter(|l| !l.starts_with("B11:")).map(|l| format!("{l}\n")).collect();
        }
        Some(FixtureError::OutOfRange) => {
            text = text
                .lines()
                .map(|l| if l.starts_with("A7:") { format!("A7: 5{}\n", &l[5..]) } else { format!("{l}\n") })
                .collect();
        }
        Some(FixtureError::Duplicate) => {
            let first = text.lines().next().unwrap_or_default().to_string();
            text.push_str(&first);
            text.push('\n');
        }
        Some(FixtureError::ProseWrapped) | None => {}
    }
    let wrap = fault == Some(FixtureError::ProseWrapped) || rng.random_bool(prose_rate);
    if wrap {
        text = format!(
            "Here is my assessment of the transcript.\n\n{text}\nThese scores reflect the whole session.\n"
        );
    }
    text
}

fn explain_fixture(rng: &mut ChaCha8Rng, item: ItemId, score: u8, t: &SessionTranscript) -> String {
    let child: Vec<&str> = t
        .utterances()
        .iter()
        .filter(|u| u.speaker == Speaker::Child)
        .map(|u| u.text.as_str())
        .collect();
    let mut s = format!("SCORE: {score}\n");
    let n = child.len().min(2);
    for quote in child.choose_multiple(rng, n) {
        s.push_str(&format!("EXCERPT: \"{quote}\"\n"));
    }
    s.push_str(&format!("RATIONALE: Synthetic rationale for {item} at level {score}.\n"));
    s
}

/// Generates a corpus. The same profile always yields the same corpus.
pub fn generate(profile: &GeneratorProfile) -> Result<SynthCorpus, SynthError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let mut fixture_rng = ChaCha8Rng::seed_from_u64(profile.seed);
    fixture_rng.set_stream(1);

    let mut classes: Vec<Ternary> = [Ternary::NonSpectrum, Ternary::SpectrumDisorder, Ternary::Autism]
        .into_iter()
        .zip(profile.class_mix)
        .flat_map(|(c, n)| std::iter::repeat_n(c, n))
        .collect();
    classes.shuffle(&mut rng);

    let mut sessions = Vec::with_capacity(profile.n_sessions);
    for (i, &class) in classes.iter().enumerate() {
        let id = GeneratorProfile::session_id(i);
        let base = profile.knobs.get(class);
        let mut attempt = 0;
        let (knobs, labels, clinician) = loop {
            attempt += 1;
            if attempt > 10_000 {
                return Err(SynthError::InvalidProfile(format!(
                    "knobs for {class:?} cannot produce a total in the class range"
                )));
            }
            let knobs = base.jittered(&mut rng, profile.jitter);
            let labels = label_formula(&knobs);
            if let Some(c) = clinician_for(&mut rng, &labels, class) {
                break (knobs, labels, c);
            }
        };
        debug_assert_eq!(
            classify(u32::from(total_score(&labels, &clinician))).map(|d| d.ternary()),
            Ok(class)
        );
        let age = rng.random_range(57..=173);
        let gender = if rng.random_bool(20.0 / 28.0) { Gender::Male } else { Gender::Female };
        let transcript = SessionTranscript::new(id.clone(), utterances(&mut rng, &knobs, profile))
            .expect("generated sessions are non-empty")
            .with_age_months(age)
            .with_gender(gender)
            .with_clinician_items(clinician);

        let fault = profile.fixture_errors.get(&id).copied();
        let mut fixtures = BTreeMap::new();
        let mut zero_shot = labels;
        for mode in PromptMode::ALL {
            let scores = noisy(&mut fixture_rng, &labels, profile.llm_noise);
            if mode == PromptMode::ScoreExplainZeroShot {
                zero_shot = scores;
            }
            let text = scoring_fixture(&mut fixture_rng, &scores, mode, profile.prose_rate, fault);
            fixtures.insert(mode.as_str().to_string(), text);
        }
        for item in ItemId::ALL {
            let text = explain_fixture(&mut fixture_rng, item, zero_shot[item], &transcript);
            fixtures.insert(format!("explain_{item}"), text);
        }
        sessions.push(SynthSession {
            transcript,
            labels,
            class,
            knobs,
            fixtures,
        });
    }
    Ok(SynthCorpus { sessions })
}
