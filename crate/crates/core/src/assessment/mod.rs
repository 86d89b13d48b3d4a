//! Totals, diagnosis cutoffs and evaluation metrics.
//!
//! Module 3 has 14 scored items: the eight language items handled by this
//! crate plus six clinician-scored items that are copied through unchanged.
//! Each item contributes at most 2 to the total (a 3 counts as 2), giving a
//! 0..=28 range. Totals 0..=6 are non-spectrum, 7..=8 spectrum disorder and
//! 9 or more autism.

mod evaluate;
mod metrics;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::items::{ItemId, ItemScores, ScoreSource};

pub use evaluate::{evaluate_corpus, evaluate_source, random_baseline, LabeledSession, MetricsReport};
pub use metrics::{classification_metrics, item_mae, ClassificationMetrics, Task};
pub use report::render_table;

pub const MAX_TOTAL: u8 = 28;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssessmentError {
    #[error("total {0} is outside 0..=28")]
    OutOfRangeTotal(u32),
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no observations")]
    Empty,
    #[error("session `{session}` has no {kind} prediction")]
    MissingPrediction { session: String, kind: ScoreSource },
    #[error("session `{0}` has no clinician item sheet")]
    MissingClinicianItems(String),
    #[error("invalid clinician item sheet: {0}")]
    InvalidClinicianSheet(String),
}

/// The six Module 3 items outside the language set, scored by the clinician.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClinicianItem {
    A9,
    B1,
    B2,
    D1,
    D2,
    D4,
}

impl ClinicianItem {
    pub const ALL: [ClinicianItem; 6] = [
        ClinicianItem::A9,
        ClinicianItem::B1,
        ClinicianItem::B2,
        ClinicianItem::D1,
        ClinicianItem::D2,
        ClinicianItem::D4,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClinicianItem::A9 => "A9",
            ClinicianItem::B1 => "B1",
            ClinicianItem::B2 => "B2",
            ClinicianItem::D1 => "D1",
            ClinicianItem::D2 => "D2",
            ClinicianItem::D4 => "D4",
        }
    }
}

impl FromStr for ClinicianItem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClinicianItem::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| s.to_string())
    }
}

/// Clinician scores (0..=3) for the six non-language items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClinicianItemSheet([u8; 6]);

impl ClinicianItemSheet {
    pub fn new(scores: [u8; 6]) -> Result<Self, AssessmentError> {
        if let Some(i) = scores.iter().position(|&s| s > 3) {
            return Err(AssessmentError::InvalidClinicianSheet(format!(
                "{} = {} is outside 0..=3",
                ClinicianItem::ALL[i].as_str(),
                scores[i]
            )));
        }
        Ok(ClinicianItemSheet(scores))
    }

    pub fn get(&self, item: ClinicianItem) -> u8 {
        self.0[item as usize]
    }

    pub fn scores(&self) -> &[u8; 6] {
        &self.0
    }
}

impl Serialize for ClinicianItemSheet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(6))?;
        for (item, v) in ClinicianItem::ALL.iter().zip(self.0) {
            map.serialize_entry(item.as_str(), &v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ClinicianItemSheet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, u8>::deserialize(d)?;
        let mut scores = [None; 6];
        for (label, v) in raw {
            let item: ClinicianItem = label
                .parse()
                .map_err(|l| D::Error::custom(format!("unknown clinician item `{l}`")))?;
            if scores[item as usize].replace(v).is_some() {
                return Err(D::Error::custom(format!("duplicate clinician item `{label}`")));
            }
        }
        let mut out = [0u8; 6];
        for (i, s) in scores.into_iter().enumerate() {
            out[i] = s.ok_or_else(|| {
                D::Error::custom(format!(
                    "missing clinician item `{}`",
                    ClinicianItem::ALL[i].as_str()
                ))
            })?;
        }
        ClinicianItemSheet::new(out).map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ternary {
    NonSpectrum,
    SpectrumDisorder,
    Autism,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Binary {
    NonSpectrum,
    Asd,
}

/// Diagnosis at both granularities. The binary class is derived from the
/// ternary one, so the two can never disagree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DiagnosisClass {
    ternary: Ternary,
}

impl DiagnosisClass {
    pub fn new(ternary: Ternary) -> Self {
        DiagnosisClass { ternary }
    }

    pub fn ternary(self) -> Ternary {
        self.ternary
    }

    pub fn binary(self) -> Binary {
        match self.ternary {
            Ternary::NonSpectrum => Binary::NonSpectrum,
            Ternary::SpectrumDisorder | Ternary::Autism => Binary::Asd,
        }
    }
}

impl fmt::Display for DiagnosisClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}", self.ternary, self.binary())
    }
}

#[derive(Serialize, Deserialize)]
struct DiagnosisRepr {
    ternary: Ternary,
    binary: Binary,
}

impl Serialize for DiagnosisClass {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DiagnosisRepr {
            ternary: self.ternary,
            binary: self.binary(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiagnosisClass {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = DiagnosisRepr::deserialize(d)?;
        let class = DiagnosisClass::new(r.ternary);
        if class.binary() != r.binary {
            return Err(D::Error::custom("binary class inconsistent with ternary class"));
        }
        Ok(class)
    }
}

/// Sums the 14 item scores after capping each at 2.
pub fn total_score(items: &ItemScores, clinician: &ClinicianItemSheet) -> u8 {
    ItemId::ALL
        .iter()
        .map(|&id| items[id].min(2))
        .chain(clinician.scores().iter().map(|&s| s.min(2)))
        .sum()
}

pub fn classify(total: u32) -> Result<DiagnosisClass, AssessmentError> {
    let ternary = match total {
        0..=6 => Ternary::NonSpectrum,
        7..=8 => Ternary::SpectrumDisorder,
        9..=28 => Ternary::Autism,
        _ => return Err(AssessmentError::OutOfRangeTotal(total)),
    };
    Ok(DiagnosisClass::new(ternary))
}
