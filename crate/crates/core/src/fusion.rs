//! Per-item convex fusion of LLM and rule-based scores.
//!
//! Each item gets a weight `alpha_llm` derived from the two sources'
//! validation MAEs; the fused score is
//! `alpha_llm * llm + (1 - alpha_llm) * rule`.
//!
//! | strategy | `alpha_llm`                                   |
//! |----------|-----------------------------------------------|
//! | V1       | 1 if `m_llm < m_rule`, 0 if greater, 0.5 on a tie |
//! | V2       | `(1/m_llm) / (1/m_llm + 1/m_rule)`            |
//! | V3       | same with squared inverses                     |
//! | V4       | `exp(-m_llm) / (exp(-m_llm) + exp(-m_rule))`   |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::items::{ItemId, ItemMap, ItemScores};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("{item}: {strategy} needs both MAEs > 0")]
    ZeroMae { item: ItemId, strategy: FusionStrategy },
    #[error("{item}: MAE must be finite and >= 0 (llm {llm}, rule {rule})")]
    InvalidMae { item: ItemId, llm: f64, rule: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    #[serde(alias = "v1")]
    V1HardSelect,
    #[serde(alias = "v2")]
    V2InverseMae,
    #[serde(alias = "v3")]
    V3InverseSquaredMae,
    #[serde(alias = "v4")]
    V4SoftmaxNegMae,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::V1HardSelect,
        FusionStrategy::V2InverseMae,
        FusionStrategy::V3InverseSquaredMae,
        FusionStrategy::V4SoftmaxNegMae,
    ];
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FusionStrategy::V1HardSelect => "v1_hard_select",
            FusionStrategy::V2InverseMae => "v2_inverse_mae",
            FusionStrategy::V3InverseSquaredMae => "v3_inverse_squared_mae",
            FusionStrategy::V4SoftmaxNegMae => "v4_softmax_neg_mae",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MaePair {
    pub llm: f64,
    pub rule: f64,
}

/// Validation MAEs of both sources, per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ItemMap<MaePair>", into = "ItemMap<MaePair>")]
pub struct MaeTable(ItemMap<MaePair>);

impl MaeTable {
    pub fn new(pairs: ItemMap<MaePair>) -> Result<Self, FusionError> {
        for (item, p) in pairs.iter() {
            let ok = |m: f64| m.is_finite() && m >= 0.0;
            if !ok(p.llm) || !ok(p.rule) {
                return Err(FusionError::InvalidMae {
                    item,
                    llm: p.llm,
                    rule: p.rule,
                });
            }
        }
        Ok(MaeTable(pairs))
    }

    pub fn get(&self, item: ItemId) -> MaePair {
        self.0[item]
    }
}

impl TryFrom<ItemMap<MaePair>> for MaeTable {
    type Error = FusionError;

    fn try_from(pairs: ItemMap<MaePair>) -> Result<Self, Self::Error> {
        MaeTable::new(pairs)
    }
}

impl From<MaeTable> for ItemMap<MaePair> {
    fn from(t: MaeTable) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub strategy: FusionStrategy,
    pub alpha_llm: ItemMap<f64>,
}

impl FusionWeights {
    pub fn uniform(strategy: FusionStrategy, alpha: f64) -> Self {
        FusionWeights {
            strategy,
            alpha_llm: ItemMap::from_fn(|_| alpha.clamp(0.0, 1.0)),
        }
    }

    pub fn alpha_rule(&self, item: ItemId) -> f64 {
        1.0 - self.alpha_llm[item]
    }
}

/// LLM weight for one item under `strategy`.
pub fn alpha_llm(
    item: ItemId,
    m_llm: f64,
    m_rule: f64,
    strategy: FusionStrategy,
) -> Result<f64, FusionError> {
    let alpha = match strategy {
        FusionStrategy::V1HardSelect => {
            if m_llm < m_rule {
                1.0
            } else if m_llm > m_rule {
                0.0
            } else {
                0.5
            }
        }
        FusionStrategy::V2InverseMae | FusionStrategy::V3InverseSquaredMae => {
            if m_llm == 0.0 || m_rule == 0.0 {
                return Err(FusionError::ZeroMae { item, strategy });
            }
            // (1/a)^p / ((1/a)^p + (1/b)^p) == b^p / (a^p + b^p)
            let (a, b) = if strategy == FusionStrategy::V2InverseMae {
                (m_llm, m_rule)
            } else {
                (m_llm * m_llm, m_rule * m_rule)
            };
            b / (a + b)
        }
        // Logistic form of the two-way softmax; depends only on the difference.
        FusionStrategy::V4SoftmaxNegMae => 1.0 / (1.0 + (m_llm - m_rule).exp()),
    };
    Ok(alpha.clamp(0.0, 1.0))
}

pub fn compute_weights(mae: &MaeTable, strategy: FusionStrategy) -> Result<FusionWeights, FusionError> {
    let alpha = ItemMap::try_from_fn(|id| {
        let p = mae.get(id);
        alpha_llm(id, p.llm, p.rule, strategy)
    })?;
    Ok(FusionWeights {
        strategy,
        alpha_llm: alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FusedItem {
    pub score: f64,
    pub llm: f64,
    pub rule: f64,
    pub alpha_llm: f64,
}

/// Continuous fused scores with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedScoreSheet(pub ItemMap<FusedItem>);

impl FusedScoreSheet {
    pub fn scores(&self) -> ItemMap<f64> {
        self.0.map(|_, f| f.score)
    }
}

fn convex(alpha: f64, llm: f64, rule: f64) -> f64 {
    if alpha >= 1.0 {
        return llm;
    }
    if alpha <= 0.0 {
        return rule;
    }
    let y = rule + alpha * (llm - rule);
    y.clamp(llm.min(rule), llm.max(rule))
}

pub fn fuse(llm: &ItemMap<f64>, rule: &ItemMap<f64>, weights: &FusionWeights) -> FusedScoreSheet {
    FusedScoreSheet(ItemMap::from_fn(|id| {
        let alpha = weights.alpha_llm[id];
        FusedItem {
            score: convex(alpha, llm[id], rule[id]),
            llm: llm[id],
            rule: rule[id],
            alpha_llm: alpha,
        }
    }))
}

/// Rounds half away from zero and clamps to 0..=3.
pub fn round_score(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(0.0, 3.0) as u8
}

/// Integer sheet for the diagnosis path; MAE keeps the unrounded scores.
pub fn round_for_totals(sheet: &FusedScoreSheet) -> ItemScores {
    sheet.0.map(|_, f| round_score(f.score))
}
