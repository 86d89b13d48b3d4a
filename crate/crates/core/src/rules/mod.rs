//! Threshold rules mapping feature vectors to item scores.
//!
//! Each item rule computes a weighted sum `s` of features and places it on a
//! three-step ladder. For `higher_is_worse` rules (`t1 <= t2`):
//!
//! ```text
//!   s < t1        -> 0
//!   t1 <= s < t2  -> 1
//!   s >= t2       -> 2
//! ```
//!
//! `lower_is_worse` rules mirror this with `t1 >= t2`:
//!
//! ```text
//!   s >= t1       -> 0
//!   t2 <= s < t1  -> 1
//!   s < t2        -> 2
//! ```
//!
//! Rules never emit 3.

mod fit;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureVector, FEATURE_NAMES};
use crate::items::{ItemId, ItemMap, ItemScoreSheet, ScoreSource};

pub use fit::{
    default_grid, fit_params, stratified_folds, CandidateResult, FitReport, FitSample, GridAxis,
    GridSpec, ItemFit,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuleError {
    #[error("{item}: unknown feature `{name}`")]
    UnknownFeatureName { item: ItemId, name: String },
    #[error("{item}: invalid rule ({reason})")]
    InvalidRule { item: ItemId, reason: String },
    #[error("grid for {0} has no candidates")]
    EmptyGrid(ItemId),
    #[error("every diagnosis stratum needs at least 2 sessions ({0})")]
    InsufficientStrata(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsWorse,
    LowerIsWorse,
}

impl Direction {
    /// Whether `(t1, t2)` is ordered the way this direction requires.
    pub fn accepts(self, t1: f64, t2: f64) -> bool {
        match self {
            Direction::HigherIsWorse => t1 <= t2,
            Direction::LowerIsWorse => t1 >= t2,
        }
    }

    pub fn ladder(self, s: f64, t1: f64, t2: f64) -> u8 {
        match self {
            Direction::HigherIsWorse => {
                if s < t1 {
                    0
                } else if s < t2 {
                    1
                } else {
                    2
                }
            }
            Direction::LowerIsWorse => {
                if s >= t1 {
                    0
                } else if s >= t2 {
                    1
                } else {
                    2
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub feature: String,
    pub weight: f64,
}

impl Term {
    pub fn new(feature: &str, weight: f64) -> Self {
        Term {
            feature: feature.to_string(),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRule {
    pub terms: Vec<Term>,
    pub direction: Direction,
    pub t1: f64,
    pub t2: f64,
}

impl ItemRule {
    pub fn validate(&self, item: ItemId) -> Result<(), RuleError> {
        let invalid = |reason: String| RuleError::InvalidRule { item, reason };
        if self.terms.is_empty() {
            return Err(invalid("no terms".into()));
        }
        for term in &self.terms {
            if !FEATURE_NAMES.contains(&term.feature.as_str()) {
                return Err(RuleError::UnknownFeatureName {
                    item,
                    name: term.feature.clone(),
                });
            }
            if !term.weight.is_finite() {
                return Err(invalid(format!("weight for {} is not finite", term.feature)));
            }
        }
        if !self.t1.is_finite() || !self.t2.is_finite() {
            return Err(invalid("thresholds must be finite".into()));
        }
        if !self.direction.accepts(self.t1, self.t2) {
            return Err(invalid(format!(
                "thresholds ({}, {}) are not ordered for {:?}",
                self.t1, self.t2, self.direction
            )));
        }
        Ok(())
    }

    /// Weighted feature sum `s`.
    pub fn weighted_sum(&self, item: ItemId, f: &FeatureVector) -> Result<f64, RuleError> {
        self.terms.iter().try_fold(0.0, |acc, term| {
            let v = f.get(&term.feature).ok_or_else(|| RuleError::UnknownFeatureName {
                item,
                name: term.feature.clone(),
            })?;
            Ok(acc + term.weight * v)
        })
    }
}

pub fn score_item_rule(item: ItemId, f: &FeatureVector, rule: &ItemRule) -> Result<u8, RuleError> {
    let s = rule.weighted_sum(item, f)?;
    Ok(rule.direction.ladder(s, rule.t1, rule.t2))
}

/// One rule per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ItemMap<ItemRule>", into = "ItemMap<ItemRule>")]
pub struct RuleParams(ItemMap<ItemRule>);

impl RuleParams {
    pub fn new(rules: ItemMap<ItemRule>) -> Result<Self, RuleError> {
        for (item, rule) in rules.iter() {
            rule.validate(item)?;
        }
        Ok(RuleParams(rules))
    }

    pub fn rule(&self, item: ItemId) -> &ItemRule {
        &self.0[item]
    }

    pub fn rules(&self) -> &ItemMap<ItemRule> {
        &self.0
    }

    /// Same terms and directions with new thresholds.
    pub fn with_thresholds(&self, thresholds: &ItemMap<(f64, f64)>) -> Result<Self, RuleError> {
        let rules = self.0.map(|id, r| ItemRule {
            t1: thresholds[id].0,
            t2: thresholds[id].1,
            ..r.clone()
        });
        RuleParams::new(rules)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("rule params serialize")
    }
}

impl TryFrom<ItemMap<ItemRule>> for RuleParams {
    type Error = RuleError;

    fn try_from(rules: ItemMap<ItemRule>) -> Result<Self, Self::Error> {
        RuleParams::new(rules)
    }
}

impl From<RuleParams> for ItemMap<ItemRule> {
    fn from(p: RuleParams) -> Self {
        p.0
    }
}

impl Default for RuleParams {
    /// Default feature-to-item mapping with hand-set starting thresholds.
    fn default() -> Self {
        use Direction::{HigherIsWorse, LowerIsWorse};
        let rule = |terms: Vec<Term>, direction, t1, t2| ItemRule {
            terms,
            direction,
            t1,
            t2,
        };
        let reciprocity = || {
            vec![
                Term::new("alternation_rate", 0.5),
                Term::new("participation_rate", 0.5),
            ]
        };
        let w = 1.0 / 7.0;
        let overall = vec![
            Term::new("echolalia_rate", -w),
            Term::new("alternation_rate", w),
            Term::new("participation_rate", w),
            Term::new("enjoyment_rate", w),
            Term::new("passive_rate", -w),
            Term::new("suggestion_rate", w),
            Term::new("response_rate", w),
        ];
        let rules = ItemMap::from_fn(|id| match id {
            ItemId::A4 => rule(vec![Term::new("echolalia_rate", 1.0)], HigherIsWorse, 0.2, 0.5),
            ItemId::A7 => rule(vec![Term::new("response_rate", 1.0)], LowerIsWorse, 0.8, 0.55),
            ItemId::A8 => rule(reciprocity(), LowerIsWorse, 0.65, 0.5),
            ItemId::B4 => rule(
                vec![Term::new("enjoyment_rate", 1.0), Term::new("passive_rate", -1.0)],
                LowerIsWorse,
                0.2,
                0.0,
            ),
            ItemId::B7 => rule(vec![Term::new("suggestion_rate", 1.0)], LowerIsWorse, 0.25, 0.1),
            ItemId::B9 => rule(vec![Term::new("response_rate", 1.0)], LowerIsWorse, 0.8, 0.55),
            ItemId::B10 => rule(reciprocity(), LowerIsWorse, 0.65, 0.5),
            ItemId::B11 => rule(overall.clone(), LowerIsWorse, 0.35, 0.25),
        });
        RuleParams::new(rules).expect("default rules are valid")
    }
}

pub fn score_all_rule(f: &FeatureVector, params: &RuleParams) -> Result<ItemScoreSheet, RuleError> {
    let scores = ItemMap::try_from_fn(|id| score_item_rule(id, f, params.rule(id)))?;
    Ok(ItemScoreSheet::new(ScoreSource::Rule, scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn echo_rule(t1: f64, t2: f64) -> ItemRule {
        ItemRule {
            terms: vec![Term::new("echolalia_rate", 1.0)],
            direction: Direction::HigherIsWorse,
            t1,
            t2,
        }
    }

    fn with_echo(v: f64) -> FeatureVector {
        FeatureVector {
            echolalia_rate: v,
            ..FeatureVector::default()
        }
    }

    #[test]
    fn ladder_boundaries_are_half_open() {
        let r = echo_rule(0.3, 0.6);
        assert_eq!(score_item_rule(ItemId::A4, &with_echo(0.3), &r).unwrap(), 1);
        assert_eq!(score_item_rule(ItemId::A4, &with_echo(0.29), &r).unwrap(), 0);
        assert_eq!(score_item_rule(ItemId::A4, &with_echo(0.6), &r).unwrap(), 2);
        assert_eq!(score_item_rule(ItemId::A4, &with_echo(0.7), &r).unwrap(), 2);
    }

    #[test]
    fn lower_is_worse_ladder() {
        let d = Direction::LowerIsWorse;
        assert_eq!(d.ladder(0.9, 0.8, 0.5), 0);
        assert_eq!(d.ladder(0.8, 0.8, 0.5), 0);
        assert_eq!(d.ladder(0.5, 0.8, 0.5), 1);
        assert_eq!(d.ladder(0.49, 0.8, 0.5), 2);
    }

    #[test]
    fn unknown_feature_is_reported() {
        let mut r = echo_rule(0.3, 0.6);
        r.terms[0].feature = "loudness".into();
        assert_eq!(
            score_item_rule(ItemId::A7, &with_echo(0.1), &r),
            Err(RuleError::UnknownFeatureName {
                item: ItemId::A7,
                name: "loudness".into()
            })
        );
        assert!(matches!(r.validate(ItemId::A7), Err(RuleError::UnknownFeatureName { .. })));
    }

    #[test]
    fn misordered_thresholds_are_invalid() {
        assert!(matches!(
            echo_rule(0.6, 0.3).validate(ItemId::A4),
            Err(RuleError::InvalidRule { .. })
        ));
    }

    fn all_higher_is_worse(t1: f64, t2: f64) -> RuleParams {
        let rules = RuleParams::default()
            .rules()
            .map(|_, r| ItemRule {
                terms: r.terms.iter().map(|t| Term::new(&t.feature, t.weight.abs())).collect(),
                direction: Direction::HigherIsWorse,
                t1,
                t2,
            });
        RuleParams::new(rules).unwrap()
    }

    #[test]
    fn extreme_features_give_uniform_sheets() {
        let p = all_higher_is_worse(0.3, 0.6);
        let zero = score_all_rule(&FeatureVector::default(), &p).unwrap();
        assert_eq!(zero.scores, ItemMap::from_fn(|_| 0));
        assert_eq!(zero.source, ScoreSource::Rule);
        let p = all_higher_is_worse(0.2, 0.9);
        let ones = score_all_rule(&FeatureVector::from_array([1.0; 7]), &p).unwrap();
        assert_eq!(ones.scores, ItemMap::from_fn(|_| 2));
    }

    #[test]
    fn default_mapping_on_mixed_fixture() {
        // echo .25, alt .9, part .4, enjoy .3, passive .2, sugg .15, resp .6
        let f = FeatureVector::from_array([0.25, 0.9, 0.4, 0.3, 0.2, 0.15, 0.6]);
        let sheet = score_all_rule(&f, &RuleParams::default()).unwrap();
        // A4: .25 in [.2,.5) -> 1
        // A7, B9: .6 in [.55,.8) -> 1
        // A8, B10: .65 >= .65 -> 0
        // B4: .1 in [0,.2) -> 1
        // B7: .15 in [.1,.25) -> 1
        // B11: (-.25+.9+.4+.3-.2+.15+.6)/7 = 1.9/7 = .2714 in [.25,.35) -> 1
        let expected = [1, 1, 0, 1, 1, 1, 0, 1];
        assert_eq!(sheet.scores, ItemMap::from_fn(|id| expected[id.index()]));
    }

    #[test]
    fn params_json_shape() {
        let json = RuleParams::default().to_json_pretty();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["A4"]["direction"], "higher_is_worse");
        assert_eq!(v["A4"]["terms"][0]["feature"], "echolalia_rate");
        assert_eq!(serde_json::from_str::<RuleParams>(&json).unwrap(), RuleParams::default());
        let mut broken = v.clone();
        broken["A7"]["t1"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<RuleParams>(broken).is_err());
    }

    proptest! {
        #[test]
        fn higher_is_worse_is_monotone(
            base in proptest::array::uniform7(0.0f64..1.0),
            bump in 0.0f64..1.0,
            k in 0usize..7,
            t1 in 0.0f64..1.0,
            gap in 0.0f64..1.0,
        ) {
            let p = all_higher_is_worse(t1, t1 + gap);
            let mut raised = base;
            raised[k] = (raised[k] + bump).min(1.0);
            let a = score_all_rule(&FeatureVector::from_array(base), &p).unwrap();
            let b = score_all_rule(&FeatureVector::from_array(raised), &p).unwrap();
            for id in ItemId::ALL {
                prop_assert!(b.scores[id] >= a.scores[id]);
            }
        }
    }
}
