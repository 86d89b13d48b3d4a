//! Threshold fitting by stratified two-fold cross-validation and grid search.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ItemRule, RuleError, RuleParams};
use crate::assessment::Ternary;
use crate::exec::Execution;
use crate::features::FeatureVector;
use crate::items::{ItemId, ItemMap, ItemScores};

/// Candidate thresholds for one item.
///
/// Either explicit `[[t1, t2], ...]` pairs, or two axes whose product is
/// taken t1-major. Product pairs not ordered for the rule's direction are
/// skipped; explicit pairs must all be ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridAxis {
    Pairs(Vec<[f64; 2]>),
    Axes { t1: Vec<f64>, t2: Vec<f64> },
}

pub type GridSpec = BTreeMap<ItemId, GridAxis>;

impl GridAxis {
    pub fn candidates(&self, item: ItemId, rule: &ItemRule) -> Result<Vec<(f64, f64)>, RuleError> {
        let out: Vec<(f64, f64)> = match self {
            GridAxis::Pairs(pairs) => {
                for &[t1, t2] in pairs {
                    ItemRule { t1, t2, ..rule.clone() }.validate(item)?;
                }
                pairs.iter().map(|&[a, b]| (a, b)).collect()
            }
            GridAxis::Axes { t1, t2 } => {
                let mut v = Vec::new();
                for &a in t1 {
                    for &b in t2 {
                        if a.is_finite() && b.is_finite() && rule.direction.accepts(a, b) {
                            v.push((a, b));
                        }
                    }
                }
                v
            }
        };
        if out.is_empty() {
            return Err(RuleError::EmptyGrid(item));
        }
        Ok(out)
    }
}

/// One labeled session as seen by the fitter.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSample {
    pub session_id: String,
    pub features: FeatureVector,
    pub truth: ItemScores,
    pub class: Ternary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub t1: f64,
    pub t2: f64,
    pub fold_mae: [f64; 2],
    pub mean_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFit {
    pub candidates: Vec<CandidateResult>,
    /// Index into `candidates`.
    pub selected: usize,
}

impl ItemFit {
    pub fn best(&self) -> &CandidateResult {
        &self.candidates[self.selected]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub seed: u64,
    /// Session ids per fold, each sorted.
    pub folds: [Vec<String>; 2],
    pub items: ItemMap<ItemFit>,
}

/// Splits samples into two folds, stratified by diagnosis class.
///
/// Samples are ordered by session id, grouped by class, each group is
/// shuffled with a seeded ChaCha8 stream, and fold membership alternates
/// across the concatenated groups. Returns a fold index per input sample.
pub fn stratified_folds(samples: &[FitSample], seed: u64) -> Result<Vec<usize>, RuleError> {
    let mut strata: BTreeMap<Ternary, Vec<usize>> = BTreeMap::new();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].session_id.cmp(&samples[b].session_id));
    for i in order {
        strata.entry(samples[i].class).or_default().push(i);
    }
    if strata.is_empty() {
        return Err(RuleError::InsufficientStrata("no sessions".into()));
    }
    if let Some((class, members)) = strata.iter().find(|(_, m)| m.len() < 2) {
        return Err(RuleError::InsufficientStrata(format!(
            "{class:?} has {} session(s)",
            members.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0usize; samples.len()];
    let mut k = 0usize;
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold[i] = k % 2;
            k += 1;
        }
    }
    Ok(fold)
}

/// Grid-searches thresholds for every item independently.
///
/// Terms and directions come from `base`. Each candidate is scored by the
/// mean of its two per-fold MAEs; the lowest wins and ties go to the
/// earlier candidate. Comparison is exact (integer error counts over a
/// common denominator), so the outcome does not depend on float rounding.
pub fn fit_params(
    samples: &[FitSample],
    base: &RuleParams,
    grid: &GridSpec,
    seed: u64,
    exec: Execution,
) -> Result<(RuleParams, FitReport), RuleError> {
    let candidates: ItemMap<Vec<(f64, f64)>> = ItemMap::try_from_fn(|id| {
        grid.get(&id)
            .ok_or(RuleError::EmptyGrid(id))?
            .candidates(id, base.rule(id))
    })?;
    let fold = stratified_folds(samples, seed)?;
    let n = [
        fold.iter().filter(|&&f| f == 0).count() as u64,
        fold.iter().filter(|&&f| f == 1).count() as u64,
    ];

    let sums: Vec<ItemMap<f64>> = exec.map(samples, |s| {
        ItemMap::from_fn(|id| {
            base.rule(id)
                .weighted_sum(id, &s.features)
                .expect("validated rule terms")
        })
    });

    let jobs: Vec<(ItemId, usize)> = ItemId::ALL
        .iter()
        .flat_map(|&id| (0..candidates[id].len()).map(move |c| (id, c)))
        .collect();
    let errors: Vec<[u64; 2]> = exec.map(&jobs, |&(id, c)| {
        let (t1, t2) = candidates[id][c];
        let dir = base.rule(id).direction;
        let mut e = [0u64; 2];
        for (i, s) in samples.iter().enumerate() {
            let pred = dir.ladder(sums[i][id], t1, t2);
            e[fold[i]] += u64::from(pred.abs_diff(s.truth[id]));
        }
        e
    });

    let mut cursor = 0;
    let items = ItemMap::from_fn(|id| {
        let cands = &candidates[id];
        let errs = &errors[cursor..cursor + cands.len()];
        cursor += cands.len();
        // mean of e0/n0 and e1/n1, compared as e0*n1 + e1*n0
        let key = |e: &[u64; 2]| e[0] * n[1] + e[1] * n[0];
        let mut selected = 0;
        for (c, e) in errs.iter().enumerate() {
            if key(e).cmp(&key(&errs[selected])) == Ordering::Less {
                selected = c;
            }
        }
        let candidates = cands
            .iter()
            .zip(errs)
            .map(|(&(t1, t2), e)| {
                let fold_mae = [e[0] as f64 / n[0] as f64, e[1] as f64 / n[1] as f64];
                CandidateResult {
                    t1,
                    t2,
                    fold_mae,
                    mean_mae: (fold_mae[0] + fold_mae[1]) / 2.0,
                }
            })
            .collect();
        ItemFit { candidates, selected }
    });

    let thresholds = items.map(|_, f: &ItemFit| (f.best().t1, f.best().t2));
    let params = base.with_thresholds(&thresholds)?;

    let mut folds: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (i, s) in samples.iter().enumerate() {
        folds[fold[i]].push(s.session_id.clone());
    }
    folds[0].sort();
    folds[1].sort();

    Ok((params, FitReport { seed, folds, items }))
}

/// A product grid around each rule's current thresholds.
pub fn default_grid(base: &RuleParams) -> GridSpec {
    ItemId::ALL
        .into_iter()
        .map(|id| {
            let r = base.rule(id);
            let axis = |c: f64| vec![c - 0.1, c - 0.05, c, c + 0.05, c + 0.1];
            (id, GridAxis::Axes { t1: axis(r.t1), t2: axis(r.t2) })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::{Direction, Term};

    fn sample(id: &str, echo: f64, a4: u8, class: Ternary) -> FitSample {
        FitSample {
            session_id: id.into(),
            features: FeatureVector {
                echolalia_rate: echo,
                ..FeatureVector::default()
            },
            truth: ItemMap::from_fn(|i| if i == ItemId::A4 { a4 } else { 0 }),
            class,
        }
    }

    fn corpus() -> Vec<FitSample> {
        use Ternary::*;
        vec![
            sample("s1", 0.05, 0, NonSpectrum),
            sample("s2", 0.10, 0, NonSpectrum),
            sample("s3", 0.15, 0, NonSpectrum),
            sample("s4", 0.40, 1, SpectrumDisorder),
            sample("s5", 0.45, 1, SpectrumDisorder),
            sample("s6", 0.80, 2, Autism),
            sample("s7", 0.90, 2, Autism),
            sample("s8", 0.70, 2, Autism),
        ]
    }

    fn grid_for_all(axis: GridAxis) -> GridSpec {
        ItemId::ALL.into_iter().map(|id| (id, axis.clone())).collect()
    }

    fn echo_params() -> RuleParams {
        let rules = ItemMap::from_fn(|_| ItemRule {
            terms: vec![Term::new("echolalia_rate", 1.0)],
            direction: Direction::HigherIsWorse,
            t1: 0.5,
            t2: 0.5,
        });
        RuleParams::new(rules).unwrap()
    }

    #[test]
    fn recovers_separating_thresholds() {
        let grid = grid_for_all(GridAxis::Pairs(vec![[0.1, 0.5], [0.3, 0.6], [0.5, 0.9]]));
        let (params, report) =
            fit_params(&corpus(), &echo_params(), &grid, 7, Execution::Sequential).unwrap();
        assert_eq!((params.rule(ItemId::A4).t1, params.rule(ItemId::A4).t2), (0.3, 0.6));
        assert_eq!(report.items[ItemId::A4].best().mean_mae, 0.0);
        for c in &report.items[ItemId::A4].candidates {
            assert!(report.items[ItemId::A4].best().mean_mae <= c.mean_mae);
        }
    }

    #[test]
    fn ties_go_to_first_candidate() {
        // every candidate predicts 2 for all sessions on B7 (truth 0): same error
        let grid = grid_for_all(GridAxis::Pairs(vec![[0.0, 0.01], [0.0, 0.02]]));
        let (params, report) =
            fit_params(&corpus(), &echo_params(), &grid, 1, Execution::Sequential).unwrap();
        assert_eq!(report.items[ItemId::B7].selected, 0);
        assert_eq!(params.rule(ItemId::B7).t2, 0.01);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut grid = grid_for_all(GridAxis::Pairs(vec![[0.1, 0.5]]));
        grid.insert(ItemId::A4, GridAxis::Pairs(vec![]));
        let err = fit_params(&corpus(), &echo_params(), &grid, 1, Execution::Sequential).unwrap_err();
        assert_eq!(err, RuleError::EmptyGrid(ItemId::A4));
        grid.remove(&ItemId::A4);
        let err = fit_params(&corpus(), &echo_params(), &grid, 1, Execution::Sequential).unwrap_err();
        assert_eq!(err, RuleError::EmptyGrid(ItemId::A4));
    }

    #[test]
    fn singleton_stratum_is_rejected() {
        let mut c = corpus();
        c.retain(|s| s.session_id != "s5");
        assert!(matches!(stratified_folds(&c, 0), Err(RuleError::InsufficientStrata(_))));
    }

    #[test]
    fn folds_are_balanced_and_order_free() {
        let c = corpus();
        let folds = stratified_folds(&c, 11).unwrap();
        for class in [Ternary::NonSpectrum, Ternary::SpectrumDisorder, Ternary::Autism] {
            let per: Vec<usize> = (0..2)
                .map(|f| c.iter().zip(&folds).filter(|(s, &x)| s.class == class && x == f).count())
                .collect();
            assert!(per[0].abs_diff(per[1]) <= 1, "{class:?} {per:?}");
        }
        let mut rev = c.clone();
        rev.reverse();
        let grid = default_grid(&echo_params());
        let a = fit_params(&c, &echo_params(), &grid, 11, Execution::Sequential).unwrap();
        let b = fit_params(&rev, &echo_params(), &grid, 11, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn axes_skip_misordered_pairs() {
        let axis = GridAxis::Axes { t1: vec![0.2, 0.6], t2: vec![0.4, 0.8] };
        let rule = echo_params().rule(ItemId::A4).clone();
        assert_eq!(
            axis.candidates(ItemId::A4, &rule).unwrap(),
            vec![(0.2, 0.4), (0.2, 0.8), (0.6, 0.8)]
        );
        let json: GridAxis = serde_json::from_str(r#"{"t1":[0.1],"t2":[0.2]}"#).unwrap();
        assert_eq!(json, GridAxis::Axes { t1: vec![0.1], t2: vec![0.2] });
        let json: GridAxis = serde_json::from_str("[[0.1,0.2]]").unwrap();
        assert_eq!(json, GridAxis::Pairs(vec![[0.1, 0.2]]));
        assert!(GridAxis::Pairs(vec![[0.6, 0.2]]).candidates(ItemId::A4, &rule).is_err());
    }
}
