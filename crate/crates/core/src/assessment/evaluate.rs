use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, item_mae, ClassificationMetrics, Task};
use super::{classify, total_score, AssessmentError, ClinicianItemSheet, DiagnosisClass};
use crate::exec::Execution;
use crate::fusion::round_score;
use crate::items::{ItemId, ItemMap, ItemScores, ScoreSource};

/// Ground truth for one session: clinician scores on the eight language
/// items plus the six remaining items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSession {
    pub session_id: String,
    pub truth: ItemScores,
    pub clinician: ClinicianItemSheet,
}

impl LabeledSession {
    pub fn total(&self) -> u8 {
        total_score(&self.truth, &self.clinician)
    }

    pub fn diagnosis(&self) -> DiagnosisClass {
        classify(u32::from(self.total())).expect("total is at most 28 by construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub source: ScoreSource,
    pub sessions: usize,
    pub per_item_mae: ItemMap<f64>,
    pub mean_mae: f64,
    pub binary: ClassificationMetrics,
    pub ternary: ClassificationMetrics,
}

fn sorted_labels(labels: &[LabeledSession]) -> Vec<&LabeledSession> {
    let mut out: Vec<&LabeledSession> = labels.iter().collect();
    out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    out
}

/// Scores one source against the labels.
///
/// MAE uses the predictions as given (fused scores stay continuous); the
/// diagnosis path rounds each item, adds the clinician's six items and
/// applies the cutoffs.
pub fn evaluate_source(
    source: ScoreSource,
    predictions: &BTreeMap<String, ItemMap<f64>>,
    labels: &[LabeledSession],
    exec: Execution,
) -> Result<MetricsReport, AssessmentError> {
    if labels.is_empty() {
        return Err(AssessmentError::Empty);
    }
    let labels = sorted_labels(labels);
    let per_session = exec.map(&labels, |l| {
        let pred = predictions
            .get(&l.session_id)
            .ok_or_else(|| AssessmentError::MissingPrediction {
                session: l.session_id.clone(),
                kind: source,
            })?;
        let rounded = pred.map(|_, &v| round_score(v));
        let class = classify(u32::from(total_score(&rounded, &l.clinician)))?;
        Ok((*pred, class, l.diagnosis()))
    });
    let per_session = per_session.into_iter().collect::<Result<Vec<_>, AssessmentError>>()?;

    let per_item_mae = ItemMap::try_from_fn(|id: ItemId| {
        let pred: Vec<f64> = per_session.iter().map(|(p, _, _)| p[id]).collect();
        let truth: Vec<f64> = labels.iter().map(|l| f64::from(l.truth[id])).collect();
        item_mae(&pred, &truth)
    })?;
    let mean_mae = per_item_mae.values().iter().sum::<f64>() / 8.0;

    let pred_classes: Vec<DiagnosisClass> = per_session.iter().map(|(_, c, _)| *c).collect();
    let true_classes: Vec<DiagnosisClass> = per_session.iter().map(|(_, _, c)| *c).collect();

    Ok(MetricsReport {
        source,
        sessions: labels.len(),
        per_item_mae,
        mean_mae,
        binary: classification_metrics(&pred_classes, &true_classes, Task::Binary)?,
        ternary: classification_metrics(&pred_classes, &true_classes, Task::Ternary)?,
    })
}

/// Uniform random integer scores in 0..=3, drawn in sorted session order.
pub fn random_baseline(labels: &[LabeledSession], seed: u64) -> BTreeMap<String, ItemMap<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted_labels(labels)
        .into_iter()
        .map(|l| {
            let scores = ItemMap::from_fn(|_| f64::from(rng.random_range(0u8..=3)));
            (l.session_id.clone(), scores)
        })
        .collect()
}

/// One report per source, plus a seeded random baseline when `random_seed`
/// is given.
pub fn evaluate_corpus(
    predictions: &BTreeMap<ScoreSource, BTreeMap<String, ItemMap<f64>>>,
    labels: &[LabeledSession],
    random_seed: Option<u64>,
    exec: Execution,
) -> Result<BTreeMap<ScoreSource, MetricsReport>, AssessmentError> {
    let mut out = BTreeMap::new();
    for (&source, preds) in predictions {
        out.insert(source, evaluate_source(source, preds, labels, exec)?);
    }
    if let Some(seed) = random_seed {
        let preds = random_baseline(labels, seed);
        out.insert(
            ScoreSource::Random,
            evaluate_source(ScoreSource::Random, &preds, labels, exec)?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> Vec<LabeledSession> {
        let mk = |id: &str, v: u8, c: [u8; 6]| LabeledSession {
            session_id: id.into(),
            truth: ItemMap::from_fn(|_| v),
            clinician: ClinicianItemSheet::new(c).unwrap(),
        };
        vec![
            mk("s2", 0, [0; 6]),
            mk("s1", 1, [0; 6]),
            mk("s3", 2, [1; 6]),
            mk("s4", 1, [0, 0, 0, 0, 0, 0]),
        ]
    }

    fn as_predictions(labels: &[LabeledSession]) -> BTreeMap<String, ItemMap<f64>> {
        labels
            .iter()
            .map(|l| (l.session_id.clone(), l.truth.map(|_, &v| f64::from(v))))
            .collect()
    }

    #[test]
    fn perfect_source_scores_perfectly() {
        let labels = labels();
        let r = evaluate_source(ScoreSource::Llm, &as_predictions(&labels), &labels, Execution::default())
            .unwrap();
        assert_eq!(r.mean_mae, 0.0);
        for m in [&r.binary, &r.ternary] {
            assert_eq!((m.accuracy, m.precision, m.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn missing_prediction_names_session_and_source() {
        let labels = labels();
        let mut preds = as_predictions(&labels);
        preds.remove("s3");
        let err = evaluate_source(ScoreSource::Rule, &preds, &labels, Execution::Sequential).unwrap_err();
        assert_eq!(
            err,
            AssessmentError::MissingPrediction {
                session: "s3".into(),
                kind: ScoreSource::Rule
            }
        );
    }

    #[test]
    fn random_baseline_is_seeded() {
        let labels = labels();
        assert_eq!(random_baseline(&labels, 7), random_baseline(&labels, 7));
        assert_ne!(random_baseline(&labels, 7), random_baseline(&labels, 8));
        let mut preds = BTreeMap::new();
        preds.insert(ScoreSource::Llm, as_predictions(&labels));
        let a = evaluate_corpus(&preds, &labels, Some(3), Execution::Parallel).unwrap();
        let b = evaluate_corpus(&preds, &labels, Some(3), Execution::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(a[&ScoreSource::Random].mean_mae.is_finite());
    }

    #[test]
    fn mean_mae_is_arithmetic_mean_of_items() {
        let labels = labels();
        let preds: BTreeMap<_, _> = labels
            .iter()
            .map(|l| {
                (
                    l.session_id.clone(),
                    ItemMap::from_fn(|id| id.index() as f64 * 0.3),
                )
            })
            .collect();
        let r = evaluate_source(ScoreSource::Fused, &preds, &labels, Execution::default()).unwrap();
        let expected = r.per_item_mae.values().iter().sum::<f64>() / 8.0;
        assert_eq!(r.mean_mae, expected);
    }
}
