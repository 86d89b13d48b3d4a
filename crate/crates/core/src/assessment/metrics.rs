use serde::{Deserialize, Serialize};

use super::{AssessmentError, Binary, DiagnosisClass, Ternary};

/// Mean absolute error between paired predictions and truths.
pub fn item_mae(pred: &[f64], truth: &[f64]) -> Result<f64, AssessmentError> {
    if pred.len() != truth.len() {
        return Err(AssessmentError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(AssessmentError::Empty);
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Ternary,
}

impl Task {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Task::Binary => &["NonSpectrum", "Asd"],
            Task::Ternary => &["NonSpectrum", "SpectrumDisorder", "Autism"],
        }
    }

    fn class_index(self, c: DiagnosisClass) -> usize {
        match self {
            Task::Binary => match c.binary() {
                Binary::NonSpectrum => 0,
                Binary::Asd => 1,
            },
            Task::Ternary => match c.ternary() {
                Ternary::NonSpectrum => 0,
                Ternary::SpectrumDisorder => 1,
                Ternary::Autism => 2,
            },
        }
    }
}

/// Accuracy plus macro-averaged precision and F1.
///
/// `confusion[t][p]` counts sessions with true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub task: Task,
    pub accuracy: f64,
    pub precision: f64,
    pub f1: f64,
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u32>>,
}

/// Macro averages run over every class that occurs in either the truth or
/// the predictions. A class never predicted has precision 0; a class never
/// true has recall 0; F1 is 0 whenever precision + recall is 0.
pub fn classification_metrics(
    pred: &[DiagnosisClass],
    truth: &[DiagnosisClass],
    task: Task,
) -> Result<ClassificationMetrics, AssessmentError> {
    if pred.len() != truth.len() {
        return Err(AssessmentError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(AssessmentError::Empty);
    }
    let k = task.labels().len();
    let mut confusion = vec![vec![0u32; k]; k];
    for (&p, &t) in pred.iter().zip(truth) {
        confusion[task.class_index(t)][task.class_index(p)] += 1;
    }

    let correct: u32 = (0..k).map(|c| confusion[c][c]).sum();
    let accuracy = f64::from(correct) / pred.len() as f64;

    let mut precision_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut n_classes = 0usize;
    for c in 0..k {
        let tp = f64::from(confusion[c][c]);
        let true_c: u32 = confusion[c].iter().sum();
        let pred_c: u32 = confusion.iter().map(|row| row[c]).sum();
        if true_c == 0 && pred_c == 0 {
            continue;
        }
        n_classes += 1;
        let precision = if pred_c == 0 { 0.0 } else { tp / f64::from(pred_c) };
        let recall = if true_c == 0 { 0.0 } else { tp / f64::from(true_c) };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        precision_sum += precision;
        f1_sum += f1;
    }

    Ok(ClassificationMetrics {
        task,
        accuracy,
        precision: precision_sum / n_classes as f64,
        f1: f1_sum / n_classes as f64,
        labels: task.labels().iter().map(|s| s.to_string()).collect(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assessment::classify;

    fn asd() -> DiagnosisClass {
        classify(9).unwrap()
    }

    fn ns() -> DiagnosisClass {
        classify(0).unwrap()
    }

    #[test]
    fn mae_cases() {
        assert_eq!(item_mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(item_mae(&[1.0, 2.0, 0.0], &[0.0, 3.0, 1.0]).unwrap(), 1.0);
        assert_eq!(item_mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(
            item_mae(&[0.0], &[1.0, 1.0]),
            Err(AssessmentError::LengthMismatch { pred: 1, truth: 2 })
        );
        assert_eq!(item_mae(&[], &[]), Err(AssessmentError::Empty));
    }

    #[test]
    fn perfect_predictions() {
        let truth = [asd(), ns(), classify(7).unwrap()];
        let m = classification_metrics(&truth, &truth, Task::Ternary).unwrap();
        assert_eq!((m.accuracy, m.precision, m.f1), (1.0, 1.0, 1.0));
        assert_eq!(m.confusion, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn hand_computed_binary_example() {
        let truth = [asd(), asd(), ns(), ns()];
        let pred = [asd(), ns(), ns(), ns()];
        let m = classification_metrics(&pred, &truth, Task::Binary).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((m.f1 - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn constant_prediction_on_balanced_truth() {
        let truth = [asd(), asd(), ns(), ns()];
        let pred = [asd(); 4];
        let m = classification_metrics(&pred, &truth, Task::Binary).unwrap();
        assert_eq!(m.accuracy, 0.5);
        // ASD: p=0.5 r=1; NS: p=0 (never predicted)
        assert!((m.precision - 0.25).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_excluded() {
        let truth = [asd(), asd()];
        let m = classification_metrics(&truth, &truth, Task::Ternary).unwrap();
        assert_eq!(m.precision, 1.0);
    }
}
