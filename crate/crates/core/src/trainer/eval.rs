//! Per-class precision/recall/F1 with head and tail aggregates.

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::stats::HeadTailPartition;

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
    pub tail: bool,
    /// False when the class has neither positives nor predictions; such
    /// classes are left out of every macro mean.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub head_macro_f1: f64,
    pub tail_macro_f1: f64,
    pub threshold: f64,
}

/// Confusion counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn metrics(&self, class: String, tail: bool) -> ClassMetrics {
        let support = self.tp + self.fn_;
        let predicted = self.tp + self.fp;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.tp, predicted);
        let recall = ratio(self.tp, support);
        let f1 = ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_);
        ClassMetrics {
            class,
            precision,
            recall,
            f1,
            support,
            predicted,
            tail,
            included: support > 0 || predicted > 0,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl EvalReport {
    /// Aggregates per-class metrics; macro means cover included classes.
    pub fn from_per_class(per_class: Vec<ClassMetrics>, threshold: f64) -> Self {
        let inc = || per_class.iter().filter(|m| m.included);
        Self {
            macro_f1: mean(inc().map(|m| m.f1)),
            head_macro_f1: mean(inc().filter(|m| !m.tail).map(|m| m.f1)),
            tail_macro_f1: mean(inc().filter(|m| m.tail).map(|m| m.f1)),
            per_class,
            threshold,
        }
    }

    /// Builds a report from boolean predictions and ground truth.
    pub fn from_predictions(
        predictions: &[Vec<bool>],
        truth: &[Vec<bool>],
        class_names: &[String],
        partition: &HeadTailPartition,
        threshold: f64,
    ) -> Result<Self> {
        if predictions.is_empty() || predictions.len() != truth.len() {
            return Err(Error::arg("predictions and labels must be nonempty and equally long"));
        }
        let k = class_names.len();
        let mut conf = vec![Confusion::default(); k];
        for (p, t) in predictions.iter().zip(truth) {
            if p.len() != k || t.len() != k {
                return Err(Error::arg("label width does not match the class count"));
            }
            for c in 0..k {
                match (p[c], t[c]) {
                    (true, true) => conf[c].tp += 1,
                    (true, false) => conf[c].fp += 1,
                    (false, true) => conf[c].fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        let per_class = conf
            .iter()
            .enumerate()
            .map(|(c, cf)| cf.metrics(class_names[c].clone(), partition.is_tail(c)))
            .collect();
        Ok(Self::from_per_class(per_class, threshold))
    }
}

fn sigmoid(z: f32) -> f64 {
    1.0 / (1.0 + (-f64::from(z)).exp())
}

pub fn evaluate(
    model: &Classifier,
    test: &Dataset,
    partition: &HeadTailPartition,
    threshold: f64,
) -> Result<EvalReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::arg(format!(
            "decision threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if test.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty test set"));
    }
    if partition.num_classes() != test.registry().len() {
        return Err(Error::arg("partition does not cover the registry"));
    }
    let mut predictions = Vec::with_capacity(test.len());
    let mut truth = Vec::with_capacity(test.len());
    for s in test.iter() {
        let logits = model.predict(s.image)?;
        predictions.push(logits.iter().map(|z| sigmoid(*z) >= threshold).collect());
        truth.push(s.labels.flags().to_vec());
    }
    EvalReport::from_predictions(&predictions, &truth, test.registry().names(), partition, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class: String,
    pub tail: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Treated minus baseline, per class and in aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub per_class: Vec<ClassDelta>,
    pub macro_f1: f64,
    pub head_macro_f1: f64,
    pub tail_macro_f1: f64,
}

pub fn compare_reports(baseline: &EvalReport, treated: &EvalReport) -> Result<DeltaReport> {
    if baseline.per_class.len() != treated.per_class.len()
        || baseline
            .per_class
            .iter()
            .zip(&treated.per_class)
            .any(|(a, b)| a.class != b.class || a.tail != b.tail)
    {
        return Err(Error::arg("reports cover different classes or partitions"));
    }
    let per_class = baseline
        .per_class
        .iter()
        .zip(&treated.per_class)
        .map(|(b, t)| ClassDelta {
            class: b.class.clone(),
            tail: b.tail,
            precision: t.precision - b.precision,
            recall: t.recall - b.recall,
            f1: t.f1 - b.f1,
        })
        .collect();
    Ok(DeltaReport {
        per_class,
        macro_f1: treated.macro_f1 - baseline.macro_f1,
        head_macro_f1: treated.head_macro_f1 - baseline.head_macro_f1,
        tail_macro_f1: treated.tail_macro_f1 - baseline.tail_macro_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    fn partition(k: usize, tail: &[usize]) -> HeadTailPartition {
        HeadTailPartition::from_tail(k, tail.iter().copied().collect::<BTreeSet<_>>()).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let truth = vec![vec![true, false], vec![false, true], vec![true, true]];
        let r = EvalReport::from_predictions(&truth, &truth, &names(2), &partition(2, &[1]), 0.5).unwrap();
        assert!(r.per_class.iter().all(|m| m.f1 == 1.0));
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn hand_case_half_half() {
        // Class 0 over 4 samples: TP at 0, FP at 1, FN at 2, TN at 3.
        let pred = vec![vec![true], vec![true], vec![false], vec![false]];
        let truth = vec![vec![true], vec![false], vec![true], vec![false]];
        let names = vec!["a".to_owned()];
        let p = HeadTailPartition {
            head: BTreeSet::from([0]),
            tail: BTreeSet::new(),
            warnings: vec![],
        };
        let r = EvalReport::from_predictions(&pred, &truth, &names, &p, 0.5).unwrap();
        let m = &r.per_class[0];
        assert_eq!((m.precision, m.recall, m.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn absent_class_excluded_from_means() {
        let pred = vec![vec![true, false], vec![false, false]];
        let truth = vec![vec![true, false], vec![false, false]];
        let r = EvalReport::from_predictions(&pred, &truth, &names(2), &partition(2, &[1]), 0.5).unwrap();
        assert!(!r.per_class[1].included);
        assert_eq!(r.per_class[1].support, 0);
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.tail_macro_f1, 0.0);
    }

    #[test]
    fn false_positive_only_class_counts_as_zero() {
        let pred = vec![vec![true, true]];
        let truth = vec![vec![true, false]];
        let r = EvalReport::from_predictions(&pred, &truth, &names(2), &partition(2, &[]), 0.5).unwrap();
        assert!(r.per_class[1].included);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert_eq!(r.macro_f1, 0.5);
    }

    #[test]
    fn empty_rejected() {
        assert!(EvalReport::from_predictions(&[], &[], &names(2), &partition(2, &[]), 0.5).is_err());
    }

    fn report(f1: &[f64], tail: &[bool]) -> EvalReport {
        let per_class = f1
            .iter()
            .zip(tail)
            .enumerate()
            .map(|(i, (f, t))| ClassMetrics {
                class: format!("c{i}"),
                precision: *f,
                recall: *f,
                f1: *f,
                support: 1,
                predicted: 1,
                tail: *t,
                included: true,
            })
            .collect();
        EvalReport::from_per_class(per_class, 0.5)
    }

    #[test]
    fn self_comparison_is_zero() {
        let r = report(&[0.3, 0.9], &[true, false]);
        let d = compare_reports(&r, &r).unwrap();
        assert!(d.per_class.iter().all(|c| c.f1 == 0.0));
        assert_eq!((d.macro_f1, d.head_macro_f1, d.tail_macro_f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tail_delta() {
        let a = report(&[0.10, 0.9], &[true, false]);
        let b = report(&[0.18, 0.9], &[true, false]);
        let d = compare_reports(&a, &b).unwrap();
        assert!((d.tail_macro_f1 - 0.08).abs() < 1e-12);
        assert_eq!(d.head_macro_f1, 0.0);
    }

    #[test]
    fn registry_mismatch_rejected() {
        let a = report(&[0.1, 0.2], &[true, false]);
        let b = report(&[0.1, 0.2, 0.3], &[true, false, false]);
        assert!(compare_reports(&a, &b).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn macro_is_mean_of_included(rows in prop::collection::vec(prop::collection::vec((any::<bool>(), any::<bool>()), 4), 1..30)) {
                let pred: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
                let truth: Vec<Vec<bool>> = rows.iter().map(|r| r.iter().map(|x| x.1).collect()).collect();
                let r = EvalReport::from_predictions(&pred, &truth, &names(4), &partition(4, &[2, 3]), 0.5).unwrap();
                let inc: Vec<f64> = r.per_class.iter().filter(|m| m.included).map(|m| m.f1).collect();
                let expect = if inc.is_empty() { 0.0 } else { inc.iter().sum::<f64>() / inc.len() as f64 };
                prop_assert!((r.macro_f1 - expect).abs() < 1e-12);
                for m in &r.per_class {
                    prop_assert!((0.0..=1.0).contains(&m.f1));
                    prop_assert!((0.0..=1.0).contains(&m.precision));
                    prop_assert!((0.0..=1.0).contains(&m.recall));
                }
            }
        }
    }
}
