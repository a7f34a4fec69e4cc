//! Knowledge-guided choice of which head lesions are safe to inpaint.
//!
//! A backend scores how likely each (head, tail) class pair is to overlap
//! spatially. Head classes that score high against a tail class present in
//! the same image are retained instead of inpainted, so the tail lesion is
//! not erased along with them.

mod llm;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::HeadTailPartition;
use crate::types::{ClassRegistry, LabelVector};

pub use llm::{parse_reply, render_prompt, ChatMessage, ChatRequest, HttpTransport, LlmBackend, LlmConfig, Transport};

pub const DEFAULT_ENTANGLE_THRESHOLD: f64 = 0.5;

/// Score per (head, tail) class-index pair.
pub type PairScores = BTreeMap<(usize, usize), f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixProvenance {
    LlmResponseCache,
    HandAuthored,
    SyntheticGroundTruth,
}

/// Symmetric K×K matrix of pairwise entanglement scores in [0, 1]. The
/// diagonal carries no meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementMatrix {
    pub classes: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub provenance: MatrixProvenance,
}

impl EntanglementMatrix {
    pub fn new(registry: &ClassRegistry, scores: Vec<Vec<f64>>, provenance: MatrixProvenance) -> Result<Self> {
        let m = Self {
            classes: registry.names().to_vec(),
            scores,
            provenance,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn zeros(registry: &ClassRegistry, provenance: MatrixProvenance) -> Self {
        let k = registry.len();
        Self {
            classes: registry.names().to_vec(),
            scores: vec![vec![0.0; k]; k],
            provenance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if self.scores.len() != k || self.scores.iter().any(|r| r.len() != k) {
            return Err(Error::arg(format!("entanglement matrix must be {k}x{k}")));
        }
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let v = self.scores[i][j];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::arg(format!("entanglement score {v} outside [0, 1]")));
                }
                if (v - self.scores[j][i]).abs() > 1e-12 {
                    return Err(Error::arg(format!(
                        "entanglement matrix is not symmetric at ({}, {})",
                        self.classes[i], self.classes[j]
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn set(&mut self, a: usize, b: usize, score: f64) {
        self.scores[a][b] = score;
        self.scores[b][a] = score;
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.scores[a][b]
    }

    pub fn load(path: &Path, registry: &ClassRegistry) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_owned(),
            source,
        })?;
        let m: Self = serde_json::from_str(&text)?;
        if m.classes != registry.names() {
            return Err(Error::Schema {
                path: path.to_owned(),
                message: "matrix classes do not match the registry".into(),
            });
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Source of pairwise entanglement scores.
pub trait KnowledgeBackend {
    /// Short identifier recorded in logs and cache keys.
    fn name(&self) -> String;

    /// One score in [0, 1] per requested (head, tail) pair.
    fn query(&self, registry: &ClassRegistry, pairs: &[(usize, usize)]) -> Result<Vec<f64>>;
}

impl<B: KnowledgeBackend + ?Sized> KnowledgeBackend for Box<B> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn query(&self, registry: &ClassRegistry, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        (**self).query(registry, pairs)
    }
}

/// Table lookup in a fixed matrix.
#[derive(Debug, Clone)]
pub struct MatrixBackend {
    pub matrix: EntanglementMatrix,
}

impl KnowledgeBackend for MatrixBackend {
    fn name(&self) -> String {
        format!("matrix:{:?}", self.matrix.provenance)
    }

    fn query(&self, registry: &ClassRegistry, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        if self.matrix.classes != registry.names() {
            return Err(Error::arg("entanglement matrix was built for a different registry"));
        }
        Ok(pairs.iter().map(|(h, t)| self.matrix.get(*h, *t)).collect())
    }
}

/// Scores every pair 0, so no head is ever retained.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoGuidance;

impl KnowledgeBackend for NoGuidance {
    fn name(&self) -> String {
        "none".into()
    }

    fn query(&self, _registry: &ClassRegistry, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        Ok(vec![0.0; pairs.len()])
    }
}

/// Tries `primary`; on a backend failure logs a warning and asks `fallback`.
pub struct FallbackBackend<P, F> {
    pub primary: P,
    pub fallback: F,
}

impl<P: KnowledgeBackend, F: KnowledgeBackend> KnowledgeBackend for FallbackBackend<P, F> {
    fn name(&self) -> String {
        format!("{}|fallback:{}", self.primary.name(), self.fallback.name())
    }

    fn query(&self, registry: &ClassRegistry, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        match self.primary.query(registry, pairs) {
            Err(Error::Backend(msg)) => {
                log::warn!("{} failed ({msg}); using {}", self.primary.name(), self.fallback.name());
                self.fallback.query(registry, pairs)
            }
            other => other,
        }
    }
}

pub fn query_entanglement(
    backend: &dyn KnowledgeBackend,
    registry: &ClassRegistry,
    heads: &BTreeSet<usize>,
    tails: &BTreeSet<usize>,
) -> Result<PairScores> {
    if let Some(bad) = heads.iter().chain(tails).find(|c| **c >= registry.len()) {
        return Err(Error::arg(format!("class index {bad} is not in the registry")));
    }
    if !heads.is_disjoint(tails) {
        return Err(Error::arg("head and tail class sets overlap"));
    }
    let pairs: Vec<(usize, usize)> = heads.iter().flat_map(|h| tails.iter().map(move |t| (*h, *t))).collect();
    if pairs.is_empty() {
        return Ok(PairScores::new());
    }
    let scores = backend.query(registry, &pairs)?;
    if scores.len() != pairs.len() {
        return Err(Error::Backend(format!(
            "backend returned {} scores for {} pairs",
            scores.len(),
            pairs.len()
        )));
    }
    if let Some(v) = scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Backend(format!("backend score {v} outside [0, 1]")));
    }
    Ok(pairs.into_iter().zip(scores).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Retain every present head whose strongest tail score reaches the
    /// threshold.
    #[default]
    Threshold,
    /// Retain only the single most entangled present head (lowest index on
    /// ties), and only if its score reaches the threshold.
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub head: usize,
    pub tail: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntanglementDecision {
    pub inpaint_targets: BTreeSet<usize>,
    pub retained_heads: BTreeSet<usize>,
    pub rationale: Vec<PairScore>,
}

/// Head classes present in `labels`, and tail classes present in `labels`.
pub fn present_groups(labels: &LabelVector, partition: &HeadTailPartition) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let present = labels.present();
    (
        present.intersection(&partition.head).copied().collect(),
        present.intersection(&partition.tail).copied().collect(),
    )
}

pub fn select_inpaint_targets(
    labels: &LabelVector,
    partition: &HeadTailPartition,
    scores: &PairScores,
    entangle_threshold: f64,
    mode: SelectionMode,
) -> Result<EntanglementDecision> {
    if !(0.0..=1.0).contains(&entangle_threshold) {
        return Err(Error::arg(format!(
            "entanglement threshold must lie in [0, 1], got {entangle_threshold}"
        )));
    }
    let (heads, tails) = present_groups(labels, partition);
    let mut rationale = Vec::new();
    let mut strongest: Vec<(usize, f64)> = Vec::with_capacity(heads.len());
    for &h in &heads {
        let mut best = f64::NEG_INFINITY;
        for &t in &tails {
            let s = *scores
                .get(&(h, t))
                .ok_or_else(|| Error::arg(format!("no entanglement score for pair ({h}, {t})")))?;
            rationale.push(PairScore {
                head: h,
                tail: t,
                score: s,
            });
            best = best.max(s);
        }
        strongest.push((h, best));
    }
    let retained: BTreeSet<usize> = if tails.is_empty() {
        BTreeSet::new()
    } else {
        match mode {
            SelectionMode::Threshold => strongest
                .iter()
                .filter(|(_, s)| *s >= entangle_threshold)
                .map(|(h, _)| *h)
                .collect(),
            SelectionMode::Argmax => strongest
                .iter()
                .fold(None::<(usize, f64)>, |acc, &(h, s)| match acc {
                    Some((_, bs)) if bs >= s => acc,
                    _ => Some((h, s)),
                })
                .filter(|(_, s)| *s >= entangle_threshold)
                .map(|(h, _)| h)
                .into_iter()
                .collect(),
        }
    };
    Ok(EntanglementDecision {
        inpaint_targets: heads.difference(&retained).copied().collect(),
        retained_heads: retained,
        rationale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> ClassRegistry {
        ClassRegistry::new(["A", "B", "T", "U"]).unwrap()
    }

    fn partition() -> HeadTailPartition {
        HeadTailPartition::from_tail(4, BTreeSet::from([2, 3])).unwrap()
    }

    #[test]
    fn matrix_lookup() {
        let reg = registry();
        let mut m = EntanglementMatrix::zeros(&reg, MatrixProvenance::HandAuthored);
        m.set(0, 2, 0.7);
        let b = MatrixBackend { matrix: m };
        let s = query_entanglement(&b, &reg, &BTreeSet::from([0]), &BTreeSet::from([2])).unwrap();
        assert_eq!(s, PairScores::from([((0, 2), 0.7)]));
    }

    #[test]
    fn empty_heads_give_empty_map() {
        let reg = registry();
        let s = query_entanglement(&NoGuidance, &reg, &BTreeSet::new(), &BTreeSet::from([2])).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn overlapping_or_unknown_sets_rejected() {
        let reg = registry();
        assert!(query_entanglement(&NoGuidance, &reg, &BTreeSet::from([0]), &BTreeSet::from([0])).is_err());
        assert!(query_entanglement(&NoGuidance, &reg, &BTreeSet::from([9]), &BTreeSet::from([2])).is_err());
    }

    #[test]
    fn matrix_validation() {
        let reg = registry();
        let mut bad = vec![vec![0.0; 4]; 4];
        bad[0][1] = 0.5;
        assert!(EntanglementMatrix::new(&reg, bad, MatrixProvenance::HandAuthored).is_err());
        let mut out_of_range = vec![vec![0.0; 4]; 4];
        out_of_range[0][1] = 1.5;
        out_of_range[1][0] = 1.5;
        assert!(EntanglementMatrix::new(&reg, out_of_range, MatrixProvenance::HandAuthored).is_err());
        let mut diag = vec![vec![0.0; 4]; 4];
        diag[2][2] = 7.0;
        assert!(EntanglementMatrix::new(&reg, diag, MatrixProvenance::HandAuthored).is_ok());
    }

    #[test]
    fn matrix_file_round_trip() {
        let reg = registry();
        let mut m = EntanglementMatrix::zeros(&reg, MatrixProvenance::SyntheticGroundTruth);
        m.set(1, 3, 0.25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(EntanglementMatrix::load(&p, &reg).unwrap(), m);
        assert!(EntanglementMatrix::load(&p, &ClassRegistry::synthetic(4).unwrap()).is_err());
    }

    #[test]
    fn retains_entangled_head() {
        let labels = LabelVector::from_indices(4, [0, 1, 2]).unwrap();
        let scores = PairScores::from([((0, 2), 0.8), ((1, 2), 0.1)]);
        let d = select_inpaint_targets(&labels, &partition(), &scores, 0.5, SelectionMode::Threshold).unwrap();
        assert_eq!(d.retained_heads, BTreeSet::from([0]));
        assert_eq!(d.inpaint_targets, BTreeSet::from([1]));
        assert_eq!(d.rationale.len(), 2);
    }

    #[test]
    fn no_tails_targets_all_heads() {
        let labels = LabelVector::from_indices(4, [0, 1]).unwrap();
        let d =
            select_inpaint_targets(&labels, &partition(), &PairScores::new(), 0.5, SelectionMode::Threshold).unwrap();
        assert_eq!(d.inpaint_targets, BTreeSet::from([0, 1]));
        assert!(d.retained_heads.is_empty());
    }

    #[test]
    fn no_heads_targets_nothing() {
        let labels = LabelVector::from_indices(4, [2]).unwrap();
        let d =
            select_inpaint_targets(&labels, &partition(), &PairScores::new(), 0.5, SelectionMode::Threshold).unwrap();
        assert!(d.inpaint_targets.is_empty());
    }

    #[test]
    fn missing_score_rejected() {
        let labels = LabelVector::from_indices(4, [0, 2]).unwrap();
        assert!(
            select_inpaint_targets(&labels, &partition(), &PairScores::new(), 0.5, SelectionMode::Threshold).is_err()
        );
    }

    #[test]
    fn argmax_mode_keeps_one() {
        let labels = LabelVector::from_indices(4, [0, 1, 2, 3]).unwrap();
        let scores = PairScores::from([((0, 2), 0.8), ((0, 3), 0.1), ((1, 2), 0.2), ((1, 3), 0.9)]);
        let t = select_inpaint_targets(&labels, &partition(), &scores, 0.5, SelectionMode::Threshold).unwrap();
        assert_eq!(t.retained_heads, BTreeSet::from([0, 1]));
        let a = select_inpaint_targets(&labels, &partition(), &scores, 0.5, SelectionMode::Argmax).unwrap();
        assert_eq!(a.retained_heads, BTreeSet::from([1]));
        assert_eq!(a.inpaint_targets, BTreeSet::from([0]));
    }

    #[test]
    fn fallback_used_on_backend_error() {
        struct Broken;
        impl KnowledgeBackend for Broken {
            fn name(&self) -> String {
                "broken".into()
            }
            fn query(&self, _: &ClassRegistry, _: &[(usize, usize)]) -> Result<Vec<f64>> {
                Err(Error::Backend("down".into()))
            }
        }
        let reg = registry();
        let mut m = EntanglementMatrix::zeros(&reg, MatrixProvenance::HandAuthored);
        m.set(0, 2, 0.6);
        let b = FallbackBackend {
            primary: Broken,
            fallback: MatrixBackend { matrix: m },
        };
        assert_eq!(b.query(&reg, &[(0, 2)]).unwrap(), vec![0.6]);
    }
}
