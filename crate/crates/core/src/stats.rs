//! Class frequency analysis and head/tail partitioning.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::{ClassRegistry, Manifest};

/// Default frequency-policy cutoff as a fraction of the largest class count.
pub const DEFAULT_TAIL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    pub total_samples: usize,
}

pub fn compute_class_stats(manifest: &Manifest) -> Result<ClassStats> {
    if manifest.is_empty() {
        return Err(Error::arg("cannot compute class statistics of an empty manifest"));
    }
    let mut counts = vec![0usize; manifest.registry.len()];
    for r in &manifest.records {
        for (c, f) in counts.iter_mut().zip(r.labels.flags()) {
            *c += usize::from(*f);
        }
    }
    Ok(ClassStats {
        counts,
        total_samples: manifest.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum PartitionPolicy {
    /// Tail classes named explicitly.
    Explicit(Vec<String>),
    /// Class `i` is tail iff `counts[i] < tau * max_j counts[j]`.
    Frequency(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HeadTailPartition {
    pub head: BTreeSet<usize>,
    pub tail: BTreeSet<usize>,
    /// Non-fatal findings, e.g. an empty tail that turns augmentation into a no-op.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl HeadTailPartition {
    pub fn from_tail(k: usize, tail: BTreeSet<usize>) -> Result<Self> {
        if let Some(bad) = tail.iter().find(|t| **t >= k) {
            return Err(Error::arg(format!("tail class index {bad} out of range for K={k}")));
        }
        let head = (0..k).filter(|i| !tail.contains(i)).collect();
        let mut warnings = Vec::new();
        if tail.is_empty() {
            warnings.push("no tail classes: augmentation will emit nothing".to_owned());
        }
        Ok(Self { head, tail, warnings })
    }

    pub fn num_classes(&self) -> usize {
        self.head.len() + self.tail.len()
    }

    pub fn is_tail(&self, class: usize) -> bool {
        self.tail.contains(&class)
    }
}

pub fn partition_head_tail(
    stats: &ClassStats,
    registry: &ClassRegistry,
    policy: &PartitionPolicy,
) -> Result<HeadTailPartition> {
    let k = stats.counts.len();
    if k != registry.len() {
        return Err(Error::arg("class statistics and registry disagree on K"));
    }
    let tail = match policy {
        PartitionPolicy::Explicit(names) => names
            .iter()
            .map(|n| registry.require_index(n))
            .collect::<Result<BTreeSet<_>>>()?,
        PartitionPolicy::Frequency(tau) => {
            if !(*tau > 0.0 && *tau < 1.0) {
                return Err(Error::arg(format!("tail fraction must lie in (0, 1), got {tau}")));
            }
            let max = stats.counts.iter().copied().max().unwrap_or(0) as f64;
            let cutoff = tau * max;
            (0..k).filter(|i| (stats.counts[*i] as f64) < cutoff).collect()
        }
    };
    let partition = HeadTailPartition::from_tail(k, tail)?;
    for w in &partition.warnings {
        log::warn!("{w}");
    }
    Ok(partition)
}

/// One row of the `stats` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReportRow {
    pub class: String,
    pub count: usize,
    pub fraction: f64,
    pub group: &'static str,
}

pub fn class_report(
    stats: &ClassStats,
    registry: &ClassRegistry,
    partition: &HeadTailPartition,
) -> Vec<ClassReportRow> {
    registry
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| ClassReportRow {
            class: name.clone(),
            count: stats.counts[i],
            fraction: stats.counts[i] as f64 / stats.total_samples.max(1) as f64,
            group: if partition.is_tail(i) { "tail" } else { "head" },
        })
        .collect()
}
