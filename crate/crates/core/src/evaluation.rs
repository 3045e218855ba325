//! Hard cluster assignment from sparse codes, silhouette scoring in the
//! kernel-induced geometry, and adjusted Rand index against planted labels.

use crate::dictionary::SparseCodes;
use crate::gram::{kernel_distance, GramMatrix};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("fewer than 2 non-empty clusters")]
    SingleClusterInput,
    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("label {label} out of range 0..{cluster_count}")]
    LabelOutOfRange { label: usize, cluster_count: usize },
    #[error("assignment covers {labels} fibers but the Gram matrix has {n}")]
    GramMismatch { labels: usize, n: usize },
}

/// Where an assignment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignmentSource {
    ArgmaxOfCodes,
    Planted,
}

/// One cluster label per fiber; fibers whose code column is all zero carry no
/// label and are reported separately.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    labels: Vec<Option<usize>>,
    cluster_count: usize,
    source: AssignmentSource,
}

impl ClusterAssignment {
    /// Builds an assignment from optional labels; every present label must be
    /// below `cluster_count`.
    pub fn new(
        labels: Vec<Option<usize>>,
        cluster_count: usize,
        source: AssignmentSource,
    ) -> Result<Self, EvalError> {
        if let Some(&bad) = labels.iter().flatten().find(|&&l| l >= cluster_count) {
            return Err(EvalError::LabelOutOfRange {
                label: bad,
                cluster_count,
            });
        }
        Ok(Self {
            labels,
            cluster_count,
            source,
        })
    }

    pub fn from_planted(labels: Vec<usize>) -> Self {
        let cluster_count = labels.iter().max().map_or(0, |&m| m + 1);
        Self {
            labels: labels.into_iter().map(Some).collect(),
            cluster_count,
            source: AssignmentSource::Planted,
        }
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn source(&self) -> AssignmentSource {
        self.source
    }

    pub fn unassigned_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

/// Argmax-of-codes assignment: fiber i goes to the atom with the largest
/// weight in its column, ties to the lowest atom index; all-zero columns stay
/// unassigned.
pub fn hard_assign(w: &SparseCodes) -> ClusterAssignment {
    let codes = w.codes();
    let labels = (0..codes.ncols())
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..codes.nrows() {
                let v = codes[(j, i)];
                if v > 0.0 && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect();
    ClusterAssignment {
        labels,
        cluster_count: codes.nrows(),
        source: AssignmentSource::ArgmaxOfCodes,
    }
}

/// Per-fiber silhouette values and their aggregates.
#[derive(Debug, Clone)]
pub struct SilhouetteReport {
    /// One value per fiber; unassigned fibers hold 0 and are excluded from
    /// every aggregate.
    pub per_fiber: Vec<f64>,
    /// Mean over assigned fibers.
    pub mean: f64,
    /// Mean per cluster id; `None` for empty clusters.
    pub per_cluster_mean: Vec<Option<f64>>,
    /// Fibers with no label, excluded from the score.
    pub excluded: usize,
}

/// Standard silhouette over the kernel-induced distance of `q`:
/// `a(i)` the mean distance to the fiber's own cluster (excluding itself),
/// `b(i)` the smallest mean distance to another non-empty cluster,
/// `s(i) = (b - a) / max(a, b)`. Singletons score 0.
pub fn silhouette(
    q: &GramMatrix,
    assignment: &ClusterAssignment,
) -> Result<SilhouetteReport, EvalError> {
    let n = q.n();
    if assignment.len() != n {
        return Err(EvalError::GramMismatch {
            labels: assignment.len(),
            n,
        });
    }
    let k = assignment.cluster_count();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, label) in assignment.labels().iter().enumerate() {
        if let Some(l) = *label {
            members[l].push(i);
        }
    }
    let non_empty = members.iter().filter(|m| !m.is_empty()).count();
    if non_empty < 2 {
        return Err(EvalError::SingleClusterInput);
    }

    let mut per_fiber = vec![0.0; n];
    for (i, label) in assignment.labels().iter().enumerate() {
        let Some(own) = *label else { continue };
        if members[own].len() == 1 {
            per_fiber[i] = 0.0;
            continue;
        }
        let a: f64 = members[own]
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| kernel_distance(q, i, j))
            .sum::<f64>()
            / (members[own].len() - 1) as f64;
        let mut b = f64::INFINITY;
        for (other, cluster) in members.iter().enumerate() {
            if other == own || cluster.is_empty() {
                continue;
            }
            let mean = cluster
                .iter()
                .map(|&j| kernel_distance(q, i, j))
                .sum::<f64>()
                / cluster.len() as f64;
            b = b.min(mean);
        }
        let denom = a.max(b);
        per_fiber[i] = if denom > 0.0 { (b - a) / denom } else { 0.0 };
    }

    let assigned = n - assignment.unassigned_count();
    let mean = if assigned > 0 {
        assignment
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_some())
            .map(|(i, _)| per_fiber[i])
            .sum::<f64>()
            / assigned as f64
    } else {
        0.0
    };
    let per_cluster_mean = members
        .iter()
        .map(|cluster| {
            if cluster.is_empty() {
                None
            } else {
                Some(cluster.iter().map(|&i| per_fiber[i]).sum::<f64>() / cluster.len() as f64)
            }
        })
        .collect();

    Ok(SilhouetteReport {
        per_fiber,
        mean,
        per_cluster_mean,
        excluded: assignment.unassigned_count(),
    })
}

/// Adjusted Rand index between two assignments of the same fibers, in
/// [-1, 1], chance-corrected; 1 exactly when the partitions are identical up
/// to relabeling. Unassigned fibers count as their own category.
pub fn adjusted_rand_index(
    a: &ClusterAssignment,
    b: &ClusterAssignment,
) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    let n = a.len();
    let mut contingency: HashMap<(Option<usize>, Option<usize>), usize> = HashMap::new();
    let mut rows: HashMap<Option<usize>, usize> = HashMap::new();
    let mut cols: HashMap<Option<usize>, usize> = HashMap::new();
    for (la, lb) in a.labels().iter().zip(b.labels()) {
        *contingency.entry((*la, *lb)).or_insert(0) += 1;
        *rows.entry(*la).or_insert(0) += 1;
        *cols.entry(*lb).or_insert(0) += 1;
    }
    let comb2 = |c: usize| -> f64 { (c * c.saturating_sub(1)) as f64 / 2.0 };
    let sum_rows: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| comb2(c)).sum();
    let sum_cells: f64 = contingency.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() == 0.0 {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}
