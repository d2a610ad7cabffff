//! Partition agreement: Rand index, adjusted Rand index and confusion
//! matrices.

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// A labelling of `n` observations, with classes indexed in sorted order.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition<T> {
    labels: Vec<T>,
    classes: Vec<T>,
    codes: Vec<usize>,
}

impl<T: Ord + Clone> Partition<T> {
    pub fn new(labels: Vec<T>) -> Result<Self> {
        if labels.is_empty() {
            return domain("a partition needs at least one observation");
        }
        let mut index = BTreeMap::new();
        for l in &labels {
            index.entry(l.clone()).or_insert(0usize);
        }
        for (k, v) in index.values_mut().enumerate() {
            *v = k;
        }
        let codes = labels.iter().map(|l| index[l]).collect();
        Ok(Self {
            classes: index.into_keys().collect(),
            labels,
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    /// Distinct labels in sorted order.
    pub fn classes(&self) -> &[T] {
        &self.classes
    }

    /// Position of each observation's label in [`Partition::classes`].
    pub fn codes(&self) -> &[usize] {
        &self.codes
    }
}

/// Cross-tabulation of two partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<usize> {
        (0..self.col_labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self {
            row_labels: self.col_labels.clone(),
            col_labels: self.row_labels.clone(),
            counts: (0..self.col_labels.len())
                .map(|j| self.counts.iter().map(|r| r[j]).collect())
                .collect(),
        }
    }

    /// Entry-wise sum of tables with identical labels.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.row_labels != other.row_labels || self.col_labels != other.col_labels {
            return domain("confusion matrices have different labels");
        }
        let counts = self
            .counts
            .iter()
            .zip(&other.counts)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            counts,
            ..self.clone()
        })
    }

    /// Fraction on the diagonal, for tables whose rows and columns share labels.
    pub fn accuracy(&self) -> f64 {
        let diag: usize = self
            .row_labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                self.col_labels
                    .iter()
                    .position(|c| c == l)
                    .map(|j| self.counts[i][j])
            })
            .sum();
        diag as f64 / self.total() as f64
    }

    /// Adjusted Rand index of the two partitions summarised by the table.
    pub fn adjusted_rand_index(&self) -> f64 {
        ari_from_counts(&self.counts)
    }

    pub fn rand_index(&self) -> f64 {
        rand_from_counts(&self.counts)
    }
}

impl Display for ConfusionMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let width = self
            .row_labels
            .iter()
            .chain(&self.col_labels)
            .map(|s| s.len())
            .chain(self.counts.iter().flatten().map(|c| c.to_string().len()))
            .max()
            .unwrap_or(1);
        write!(f, "{:>width$}", "")?;
        for c in &self.col_labels {
            write!(f, " {c:>width$}")?;
        }
        writeln!(f)?;
        for (label, row) in self.row_labels.iter().zip(&self.counts) {
            write!(f, "{label:>width$}")?;
            for c in row {
                write!(f, " {c:>width$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn check_lengths<A, B>(a: &Partition<A>, b: &Partition<B>) -> Result<()> {
    if a.labels.len() != b.labels.len() {
        return domain(format!(
            "partitions have different lengths ({} and {})",
            a.labels.len(),
            b.labels.len()
        ));
    }
    Ok(())
}

fn contingency<A, B>(a: &Partition<A>, b: &Partition<B>) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; b.classes.len()]; a.classes.len()];
    for (&i, &j) in a.codes.iter().zip(&b.codes) {
        counts[i][j] += 1;
    }
    counts
}

pub fn confusion_matrix<A, B>(truth: &Partition<A>, predicted: &Partition<B>) -> Result<ConfusionMatrix>
where
    A: Ord + Clone + Display,
    B: Ord + Clone + Display,
{
    check_lengths(truth, predicted)?;
    Ok(ConfusionMatrix {
        row_labels: truth.classes.iter().map(|c| c.to_string()).collect(),
        col_labels: predicted.classes.iter().map(|c| c.to_string()).collect(),
        counts: contingency(truth, predicted),
    })
}

fn pairs(k: usize) -> f64 {
    let k = k as f64;
    k * (k - 1.0) / 2.0
}

struct PairSums {
    total: f64,
    cells: f64,
    rows: f64,
    cols: f64,
}

fn pair_sums(counts: &[Vec<usize>]) -> PairSums {
    let n: usize = counts.iter().flatten().sum();
    let ncols = counts.first().map_or(0, |r| r.len());
    PairSums {
        total: pairs(n),
        cells: counts.iter().flatten().map(|&c| pairs(c)).sum(),
        rows: counts.iter().map(|r| pairs(r.iter().sum())).sum(),
        cols: (0..ncols)
            .map(|j| pairs(counts.iter().map(|r| r[j]).sum()))
            .sum(),
    }
}

fn rand_from_counts(counts: &[Vec<usize>]) -> f64 {
    let s = pair_sums(counts);
    (s.total + 2.0 * s.cells - s.rows - s.cols) / s.total
}

fn ari_from_counts(counts: &[Vec<usize>]) -> f64 {
    let s = pair_sums(counts);
    let expected = s.rows * s.cols / s.total;
    let max = 0.5 * (s.rows + s.cols);
    if max == expected {
        // Both partitions trivial (one class each, or all singletons).
        return 1.0;
    }
    (s.cells - expected) / (max - expected)
}

/// Fraction of the `n(n−1)/2` pairs on which the partitions agree.
pub fn rand_index<A: Ord + Clone, B: Ord + Clone>(a: &Partition<A>, b: &Partition<B>) -> Result<f64> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return domain("the Rand index needs at least two observations");
    }
    Ok(rand_from_counts(&contingency(a, b)))
}

/// Rand index corrected for chance under the permutation model.
///
/// When both partitions are trivial the index is 0/0; 1.0 is returned.
pub fn adjusted_rand_index<A: Ord + Clone, B: Ord + Clone>(
    a: &Partition<A>,
    b: &Partition<B>,
) -> Result<f64> {
    check_lengths(a, b)?;
    if a.len() < 2 {
        return domain("the adjusted Rand index needs at least two observations");
    }
    Ok(ari_from_counts(&contingency(a, b)))
}

/// Convenience wrapper for two label slices.
pub fn ari<A: Ord + Clone, B: Ord + Clone>(a: &[A], b: &[B]) -> Result<f64> {
    adjusted_rand_index(&Partition::new(a.to_vec())?, &Partition::new(b.to_vec())?)
}
