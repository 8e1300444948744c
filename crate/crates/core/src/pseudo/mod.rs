//! Confidence-thresholded pseudo-labels for the unlabelled target domain
//! and per-class centroid bookkeeping.

use crate::diffcore::Array;
use crate::losses::UNASSIGNED;

/// Target labels assigned by the classifier. `-1` means "not confident".
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    pub labels: Vec<i64>,
    pub confidences: Vec<f64>,
}

impl PseudoLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Fraction of rows with an assigned label.
    pub fn confident_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        let n = self.labels.iter().filter(|&&l| l != UNASSIGNED).count();
        n as f64 / self.labels.len() as f64
    }
}

/// Labels each row with its argmax class when the top probability is
/// strictly greater than `threshold`, otherwise `-1`. Ties go to the lowest
/// class index.
pub fn pseudo_label(probs: &Array, threshold: f64) -> PseudoLabels {
    let arg = probs.argmax_rows();
    let mut labels = Vec::with_capacity(arg.len());
    let mut confidences = Vec::with_capacity(arg.len());
    for (i, &c) in arg.iter().enumerate() {
        let p = probs.get(i, c);
        labels.push(if p > threshold { c as i64 } else { UNASSIGNED });
        confidences.push(p);
    }
    PseudoLabels {
        labels,
        confidences,
    }
}

pub fn confident_fraction(pl: &PseudoLabels) -> f64 {
    pl.confident_fraction()
}

/// Per-class sample count and mean embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    counts: Vec<usize>,
    sums: Vec<Vec<f64>>,
}

impl CentroidTable {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, class: usize) -> usize {
        self.counts[class]
    }

    /// Mean embedding of `class`, `None` when no row carries that label.
    pub fn mean(&self, class: usize) -> Option<Vec<f64>> {
        let n = self.counts[class];
        (n > 0).then(|| self.sums[class].iter().map(|s| s / n as f64).collect())
    }
}

/// Per-class means over the rows of `u`; rows labelled `-1` are ignored, as
/// are labels outside `[0, classes)`.
pub fn batch_centroids(u: &Array, labels: &[i64], classes: usize) -> CentroidTable {
    let d = u.cols();
    let mut counts = vec![0usize; classes];
    let mut sums = vec![vec![0.0; d]; classes];
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 || l as usize >= classes {
            continue;
        }
        let c = l as usize;
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(u.row(i)) {
            *s += v;
        }
    }
    CentroidTable { counts, sums }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, d: &[f64]) -> Array {
        Array::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let p = m(3, 2, &[0.95, 0.05, 0.5, 0.5, 0.9, 0.1]);
        let pl = pseudo_label(&p, 0.9);
        assert_eq!(pl.labels, vec![0, -1, -1]);
        assert_eq!(pl.confidences, vec![0.95, 0.5, 0.9]);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let p = m(1, 3, &[0.05, 0.475, 0.475]);
        assert_eq!(pseudo_label(&p, 0.4).labels, vec![1]);
    }

    #[test]
    fn confident_fraction_counts() {
        let mk = |labels: Vec<i64>| PseudoLabels {
            confidences: vec![1.0; labels.len()],
            labels,
        };
        assert_eq!(confident_fraction(&mk(vec![-1, -1])), 0.0);
        assert_eq!(confident_fraction(&mk(vec![0, 2])), 1.0);
        assert_eq!(confident_fraction(&mk(vec![0, -1, 1, 1])), 0.75);
    }

    #[test]
    fn centroid_examples() {
        let u = m(3, 2, &[0.0, 0.0, 2.0, 2.0, 5.0, -1.0]);
        let t = batch_centroids(&u, &[0, 0, -1], 3);
        assert_eq!(t.mean(0), Some(vec![1.0, 1.0]));
        assert_eq!(t.count(1), 0);
        assert_eq!(t.mean(1), None);

        let t = batch_centroids(&u, &[-1, -1, 2], 3);
        assert_eq!(t.mean(2), Some(vec![5.0, -1.0]));
    }
}
