use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Stored standardized training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub n_classes: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub(super) fn train(x: &[Vec<f64>], y: &[usize], n_classes: usize, p: &KnnParams) -> Result<KnnModel, ModelError> {
    if p.k > x.len() {
        return Err(ModelError::KTooLarge { k: p.k, n: x.len() });
    }
    Ok(KnnModel {
        k: p.k,
        n_classes,
        rows: x.to_vec(),
        labels: y.to_vec(),
    })
}

impl KnnModel {
    /// The k nearest rows as (distance, label); distance ties keep training order.
    fn neighbours(&self, z: &[f64]) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize, usize)> = self
            .rows
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(i, (r, &y))| {
                let dist = r.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                (dist, i, y)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(self.k);
        d.into_iter().map(|(dist, _, y)| (dist, y)).collect()
    }

    pub fn vote_shares(&self, z: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        let nb = self.neighbours(z);
        for &(_, y) in &nb {
            votes[y] += 1.0;
        }
        votes.iter().map(|v| v / nb.len() as f64).collect()
    }

    /// Majority vote; ties go to the smaller mean distance, then the smaller class index.
    pub fn predict(&self, z: &[f64]) -> usize {
        let nb = self.neighbours(z);
        let mut votes = vec![0usize; self.n_classes];
        let mut dist = vec![0.0; self.n_classes];
        for &(d, y) in &nb {
            votes[y] += 1;
            dist[y] += d;
        }
        let mut best = 0;
        for c in 1..self.n_classes {
            let better = votes[c] > votes[best]
                || (votes[c] == votes[best]
                    && votes[c] > 0
                    && dist[c] / (votes[c] as f64) < dist[best] / (votes[best] as f64));
            if better {
                best = c;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(rows: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> KnnModel {
        train(&rows, &labels, 2, &KnnParams { k }).unwrap()
    }

    #[test]
    fn k1_reproduces_training() {
        let rows = vec![vec![0.0], vec![1.0], vec![5.0], vec![7.0]];
        let m = model(rows.clone(), vec![0, 1, 1, 0], 1);
        for (r, y) in rows.iter().zip([0, 1, 1, 0]) {
            assert_eq!(m.predict(r), y);
        }
    }

    #[test]
    fn equidistant_tie_goes_to_class_zero() {
        let m = model(vec![vec![1.0], vec![-1.0]], vec![1, 0], 2);
        assert_eq!(m.predict(&[0.0]), 0);
    }

    #[test]
    fn majority_and_mean_distance() {
        let m = model(vec![vec![0.0], vec![0.1], vec![0.2], vec![5.0]], vec![0, 0, 1, 1], 3);
        assert_eq!(m.predict(&[0.0]), 0);
        // one vote each with k = 2; class 1 is closer
        let m = model(vec![vec![0.0], vec![3.0]], vec![0, 1], 2);
        assert_eq!(m.predict(&[2.0]), 1);
    }

    #[test]
    fn k_too_large() {
        assert_eq!(
            train(&[vec![0.0]], &[0], 2, &KnnParams { k: 2 }).unwrap_err(),
            ModelError::KTooLarge { k: 2, n: 1 }
        );
    }
}
