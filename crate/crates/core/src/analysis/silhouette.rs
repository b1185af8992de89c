use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Dense symmetric Euclidean distance matrix.
#[derive(Clone, Debug)]
pub struct Distances {
    n: usize,
    d: Vec<f64>,
}

impl Distances {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let dim = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("points differ in dimension"));
        }
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Mean silhouette of `points` under `labels`.
pub fn silhouette<L: Ord>(points: &[Vec<f64>], labels: &[L]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::invalid(format!("{} points but {} labels", points.len(), labels.len())));
    }
    let dist = Distances::new(points)?;
    let all: Vec<usize> = (0..points.len()).collect();
    silhouette_subset(&dist, &all, labels)
}

/// Mean silhouette over the points `subset` of a precomputed matrix;
/// `labels[k]` labels `subset[k]`. Points alone in their cluster score 0.
pub fn silhouette_subset<L: Ord>(dist: &Distances, subset: &[usize], labels: &[L]) -> Result<f64> {
    if subset.len() != labels.len() {
        return Err(Error::invalid("subset and labels differ in length"));
    }
    if subset.len() < 2 {
        return Err(Error::invalid("silhouette needs at least two points"));
    }
    let mut ids: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    let k = ids.len();
    if k < 2 {
        return Err(Error::invalid("silhouette needs at least two distinct labels"));
    }
    let cluster: Vec<usize> = labels.iter().map(|l| ids[l]).collect();
    let mut sizes = vec![0usize; k];
    for &c in &cluster {
        sizes[c] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for (a, &i) in subset.iter().enumerate() {
        let own = cluster[a];
        if sizes[own] == 1 {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (b, &j) in subset.iter().enumerate() {
            sums[cluster[b]] += dist.get(i, j);
        }
        let a_i = sums[own] / (sizes[own] - 1) as f64;
        let b_i = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a_i.max(b_i);
        if m > 0.0 {
            total += (b_i - a_i) / m;
        }
    }
    Ok(total / subset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_different_labels() {
        let s = silhouette(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[0, 1]).unwrap();
        assert!(s <= 0.0);
    }

    #[test]
    fn single_label_is_error() {
        assert!(silhouette(&[vec![0.0], vec![1.0]], &["a", "a"]).is_err());
    }

    #[test]
    fn hand_computed_line() {
        // clusters {0, 1} and {4}: point 0 has a=1, b=4 -> 0.75;
        // point 1 has a=1, b=3 -> 2/3; the singleton scores 0.
        let s = silhouette(&[vec![0.0], vec![1.0], vec![4.0]], &[0, 0, 1]).unwrap();
        assert!((s - (0.75 + 2.0 / 3.0) / 3.0).abs() < 1e-15);
    }
}
