//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::Vector;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Cluster of each input vector, aligned with the input order.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vector>,
    /// Number of centroid updates performed.
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared distances to the assigned centroid, recorded after every
    /// assignment step (initial one included).
    pub inertia_history: Vec<f64>,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap_or(&0.0)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid per point, lowest index on ties. Parallel over points;
/// each result depends on one point only, so the output is worker-count independent.
fn assign(points: &[&[f64]], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let nearest: Vec<(usize, f64)> = points
        .par_iter()
        .map(|p| {
            let mut best = (0, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect();
    let inertia = nearest.iter().map(|(_, d)| d).sum();
    (nearest.into_iter().map(|(c, _)| c).collect(), inertia)
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // float slop can walk past the last positive weight
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // every remaining point coincides with a chosen center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

/// Clusters `vectors` into `k` groups. Deterministic given the inputs and `seed`.
pub fn kmeans(vectors: &[Vector], k: usize, seed: u64, max_iters: usize) -> Result<KMeansFit> {
    if vectors.is_empty() {
        return Err(Error::invalid("k-means needs at least one vector"));
    }
    if k == 0 || k > vectors.len() {
        return Err(Error::invalid(format!("k = {k} must be in 1..={}", vectors.len())));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be at least 1"));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: v.dim(),
        });
    }

    let points: Vec<&[f64]> = vectors.iter().map(Vector::as_slice).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(&points, k, &mut rng);

    let (mut labels, inertia) = assign(&points, &centroids);
    let mut inertia_history = vec![inertia];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iters {
        update_centroids(&points, &labels, &mut centroids);
        iterations += 1;
        let (next, inertia) = assign(&points, &centroids);
        inertia_history.push(inertia);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }

    Ok(KMeansFit {
        labels,
        centroids: centroids.into_iter().map(Vector::new).collect(),
        iterations,
        converged,
        inertia_history,
    })
}

/// Recomputes centroids as member means. An empty cluster is reseeded at the
/// point farthest from its own (freshly updated) centroid.
fn update_centroids(points: &[&[f64]], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for (c, sum) in sums.into_iter().enumerate() {
        if counts[c] > 0 {
            centroids[c] = sum.into_iter().map(|s| s / counts[c] as f64).collect();
        }
    }

    let mut taken = Vec::new();
    for c in 0..centroids.len() {
        if counts[c] > 0 {
            continue;
        }
        let far = points
            .iter()
            .zip(labels)
            .enumerate()
            .filter(|(i, _)| !taken.contains(i))
            .map(|(i, (p, &l))| (i, sq_dist(p, &centroids[l])))
            .fold(None::<(usize, f64)>, |best, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        if let Some((i, _)) = far {
            taken.push(i);
            centroids[c] = points[i].to_vec();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_vector() {
        let v = Vector::new(vec![0.3, -0.1, 2.0]);
        let fit = kmeans(std::slice::from_ref(&v), 1, 0, 10).unwrap();
        assert_eq!(fit.centroids[0], v);
        assert_eq!(fit.labels, vec![0]);
    }

    #[test]
    fn duplicates_converge_in_one_iteration() {
        let vs = vec![Vector::new(vec![1.0, 1.0]); 5];
        let fit = kmeans(&vs, 1, 3, 100).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn duplicates_with_k_above_one() {
        let vs = vec![Vector::new(vec![1.0, 1.0]); 4];
        let fit = kmeans(&vs, 3, 3, 100).unwrap();
        assert_eq!(fit.labels.len(), 4);
        assert!(fit.labels.iter().all(|&l| l < 3));
    }

    #[test]
    fn errors() {
        assert!(kmeans(&[], 1, 0, 10).is_err());
        let vs = vec![Vector::new(vec![0.0]); 2];
        assert!(kmeans(&vs, 3, 0, 10).is_err());
        assert!(kmeans(&vs, 0, 0, 10).is_err());
        assert!(kmeans(&vs, 1, 0, 0).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let points: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0], vec![10.0]];
        let refs: Vec<&[f64]> = points.iter().map(|p| p.as_slice()).collect();
        let mut centroids = vec![vec![0.5], vec![100.0]];
        update_centroids(&refs, &[0, 0, 0], &mut centroids);
        // mean of all three is 11/3; 10.0 is farthest from it
        assert_eq!(centroids[1], vec![10.0]);
    }
}
