//! Seeded k-means over spectral embedding rows.
//!
//! k-means++ initialization, a fixed number of restarts keeping the best
//! inertia, and deterministic behavior for a given seed. A cluster that
//! empties during Lloyd iteration is re-seeded at the point farthest from
//! its current centroid.

use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

const MAX_LLOYD_ITER: usize = 100;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-of-`restarts` k-means. Points are dense rows of equal dimension.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.len();
    if n == 0 {
        return Err(Error::InvalidInput("no points to cluster".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "k must be in 1..={n}, got {k}"
        )));
    }
    if k == 1 {
        let centroid = mean_point(points, &vec![0usize; n], 0);
        let inertia = points.iter().map(|p| dist2(p, &centroid)).sum();
        return Ok(KMeansResult {
            labels: vec![0; n],
            inertia,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = kmeans_once(points, k, &mut rng);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart ran"))
}

fn mean_point(points: &[Vec<f64>], labels: &[usize], cluster: usize) -> Vec<f64> {
    let dim = points[0].len();
    let mut acc = vec![0.0; dim];
    let mut count = 0usize;
    for (p, &l) in points.iter().zip(labels) {
        if l == cluster {
            for (a, x) in acc.iter_mut().zip(p) {
                *a += x;
            }
            count += 1;
        }
    }
    if count > 0 {
        for a in acc.iter_mut() {
            *a /= count as f64;
        }
    }
    acc
}

/// k-means++ seeding: first centroid uniform, the rest by squared-distance
/// weighted draws.
fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with a centroid; any pick works.
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, centroids.last().unwrap()));
        }
    }
    centroids
}

fn kmeans_once(points: &[Vec<f64>], k: usize, rng: &mut ChaCha20Rng) -> KMeansResult {
    let n = points.len();
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels = vec![0usize; n];

    for _ in 0..MAX_LLOYD_ITER {
        // Assignment step; ties go to the lower cluster index.
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let mut best_c = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist2(p, centroid);
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if labels[i] != best_c {
                labels[i] = best_c;
                changed = true;
            }
        }

        // Re-seed any emptied cluster at the point farthest from its
        // current centroid (deterministic: first max wins).
        for c in 0..k {
            if !labels.contains(&c) {
                let mut far_i = 0usize;
                let mut far_d = -1.0;
                for (i, p) in points.iter().enumerate() {
                    let d = dist2(p, &centroids[labels[i]]);
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                labels[far_i] = c;
                changed = true;
            }
        }

        for (c, centroid) in centroids.iter_mut().enumerate() {
            *centroid = mean_point(points, &labels, c);
        }
        if !changed {
            break;
        }
    }

    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &l)| dist2(p, &centroids[l]))
        .sum();
    KMeansResult { labels, inertia }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(center: &[f64], n: usize, spread: f64, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + rng.random_range(-spread..spread))
                    .collect()
            })
            .collect()
    }

    /// Partition equality up to cluster renaming.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let mut fwd = std::collections::HashMap::new();
        let mut bwd = std::collections::HashMap::new();
        for (&x, &y) in a.iter().zip(b) {
            if *fwd.entry(x).or_insert(y) != y || *bwd.entry(y).or_insert(x) != x {
                return false;
            }
        }
        true
    }

    #[test]
    fn test_recovers_separated_blobs() {
        let mut rng = ChaCha20Rng::seed_from_u64(101);
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]].iter().enumerate() {
            pts.extend(blob(center, 20, 0.5, &mut rng));
            truth.extend(std::iter::repeat(c).take(20));
        }
        let res = kmeans(&pts, 3, 10, 7).unwrap();
        assert!(same_partition(&res.labels, &truth));
    }

    #[test]
    fn test_k_equals_one() {
        let pts = vec![vec![0.0], vec![1.0], vec![2.0]];
        let res = kmeans(&pts, 1, 10, 0).unwrap();
        assert_eq!(res.labels, vec![0, 0, 0]);
        assert!((res.inertia - 2.0).abs() < 1e-12);
    }

    #[test]
    fn test_deterministic_under_seed() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let pts = blob(&[0.0, 0.0], 50, 3.0, &mut rng);
        let a = kmeans(&pts, 4, 10, 99).unwrap();
        let b = kmeans(&pts, 4, 10, 99).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn test_restarts_never_hurt() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let pts = blob(&[0.0, 0.0, 0.0], 60, 5.0, &mut rng);
        let one = kmeans(&pts, 5, 1, 42).unwrap();
        let many = kmeans(&pts, 5, 10, 42).unwrap();
        assert!(many.inertia <= one.inertia + 1e-12);
    }

    #[test]
    fn test_k_equals_n_gives_singletons() {
        let pts = vec![vec![0.0], vec![5.0], vec![9.0]];
        let res = kmeans(&pts, 3, 10, 1).unwrap();
        assert!(res.inertia < 1e-12);
        let mut sorted = res.labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn test_identical_points_do_not_crash() {
        let pts = vec![vec![1.0, 1.0]; 8];
        let res = kmeans(&pts, 2, 10, 3).unwrap();
        assert!(res.inertia < 1e-12);
        assert!(res.labels.iter().all(|&l| l < 2));
    }

    #[test]
    fn test_invalid_k_rejected() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&pts, 0, 10, 0).is_err());
        assert!(kmeans(&pts, 3, 10, 0).is_err());
        assert!(kmeans(&[], 1, 10, 0).is_err());
    }
}
