//! Lloyd's k-means with seeded random restarts.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clustering {
    /// Cluster of each point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Index of the point nearest each centroid (lowest index on ties).
    pub representatives: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn lloyd(points: &[Vec<f64>], k: usize, mut centroids: Vec<Vec<f64>>) -> Clustering {
    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        let mut next = next;
        // keep every cluster non-empty by moving the point farthest from its
        // centroid out of a cluster that has more than one member
        loop {
            let mut sizes = vec![0usize; k];
            for &c in &next {
                sizes[c] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let donor = (0..points.len())
                .filter(|&i| sizes[next[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[next[a]])
                        .total_cmp(&sq_dist(&points[b], &centroids[next[b]]))
                        .then(b.cmp(&a))
                })
                .expect("k <= number of points");
            next[donor] = empty;
            centroids[empty] = points[donor].clone();
        }
        let changed = next != assignment;
        assignment = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            let n = members.len() as f64;
            *centroid = (0..dim)
                .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / n)
                .collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum();
    let representatives = (0..k)
        .map(|c| {
            (0..points.len())
                .filter(|&i| assignment[i] == c)
                .min_by(|&a, &b| {
                    sq_dist(&points[a], &centroids[c])
                        .total_cmp(&sq_dist(&points[b], &centroids[c]))
                        .then(a.cmp(&b))
                })
                .expect("clusters are non-empty")
        })
        .collect();
    Clustering {
        assignment,
        centroids,
        representatives,
        inertia,
    }
}

/// Best of `restarts` Lloyd runs, each started from `k` distinct points.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Clustering {
    assert!(
        k >= 1 && k <= points.len(),
        "need 1 <= k <= number of points"
    );
    assert!(
        points.iter().all(|p| p.len() == points[0].len()),
        "points must share a dimension"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..restarts.max(1) {
        let mut init: Vec<usize> = sample(&mut rng, points.len(), k).into_vec();
        init.sort_unstable();
        let run = lloyd(points, k, init.iter().map(|&i| points[i].clone()).collect());
        if best
            .as_ref()
            .is_none_or(|b| run.inertia < b.inertia - 1e-12)
        {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn separates_obvious_groups() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![1.01, 1.01]];
        let c = kmeans(&pts, 2, 50, 0);
        assert_eq!(c.assignment[1], c.assignment[2]);
        assert_ne!(c.assignment[0], c.assignment[1]);
        let mut reps = c.representatives.clone();
        reps.sort_unstable();
        assert!(reps == vec![0, 1] || reps == vec![0, 2]);
    }

    #[test]
    fn k_equal_to_n_makes_singletons() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let c = kmeans(&pts, 5, 10, 3);
        let mut reps = c.representatives.clone();
        reps.sort_unstable();
        assert_eq!(reps, vec![0, 1, 2, 3, 4]);
        assert!(c.inertia.abs() < 1e-12);
    }

    #[test]
    fn identical_rows_still_fill_every_cluster() {
        let pts = vec![vec![1.0, 2.0]; 4];
        let c = kmeans(&pts, 3, 5, 1);
        let mut reps = c.representatives.clone();
        reps.sort_unstable();
        reps.dedup();
        assert_eq!(reps.len(), 3);
    }

    #[test]
    fn converged_points_are_nearest_their_centroid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..10).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let c = kmeans(&pts, 6, 50, 4);
        for (p, &a) in pts.iter().zip(&c.assignment) {
            let own = sq_dist(p, &c.centroids[a]);
            for centroid in &c.centroids {
                assert!(own <= sq_dist(p, centroid) + 1e-12);
            }
        }
    }
}
