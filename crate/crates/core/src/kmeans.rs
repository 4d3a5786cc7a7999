//! Lloyd's k-means with k-means++ seeding.
//!
//! Used for anchor selection in the visual graph and concept detection in the
//! hypergraph; both need exactly `k` non-empty clusters, so empty clusters are
//! repaired by moving in the point farthest from its current center.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataio::DenseMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Centroids {
    /// `dims × k`, one center per column.
    pub centers: DenseMatrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every Lloyd iteration.
    pub history: Vec<f64>,
}

impl Centroids {
    pub fn k(&self) -> usize {
        self.centers.ncols()
    }

    pub fn dims(&self) -> usize {
        self.centers.nrows()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center; ties go to the lower index.
fn nearest(point: &[f64], centers: &DenseMatrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.column_iter().enumerate() {
        let d = sq_dist(point, c.as_slice());
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &DenseMatrix, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let n = points.ncols();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut min_d: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.column(i).as_slice(), points.column(chosen[0]).as_slice()))
        .collect();
    while chosen.len() < k {
        let total: f64 = min_d.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in min_d.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.expect("positive total mass")
        } else {
            // Every point coincides with a chosen center; take an unused index.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        let c = points.column(next);
        for (i, d) in min_d.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.column(i).as_slice(), c.as_slice()));
        }
    }
    points.select_columns(&chosen)
}

fn means(points: &DenseMatrix, assignments: &[usize], k: usize) -> DenseMatrix {
    let dims = points.nrows();
    let mut sums = DenseMatrix::zeros(dims, k);
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        let mut col = sums.column_mut(a);
        col += points.column(i);
        counts[a] += 1;
    }
    for (j, &cnt) in counts.iter().enumerate() {
        if cnt > 0 {
            let mut col = sums.column_mut(j);
            col /= cnt as f64;
        }
    }
    sums
}

fn inertia_of(points: &DenseMatrix, centers: &DenseMatrix, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(points.column(i).as_slice(), centers.column(a).as_slice()))
        .sum()
}

/// Moves the farthest-from-center point of a multi-member cluster into each
/// empty cluster.
fn repair_empty(
    points: &DenseMatrix,
    centers: &DenseMatrix,
    assignments: &mut [usize],
    k: usize,
) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, &a) in assignments.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = sq_dist(points.column(i).as_slice(), centers.column(a).as_slice());
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let i = far.expect("k <= n guarantees a donor cluster");
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
    }
}

/// Clusters the columns of `points` into `k` groups.
pub fn kmeans(
    points: &DenseMatrix,
    k: usize,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<Centroids> {
    let n = points.ncols();
    if k == 0 || k > n {
        return Err(Error::InvalidK(format!("k = {k} with n = {n}")));
    }
    if max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut history: Vec<f64> = Vec::new();

    for _ in 0..max_iters {
        assignments = (0..n)
            .into_par_iter()
            .map(|i| nearest(points.column(i).as_slice(), &centers).0)
            .collect();
        repair_empty(points, &centers, &mut assignments, k);
        centers = means(points, &assignments, k);
        let inertia = inertia_of(points, &centers, &assignments);
        debug_assert!(
            history
                .last()
                .is_none_or(|&prev| inertia <= prev * (1.0 + 1e-12) + 1e-12),
            "inertia increased"
        );
        let done = match history.last() {
            Some(&prev) if prev > 0.0 => (prev - inertia) / prev < tol,
            Some(_) => true,
            None => inertia == 0.0,
        };
        history.push(inertia);
        if done {
            break;
        }
    }

    Ok(Centroids {
        centers,
        assignments,
        inertia: *history.last().expect("at least one iteration"),
        history,
    })
}
