use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClusterConfig, ClusterError, Clustering};
use crate::corpus::EmbeddingMatrix;

/// Squared Euclidean distance with lane-split accumulators so the loop vectorizes.
#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0f32;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    acc.iter().sum::<f32>() + tail
}

/// Outcome of a k-means run together with its objective history.
#[derive(Debug, Clone)]
pub struct KmeansRun {
    pub clustering: Clustering,
    /// Within-cluster sum of squares after each assignment step.
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn kmeans(
    matrix: &EmbeddingMatrix,
    indices: &[usize],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Clustering, ClusterError> {
    kmeans_traced(matrix, indices, k, seed, max_iter).map(|r| r.clustering)
}

/// Relative and absolute slack on bound tests so float rounding can only
/// cause extra distance evaluations, never a skipped one that mattered.
const SLACK: f64 = 1e-4;

/// Lloyd iteration from k-means++ seeding over the rows `indices` of `matrix`.
///
/// Assignment ties go to the lowest centroid. A centroid left without points
/// is moved onto the point farthest from its own centroid. Each point keeps a
/// lower bound on its distance to every centroid but its own; while the own
/// centroid is strictly closer than that bound the point is not rescanned,
/// and rescans skip centroids the triangle inequality rules out. The
/// assignments are those of plain Lloyd iteration.
pub fn kmeans_traced(
    matrix: &EmbeddingMatrix,
    indices: &[usize],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<KmeansRun, ClusterError> {
    let n = indices.len();
    if k == 0 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= matrix.count()) {
        return Err(ClusterError::IndexOutOfRange(bad));
    }
    let dim = matrix.dim();
    let points = matrix.select_rows(indices);
    let point = |i: usize| &points.as_slice()[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // seeding leaves every point with its nearest centre
    let (mut centroids, mut assign) = seed_plus_plus(&points, k, &mut rng);

    let mut dist = vec![0f32; n];
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        // the first pass always counts as a change, as from no assignment at all
        let mut changed = iterations == 1;
        // Radius of each centroid's current members. A centroid farther than
        // twice that from a member's own centroid cannot be nearer to it.
        let mut reach = vec![0f64; k];
        for i in 0..n {
            let a = assign[i];
            dist[i] = sq_dist(point(i), &centroids[a * dim..(a + 1) * dim]);
            reach[a] = reach[a].max((dist[i] as f64).sqrt());
        }
        let mut candidates: Vec<Option<Vec<usize>>> = vec![None; k];
        for i in 0..n {
            let p = point(i);
            let a = assign[i];
            let u = (dist[i] as f64).sqrt();
            if u * (1.0 + SLACK) + SLACK < lower[i] {
                continue;
            }
            let limit = 2.0 * reach[a] * (1.0 + SLACK) + SLACK;
            let near = candidates[a].get_or_insert_with(|| {
                let own = &centroids[a * dim..(a + 1) * dim];
                centroids
                    .chunks_exact(dim)
                    .enumerate()
                    .filter(|&(c, cent)| c == a || (sq_dist(own, cent) as f64).sqrt() <= limit)
                    .map(|(c, _)| c)
                    .collect()
            });
            let (mut best, mut best_d, mut second_d) = (a, f32::INFINITY, f32::INFINITY);
            for &c in near.iter() {
                let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    second_d = best_d;
                    best_d = d;
                    best = c;
                } else if d < second_d {
                    second_d = d;
                }
            }
            if a != best {
                assign[i] = best;
                changed = true;
            }
            dist[i] = best_d;
            // excluded centroids are at least limit - u away
            lower[i] = (second_d as f64).sqrt().min(limit - u);
        }
        trace.push(dist.iter().map(|&d| d as f64).sum());
        if !changed {
            converged = true;
            break;
        }
        if iterations == max_iter {
            break;
        }

        let previous = centroids.clone();
        let mut sums = vec![0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += v as f64;
            }
        }
        let mut donors: Vec<usize> = if counts.contains(&0) { (0..n).collect() } else { Vec::new() };
        // farthest first, ties by position
        donors.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
        let mut donors = donors.into_iter();
        for c in 0..k {
            let cent = &mut centroids[c * dim..(c + 1) * dim];
            if counts[c] == 0 {
                if let Some(d) = donors.next() {
                    cent.copy_from_slice(point(d));
                }
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (x, &s) in cent.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *x = (s * inv) as f32;
                }
            }
        }

        // Every other centroid moved by at most the largest drift among them.
        let (mut top, mut top_at, mut runner) = (0f64, usize::MAX, 0f64);
        for c in 0..k {
            let range = c * dim..(c + 1) * dim;
            let drift = (sq_dist(&previous[range.clone()], &centroids[range]) as f64).sqrt();
            if drift > top {
                runner = top;
                top = drift;
                top_at = c;
            } else if drift > runner {
                runner = drift;
            }
        }
        for i in 0..n {
            lower[i] -= if assign[i] == top_at { runner } else { top };
        }
    }

    let mut clusters = vec![Vec::new(); k];
    for (i, &c) in assign.iter().enumerate() {
        clusters[c].push(indices[i]);
    }
    Ok(KmeansRun {
        clustering: Clustering::new(
            clusters,
            "kmeans",
            ClusterConfig {
                k: Some(k),
                kmeans_max_iter: max_iter,
                kmeans_seed: seed,
                ..ClusterConfig::default()
            },
        ),
        wcss_trace: trace,
        iterations,
        converged,
    })
}

/// D²-weighted seeding. When every remaining point coincides with a chosen
/// centre the next centre is drawn uniformly. A point whose nearest centre is
/// at least twice its distance away from the new centre cannot get closer,
/// which spares most distance evaluations.
fn seed_plus_plus(points: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<usize>) {
    let n = points.count();
    let dim = points.dim();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(first)) as f64)
        .collect();
    let mut owner = vec![0usize; n];
    // twice the distance to the nearest centre, padded
    let reach = |d: f64| 2.0 * d.sqrt() * (1.0 + SLACK) + SLACK;
    let mut skip: Vec<f64> = d2.iter().map(|&d| reach(d)).collect();
    let mut gap = Vec::with_capacity(k);
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    if r < w {
                        chosen = i;
                        break;
                    }
                    r -= w;
                    chosen = i;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let new = points.row(pick);
        gap.clear();
        gap.extend(
            centroids
                .chunks_exact(dim)
                .map(|cent| (sq_dist(new, cent) as f64).sqrt()),
        );
        centroids.extend_from_slice(new);
        for (i, slot) in d2.iter_mut().enumerate() {
            if gap[owner[i]] >= skip[i] {
                continue;
            }
            let d = sq_dist(points.row(i), new) as f64;
            if d < *slot {
                *slot = d;
                owner[i] = c;
                skip[i] = reach(d);
            }
        }
    }
    (centroids, owner)
}
