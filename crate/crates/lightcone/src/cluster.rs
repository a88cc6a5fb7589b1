//! Clustering primitives for cone vectors: density-based grouping with an
//! adaptive radius, and seeded k-means++ with Lloyd refinement.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::rng::{derive_seed, rng_from, sample_indices};

pub const DBSCAN_MIN_PTS: usize = 4;
pub const DBSCAN_TARGET_COVERAGE: f64 = 0.9;
/// Largest point count the density stage runs on directly; bigger sets are
/// subsampled and the remainder assigned to the nearest cluster center.
pub const DBSCAN_SEED_BUDGET: usize = 5000;
const DBSCAN_PROBE_BUDGET: usize = 2000;
const DBSCAN_MAX_GROWTH_STEPS: usize = 64;
const DBSCAN_RADIUS_GROWTH: f64 = 1.5;

/// A hard partition of the input rows. `labels[i]` is the cluster of row `i`;
/// `centers` row `j` is the mean of cluster `j`'s members. `coverage` is the
/// fraction of the density-stage sample that was clustered by density rather
/// than by nearest-center fallback (1.0 for centroid methods).
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centers: Matrix,
    pub coverage: f64,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centers.rows()
    }
}

fn nearest_center(x: &[f64], centers: &Matrix) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centers.rows() {
        let d = sq_dist(x, centers.row(c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

/// Assigns each row of `points` to its nearest center (squared Euclidean,
/// ties to the lowest center index).
pub fn assign_nearest_center(points: &Matrix, centers: &Matrix) -> Result<Vec<usize>> {
    if centers.rows() == 0 {
        return Err(Error::EmptyInput("no centers to assign to".into()));
    }
    if points.cols() != centers.cols() {
        return Err(Error::DimMismatch {
            expected: centers.cols(),
            got: points.cols(),
        });
    }
    Ok((0..points.rows())
        .map(|i| nearest_center(points.row(i), centers))
        .collect())
}

/// Mean of each label's members; clusters with no members keep their row
/// from `fallback`.
fn means_by_label(points: &Matrix, labels: &[usize], k: usize, fallback: &Matrix) -> Matrix {
    let d = points.cols();
    let mut centers = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        let row = points.row(i);
        let acc = centers.row_mut(l);
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    for c in 0..k {
        if counts[c] == 0 {
            centers.row_mut(c).copy_from_slice(fallback.row(c));
        } else {
            let inv = 1.0 / counts[c] as f64;
            for v in centers.row_mut(c) {
                *v *= inv;
            }
        }
    }
    centers
}

/// Classic density clustering over the rows indexed by `idx`. A point is a
/// core point when its eps-ball (self included) holds at least `min_pts`
/// sample points; border points go to the first cluster that reaches them.
/// Returns per-position labels (`None` = noise) and the cluster count.
fn dbscan_labels(
    points: &Matrix,
    idx: &[usize],
    eps: f64,
    min_pts: usize,
) -> (Vec<Option<usize>>, usize) {
    let n = idx.len();
    let eps2 = eps * eps;
    let region = |p: usize| -> Vec<usize> {
        let base = points.row(idx[p]);
        (0..n)
            .filter(|&q| sq_dist(base, points.row(idx[q])) <= eps2)
            .collect()
    };

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut in_queue = vec![false; n];
    let mut clusters = 0;
    for p in 0..n {
        if visited[p] {
            continue;
        }
        visited[p] = true;
        let nb = region(p);
        if nb.len() < min_pts {
            continue;
        }
        let cid = clusters;
        clusters += 1;
        labels[p] = Some(cid);
        let mut queue = VecDeque::new();
        for r in nb {
            if !in_queue[r] && (!visited[r] || labels[r].is_none()) {
                in_queue[r] = true;
                queue.push_back(r);
            }
        }
        while let Some(q) = queue.pop_front() {
            if !visited[q] {
                visited[q] = true;
                labels[q] = Some(cid);
                let nq = region(q);
                if nq.len() >= min_pts {
                    for r in nq {
                        if !in_queue[r] && (!visited[r] || labels[r].is_none()) {
                            in_queue[r] = true;
                            queue.push_back(r);
                        }
                    }
                }
            } else if labels[q].is_none() {
                labels[q] = Some(cid);
            }
        }
    }
    (labels, clusters)
}

/// Density clustering with an adaptive radius. The radius starts at the first
/// percentile of pairwise distances on a seeded probe sample and grows by
/// [`DBSCAN_RADIUS_GROWTH`] until the clustered fraction of the density
/// sample reaches `target_coverage`. Remaining points (noise and any rows
/// beyond the density sample budget) are assigned to the nearest cluster
/// center, and centers are then recomputed as full-membership means.
pub fn dbscan_adaptive(
    points: &Matrix,
    min_pts: usize,
    target_coverage: f64,
    seed: u64,
) -> Result<Clustering> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::EmptyInput("clustering with no points".into()));
    }
    if min_pts == 0 {
        return Err(Error::InvalidParam("min_pts must be >= 1".into()));
    }
    if n < min_pts {
        return Err(Error::InvalidParam(format!(
            "density clustering needs at least {min_pts} points, got {n}"
        )));
    }
    if !(target_coverage > 0.0 && target_coverage <= 1.0) {
        return Err(Error::InvalidParam(
            "target coverage must lie in (0, 1]".into(),
        ));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("clustering input".into()));
    }

    // Identical rows collapse to a single exact cluster.
    let first = points.row(0).to_vec();
    if (1..n).all(|i| points.row(i) == first.as_slice()) {
        return Ok(Clustering {
            labels: vec![0; n],
            centers: Matrix::from_vec(1, points.cols(), first)?,
            coverage: 1.0,
        });
    }

    let sample: Vec<usize> = if n > DBSCAN_SEED_BUDGET {
        let mut rng = rng_from(derive_seed(seed, 1));
        sample_indices(n, DBSCAN_SEED_BUDGET, &mut rng)
    } else {
        (0..n).collect()
    };

    let probe: Vec<usize> = if n > DBSCAN_PROBE_BUDGET {
        let mut rng = rng_from(derive_seed(seed, 2));
        sample_indices(n, DBSCAN_PROBE_BUDGET, &mut rng)
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(probe.len() * (probe.len() - 1) / 2);
    for (a, &i) in probe.iter().enumerate() {
        for &j in &probe[a + 1..] {
            dists.push(sq_dist(points.row(i), points.row(j)).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let rank = ((dists.len() as f64 * 0.01).ceil() as usize).clamp(1, dists.len()) - 1;
    let mut eps = dists[rank];
    if eps <= 0.0 {
        eps = dists.iter().copied().find(|&d| d > 0.0).unwrap_or(1e-9);
    }

    let mut stage: Option<(Vec<Option<usize>>, usize, f64)> = None;
    for _ in 0..DBSCAN_MAX_GROWTH_STEPS {
        let (labels, k) = dbscan_labels(points, &sample, eps, min_pts);
        let covered = labels.iter().filter(|l| l.is_some()).count();
        let coverage = covered as f64 / sample.len() as f64;
        if k > 0 {
            stage = Some((labels, k, coverage));
            if coverage >= target_coverage {
                break;
            }
        }
        eps *= DBSCAN_RADIUS_GROWTH;
    }
    let (sample_labels, k, coverage) = stage.ok_or_else(|| {
        Error::InvalidParam("density stage formed no clusters at any radius".into())
    })?;

    // Density-stage centers from the sample members.
    let d = points.cols();
    let mut centers = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (pos, lab) in sample_labels.iter().enumerate() {
        if let Some(c) = *lab {
            counts[c] += 1;
            let row = points.row(sample[pos]);
            let acc = centers.row_mut(c);
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
    }
    for c in 0..k {
        let inv = 1.0 / counts[c] as f64;
        for v in centers.row_mut(c) {
            *v *= inv;
        }
    }

    // Full assignment: density labels where present, nearest center else.
    let mut by_row: Vec<Option<usize>> = vec![None; n];
    for (pos, lab) in sample_labels.iter().enumerate() {
        by_row[sample[pos]] = *lab;
    }
    let labels: Vec<usize> = (0..n)
        .map(|i| by_row[i].unwrap_or_else(|| nearest_center(points.row(i), &centers)))
        .collect();

    let final_centers = means_by_label(points, &labels, k, &centers);
    Ok(Clustering {
        labels,
        centers: final_centers,
        coverage,
    })
}

/// k-means++ seeding followed by Lloyd iteration to an assignment fixpoint
/// (or `max_iters`). Empty clusters are reseeded to the point farthest from
/// its current center; every returned cluster is non-empty when `k <= n`.
pub fn kmeanspp(points: &Matrix, k: usize, seed: u64, max_iters: usize) -> Result<Clustering> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::EmptyInput("clustering with no points".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidParam(format!(
            "k = {k} exceeds point count {n}"
        )));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("clustering input".into()));
    }

    let mut rng = rng_from(seed);
    let mut center_idx = Vec::with_capacity(k);
    center_idx.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(center_idx[0])))
        .collect();
    while center_idx.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // All points coincide with a center already; lowest unchosen index.
            (0..n).find(|i| !center_idx.contains(i)).unwrap()
        };
        center_idx.push(next);
        for i in 0..n {
            let nd = sq_dist(points.row(i), points.row(next));
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }
    let mut centers = points.select_rows(&center_idx);

    let mut labels: Vec<usize> = Vec::new();
    let mut prev_sse = f64::INFINITY;
    for _ in 0..max_iters {
        let mut new_labels = assign_nearest_center(points, &centers)?;
        let mut counts = vec![0usize; k];
        for &l in &new_labels {
            counts[l] += 1;
        }
        let mut reseeded = false;
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // Farthest point from its own center, drawn from a donor cluster.
            let mut pick = None;
            let mut pick_d = -1.0;
            for i in 0..n {
                if counts[new_labels[i]] < 2 {
                    continue;
                }
                let dist = sq_dist(points.row(i), centers.row(new_labels[i]));
                if dist > pick_d {
                    pick_d = dist;
                    pick = Some(i);
                }
            }
            let Some(i) = pick else { break };
            counts[new_labels[i]] -= 1;
            centers.row_mut(c).copy_from_slice(points.row(i));
            new_labels[i] = c;
            counts[c] = 1;
            reseeded = true;
        }

        centers = means_by_label(points, &new_labels, k, &centers);
        let sse: f64 = (0..n)
            .map(|i| sq_dist(points.row(i), centers.row(new_labels[i])))
            .sum();
        debug_assert!(
            reseeded || sse <= prev_sse * (1.0 + 1e-12) + 1e-12,
            "SSE increased without a reseed: {prev_sse} -> {sse}"
        );
        prev_sse = sse;
        if new_labels == labels {
            break;
        }
        labels = new_labels;
    }

    // Guarantee non-empty clusters even for degenerate duplicate-heavy data.
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let mut pick = None;
        let mut pick_d = -1.0;
        for i in 0..n {
            if counts[labels[i]] < 2 {
                continue;
            }
            let dist = sq_dist(points.row(i), centers.row(labels[i]));
            if dist > pick_d {
                pick_d = dist;
                pick = Some(i);
            }
        }
        let i = pick.expect("k <= n guarantees a donor cluster");
        counts[labels[i]] -= 1;
        labels[i] = c;
        counts[c] = 1;
    }
    let centers = means_by_label(points, &labels, k, &centers);
    Ok(Clustering {
        labels,
        centers,
        coverage: 1.0,
    })
}
