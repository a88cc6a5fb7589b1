//! Weighted Gaussian kernel density estimation with a capped support set.
//!
//! The kernel is the isotropic product Gaussian
//! `K_h(u) = (2*pi*h^2)^(-d/2) * exp(-u^2 / (2*h^2))` applied to Euclidean
//! distances, so each estimate is a proper density over `R^d`. Support sets
//! larger than the cap are thinned by a seeded subsample and the surviving
//! weights renormalized.

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::rng::{rng_from, sample_indices};

pub const DEFAULT_SUPPORT_CAP: usize = 500;
pub const MIN_BANDWIDTH: f64 = 1e-6;

/// Gaussian kernel value at distance `dist` for the given bandwidth and
/// dimension.
#[inline]
pub fn gaussian_kernel(dist: f64, bandwidth: f64, dim: usize) -> f64 {
    let h2 = bandwidth * bandwidth;
    let norm = (2.0 * std::f64::consts::PI * h2).powf(-(dim as f64) / 2.0);
    norm * (-(dist * dist) / (2.0 * h2)).exp()
}

/// Kernel density estimate: weighted support points, one scalar bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    support: Matrix,
    weights: Vec<f64>,
    bandwidth: f64,
    cap: usize,
}

impl Kde {
    /// Rebuilds an estimate from stored parts, revalidating the invariants.
    pub fn from_parts(
        support: Matrix,
        weights: Vec<f64>,
        bandwidth: f64,
        cap: usize,
    ) -> Result<Kde> {
        if support.rows() == 0 {
            return Err(Error::EmptyInput("kde with no support points".into()));
        }
        if weights.len() != support.rows() {
            return Err(Error::DimMismatch {
                expected: support.rows(),
                got: weights.len(),
            });
        }
        if !support.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("kde support or weights".into()));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidParam("negative kde weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParam("kde weights sum to zero".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParam("bandwidth must be positive".into()));
        }
        Ok(Kde {
            support,
            weights,
            bandwidth,
            cap,
        })
    }

    pub fn support(&self) -> &Matrix {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn dim(&self) -> usize {
        self.support.cols()
    }

    /// Kernel value at zero distance, the per-point density ceiling.
    pub fn kernel_at_zero(&self) -> f64 {
        gaussian_kernel(0.0, self.bandwidth, self.dim())
    }

    /// Density at `x`. Always finite and non-negative; far queries underflow
    /// toward zero.
    pub fn density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let h2 = self.bandwidth * self.bandwidth;
        let norm = (2.0 * std::f64::consts::PI * h2).powf(-(self.dim() as f64) / 2.0);
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            let d2 = sq_dist(self.support.row(i), x);
            acc += w * (-d2 / (2.0 * h2)).exp();
        }
        Ok(norm * acc)
    }
}

/// Silverman's rule averaged over dimensions: per-coordinate sample standard
/// deviation times `(4 / ((d + 2) * m))^(1 / (d + 4))`, floored at
/// [`MIN_BANDWIDTH`].
fn silverman_bandwidth(points: &Matrix) -> f64 {
    let m = points.rows();
    let d = points.cols();
    if m < 2 {
        return MIN_BANDWIDTH;
    }
    let means = points.column_means();
    let mut acc = 0.0;
    for j in 0..d {
        let mut ss = 0.0;
        for i in 0..m {
            let dv = points.get(i, j) - means[j];
            ss += dv * dv;
        }
        acc += (ss / (m - 1) as f64).sqrt();
    }
    let factor = (4.0 / ((d + 2) as f64 * m as f64)).powf(1.0 / (d + 4) as f64);
    ((acc / d as f64) * factor).max(MIN_BANDWIDTH)
}

/// Fits a KDE on `points` with optional per-point weights (default uniform)
/// and optional bandwidth (default Silverman's rule on the retained support).
/// When `points` exceeds `cap`, a seeded uniform subsample of `cap` rows is
/// kept and its weights renormalized.
pub fn fit_kde(
    points: &Matrix,
    weights: Option<&[f64]>,
    bandwidth: Option<f64>,
    cap: usize,
    seed: u64,
) -> Result<Kde> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::EmptyInput("kde fit with no points".into()));
    }
    if cap == 0 {
        return Err(Error::InvalidParam("support cap must be >= 1".into()));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("kde fit points".into()));
    }
    let w_full: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::DimMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidParam(
                    "kde weights must be finite and non-negative".into(),
                ));
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidParam("kde weights sum to zero".into()));
            }
            w.to_vec()
        }
        None => vec![1.0; n],
    };

    let (support, mut w) = if n > cap {
        let mut rng = rng_from(seed);
        let idx = sample_indices(n, cap, &mut rng);
        let kept: Vec<f64> = idx.iter().map(|&i| w_full[i]).collect();
        if kept.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParam(
                "all surviving weights are zero after support capping".into(),
            ));
        }
        (points.select_rows(&idx), kept)
    } else {
        (points.clone(), w_full)
    };

    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }

    let h = match bandwidth {
        Some(h) => {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidParam("bandwidth must be positive".into()));
            }
            h
        }
        None => silverman_bandwidth(&support),
    };

    Kde::from_parts(support, w, h, cap)
}
