//! Numerical stress tests of the weighted-KDE stability results: a hard
//! bound on the density change from perturbing one weight, a Monte Carlo
//! concentration bound on that change, and the worst-state domination
//! property behind the aggregate tail bound.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kde::{fit_kde, gaussian_kernel};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from};

/// Floating-point headroom on the hard bound comparison.
pub const BOUND_SLACK: f64 = 1e-12;

/// Number of weight columns sampled for the worst-state domination check.
const DOMINATION_STATES: usize = 3;

/// Outcome of randomized single-weight perturbation trials.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationReport {
    pub trials: usize,
    /// Trials where the observed change exceeded the bound plus slack.
    pub violations: usize,
    /// Largest observed change-to-bound ratio; at most 1 when the bound holds.
    pub max_ratio: f64,
    pub n_support: usize,
    pub dim: usize,
    pub bandwidth: f64,
    pub mean_weight_sum: f64,
    pub mean_epsilon: f64,
}

/// Randomized check that bumping one weight of a normalized weighted KDE by
/// `eps` moves the density at any point by at most
/// `eps / (total + eps) * K_h(0)`, where `total` is the unperturbed weight
/// sum. Each trial draws fresh support points, weights, a perturbed index,
/// `eps`, and a query, then evaluates both estimators directly.
pub fn check_weight_perturbation(
    n_trials: usize,
    n_support: usize,
    dim: usize,
    bandwidth: f64,
    seed: u64,
) -> Result<PerturbationReport> {
    if n_trials == 0 {
        return Err(Error::InvalidParam("perturbation check needs trials".into()));
    }
    if n_support < 2 {
        return Err(Error::InvalidParam(
            "perturbation check needs at least 2 support points".into(),
        ));
    }
    if dim == 0 {
        return Err(Error::InvalidParam("dimension must be positive".into()));
    }
    if !bandwidth.is_finite() || bandwidth <= 0.0 {
        return Err(Error::InvalidParam("bandwidth must be positive".into()));
    }
    let k0 = gaussian_kernel(0.0, bandwidth, dim);

    let trials: Vec<(bool, f64, f64, f64)> = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(derive_seed(seed, t as u64));
            let mut support = Matrix::zeros(n_support, dim);
            for v in support.data_mut() {
                *v = rng.sample::<f64, _>(StandardNormal);
            }
            let weights: Vec<f64> =
                (0..n_support).map(|_| rng.random_range(0.0..1.0)).collect();
            let i = rng.random_range(0..n_support);
            let eps = rng.random_range(0.0_f64..2.0).max(1e-12);
            let query: Vec<f64> = (0..dim)
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();

            let base = fit_kde(&support, Some(&weights), Some(bandwidth), n_support, 0)?;
            let mut perturbed_w = weights.clone();
            perturbed_w[i] += eps;
            let perturbed =
                fit_kde(&support, Some(&perturbed_w), Some(bandwidth), n_support, 0)?;

            let diff = (perturbed.density(&query)? - base.density(&query)?).abs();
            let total: f64 = weights.iter().sum();
            let bound = eps / (total + eps) * k0;
            Ok((diff > bound + BOUND_SLACK, diff / bound, total, eps))
        })
        .collect::<Result<_>>()?;

    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    let mut sum_total = 0.0;
    let mut sum_eps = 0.0;
    for &(violated, ratio, total, eps) in &trials {
        violations += usize::from(violated);
        max_ratio = max_ratio.max(ratio);
        sum_total += total;
        sum_eps += eps;
    }
    Ok(PerturbationReport {
        trials: n_trials,
        violations,
        max_ratio,
        n_support,
        dim,
        bandwidth,
        mean_weight_sum: sum_total / n_trials as f64,
        mean_epsilon: sum_eps / n_trials as f64,
    })
}

/// One threshold of the concentration check for one weight column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationPoint {
    /// Index of the weight column this row describes.
    pub state: usize,
    /// Tail threshold `a`.
    pub threshold: f64,
    /// Theoretical tail bound `2 exp{-2 (1 + total)^2 a^2 / (n k0^2)}`.
    pub bound: f64,
    /// Monte Carlo estimate of the probability the density change reaches
    /// the threshold.
    pub frequency: f64,
    /// Binomial standard error of `frequency`.
    pub std_error: f64,
    /// True when the bound is at least 1 and so says nothing.
    pub vacuous: bool,
    /// Vacuous, or frequency within three standard errors of the bound.
    pub pass: bool,
}

/// Outcome of the Monte Carlo concentration check.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub trials: usize,
    pub n_support: usize,
    pub dim: usize,
    pub bandwidth: f64,
    pub kernel_at_zero: f64,
    /// Weight totals of the sampled columns.
    pub weight_sums: Vec<f64>,
    pub points: Vec<ConcentrationPoint>,
    /// Every non-vacuous point passed.
    pub all_pass: bool,
    /// Grid comparisons where the smallest weight total's bound was at
    /// least every per-column bound, and where it was beaten. The first
    /// number should cover the grid: the bound loosens as the total shrinks,
    /// so the worst state dominates.
    pub min_dominates: usize,
    pub min_dominated: usize,
}

fn tail_bound(total: f64, a: f64, n: usize, k0: f64) -> f64 {
    2.0 * (-2.0 * (1.0 + total).powi(2) * a * a / (n as f64 * k0 * k0)).exp()
}

/// Monte Carlo check of the tail bound on the density change from a single
/// random weight perturbation of size at most 1. A fixed support sample and
/// query are drawn once, along with one weight column per tracked state;
/// each trial bumps one random entry of each column and measures the density
/// change at the query.
pub fn check_concentration(
    n_mc: usize,
    n_support: usize,
    dim: usize,
    bandwidth: f64,
    thresholds: &[f64],
    seed: u64,
) -> Result<ConcentrationReport> {
    if n_mc == 0 {
        return Err(Error::InvalidParam("concentration check needs trials".into()));
    }
    if n_support < 2 {
        return Err(Error::InvalidParam(
            "concentration check needs at least 2 support points".into(),
        ));
    }
    if dim == 0 {
        return Err(Error::InvalidParam("dimension must be positive".into()));
    }
    if !bandwidth.is_finite() || bandwidth <= 0.0 {
        return Err(Error::InvalidParam("bandwidth must be positive".into()));
    }
    if thresholds.is_empty() {
        return Err(Error::EmptyInput("threshold grid".into()));
    }
    if thresholds.iter().any(|a| !a.is_finite() || *a < 0.0) {
        return Err(Error::InvalidParam(
            "thresholds must be finite and non-negative".into(),
        ));
    }
    let k0 = gaussian_kernel(0.0, bandwidth, dim);

    let mut rng = rng_from(derive_seed(seed, 0));
    let mut support = Matrix::zeros(n_support, dim);
    for v in support.data_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let columns: Vec<Vec<f64>> = (0..DOMINATION_STATES)
        .map(|_| (0..n_support).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let query: Vec<f64> = (0..dim)
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let totals: Vec<f64> = columns.iter().map(|w| w.iter().sum()).collect();
    let base_densities: Vec<f64> = columns
        .iter()
        .map(|w| {
            fit_kde(&support, Some(w), Some(bandwidth), n_support, 0)?.density(&query)
        })
        .collect::<Result<_>>()?;

    // Density changes per trial, one row per state column.
    let diffs: Vec<Vec<f64>> = (0..n_mc)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from(derive_seed(seed, 1 + t as u64));
            let i = rng.random_range(0..n_support);
            // Bumps of at most 1 match the per-entry change the tail bound
            // is built from.
            let eps = rng.random_range(0.0_f64..1.0).max(1e-12);
            columns
                .iter()
                .zip(&base_densities)
                .map(|(w, base)| {
                    let mut perturbed_w = w.clone();
                    perturbed_w[i] += eps;
                    let perturbed = fit_kde(
                        &support,
                        Some(&perturbed_w),
                        Some(bandwidth),
                        n_support,
                        0,
                    )?;
                    Ok((perturbed.density(&query)? - base).abs())
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let min_total = totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut points = Vec::with_capacity(DOMINATION_STATES * thresholds.len());
    let mut all_pass = true;
    let mut min_dominates = 0;
    let mut min_dominated = 0;
    for (j, &total) in totals.iter().enumerate() {
        for &a in thresholds {
            let hits = diffs.iter().filter(|row| row[j] >= a).count();
            let frequency = hits as f64 / n_mc as f64;
            let std_error = (frequency * (1.0 - frequency) / n_mc as f64).sqrt();
            let bound = tail_bound(total, a, n_support, k0);
            let vacuous = bound >= 1.0;
            let pass = vacuous || frequency <= bound + 3.0 * std_error;
            all_pass &= pass;
            points.push(ConcentrationPoint {
                state: j,
                threshold: a,
                bound,
                frequency,
                std_error,
                vacuous,
                pass,
            });
            if tail_bound(min_total, a, n_support, k0) >= bound {
                min_dominates += 1;
            } else {
                min_dominated += 1;
            }
        }
    }

    Ok(ConcentrationReport {
        trials: n_mc,
        n_support,
        dim,
        bandwidth,
        kernel_at_zero: k0,
        weight_sums: totals,
        points,
        all_pass,
        min_dominates,
        min_dominated,
    })
}
