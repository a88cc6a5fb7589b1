//! Forecast evaluation: error metrics, percentile-bootstrap confidence
//! intervals, CSV reporting, and leave-one-out protocols at the dataset and
//! frame level.

use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{
    fit_lclr, fltp_predict_frame, knn_predict_frame, lclr_predict_frame, LinearConeModel,
};
use crate::error::{Error, Result};
use crate::field::{
    concat_cone_sets, extract_cones, standardize, subsample, ConeGeometry, ConeSet, Field,
    ScalingParams,
};
use crate::predict::{frame_log_likelihood, predict_frame, PredictedFrame};
use crate::rng::{derive_seed, rng_from};
use crate::states::{fit_moonshine, fit_ohp, StateModel};

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 1000;
/// Training-cone budget for dataset-level cross-validation.
pub const DEFAULT_EXPERIMENT_BUDGET: usize = 20_000;
/// Training-cone budget for frame-level cross-validation.
pub const DEFAULT_FRAME_BUDGET: usize = 40_000;

/// Mean squared error between two equal-length samples.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("mse samples".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation; errs when either sample has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: b.len(),
            got: a.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least 2 pairs".into()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        saa += dx * dx;
        sbb += dy * dy;
        sab += dx * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Undefined(
            "correlation of a zero-variance sample".into(),
        ));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Per-sample absolute error as a fraction of the pooled dynamic range of
/// truth and prediction together. All outputs lie in [0, 1]; a pooled range
/// of zero (both sequences one constant) maps to zeros.
pub fn err_pct(truth: &[f64], pred: &[f64]) -> Result<Vec<f64>> {
    if truth.len() != pred.len() {
        return Err(Error::DimMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("error-percentage samples".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in truth.iter().chain(pred) {
        if !v.is_finite() {
            return Err(Error::NonFinite("error-percentage samples".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range == 0.0 {
        return Ok(vec![0.0; truth.len()]);
    }
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p).abs() / range)
        .collect())
}

fn percentile_interval(mut stats: Vec<f64>, point: f64) -> (f64, f64) {
    stats.sort_by(|a, b| a.total_cmp(b));
    let b = stats.len();
    let lo_idx = ((0.025 * b as f64) as usize).min(b - 1);
    let hi_idx = ((0.975 * b as f64) as usize).min(b - 1);
    (stats[lo_idx].min(point), stats[hi_idx].max(point))
}

/// 95% percentile-bootstrap interval for the mean of `values`. The interval
/// is widened if needed so it always contains the point estimate.
pub fn bootstrap_ci_mean(values: &[f64], resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInput("bootstrap sample".into()));
    }
    if resamples == 0 {
        return Err(Error::InvalidParam("bootstrap needs resamples >= 1".into()));
    }
    let n = values.len();
    let means: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from(derive_seed(seed, b as u64));
            let sum: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            sum / n as f64
        })
        .collect();
    Ok(percentile_interval(means, mean(values)))
}

/// 95% percentile-bootstrap interval for a Pearson correlation, resampling
/// pairs. Degenerate resamples (zero variance) are dropped.
pub fn bootstrap_ci_pearson(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let point = pearson(a, b)?;
    if resamples == 0 {
        return Err(Error::InvalidParam("bootstrap needs resamples >= 1".into()));
    }
    let n = a.len();
    let stats: Vec<f64> = (0..resamples)
        .into_par_iter()
        .filter_map(|r| {
            let mut rng = rng_from(derive_seed(seed, r as u64));
            let mut ra = Vec::with_capacity(n);
            let mut rb = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.random_range(0..n);
                ra.push(a[i]);
                rb.push(b[i]);
            }
            pearson(&ra, &rb).ok()
        })
        .collect();
    if stats.is_empty() {
        return Ok((point, point));
    }
    Ok(percentile_interval(stats, point))
}

/// Formats to six significant digits: plain decimal in a moderate range,
/// scientific notation outside it.
pub fn fmt_sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let ax = x.abs();
    if (1e-4..1e15).contains(&ax) {
        let leading = ax.log10().floor() as i32;
        let decimals = (5 - leading).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// A forecasting method with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    /// Copy the same pixel from the previous frame.
    Fltp,
    /// Nearest-neighbor regression on predictor cones.
    Knn { k: usize, weighted: bool },
    /// Linear regression on predictor cones.
    Lclr,
    /// Clustered predictive states with signature merging.
    Moonshine { k_max: usize, k_sig: usize },
    /// Predictive states from direct future clustering.
    Ohp { k: usize },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Fltp => "fltp",
            MethodSpec::Knn { .. } => "knn",
            MethodSpec::Lclr => "lclr",
            MethodSpec::Moonshine { .. } => "moonshine",
            MethodSpec::Ohp { .. } => "ohp",
        }
    }

    /// The state-count budget, for methods that have one.
    pub fn k_max(&self) -> Option<usize> {
        match self {
            MethodSpec::Moonshine { k_max, .. } => Some(*k_max),
            MethodSpec::Ohp { k } => Some(*k),
            _ => None,
        }
    }
}

/// One row of evaluation output: point metrics with confidence intervals
/// for one method on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub k_max: Option<usize>,
    pub mse: f64,
    pub mse_ci: (f64, f64),
    pub rho: Option<f64>,
    pub rho_ci: Option<(f64, f64)>,
    pub avg_ll: Option<f64>,
    pub ll_ci: Option<(f64, f64)>,
    pub perplexity: Option<f64>,
    pub fold: usize,
}

pub const METRICS_CSV_HEADER: &str =
    "method,K_max,MSE,MSE_CI_lo,MSE_CI_hi,rho,rho_CI_lo,rho_CI_hi,avg_ll,ll_CI_lo,ll_CI_hi,perplexity,fold";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(fmt_sig6).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.k_max.map(|k| k.to_string()).unwrap_or_default(),
            fmt_sig6(self.mse),
            fmt_sig6(self.mse_ci.0),
            fmt_sig6(self.mse_ci.1),
            opt(self.rho),
            opt(self.rho_ci.map(|c| c.0)),
            opt(self.rho_ci.map(|c| c.1)),
            opt(self.avg_ll),
            opt(self.ll_ci.map(|c| c.0)),
            opt(self.ll_ci.map(|c| c.1)),
            opt(self.perplexity),
            self.fold,
        )
    }
}

/// Renders reports as a CSV document with a fixed header.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Shared settings for the cross-validation protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub geometry: ConeGeometry,
    /// Training-cone budget per fold; larger training sets are subsampled.
    pub budget: usize,
    pub bootstrap_resamples: usize,
    pub seed: u64,
}

impl ProtocolConfig {
    /// Defaults for leave-one-dataset-out evaluation.
    pub fn experiment_defaults(geometry: ConeGeometry, seed: u64) -> Self {
        ProtocolConfig {
            geometry,
            budget: DEFAULT_EXPERIMENT_BUDGET,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            seed,
        }
    }

    /// Defaults for leave-one-frame-out evaluation.
    pub fn frame_defaults(geometry: ConeGeometry, seed: u64) -> Self {
        ProtocolConfig {
            geometry,
            budget: DEFAULT_FRAME_BUDGET,
            bootstrap_resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            seed,
        }
    }
}

enum Fitted {
    Fltp,
    Knn {
        train: ConeSet,
        scaling: ScalingParams,
        k: usize,
        weighted: bool,
    },
    Lclr(LinearConeModel),
    States(StateModel),
}

fn fit_on(train: &ConeSet, method: &MethodSpec, budget: usize, seed: u64) -> Result<Fitted> {
    if matches!(method, MethodSpec::Fltp) {
        return Ok(Fitted::Fltp);
    }
    let (std_cones, scaling) = standardize(train);
    let sub = subsample(&std_cones, budget, derive_seed(seed, 1))?;
    match method {
        MethodSpec::Fltp => unreachable!(),
        MethodSpec::Knn { k, weighted } => Ok(Fitted::Knn {
            train: sub,
            scaling,
            k: *k,
            weighted: *weighted,
        }),
        MethodSpec::Lclr => Ok(Fitted::Lclr(fit_lclr(&sub, scaling)?)),
        MethodSpec::Moonshine { k_max, k_sig } => Ok(Fitted::States(fit_moonshine(
            &sub,
            *k_max,
            *k_sig,
            scaling,
            derive_seed(seed, 2),
        )?)),
        MethodSpec::Ohp { k } => Ok(Fitted::States(fit_ohp(
            &sub,
            *k,
            scaling,
            derive_seed(seed, 2),
        )?)),
    }
}

fn forecast(
    fitted: &Fitted,
    field: &Field,
    t: usize,
    geometry: ConeGeometry,
) -> Result<PredictedFrame> {
    match fitted {
        Fitted::Fltp => fltp_predict_frame(field, t, geometry.plc_margin()),
        Fitted::Knn {
            train,
            scaling,
            k,
            weighted,
        } => knn_predict_frame(train, *scaling, field, t, *k, *weighted),
        Fitted::Lclr(m) => lclr_predict_frame(m, field, t),
        Fitted::States(m) => predict_frame(m, field, t),
    }
}

fn score_fold(
    fitted: &Fitted,
    method: &MethodSpec,
    field: &Field,
    test_frames: &[usize],
    cfg: &ProtocolConfig,
    fold: usize,
    fold_seed: u64,
) -> Result<MetricsReport> {
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    for &t in test_frames {
        let frame = forecast(fitted, field, t, cfg.geometry)?;
        for row in 0..frame.height {
            for col in 0..frame.width {
                if let Some(v) = frame.get(row, col) {
                    preds.push(v);
                    truths.push(field.get(t, row, col));
                }
            }
        }
    }
    if preds.is_empty() {
        return Err(Error::NoInteriorCones);
    }
    let sq_errs: Vec<f64> = preds
        .iter()
        .zip(&truths)
        .map(|(p, t)| (p - t) * (p - t))
        .collect();
    let mse_point = mean(&sq_errs);
    let mse_ci = bootstrap_ci_mean(
        &sq_errs,
        cfg.bootstrap_resamples,
        derive_seed(fold_seed, 10),
    )?;
    let rho = pearson(&preds, &truths).ok();
    let rho_ci = match rho {
        Some(_) => Some(bootstrap_ci_pearson(
            &preds,
            &truths,
            cfg.bootstrap_resamples,
            derive_seed(fold_seed, 11),
        )?),
        None => None,
    };

    let (avg_ll, ll_ci, perplexity) = if let Fitted::States(model) = fitted {
        let mut lls = Vec::new();
        for &t in test_frames {
            lls.extend(frame_log_likelihood(model, field, t)?.log_likelihoods);
        }
        let avg = mean(&lls);
        let ci = bootstrap_ci_mean(&lls, cfg.bootstrap_resamples, derive_seed(fold_seed, 12))?;
        (Some(avg), Some(ci), Some((-avg).exp2()))
    } else {
        (None, None, None)
    };

    Ok(MetricsReport {
        method: method.name().into(),
        k_max: method.k_max(),
        mse: mse_point,
        mse_ci,
        rho,
        rho_ci,
        avg_ll,
        ll_ci,
        perplexity,
        fold,
    })
}

/// Leave-one-dataset-out cross-validation: each fold trains on the pooled
/// cones of all other datasets and scores every scoreable frame of the
/// held-out one.
pub fn loo_experiment_cv(
    datasets: &[Field],
    method: &MethodSpec,
    cfg: &ProtocolConfig,
) -> Result<Vec<MetricsReport>> {
    if datasets.len() < 2 {
        return Err(Error::InvalidParam(
            "dataset-level cross-validation needs at least two datasets".into(),
        ));
    }
    let g = cfg.geometry;
    let extracted: Vec<ConeSet> = datasets
        .iter()
        .map(|f| extract_cones(f, g))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(datasets.len());
    for fold in 0..datasets.len() {
        let train_sets: Vec<&ConeSet> = extracted
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != fold)
            .map(|(_, s)| s)
            .collect();
        let pooled = concat_cone_sets(&train_sets)?;
        let fitted = fit_on(
            &pooled,
            method,
            cfg.budget,
            derive_seed(cfg.seed, 2000 + fold as u64),
        )?;
        let test = &datasets[fold];
        if test.frames() < g.h_p + g.h_f + 1 {
            return Err(Error::InvalidParam(format!(
                "dataset {fold} is too short to score any frame"
            )));
        }
        let test_frames: Vec<usize> = (g.h_p..test.frames() - g.h_f).collect();
        out.push(score_fold(
            &fitted,
            method,
            test,
            &test_frames,
            cfg,
            fold,
            derive_seed(cfg.seed, 6000 + fold as u64),
        )?);
    }
    Ok(out)
}

/// Leave-one-frame-out cross-validation on a single field. Frames whose
/// 1-based index is a multiple of `skip` are retained; each retained frame
/// with enough history and future becomes one fold, trained on all cones
/// whose origin lies on a different frame.
pub fn loo_frame_cv(
    field: &Field,
    skip: usize,
    method: &MethodSpec,
    cfg: &ProtocolConfig,
) -> Result<Vec<MetricsReport>> {
    if skip == 0 {
        return Err(Error::InvalidParam("skip must be at least 1".into()));
    }
    let g = cfg.geometry;
    let retained: Vec<usize> = (0..field.frames()).filter(|t| (t + 1) % skip == 0).collect();
    if retained.len() < 3 {
        return Err(Error::InvalidParam(format!(
            "only {} retained frames; frame-level cross-validation needs 3",
            retained.len()
        )));
    }
    let eligible: Vec<usize> = retained
        .into_iter()
        .filter(|&t| t >= g.h_p && t + g.h_f < field.frames())
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidParam(
            "no retained frame has enough history and future to score".into(),
        ));
    }
    let all = extract_cones(field, g)?;
    let mut out = Vec::with_capacity(eligible.len());
    for (fold, &t) in eligible.iter().enumerate() {
        let train_idx: Vec<usize> = all
            .origins()
            .iter()
            .enumerate()
            .filter(|(_, o)| o.t != t)
            .map(|(i, _)| i)
            .collect();
        let train = all.select(&train_idx);
        let fitted = fit_on(
            &train,
            method,
            cfg.budget,
            derive_seed(cfg.seed, 1000 + fold as u64),
        )?;
        out.push(score_fold(
            &fitted,
            method,
            field,
            &[t],
            cfg,
            fold,
            derive_seed(cfg.seed, 5000 + fold as u64),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::SpatialNorm;
    use crate::synth::{gen_k_regime, gen_linear_diffusion};
    use rand_distr::StandardNormal;

    fn cheb_geometry() -> ConeGeometry {
        ConeGeometry::new(1, 0, 1, SpatialNorm::Chebyshev).unwrap()
    }

    fn smooth_beta() -> Vec<f64> {
        vec![0.05, 0.1, 0.05, 0.1, 0.3, 0.1, 0.05, 0.1, 0.05]
    }

    #[test]
    fn mse_and_pearson_hand_values() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let rev = [4.0, 3.0, 2.0, 1.0];
        assert!((pearson(&a, &rev).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &a[..3]),
            Err(Error::Undefined(_))
        ));
        assert!(mse(&a, &a[..3]).is_err());
    }

    #[test]
    fn err_pct_uses_pooled_range() {
        let out = err_pct(&[0.0, 10.0], &[5.0, 10.0]).unwrap();
        assert_eq!(out, vec![0.5, 0.0]);
        // Prediction widens the pooled range to [0, 3].
        let out = err_pct(&[0.0, 1.0], &[3.0, 1.0]).unwrap();
        assert_eq!(out, vec![1.0, 0.0]);
        let out = err_pct(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn err_pct_stays_in_unit_interval() {
        let mut rng = rng_from(11);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let truth: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let out = err_pct(&truth, &pred).unwrap();
            assert!(out.iter().all(|e| (0.0..=1.0).contains(e)));
        }
    }

    #[test]
    fn fmt_sig6_covers_scales() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(1.593), "1.59300");
        assert_eq!(fmt_sig6(-996.5784284662087), "-996.578");
        assert_eq!(fmt_sig6(123456.7), "123457");
        assert_eq!(fmt_sig6(0.000241971), "0.000241971");
        assert_eq!(fmt_sig6(1e-5), "1.00000e-5");
        assert_eq!(fmt_sig6(3.2e20), "3.20000e20");
    }

    #[test]
    fn bootstrap_ci_matches_normal_theory() {
        let mut rng = rng_from(7);
        let sample: Vec<f64> = (0..1000)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (lo, hi) = bootstrap_ci_mean(&sample, 1000, 99).unwrap();
        let m = mean(&sample);
        assert!(lo <= m && m <= hi);
        let width = hi - lo;
        let expected = 2.0 * 1.96 / (1000.0_f64).sqrt();
        assert!(
            (width - expected).abs() < 0.3 * expected,
            "width {width} vs {expected}"
        );
    }

    #[test]
    fn bootstrap_is_deterministic_and_clamped() {
        let values = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        let a = bootstrap_ci_mean(&values, 200, 5).unwrap();
        let b = bootstrap_ci_mean(&values, 200, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.0 <= mean(&values) && mean(&values) <= a.1);

        let constant = [2.5; 10];
        assert_eq!(bootstrap_ci_mean(&constant, 100, 1).unwrap(), (2.5, 2.5));
    }

    #[test]
    fn pearson_bootstrap_contains_point() {
        let mut rng = rng_from(3);
        let a: Vec<f64> = (0..200).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|x| 0.8 * x + 0.2 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let point = pearson(&a, &b).unwrap();
        let (lo, hi) = bootstrap_ci_pearson(&a, &b, 400, 21).unwrap();
        assert!(lo <= point && point <= hi);
        assert!(lo > 0.5 && hi <= 1.0);
        assert_eq!(
            bootstrap_ci_pearson(&a, &b, 400, 21).unwrap(),
            (lo, hi)
        );
    }

    #[test]
    fn metrics_csv_golden() {
        let full = MetricsReport {
            method: "ohp".into(),
            k_max: Some(4),
            mse: 0.25,
            mse_ci: (0.2, 0.3),
            rho: Some(0.9),
            rho_ci: Some((0.85, 0.95)),
            avg_ll: Some(-1.5),
            ll_ci: Some((-1.6, -1.4)),
            perplexity: Some(2.8284271247461903),
            fold: 0,
        };
        let sparse = MetricsReport {
            method: "fltp".into(),
            k_max: None,
            mse: 1.0,
            mse_ci: (0.9, 1.1),
            rho: None,
            rho_ci: None,
            avg_ll: None,
            ll_ci: None,
            perplexity: None,
            fold: 3,
        };
        let csv = metrics_csv(&[full, sparse]);
        let expected = "method,K_max,MSE,MSE_CI_lo,MSE_CI_hi,rho,rho_CI_lo,rho_CI_hi,avg_ll,ll_CI_lo,ll_CI_hi,perplexity,fold\n\
             ohp,4,0.250000,0.200000,0.300000,0.900000,0.850000,0.950000,-1.50000,-1.60000,-1.40000,2.82843,0\n\
             fltp,,1.00000,0.900000,1.10000,,,,,,,,3\n";
        assert_eq!(csv, expected);
    }

    #[test]
    fn frame_cv_fltp_matches_successive_frame_differences() {
        let mut rng = rng_from(31);
        let values: Vec<f64> = (0..12 * 8 * 8)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let field = Field::new(12, 8, 8, values).unwrap();
        let cfg = ProtocolConfig {
            geometry: cheb_geometry(),
            budget: 100_000,
            bootstrap_resamples: 100,
            seed: 9,
        };
        let reports = loo_frame_cv(&field, 4, &MethodSpec::Fltp, &cfg).unwrap();
        // Retained frames are 3, 7, 11; all are scoreable.
        assert_eq!(reports.len(), 3);
        for (fold, (report, t)) in reports.iter().zip([3usize, 7, 11]).enumerate() {
            assert_eq!(report.fold, fold);
            assert_eq!(report.method, "fltp");
            assert_eq!(report.k_max, None);
            let mut sum = 0.0;
            let mut n = 0.0;
            for r in 1..7 {
                for c in 1..7 {
                    let d = field.get(t, r, c) - field.get(t - 1, r, c);
                    sum += d * d;
                    n += 1.0;
                }
            }
            assert!((report.mse - sum / n).abs() < 1e-15);
            assert!(report.rho.is_some());
            assert!(report.avg_ll.is_none() && report.perplexity.is_none());
        }
    }

    #[test]
    fn frame_cv_fold_count_matches_retained_frames() {
        let (field, _) = gen_linear_diffusion(50, 8, 8, &smooth_beta(), 0.1, 13).unwrap();
        let cfg = ProtocolConfig {
            geometry: cheb_geometry(),
            budget: 500,
            bootstrap_resamples: 50,
            seed: 2,
        };
        let reports = loo_frame_cv(&field, 5, &MethodSpec::Lclr, &cfg).unwrap();
        assert_eq!(reports.len(), 10);
        assert_eq!(
            reports.iter().map(|r| r.fold).collect::<Vec<_>>(),
            (0..10).collect::<Vec<_>>()
        );
    }

    #[test]
    fn fit_respects_training_budget() {
        let (field, _) = gen_linear_diffusion(10, 10, 10, &smooth_beta(), 0.1, 4).unwrap();
        let cones = extract_cones(&field, cheb_geometry()).unwrap();
        let fitted = fit_on(
            &cones,
            &MethodSpec::Ohp { k: 2 },
            150,
            77,
        )
        .unwrap();
        let Fitted::States(model) = fitted else { panic!() };
        assert_eq!(model.training_size(), 150);

        let fitted = fit_on(&cones, &MethodSpec::Knn { k: 3, weighted: false }, 150, 77).unwrap();
        let Fitted::Knn { train, .. } = fitted else { panic!() };
        assert_eq!(train.len(), 150);
    }

    #[test]
    fn frame_cv_validates_retention() {
        let (field, _) = gen_linear_diffusion(10, 6, 6, &smooth_beta(), 0.1, 1).unwrap();
        let cfg = ProtocolConfig {
            geometry: cheb_geometry(),
            budget: 1000,
            bootstrap_resamples: 50,
            seed: 1,
        };
        // skip=5 retains frames 4 and 9 only.
        assert!(matches!(
            loo_frame_cv(&field, 5, &MethodSpec::Fltp, &cfg),
            Err(Error::InvalidParam(_))
        ));
        assert!(matches!(
            loo_frame_cv(&field, 0, &MethodSpec::Fltp, &cfg),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn experiment_cv_is_deterministic_on_identical_datasets() {
        let (field, _) = gen_linear_diffusion(8, 10, 10, &smooth_beta(), 0.1, 8).unwrap();
        let datasets = vec![field.clone(), field.clone(), field];
        let cfg = ProtocolConfig {
            geometry: cheb_geometry(),
            budget: 2000,
            bootstrap_resamples: 50,
            seed: 3,
        };
        let reports = loo_experiment_cv(&datasets, &MethodSpec::Lclr, &cfg).unwrap();
        assert_eq!(reports.len(), 3);
        // Every fold trains on two copies of the same cones and scores the
        // same field, so the point metrics agree exactly.
        for r in &reports {
            assert_eq!(r.mse, reports[0].mse);
            assert_eq!(r.rho, reports[0].rho);
            assert_eq!(r.method, "lclr");
        }
    }

    #[test]
    fn experiment_cv_recovers_noise_floor() {
        let noise = 0.1;
        let datasets: Vec<Field> = (0..3)
            .map(|s| {
                gen_linear_diffusion(10, 12, 12, &smooth_beta(), noise, 100 + s)
                    .unwrap()
                    .0
            })
            .collect();
        let cfg = ProtocolConfig {
            geometry: cheb_geometry(),
            budget: 50_000,
            bootstrap_resamples: 100,
            seed: 5,
        };
        let reports = loo_experiment_cv(&datasets, &MethodSpec::Lclr, &cfg).unwrap();
        for r in &reports {
            assert!(
                (r.mse - noise * noise).abs() < 0.3 * noise * noise,
                "mse {} vs {}",
                r.mse,
                noise * noise
            );
            assert!(r.mse_ci.0 <= r.mse && r.mse <= r.mse_ci.1);
            assert!(r.rho.unwrap() > 0.0);
        }
    }

    #[test]
    fn experiment_cv_needs_two_datasets() {
        let (field, _) = gen_linear_diffusion(6, 8, 8, &smooth_beta(), 0.1, 2).unwrap();
        let cfg = ProtocolConfig {
            geometry: cheb_geometry(),
            budget: 1000,
            bootstrap_resamples: 50,
            seed: 1,
        };
        assert!(matches!(
            loo_experiment_cv(&[field], &MethodSpec::Lclr, &cfg),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn state_methods_report_likelihood_columns() {
        let (field, _) = gen_k_regime(16, 9, 10, &[0.0, 8.0], 0.3, 0.4, 6).unwrap();
        let cfg = ProtocolConfig {
            geometry: cheb_geometry(),
            budget: 2000,
            bootstrap_resamples: 50,
            seed: 12,
        };
        let reports = loo_frame_cv(&field, 4, &MethodSpec::Ohp { k: 2 }, &cfg).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert_eq!(r.method, "ohp");
            assert_eq!(r.k_max, Some(2));
            let avg = r.avg_ll.unwrap();
            let (lo, hi) = r.ll_ci.unwrap();
            assert!(lo <= avg && avg <= hi);
            assert!((r.perplexity.unwrap() - (-avg).exp2()).abs() < 1e-12);
        }
    }
}
