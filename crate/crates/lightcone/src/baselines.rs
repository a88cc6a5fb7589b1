//! Reference predictors: light-cone linear regression, k-nearest-neighbor
//! cone matching, and previous-frame persistence.

use crate::error::{Error, Result};
use crate::field::{ConeGeometry, ConeSet, Field, ScalingParams};
use crate::predict::{fill_interior, PredictedFrame};

const PIVOT_TOLERANCE: f64 = 1e-12;
const RIDGE_LAMBDA: f64 = 1e-8;

/// Linear map from past cone to the scalar target, with the training-time
/// scaling kept for raw-unit use. Coefficients live in fit space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConeModel {
    beta: Vec<f64>,
    intercept: f64,
    geometry: ConeGeometry,
    scaling: ScalingParams,
}

impl LinearConeModel {
    pub fn new(
        beta: Vec<f64>,
        intercept: f64,
        geometry: ConeGeometry,
        scaling: ScalingParams,
    ) -> Result<Self> {
        if beta.len() != geometry.d_p() {
            return Err(Error::DimMismatch {
                expected: geometry.d_p(),
                got: beta.len(),
            });
        }
        if beta.iter().any(|v| !v.is_finite()) || !intercept.is_finite() {
            return Err(Error::NonFinite("linear model coefficients".into()));
        }
        Ok(LinearConeModel {
            beta,
            intercept,
            geometry,
            scaling,
        })
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn geometry(&self) -> ConeGeometry {
        self.geometry
    }

    pub fn scaling(&self) -> ScalingParams {
        self.scaling
    }
}

/// Cholesky factorization with a relative pivot tolerance; solves
/// `G x = rhs` in place. `None` signals a (near-)singular matrix.
fn cholesky_solve(g: &mut [f64], rhs: &[f64], k: usize) -> Option<Vec<f64>> {
    let max_diag = (0..k).map(|i| g[i * k + i]).fold(0.0f64, f64::max);
    for i in 0..k {
        for j in 0..=i {
            let mut sum = g[i * k + j];
            for p in 0..j {
                sum -= g[i * k + p] * g[j * k + p];
            }
            if i == j {
                if sum <= PIVOT_TOLERANCE * max_diag {
                    return None;
                }
                g[i * k + i] = sum.sqrt();
            } else {
                g[i * k + j] = sum / g[j * k + j];
            }
        }
    }
    // Forward then back substitution on the lower factor.
    let mut y = rhs.to_vec();
    for i in 0..k {
        for p in 0..i {
            let tmp = y[p];
            y[i] -= g[i * k + p] * tmp;
        }
        y[i] /= g[i * k + i];
    }
    for i in (0..k).rev() {
        for p in i + 1..k {
            let tmp = y[p];
            y[i] -= g[p * k + i] * tmp;
        }
        y[i] /= g[i * k + i];
    }
    Some(y)
}

/// Ordinary least squares of the scalar future target on the past cone via
/// centered normal equations. Constant predictor columns are excluded (their
/// coefficients are zero); a singular centered Gram matrix is retried with a
/// small ridge on the diagonal, the intercept unpenalized either way.
/// Requires a scalar future cone and `N > d_p + 1` cones.
pub fn fit_lclr(cones: &ConeSet, scaling: ScalingParams) -> Result<LinearConeModel> {
    let geometry = cones.geometry();
    if geometry.d_f() != 1 {
        return Err(Error::Unsupported(
            "linear cone regression needs a scalar future cone".into(),
        ));
    }
    let n = cones.len();
    let d = geometry.d_p();
    if n <= d + 1 {
        return Err(Error::InvalidParam(format!(
            "linear fit needs more than {} cones, got {n}",
            d + 1
        )));
    }

    let x = cones.plcs();
    let y: Vec<f64> = (0..n).map(|i| cones.flcs().get(i, 0)).collect();

    let x_means = x.column_means();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    // Constant columns carry no signal and are excluded exactly.
    let active: Vec<usize> = (0..d)
        .filter(|&a| {
            let first = x.get(0, a);
            (1..n).any(|i| x.get(i, a) != first)
        })
        .collect();
    let y_constant = y.iter().all(|&v| v == y[0]);

    let mut beta = vec![0.0; d];
    if !active.is_empty() && !y_constant {
        let k = active.len();
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for i in 0..n {
            let row = x.row(i);
            let dy = y[i] - y_mean;
            for (ai, &a) in active.iter().enumerate() {
                let da = row[a] - x_means[a];
                rhs[ai] += da * dy;
                for (bi, &b) in active.iter().enumerate().take(ai + 1) {
                    gram[ai * k + bi] += da * (row[b] - x_means[b]);
                }
            }
        }
        for ai in 0..k {
            for bi in ai + 1..k {
                gram[ai * k + bi] = gram[bi * k + ai];
            }
        }

        let solved = cholesky_solve(&mut gram.clone(), &rhs, k).or_else(|| {
            let mut ridged = gram;
            for i in 0..k {
                ridged[i * k + i] += RIDGE_LAMBDA;
            }
            cholesky_solve(&mut ridged, &rhs, k)
        });
        let coef = solved.ok_or(Error::SingularDesign)?;
        for (ai, &a) in active.iter().enumerate() {
            beta[a] = coef[ai];
        }
    }

    let intercept = y_mean - beta.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    LinearConeModel::new(beta, intercept, geometry, scaling)
}

/// Linear prediction for a past cone in fit space.
pub fn predict_lclr(model: &LinearConeModel, plc: &[f64]) -> Result<f64> {
    if plc.len() != model.beta.len() {
        return Err(Error::DimMismatch {
            expected: model.beta.len(),
            got: plc.len(),
        });
    }
    Ok(model.intercept + model.beta.iter().zip(plc).map(|(b, x)| b * x).sum::<f64>())
}

/// Linear prediction for a raw-unit past cone, returned in raw units.
pub fn predict_lclr_raw(model: &LinearConeModel, plc_raw: &[f64]) -> Result<f64> {
    let plc = model.scaling.apply_slice(plc_raw);
    Ok(model.scaling.invert(predict_lclr(model, &plc)?))
}

/// Forecasts frame `t` of `field` with the linear model over the
/// `c * h_p` interior.
pub fn lclr_predict_frame(
    model: &LinearConeModel,
    field: &Field,
    t: usize,
) -> Result<PredictedFrame> {
    let g = model.geometry();
    if t < g.h_p || t >= field.frames() {
        return Err(Error::InvalidParam(format!(
            "frame {t} lacks {} frames of history",
            g.h_p
        )));
    }
    let offsets = g.plc_offsets();
    fill_interior(field.height(), field.width(), g.plc_margin(), |row, col| {
        let plc: Vec<f64> = offsets
            .iter()
            .map(|off| {
                field.get(
                    (t as isize + off.dt) as usize,
                    (row as isize + off.dr) as usize,
                    (col as isize + off.dc) as usize,
                )
            })
            .collect();
        predict_lclr_raw(model, &plc)
    })
}

fn knn_neighbors(train: &ConeSet, plc: &[f64], k: usize) -> Result<Vec<(f64, usize)>> {
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if k > train.len() {
        return Err(Error::InvalidParam(format!(
            "k = {k} exceeds {} training cones",
            train.len()
        )));
    }
    if plc.len() != train.plcs().cols() {
        return Err(Error::DimMismatch {
            expected: train.plcs().cols(),
            got: plc.len(),
        });
    }
    let mut dist: Vec<(f64, usize)> = (0..train.len())
        .map(|i| (crate::matrix::sq_dist(train.plcs().row(i), plc), i))
        .collect();
    dist.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dist.truncate(k);
    Ok(dist)
}

/// Mean future target of the `k` nearest training past cones (squared
/// Euclidean distance, ties broken by cone index). Works in the units of the
/// training set.
pub fn knn_predict(train: &ConeSet, plc: &[f64], k: usize) -> Result<f64> {
    let neighbors = knn_neighbors(train, plc, k)?;
    let target = train.geometry().flc_target_index();
    let sum: f64 = neighbors
        .iter()
        .map(|&(_, i)| train.flcs().get(i, target))
        .sum();
    Ok(sum / k as f64)
}

/// [`knn_predict`] with inverse-distance weights `1 / max(d, 1e-12)`.
pub fn knn_predict_weighted(train: &ConeSet, plc: &[f64], k: usize) -> Result<f64> {
    let neighbors = knn_neighbors(train, plc, k)?;
    let target = train.geometry().flc_target_index();
    let mut num = 0.0;
    let mut den = 0.0;
    for &(d2, i) in &neighbors {
        let w = 1.0 / d2.sqrt().max(1e-12);
        num += w * train.flcs().get(i, target);
        den += w;
    }
    Ok(num / den)
}

/// Forecasts frame `t` by nearest-neighbor matching against a training cone
/// set given in standardized units, over the same interior as the other
/// methods.
pub fn knn_predict_frame(
    train: &ConeSet,
    scaling: ScalingParams,
    field: &Field,
    t: usize,
    k: usize,
    weighted: bool,
) -> Result<PredictedFrame> {
    let g = train.geometry();
    if t < g.h_p || t >= field.frames() {
        return Err(Error::InvalidParam(format!(
            "frame {t} lacks {} frames of history",
            g.h_p
        )));
    }
    let offsets = g.plc_offsets();
    fill_interior(field.height(), field.width(), g.plc_margin(), |row, col| {
        let plc: Vec<f64> = offsets
            .iter()
            .map(|off| {
                scaling.apply(field.get(
                    (t as isize + off.dt) as usize,
                    (row as isize + off.dr) as usize,
                    (col as isize + off.dc) as usize,
                ))
            })
            .collect();
        let pred = if weighted {
            knn_predict_weighted(train, &plc, k)?
        } else {
            knn_predict(train, &plc, k)?
        };
        Ok(scaling.invert(pred))
    })
}

/// Frozen-field persistence: the previous frame's value at the same site.
pub fn fltp_predict(field: &Field, t: usize, row: usize, col: usize) -> Result<f64> {
    if t == 0 || t >= field.frames() {
        return Err(Error::InvalidParam(
            "persistence needs a previous frame".into(),
        ));
    }
    if row >= field.height() || col >= field.width() {
        return Err(Error::InvalidParam("pixel out of bounds".into()));
    }
    Ok(field.get(t - 1, row, col))
}

/// Persistence forecast over the interior left by `margin`, matching the
/// support of the cone-based methods for pooled comparisons.
pub fn fltp_predict_frame(field: &Field, t: usize, margin: usize) -> Result<PredictedFrame> {
    if t == 0 || t >= field.frames() {
        return Err(Error::InvalidParam(
            "persistence needs a previous frame".into(),
        ));
    }
    fill_interior(field.height(), field.width(), margin, |row, col| {
        Ok(field.get(t - 1, row, col))
    })
}
