//! Forecasting and likelihood scoring with a fitted state model.
//!
//! Point predictions are posterior-weighted averages of state mean futures;
//! predictive densities are the matching mixtures of state future-cone KDEs.
//! Raw-unit variants standardize inputs with the model's training scaling and
//! de-standardize outputs, applying the change-of-variables factor
//! `scale^(-d_f)` to densities.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::states::{map_plc_to_states, StateModel};

/// Densities are clamped to this floor before taking logs, bounding a single
/// pixel's contribution to a likelihood sum.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// A per-pixel forecast for one frame. `values` has `height * width` entries;
/// pixels outside the predictable interior are masked and hold `-0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFrame {
    pub height: usize,
    pub width: usize,
    pub margin: usize,
    pub values: Vec<f64>,
    pub mask: Vec<bool>,
}

impl PredictedFrame {
    fn new_masked(height: usize, width: usize, margin: usize) -> Self {
        PredictedFrame {
            height,
            width,
            margin,
            values: vec![-0.0; height * width],
            mask: vec![false; height * width],
        }
    }

    /// Predicted value at `(row, col)`, or `None` outside the interior.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let i = row * self.width + col;
        self.mask.get(i).copied().unwrap_or(false).then(|| self.values[i])
    }

    pub fn predicted_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Builds a frame by evaluating `f(row, col)` over the interior left by
/// `margin`, in parallel across rows with a deterministic layout.
pub(crate) fn fill_interior<F>(
    height: usize,
    width: usize,
    margin: usize,
    f: F,
) -> Result<PredictedFrame>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    if height <= 2 * margin || width <= 2 * margin {
        return Err(Error::NoInteriorCones);
    }
    let rows: Vec<Vec<f64>> = (margin..height - margin)
        .into_par_iter()
        .map(|row| {
            (margin..width - margin)
                .map(|col| f(row, col))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut frame = PredictedFrame::new_masked(height, width, margin);
    for (r, vals) in rows.into_iter().enumerate() {
        let row = margin + r;
        for (c, v) in vals.into_iter().enumerate() {
            let col = margin + c;
            frame.values[row * width + col] = v;
            frame.mask[row * width + col] = true;
        }
    }
    Ok(frame)
}

/// Reads the past cone at `(t, row, col)` into `out`, standardized with the
/// model scaling. Bounds must be guaranteed by the caller's margins.
fn read_plc(
    field: &Field,
    offsets: &[crate::field::ConeOffset],
    scaling: crate::field::ScalingParams,
    t: usize,
    row: usize,
    col: usize,
    out: &mut [f64],
) {
    for (k, off) in offsets.iter().enumerate() {
        out[k] = scaling.apply(field.get(
            (t as isize + off.dt) as usize,
            (row as isize + off.dr) as usize,
            (col as isize + off.dc) as usize,
        ));
    }
}

/// Mixture predictive density at `x` given a past cone, both in the model's
/// standardized units: `sum_j w_j * f_j(x)` with posterior weights `w`.
pub fn predictive_density(model: &StateModel, plc: &[f64], x: &[f64]) -> Result<f64> {
    if x.len() != model.geometry().d_f() {
        return Err(Error::DimMismatch {
            expected: model.geometry().d_f(),
            got: x.len(),
        });
    }
    let weights = map_plc_to_states(model, plc)?;
    let mut acc = 0.0;
    for (w, s) in weights.iter().zip(model.states()) {
        acc += w * s.flc_kde.density(x)?;
    }
    Ok(acc)
}

/// [`predictive_density`] over raw field units: inputs are standardized with
/// the model scaling and the density is scaled by `scale^(-d_f)`.
pub fn predictive_density_raw(model: &StateModel, plc_raw: &[f64], x_raw: &[f64]) -> Result<f64> {
    let s = model.scaling();
    let plc = s.apply_slice(plc_raw);
    let x = s.apply_slice(x_raw);
    let d_f = model.geometry().d_f() as i32;
    Ok(predictive_density(model, &plc, &x)? / s.scale.powi(d_f))
}

/// Point forecast for a standardized past cone: the posterior-weighted
/// average of state mean futures, returned in raw field units.
pub fn point_predict(model: &StateModel, plc: &[f64]) -> Result<Vec<f64>> {
    let weights = map_plc_to_states(model, plc)?;
    let d_f = model.geometry().d_f();
    let mut acc = vec![0.0; d_f];
    for (w, s) in weights.iter().zip(model.states()) {
        for (a, m) in acc.iter_mut().zip(&s.mean_flc) {
            *a += w * m;
        }
    }
    Ok(model.scaling().invert_slice(&acc))
}

/// [`point_predict`] for a past cone given in raw field units.
pub fn point_predict_raw(model: &StateModel, plc_raw: &[f64]) -> Result<Vec<f64>> {
    point_predict(model, &model.scaling().apply_slice(plc_raw))
}

/// Forecasts frame `t` of `field` pixel by pixel from past cones alone.
/// Only the past horizon constrains eligibility: `t >= h_p`, and the spatial
/// margin is `c * h_p` on every side.
pub fn predict_frame(model: &StateModel, field: &Field, t: usize) -> Result<PredictedFrame> {
    let g = model.geometry();
    if t < g.h_p || t >= field.frames() {
        return Err(Error::InvalidParam(format!(
            "frame {t} lacks {} frames of history (field has {})",
            g.h_p,
            field.frames()
        )));
    }
    let margin = g.plc_margin();
    let offsets = g.plc_offsets();
    let scaling = model.scaling();
    let target = g.flc_target_index();
    fill_interior(field.height(), field.width(), margin, |row, col| {
        let mut plc = vec![0.0; offsets.len()];
        read_plc(field, &offsets, scaling, t, row, col, &mut plc);
        Ok(point_predict(model, &plc)?[target])
    })
}

/// Per-pixel base-2 log predictive likelihoods and their pooled summary.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodReport {
    /// One entry per scored pixel, in `(t, row, col)` order.
    pub log_likelihoods: Vec<f64>,
    pub avg_log_likelihood: f64,
    /// `2^(-avg_log_likelihood)`.
    pub perplexity: f64,
    /// How many pixels hit the density floor.
    pub floored: usize,
}

fn summarize(log_likelihoods: Vec<f64>, floored: usize) -> LikelihoodReport {
    let avg = log_likelihoods.iter().sum::<f64>() / log_likelihoods.len() as f64;
    LikelihoodReport {
        avg_log_likelihood: avg,
        perplexity: (-avg).exp2(),
        floored,
        log_likelihoods,
    }
}

fn frame_lls(
    model: &StateModel,
    field: &Field,
    t: usize,
    floor: f64,
) -> Result<(Vec<f64>, usize)> {
    let g = model.geometry();
    if t < g.h_p || t + g.h_f >= field.frames() {
        return Err(Error::InvalidParam(format!(
            "frame {t} lacks {} past / {} future frames for scoring",
            g.h_p, g.h_f
        )));
    }
    let margin = g.spatial_margin();
    if field.height() <= 2 * margin || field.width() <= 2 * margin {
        return Err(Error::NoInteriorCones);
    }
    let plc_off = g.plc_offsets();
    let flc_off = g.flc_offsets();
    let scaling = model.scaling();
    let d_f = g.d_f() as i32;

    let per_row: Vec<Vec<(f64, bool)>> = (margin..field.height() - margin)
        .into_par_iter()
        .map(|row| {
            let mut plc = vec![0.0; plc_off.len()];
            let mut flc = vec![0.0; flc_off.len()];
            (margin..field.width() - margin)
                .map(|col| {
                    read_plc(field, &plc_off, scaling, t, row, col, &mut plc);
                    read_plc(field, &flc_off, scaling, t, row, col, &mut flc);
                    let std_density = predictive_density(model, &plc, &flc)?;
                    let raw_density = std_density / scaling.scale.powi(d_f);
                    let clamped = raw_density.max(floor);
                    Ok((clamped.log2(), raw_density < floor))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut lls = Vec::new();
    let mut floored = 0;
    for row in per_row {
        for (ll, hit) in row {
            lls.push(ll);
            floored += usize::from(hit);
        }
    }
    Ok((lls, floored))
}

/// Scores the observed future cones of frame `t` under the model's
/// predictive density, in raw field units and bits.
pub fn frame_log_likelihood(model: &StateModel, field: &Field, t: usize) -> Result<LikelihoodReport> {
    let (lls, floored) = frame_lls(model, field, t, LIKELIHOOD_FLOOR)?;
    Ok(summarize(lls, floored))
}

/// Pools [`frame_log_likelihood`] over every scoreable frame of the field.
pub fn field_log_likelihood(model: &StateModel, field: &Field) -> Result<LikelihoodReport> {
    field_log_likelihood_with_floor(model, field, LIKELIHOOD_FLOOR)
}

/// [`field_log_likelihood`] with an explicit density floor.
pub fn field_log_likelihood_with_floor(
    model: &StateModel,
    field: &Field,
    floor: f64,
) -> Result<LikelihoodReport> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParam("density floor must be positive".into()));
    }
    let g = model.geometry();
    if field.frames() < g.h_p + g.h_f + 1 {
        return Err(Error::NoInteriorCones);
    }
    let mut lls = Vec::new();
    let mut floored = 0;
    for t in g.h_p..field.frames() - g.h_f {
        let (mut frame, hits) = frame_lls(model, field, t, floor)?;
        lls.append(&mut frame);
        floored += hits;
    }
    Ok(summarize(lls, floored))
}
