//! Synthetic field generators with known ground truth: a linear diffusion
//! whose cone regression coefficients are exact, a striped multi-regime
//! process with per-pixel labels, and a moving Gaussian blob.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{ConeGeometry, ConeOrigin, Field, SpatialNorm};
use crate::rng::rng_from;

/// Which generator to run.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthKind {
    /// Next value is a fixed linear map of the 3x3 patch one step back,
    /// plus white noise. `beta` is ordered like the predictor template of
    /// the (h_p=1, h_f=0, c=1, Chebyshev) geometry: row-major over the
    /// previous frame's 3x3 neighborhood.
    LinearDiffusion { beta: Vec<f64> },
    /// Vertical stripes, one mean-reverting AR process per stripe.
    KRegime { means: Vec<f64>, reversion: f64 },
    /// Gaussian bump translating at constant velocity on a torus.
    MovingBlob {
        velocity: (f64, f64),
        radius: f64,
        amplitude: f64,
    },
}

/// Full description of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Generated field plus whatever ground truth the generator defines.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub field: Field,
    /// Per-pixel regime labels (row-major), for `KRegime`.
    pub labels: Option<Vec<usize>>,
    /// True predictor coefficients, for `LinearDiffusion`.
    pub coefficients: Option<Vec<f64>>,
}

/// Runs the generator described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    match &spec.kind {
        SynthKind::LinearDiffusion { beta } => {
            let (field, coefficients) = gen_linear_diffusion(
                spec.frames,
                spec.height,
                spec.width,
                beta,
                spec.noise,
                spec.seed,
            )?;
            Ok(SynthOutput {
                field,
                labels: None,
                coefficients: Some(coefficients),
            })
        }
        SynthKind::KRegime { means, reversion } => {
            let (field, labels) = gen_k_regime(
                spec.frames,
                spec.height,
                spec.width,
                means,
                *reversion,
                spec.noise,
                spec.seed,
            )?;
            Ok(SynthOutput {
                field,
                labels: Some(labels),
                coefficients: None,
            })
        }
        SynthKind::MovingBlob {
            velocity,
            radius,
            amplitude,
        } => {
            let field = gen_moving_blob(
                spec.frames,
                spec.height,
                spec.width,
                *velocity,
                *radius,
                *amplitude,
                spec.noise,
                spec.seed,
            )?;
            Ok(SynthOutput {
                field,
                labels: None,
                coefficients: None,
            })
        }
    }
}

fn check_frame_dims(frames: usize, height: usize, width: usize) -> Result<()> {
    if frames < 2 || height == 0 || width == 0 {
        return Err(Error::InvalidParam(
            "synthetic fields need at least 2 frames and nonzero extent".into(),
        ));
    }
    Ok(())
}

fn check_noise(noise: f64) -> Result<()> {
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::InvalidParam(
            "noise must be finite and non-negative".into(),
        ));
    }
    Ok(())
}

/// Generates `X(t+1, r, c) = sum_k beta_k X(t, patch_k) + noise * eta` on a
/// torus, starting from standard normal pixels. Returns the field and the
/// true coefficients in predictor-template order. Requires `sum |beta| < 1`
/// so the dynamics stay bounded.
pub fn gen_linear_diffusion(
    frames: usize,
    height: usize,
    width: usize,
    beta: &[f64],
    noise: f64,
    seed: u64,
) -> Result<(Field, Vec<f64>)> {
    check_frame_dims(frames, height, width)?;
    check_noise(noise)?;
    let geometry = ConeGeometry::new(1, 0, 1, SpatialNorm::Chebyshev)?;
    let offsets = geometry.plc_offsets();
    if beta.len() != offsets.len() {
        return Err(Error::DimMismatch {
            expected: offsets.len(),
            got: beta.len(),
        });
    }
    let gain: f64 = beta.iter().map(|b| b.abs()).sum();
    if !gain.is_finite() || gain >= 1.0 {
        return Err(Error::InvalidParam(
            "diffusion coefficients must satisfy sum |beta| < 1".into(),
        ));
    }

    let mut rng = rng_from(seed);
    let pixels = height * width;
    let mut values = vec![0.0; frames * pixels];
    for v in values[..pixels].iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    for t in 1..frames {
        let (past, rest) = values.split_at_mut(t * pixels);
        let prev = &past[(t - 1) * pixels..];
        let cur = &mut rest[..pixels];
        for r in 0..height {
            for c in 0..width {
                let mut acc = 0.0;
                for (b, o) in beta.iter().zip(&offsets) {
                    let rr = (r as isize + o.dr).rem_euclid(height as isize) as usize;
                    let cc = (c as isize + o.dc).rem_euclid(width as isize) as usize;
                    acc += b * prev[rr * width + cc];
                }
                if noise > 0.0 {
                    acc += noise * rng.sample::<f64, _>(StandardNormal);
                }
                cur[r * width + c] = acc;
            }
        }
    }
    Ok((Field::new(frames, height, width, values)?, beta.to_vec()))
}

/// Generates vertical stripes of mean-reverting dynamics: stripe `k` relaxes
/// toward `means[k]` at rate `reversion` from the local 3x3 patch average
/// (edges clamped), plus white noise. Returns the field and per-pixel stripe
/// labels. With noise and more than one regime, means must be at least six
/// noise standard deviations apart so regimes stay distinguishable.
pub fn gen_k_regime(
    frames: usize,
    height: usize,
    width: usize,
    means: &[f64],
    reversion: f64,
    noise: f64,
    seed: u64,
) -> Result<(Field, Vec<usize>)> {
    check_frame_dims(frames, height, width)?;
    check_noise(noise)?;
    let k = means.len();
    if k == 0 {
        return Err(Error::EmptyInput("regime means".into()));
    }
    if width < k {
        return Err(Error::InvalidParam(
            "width must be at least the number of regimes".into(),
        ));
    }
    if !reversion.is_finite() || !(0.0..1.0).contains(&reversion) {
        return Err(Error::InvalidParam(
            "reversion must lie in [0, 1)".into(),
        ));
    }
    if means.iter().any(|m| !m.is_finite()) {
        return Err(Error::NonFinite("regime means".into()));
    }
    if k >= 2 && noise > 0.0 {
        let mut min_gap = f64::INFINITY;
        for i in 0..k {
            for j in i + 1..k {
                min_gap = min_gap.min((means[i] - means[j]).abs());
            }
        }
        if min_gap < 6.0 * noise {
            return Err(Error::InvalidParam(
                "regime means closer than six noise standard deviations".into(),
            ));
        }
    }

    let labels: Vec<usize> = (0..height * width).map(|i| (i % width) * k / width).collect();
    let mut rng = rng_from(seed);
    let pixels = height * width;
    let mut values = vec![0.0; frames * pixels];
    for (v, &lab) in values[..pixels].iter_mut().zip(&labels) {
        *v = means[lab] + noise * rng.sample::<f64, _>(StandardNormal);
    }
    for t in 1..frames {
        let (past, rest) = values.split_at_mut(t * pixels);
        let prev = &past[(t - 1) * pixels..];
        let cur = &mut rest[..pixels];
        for r in 0..height {
            for c in 0..width {
                let mut sum = 0.0;
                let mut n = 0.0;
                for dr in -1..=1_isize {
                    for dc in -1..=1_isize {
                        let rr = (r as isize + dr).clamp(0, height as isize - 1) as usize;
                        let cc = (c as isize + dc).clamp(0, width as isize - 1) as usize;
                        sum += prev[rr * width + cc];
                        n += 1.0;
                    }
                }
                let mu = means[labels[r * width + c]];
                let mut x = mu + reversion * (sum / n - mu);
                if noise > 0.0 {
                    x += noise * rng.sample::<f64, _>(StandardNormal);
                }
                cur[r * width + c] = x;
            }
        }
    }
    Ok((Field::new(frames, height, width, values)?, labels))
}

/// Generates a Gaussian bump of the given radius and peak amplitude moving
/// at constant velocity on a torus, with optional additive noise; values are
/// clamped to [0, 1].
#[allow(clippy::too_many_arguments)]
pub fn gen_moving_blob(
    frames: usize,
    height: usize,
    width: usize,
    velocity: (f64, f64),
    radius: f64,
    amplitude: f64,
    noise: f64,
    seed: u64,
) -> Result<Field> {
    check_frame_dims(frames, height, width)?;
    check_noise(noise)?;
    if !radius.is_finite() || radius <= 0.0 {
        return Err(Error::InvalidParam("blob radius must be positive".into()));
    }
    if !amplitude.is_finite() || amplitude <= 0.0 || amplitude > 1.0 {
        return Err(Error::InvalidParam(
            "blob amplitude must lie in (0, 1]".into(),
        ));
    }
    if !velocity.0.is_finite() || !velocity.1.is_finite() {
        return Err(Error::NonFinite("blob velocity".into()));
    }

    let mut rng = rng_from(seed);
    let pixels = height * width;
    let mut values = vec![0.0; frames * pixels];
    let start = (height as f64 / 2.0, width as f64 / 2.0);
    for t in 0..frames {
        let center_r = (start.0 + velocity.0 * t as f64).rem_euclid(height as f64);
        let center_c = (start.1 + velocity.1 * t as f64).rem_euclid(width as f64);
        let frame = &mut values[t * pixels..(t + 1) * pixels];
        for r in 0..height {
            for c in 0..width {
                let dr = torus_dist(r as f64, center_r, height as f64);
                let dc = torus_dist(c as f64, center_c, width as f64);
                let mut x =
                    amplitude * (-(dr * dr + dc * dc) / (2.0 * radius * radius)).exp();
                if noise > 0.0 {
                    x += noise * rng.sample::<f64, _>(StandardNormal);
                }
                frame[r * width + c] = x.clamp(0.0, 1.0);
            }
        }
    }
    Field::new(frames, height, width, values)
}

fn torus_dist(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).abs() % period;
    d.min(period - d)
}

/// For each cone origin, the regime label of its full spatial patch if every
/// pixel within `margin` of the origin shares one label, else `None`.
pub fn pure_cone_labels(
    labels: &[usize],
    height: usize,
    width: usize,
    origins: &[ConeOrigin],
    margin: usize,
) -> Result<Vec<Option<usize>>> {
    if labels.len() != height * width {
        return Err(Error::DimMismatch {
            expected: height * width,
            got: labels.len(),
        });
    }
    let m = margin as isize;
    origins
        .iter()
        .map(|o| {
            let r = o.row as isize;
            let c = o.col as isize;
            if r - m < 0
                || c - m < 0
                || r + m >= height as isize
                || c + m >= width as isize
            {
                return Err(Error::InvalidParam(
                    "cone origin too close to the frame edge for this margin".into(),
                ));
            }
            let lab = labels[o.row * width + o.col];
            for dr in -m..=m {
                for dc in -m..=m {
                    let idx = (r + dr) as usize * width + (c + dc) as usize;
                    if labels[idx] != lab {
                        return Ok(None);
                    }
                }
            }
            Ok(Some(lab))
        })
        .collect()
}

/// Fraction of labeled samples whose cluster's majority label matches their
/// own: samples are `(cluster, label)` pairs, and each cluster votes for its
/// most common label.
pub fn majority_purity(pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("purity pairs".into()));
    }
    let n_clusters = pairs.iter().map(|p| p.0).max().unwrap() + 1;
    let n_labels = pairs.iter().map(|p| p.1).max().unwrap() + 1;
    let mut counts = vec![0usize; n_clusters * n_labels];
    for &(cl, lab) in pairs {
        counts[cl * n_labels + lab] += 1;
    }
    let agree: usize = (0..n_clusters)
        .map(|cl| {
            (0..n_labels)
                .map(|lab| counts[cl * n_labels + lab])
                .max()
                .unwrap_or(0)
        })
        .sum();
    Ok(agree as f64 / pairs.len() as f64)
}
