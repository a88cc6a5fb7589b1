//! Predictive state reconstruction from cone sets.
//!
//! Two fitting routes produce the same model shape. The density route
//! ([`fit_moonshine`]) clusters past cones by density, summarizes each
//! cluster's future-cone distribution by a log-density signature at shared
//! evaluation points, and merges clusters whose signatures agree until at
//! most `k_max` states remain. The centroid route ([`fit_ohp`]) partitions
//! future cones directly into exactly `k` states. Each state carries KDEs
//! over its members' past and future cones; [`map_plc_to_states`] turns a
//! past cone into posterior state weights.

use crate::cluster::{self, DBSCAN_MIN_PTS, DBSCAN_TARGET_COVERAGE};
use crate::error::{Error, Result};
use crate::field::{ConeGeometry, ConeSet, ScalingParams};
use crate::kde::{fit_kde, Kde, DEFAULT_SUPPORT_CAP};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from, sample_indices};
use rand::Rng;

pub const DEFAULT_K_SIG: usize = 10;
pub const DEFAULT_K_MAX: usize = 10;
/// Densities are clamped to this floor before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

const STREAM_DBSCAN: u64 = 1;
const STREAM_EVAL_POINTS: u64 = 2;
const STREAM_MERGE: u64 = 3;
const STREAM_CLUSTER_FLC: u64 = 1 << 32;
const STREAM_STATE_PLC: u64 = 2 << 32;
const STREAM_STATE_FLC: u64 = 3 << 32;

/// Which fitting route produced a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateMethod {
    Moonshine,
    Ohp,
}

impl StateMethod {
    pub fn name(&self) -> &'static str {
        match self {
            StateMethod::Moonshine => "moonshine",
            StateMethod::Ohp => "ohp",
        }
    }
}

/// One predictive state: a group of training cones summarized by KDEs over
/// its past and future cones and by its mean future cone.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveState {
    pub id: usize,
    /// Member count at fit time; kept through serialization.
    pub count: usize,
    /// Training cone indices; empty on a deserialized model.
    pub member_indices: Vec<usize>,
    pub mean_flc: Vec<f64>,
    pub plc_kde: Kde,
    pub flc_kde: Kde,
}

/// A fitted set of predictive states plus everything needed to apply them to
/// raw fields: geometry, the training-time scaling, and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct StateModel {
    method: StateMethod,
    geometry: ConeGeometry,
    scaling: ScalingParams,
    states: Vec<PredictiveState>,
    training_size: usize,
    seed: u64,
}

impl StateModel {
    pub fn new(
        method: StateMethod,
        geometry: ConeGeometry,
        scaling: ScalingParams,
        states: Vec<PredictiveState>,
        training_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::EmptyInput("model with no states".into()));
        }
        let d_p = geometry.d_p();
        let d_f = geometry.d_f();
        for (j, s) in states.iter().enumerate() {
            if s.id != j {
                return Err(Error::InvalidParam(format!(
                    "state id {} at position {j}",
                    s.id
                )));
            }
            if s.count == 0 {
                return Err(Error::InvalidParam(format!("state {j} has no members")));
            }
            if s.plc_kde.dim() != d_p {
                return Err(Error::DimMismatch {
                    expected: d_p,
                    got: s.plc_kde.dim(),
                });
            }
            if s.flc_kde.dim() != d_f || s.mean_flc.len() != d_f {
                return Err(Error::DimMismatch {
                    expected: d_f,
                    got: s.flc_kde.dim(),
                });
            }
        }
        Ok(StateModel {
            method,
            geometry,
            scaling,
            states,
            training_size,
            seed,
        })
    }

    pub fn method(&self) -> StateMethod {
        self.method
    }

    pub fn geometry(&self) -> ConeGeometry {
        self.geometry
    }

    pub fn scaling(&self) -> ScalingParams {
        self.scaling
    }

    pub fn states(&self) -> &[PredictiveState] {
        &self.states
    }

    pub fn k(&self) -> usize {
        self.states.len()
    }

    pub fn training_size(&self) -> usize {
        self.training_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Log-density profile of one cluster's future-cone KDE across shared
/// evaluation points, relative to the first point.
#[derive(Debug, Clone, PartialEq)]
pub struct Signature {
    pub cluster: usize,
    pub log_ratios: Vec<f64>,
}

/// Log-density ratios `ln f(z_i) - ln f(z_0)` for `i = 1..`, with densities
/// clamped at [`DENSITY_FLOOR`] so every entry is finite. `eval_points` rows
/// are the shared points `z_0, z_1, ...`; at least two are required.
pub fn cluster_signature(flc_kde: &Kde, eval_points: &Matrix) -> Result<Vec<f64>> {
    if eval_points.rows() < 2 {
        return Err(Error::InvalidParam(
            "signature needs at least two evaluation points".into(),
        ));
    }
    let base = flc_kde
        .density(eval_points.row(0))?
        .max(DENSITY_FLOOR)
        .ln();
    let mut out = Vec::with_capacity(eval_points.rows() - 1);
    for i in 1..eval_points.rows() {
        let v = flc_kde
            .density(eval_points.row(i))?
            .max(DENSITY_FLOOR)
            .ln();
        out.push(v - base);
    }
    Ok(out)
}

fn group_rows(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        groups[l].push(i);
    }
    groups
}

fn build_state(
    id: usize,
    members: Vec<usize>,
    cones: &ConeSet,
    cap: usize,
    seed: u64,
) -> Result<PredictiveState> {
    let plcs = cones.plcs().select_rows(&members);
    let flcs = cones.flcs().select_rows(&members);
    let plc_kde = fit_kde(&plcs, None, None, cap, derive_seed(seed, STREAM_STATE_PLC + id as u64))?;
    let flc_kde = fit_kde(&flcs, None, None, cap, derive_seed(seed, STREAM_STATE_FLC + id as u64))?;
    let mean_flc = flcs.column_means();
    Ok(PredictiveState {
        id,
        count: members.len(),
        member_indices: members,
        mean_flc,
        plc_kde,
        flc_kde,
    })
}

/// Shared future-cone evaluation points for signatures: `2 * k_sig + 1` rows
/// drawn from the pooled future cones, without replacement when enough cones
/// exist and with replacement otherwise.
fn draw_eval_points(cones: &ConeSet, k_sig: usize, seed: u64) -> Matrix {
    let n = cones.len();
    let count = 2 * k_sig + 1;
    let mut rng = rng_from(seed);
    let idx: Vec<usize> = if n >= count {
        sample_indices(n, count, &mut rng)
    } else {
        (0..count).map(|_| rng.random_range(0..n)).collect()
    };
    cones.flcs().select_rows(&idx)
}

/// Density-route state reconstruction. Past cones are density-clustered with
/// an adaptive radius; each cluster's future-cone KDE is profiled at
/// `2 * k_sig + 1` shared points; when more than `k_max` clusters form, the
/// signature vectors are k-means++ clustered into `k_max` groups and member
/// lists unioned. State KDEs are refit on the final memberships.
pub fn fit_moonshine(
    cones: &ConeSet,
    k_max: usize,
    k_sig: usize,
    scaling: ScalingParams,
    seed: u64,
) -> Result<StateModel> {
    let n = cones.len();
    if n == 0 {
        return Err(Error::EmptyInput("fit with no cones".into()));
    }
    if k_max == 0 {
        return Err(Error::InvalidParam("k_max must be >= 1".into()));
    }
    if k_sig == 0 {
        return Err(Error::InvalidParam("k_sig must be >= 1".into()));
    }
    if n < k_max {
        return Err(Error::InvalidParam(format!(
            "k_max = {k_max} exceeds cone count {n}"
        )));
    }

    let clustering = cluster::dbscan_adaptive(
        cones.plcs(),
        DBSCAN_MIN_PTS,
        DBSCAN_TARGET_COVERAGE,
        derive_seed(seed, STREAM_DBSCAN),
    )?;
    let initial = group_rows(&clustering.labels, clustering.k());

    let groups: Vec<Vec<usize>> = if clustering.k() > k_max {
        let eval_points = draw_eval_points(cones, k_sig, derive_seed(seed, STREAM_EVAL_POINTS));
        let mut sig_rows = Vec::with_capacity(initial.len());
        for (c, members) in initial.iter().enumerate() {
            let flcs = cones.flcs().select_rows(members);
            let kde = fit_kde(
                &flcs,
                None,
                None,
                DEFAULT_SUPPORT_CAP,
                derive_seed(seed, STREAM_CLUSTER_FLC + c as u64),
            )?;
            sig_rows.push(cluster_signature(&kde, &eval_points)?);
        }
        let sig_matrix = Matrix::from_rows(&sig_rows)?;
        let merge = cluster::kmeanspp(&sig_matrix, k_max, derive_seed(seed, STREAM_MERGE), 100)?;
        let mut merged = vec![Vec::new(); k_max];
        for (c, members) in initial.iter().enumerate() {
            merged[merge.labels[c]].extend_from_slice(members);
        }
        for g in &mut merged {
            g.sort_unstable();
        }
        merged
    } else {
        initial
    };

    let mut states = Vec::with_capacity(groups.len());
    for (id, members) in groups.into_iter().enumerate() {
        states.push(build_state(id, members, cones, DEFAULT_SUPPORT_CAP, seed)?);
    }
    StateModel::new(
        StateMethod::Moonshine,
        cones.geometry(),
        scaling,
        states,
        n,
        seed,
    )
}

/// Centroid-route state reconstruction: k-means++ on the future cones into
/// exactly `k` states.
pub fn fit_ohp(cones: &ConeSet, k: usize, scaling: ScalingParams, seed: u64) -> Result<StateModel> {
    let n = cones.len();
    if n == 0 {
        return Err(Error::EmptyInput("fit with no cones".into()));
    }
    if k == 0 {
        return Err(Error::InvalidParam("k must be >= 1".into()));
    }
    if k > n {
        return Err(Error::InvalidParam(format!(
            "k = {k} exceeds cone count {n}"
        )));
    }
    let clustering = cluster::kmeanspp(cones.flcs(), k, derive_seed(seed, STREAM_DBSCAN), 100)?;
    let groups = group_rows(&clustering.labels, k);
    let mut states = Vec::with_capacity(k);
    for (id, members) in groups.into_iter().enumerate() {
        states.push(build_state(id, members, cones, DEFAULT_SUPPORT_CAP, seed)?);
    }
    StateModel::new(StateMethod::Ohp, cones.geometry(), scaling, states, n, seed)
}

/// Posterior state weights for a past cone (in the model's standardized
/// units): `w_j` proportional to `N_j * f_j(plc)` where `f_j` is state `j`'s
/// past-cone KDE and `N_j` its member count. Falls back to uniform weights
/// when every density underflows to zero.
pub fn map_plc_to_states(model: &StateModel, plc: &[f64]) -> Result<Vec<f64>> {
    if plc.len() != model.geometry().d_p() {
        return Err(Error::DimMismatch {
            expected: model.geometry().d_p(),
            got: plc.len(),
        });
    }
    let k = model.k();
    let mut weights = Vec::with_capacity(k);
    for s in model.states() {
        weights.push(s.count as f64 * s.plc_kde.density(plc)?);
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        for w in &mut weights {
            *w /= total;
        }
    } else {
        let u = 1.0 / k as f64;
        for w in &mut weights {
            *w = u;
        }
    }
    Ok(weights)
}
