//! Gridded spatio-temporal scalar fields and their light-cone decomposition.
//!
//! A [`Field`] is a `T x H x W` block of finite `f64` samples. Around each
//! interior site `(t, row, col)` a past light cone (the predictor vector) and
//! a future light cone (the target vector) are cut out according to a
//! [`ConeGeometry`]: horizons `h_p >= 1` and `h_f >= 0`, propagation speed
//! `c >= 1`, and a spatial norm bounding how far a sample `k` steps away in
//! time may sit from the cone's origin.

use std::fs;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{rng_from, sample_indices};

pub const STF_MAGIC: &[u8; 4] = b"STF1";

/// Dense scalar field over `frames` time steps on an `height x width` grid.
/// Values are stored frame-major, then row-major; all entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    frames: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(frames: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidParam("field dimensions must be positive".into()));
        }
        let expected = frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::InvalidParam("field dimensions overflow".into()))?;
        if values.len() != expected {
            return Err(Error::DimMismatch {
                expected,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at flat index {pos}")));
        }
        Ok(Field {
            frames,
            height,
            width,
            values,
        })
    }

    pub fn constant(frames: usize, height: usize, width: usize, value: f64) -> Result<Self> {
        Field::new(frames, height, width, vec![value; frames * height * width])
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, t: usize, row: usize, col: usize) -> f64 {
        self.values[(t * self.height + row) * self.width + col]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let size = self.height * self.width;
        &self.values[t * size..(t + 1) * size]
    }
}

/// Norm used to bound the spatial extent of a cone slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialNorm {
    /// `max(|dr|, |dc|) <= c * k`: square slices.
    Chebyshev,
    /// `dr^2 + dc^2 <= (c * k)^2`: disc slices.
    Euclidean,
}

impl SpatialNorm {
    pub fn parse(s: &str) -> Result<SpatialNorm> {
        match s.to_ascii_lowercase().as_str() {
            "chebyshev" => Ok(SpatialNorm::Chebyshev),
            "euclidean" => Ok(SpatialNorm::Euclidean),
            other => Err(Error::InvalidParam(format!("unknown norm '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpatialNorm::Chebyshev => "chebyshev",
            SpatialNorm::Euclidean => "euclidean",
        }
    }
}

/// Relative sample position inside a cone template. `dt` is negative for past
/// samples, zero or positive for future ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeOffset {
    pub dt: isize,
    pub dr: isize,
    pub dc: isize,
}

/// Shape parameters of the light-cone decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeGeometry {
    pub h_p: usize,
    pub h_f: usize,
    pub c: usize,
    pub norm: SpatialNorm,
}

impl ConeGeometry {
    pub fn new(h_p: usize, h_f: usize, c: usize, norm: SpatialNorm) -> Result<Self> {
        if h_p == 0 {
            return Err(Error::InvalidParam("past horizon h_p must be >= 1".into()));
        }
        if c == 0 {
            return Err(Error::InvalidParam("propagation speed c must be >= 1".into()));
        }
        Ok(ConeGeometry { h_p, h_f, c, norm })
    }

    /// Whether spatial offset `(dr, dc)` lies within the cone `steps` time
    /// steps away from the origin.
    #[inline]
    pub fn slice_contains(&self, steps: usize, dr: isize, dc: isize) -> bool {
        let radius = (self.c * steps) as isize;
        match self.norm {
            SpatialNorm::Chebyshev => dr.abs() <= radius && dc.abs() <= radius,
            SpatialNorm::Euclidean => dr * dr + dc * dc <= radius * radius,
        }
    }

    fn slice_offsets(&self, steps: usize, dt: isize, out: &mut Vec<ConeOffset>) {
        let radius = (self.c * steps) as isize;
        for dr in -radius..=radius {
            for dc in -radius..=radius {
                if self.slice_contains(steps, dr, dc) {
                    out.push(ConeOffset { dt, dr, dc });
                }
            }
        }
    }

    /// Past-cone template: strictly-past samples, farthest slice first, each
    /// slice scanned in row then column order. The origin itself is excluded.
    pub fn plc_offsets(&self) -> Vec<ConeOffset> {
        let mut out = Vec::new();
        for back in (1..=self.h_p).rev() {
            self.slice_offsets(back, -(back as isize), &mut out);
        }
        out
    }

    /// Future-cone template: the present sample plus `h_f` future slices,
    /// farthest slice first. The final entry is always the origin `(0,0,0)`.
    pub fn flc_offsets(&self) -> Vec<ConeOffset> {
        let mut out = Vec::new();
        for fwd in (0..=self.h_f).rev() {
            self.slice_offsets(fwd, fwd as isize, &mut out);
        }
        out
    }

    pub fn d_p(&self) -> usize {
        self.plc_offsets().len()
    }

    pub fn d_f(&self) -> usize {
        self.flc_offsets().len()
    }

    /// Index of the origin sample `(0,0,0)` within the future-cone template.
    pub fn flc_target_index(&self) -> usize {
        self.flc_offsets()
            .iter()
            .position(|o| o.dt == 0 && o.dr == 0 && o.dc == 0)
            .expect("future cone always contains its origin")
    }

    /// Spatial margin a cone needs on every side of the grid.
    pub fn spatial_margin(&self) -> usize {
        self.c * self.h_p.max(self.h_f)
    }

    /// Margin needed when only the past cone is read (forecasting).
    pub fn plc_margin(&self) -> usize {
        self.c * self.h_p
    }
}

/// Grid site a cone pair was extracted at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeOrigin {
    pub t: usize,
    pub row: usize,
    pub col: usize,
}

/// Matched past/future cone pairs plus their origins, all sharing one
/// geometry. Row `i` of `plcs` and row `i` of `flcs` come from `origins[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeSet {
    plcs: Matrix,
    flcs: Matrix,
    origins: Vec<ConeOrigin>,
    geometry: ConeGeometry,
}

impl ConeSet {
    pub fn new(
        plcs: Matrix,
        flcs: Matrix,
        origins: Vec<ConeOrigin>,
        geometry: ConeGeometry,
    ) -> Result<Self> {
        if plcs.rows() != flcs.rows() || plcs.rows() != origins.len() {
            return Err(Error::DimMismatch {
                expected: plcs.rows(),
                got: flcs.rows().min(origins.len()),
            });
        }
        if plcs.cols() != geometry.d_p() {
            return Err(Error::DimMismatch {
                expected: geometry.d_p(),
                got: plcs.cols(),
            });
        }
        if flcs.cols() != geometry.d_f() {
            return Err(Error::DimMismatch {
                expected: geometry.d_f(),
                got: flcs.cols(),
            });
        }
        Ok(ConeSet {
            plcs,
            flcs,
            origins,
            geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn plcs(&self) -> &Matrix {
        &self.plcs
    }

    pub fn flcs(&self) -> &Matrix {
        &self.flcs
    }

    pub fn origins(&self) -> &[ConeOrigin] {
        &self.origins
    }

    pub fn geometry(&self) -> ConeGeometry {
        self.geometry
    }

    /// Subset of cones by row index, order preserved.
    pub fn select(&self, indices: &[usize]) -> ConeSet {
        ConeSet {
            plcs: self.plcs.select_rows(indices),
            flcs: self.flcs.select_rows(indices),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
            geometry: self.geometry,
        }
    }
}

/// Affine per-entry scaling `z = (x - shift) / scale` shared by every cone
/// coordinate, fitted once on the pooled training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub shift: f64,
    pub scale: f64,
}

impl ScalingParams {
    pub fn identity() -> Self {
        ScalingParams {
            shift: 0.0,
            scale: 1.0,
        }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.shift) / self.scale
    }

    #[inline]
    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.shift
    }

    pub fn apply_slice(&self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }

    pub fn invert_slice(&self, zs: &[f64]) -> Vec<f64> {
        zs.iter().map(|&z| self.invert(z)).collect()
    }
}

/// Cuts every admissible cone pair out of the field, scanning origins in
/// `(t, row, col)` order. Origins need `h_p` frames of history, `h_f` frames
/// of lookahead, and `c * max(h_p, h_f)` pixels of spatial margin, so a
/// `T x H x W` field yields `(T - h_p - h_f) * (H - 2cm) * (W - 2cm)` cones
/// with `m = max(h_p, h_f)`.
pub fn extract_cones(field: &Field, geometry: ConeGeometry) -> Result<ConeSet> {
    let margin = geometry.spatial_margin();
    if field.frames() < geometry.h_p + geometry.h_f + 1
        || field.height() <= 2 * margin
        || field.width() <= 2 * margin
    {
        return Err(Error::NoInteriorCones);
    }
    let plc_off = geometry.plc_offsets();
    let flc_off = geometry.flc_offsets();
    let t_lo = geometry.h_p;
    let t_hi = field.frames() - geometry.h_f;
    let n = (t_hi - t_lo) * (field.height() - 2 * margin) * (field.width() - 2 * margin);

    let mut plcs = Matrix::zeros(n, plc_off.len());
    let mut flcs = Matrix::zeros(n, flc_off.len());
    let mut origins = Vec::with_capacity(n);
    let mut i = 0;
    for t in t_lo..t_hi {
        for row in margin..field.height() - margin {
            for col in margin..field.width() - margin {
                let prow = plcs.row_mut(i);
                for (k, off) in plc_off.iter().enumerate() {
                    prow[k] = field.get(
                        (t as isize + off.dt) as usize,
                        (row as isize + off.dr) as usize,
                        (col as isize + off.dc) as usize,
                    );
                }
                let frow = flcs.row_mut(i);
                for (k, off) in flc_off.iter().enumerate() {
                    frow[k] = field.get(
                        (t as isize + off.dt) as usize,
                        (row as isize + off.dr) as usize,
                        (col as isize + off.dc) as usize,
                    );
                }
                origins.push(ConeOrigin { t, row, col });
                i += 1;
            }
        }
    }
    ConeSet::new(plcs, flcs, origins, geometry)
}

/// Pooled z-scoring over every entry of every cone (past and future alike):
/// one shift and one scale for the whole set, so the transform is a single
/// affine map of field values. A set with (numerically) zero variance keeps
/// `scale = 1`.
pub fn standardize(cones: &ConeSet) -> (ConeSet, ScalingParams) {
    let all = || cones.plcs().data().iter().chain(cones.flcs().data().iter());
    let count = (cones.plcs().data().len() + cones.flcs().data().len()) as f64;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in all() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let params = if lo == hi {
        ScalingParams {
            shift: lo,
            scale: 1.0,
        }
    } else {
        let mean = all().sum::<f64>() / count;
        let var = all().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / count;
        let sd = var.sqrt();
        let scale = if sd <= 1e-12 * mean.abs().max(1.0) {
            1.0
        } else {
            sd
        };
        ScalingParams { shift: mean, scale }
    };

    let mut out = cones.clone();
    for v in out.plcs.data_mut() {
        *v = params.apply(*v);
    }
    for v in out.flcs.data_mut() {
        *v = params.apply(*v);
    }
    (out, params)
}

/// Seeded uniform subsample without replacement down to `n` cones, keeping
/// the original extraction order. Returns the set unchanged if it already
/// fits the budget.
pub fn subsample(cones: &ConeSet, n: usize, seed: u64) -> Result<ConeSet> {
    if n == 0 {
        return Err(Error::InvalidParam("subsample budget must be >= 1".into()));
    }
    if cones.len() <= n {
        return Ok(cones.clone());
    }
    let mut rng = rng_from(seed);
    let idx = sample_indices(cones.len(), n, &mut rng);
    Ok(cones.select(&idx))
}

/// Concatenates cone sets with identical geometry. Origin times of later
/// sets are offset by the running maximum so origins stay unique; the
/// shifted times are provenance markers, not frame indices.
pub fn concat_cone_sets(sets: &[&ConeSet]) -> Result<ConeSet> {
    if sets.is_empty() {
        return Err(Error::EmptyInput("no cone sets to concatenate".into()));
    }
    let geometry = sets[0].geometry();
    let d_p = sets[0].plcs().cols();
    let d_f = sets[0].flcs().cols();
    let total: usize = sets.iter().map(|s| s.len()).sum();

    let mut plcs = Vec::with_capacity(total * d_p);
    let mut flcs = Vec::with_capacity(total * d_f);
    let mut origins = Vec::with_capacity(total);
    let mut t_offset = 0usize;
    for set in sets {
        if set.geometry() != geometry {
            return Err(Error::InvalidParam(
                "cone sets with different geometries cannot be pooled".into(),
            ));
        }
        plcs.extend_from_slice(set.plcs().data());
        flcs.extend_from_slice(set.flcs().data());
        let mut max_t = 0usize;
        for o in set.origins() {
            origins.push(ConeOrigin {
                t: o.t + t_offset,
                row: o.row,
                col: o.col,
            });
            max_t = max_t.max(o.t);
        }
        t_offset += max_t + 1;
    }
    ConeSet::new(
        Matrix::from_vec(total, d_p, plcs)?,
        Matrix::from_vec(total, d_f, flcs)?,
        origins,
        geometry,
    )
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| truncation(e, what))?;
    Ok(u32::from_le_bytes(buf))
}

fn truncation(e: std::io::Error, what: impl Into<String>) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated(what.into())
    } else {
        Error::Io(e)
    }
}

/// Reads a field from the binary `STF1` container: 4 magic bytes, then
/// `T, H, W` as little-endian `u32`, then `T*H*W` little-endian `f64`
/// samples in `(t, row, col)` order.
pub fn read_field_stf1<R: Read>(reader: &mut R) -> Result<Field> {
    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|e| truncation(e, "magic bytes"))?;
    if &magic != STF_MAGIC {
        return Err(Error::BadMagic { expected: "STF1" });
    }
    let t = read_u32(reader, "frame count")? as usize;
    let h = read_u32(reader, "height")? as usize;
    let w = read_u32(reader, "width")? as usize;
    if t == 0 || h == 0 || w == 0 {
        return Err(Error::HeaderMismatch("zero dimension in header".into()));
    }
    let total = t
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::HeaderMismatch("dimensions overflow".into()))?;

    let mut values = Vec::with_capacity(total);
    let mut buf = [0u8; 8];
    for i in 0..total {
        reader
            .read_exact(&mut buf)
            .map_err(|e| truncation(e, format!("payload value {i} of {total}")))?;
        let v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("payload value {i}")));
        }
        values.push(v);
    }
    let mut probe = [0u8; 1];
    match reader.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::HeaderMismatch(
                "trailing bytes after declared payload".into(),
            ))
        }
        Err(e) => return Err(Error::Io(e)),
    }
    Field::new(t, h, w, values)
}

pub fn write_field_stf1<W: Write>(field: &Field, writer: &mut W) -> Result<()> {
    writer.write_all(STF_MAGIC)?;
    writer.write_all(&(field.frames() as u32).to_le_bytes())?;
    writer.write_all(&(field.height() as u32).to_le_bytes())?;
    writer.write_all(&(field.width() as u32).to_le_bytes())?;
    for v in field.values() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one frame per `*.csv` file in the directory, files ordered
/// lexicographically by name; rows are lines, columns comma-separated.
pub fn read_field_csv_dir(dir: &Path) -> Result<Field> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no .csv frames in {}",
            dir.display()
        )));
    }

    let mut frames_data: Vec<Vec<f64>> = Vec::with_capacity(names.len());
    let mut dims: Option<(usize, usize)> = None;
    for path in &names {
        let text = fs::read_to_string(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| {
                        Error::Parse(format!(
                            "{} line {}: bad number '{}'",
                            path.display(),
                            lineno + 1,
                            tok.trim()
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{} line {} column {}",
                    path.display(),
                    lineno + 1,
                    bad + 1
                )));
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::EmptyInput(format!("{} has no rows", path.display())));
        }
        let w = rows[0].len();
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::HeaderMismatch(format!(
                "{} has ragged rows",
                path.display()
            )));
        }
        match dims {
            None => dims = Some((rows.len(), w)),
            Some(d) if d != (rows.len(), w) => {
                return Err(Error::HeaderMismatch(format!(
                    "{} is {}x{}, expected {}x{}",
                    path.display(),
                    rows.len(),
                    w,
                    d.0,
                    d.1
                )))
            }
            _ => {}
        }
        frames_data.push(rows.into_iter().flatten().collect());
    }
    let (h, w) = dims.unwrap();
    Field::new(
        frames_data.len(),
        h,
        w,
        frames_data.into_iter().flatten().collect(),
    )
}

/// Loads a field from either an `STF1` file or a directory of CSV frames.
pub fn read_field(path: &Path) -> Result<Field> {
    if path.is_dir() {
        read_field_csv_dir(path)
    } else {
        let mut reader = BufReader::new(File::open(path)?);
        read_field_stf1(&mut reader)
    }
}

pub fn write_field(field: &Field, path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_field_stf1(field, &mut writer)?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(h_p: usize, h_f: usize, c: usize, norm: SpatialNorm) -> ConeGeometry {
        ConeGeometry::new(h_p, h_f, c, norm).unwrap()
    }

    /// Offset counts recomputed by direct enumeration of the defining
    /// predicate, independent of the template builder.
    fn brute_count_plc(g: ConeGeometry) -> usize {
        let mut n = 0;
        let r_max = (g.c * g.h_p) as isize;
        for back in 1..=g.h_p {
            for dr in -r_max..=r_max {
                for dc in -r_max..=r_max {
                    if g.slice_contains(back, dr, dc) {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    #[test]
    fn chebyshev_default_geometry_dims() {
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        assert_eq!(g.d_p(), 9);
        assert_eq!(g.d_f(), 1);
        assert_eq!(g.flc_target_index(), 0);
    }

    #[test]
    fn euclidean_unit_geometry_dims() {
        let g = geom(1, 0, 1, SpatialNorm::Euclidean);
        assert_eq!(g.d_p(), 5);
        assert_eq!(g.d_f(), 1);
    }

    #[test]
    fn deeper_cone_dims_match_enumeration() {
        for &(h_p, h_f, c) in &[(2usize, 1usize, 1usize), (1, 2, 2), (3, 0, 1), (2, 2, 2)] {
            for norm in [SpatialNorm::Chebyshev, SpatialNorm::Euclidean] {
                let g = geom(h_p, h_f, c, norm);
                assert_eq!(g.d_p(), brute_count_plc(g), "{g:?}");
                assert_eq!(g.plc_offsets().len(), g.d_p());
            }
        }
        // h_p=2, c=1, Chebyshev: 5x5 slice at depth 2 plus 3x3 at depth 1.
        assert_eq!(geom(2, 0, 1, SpatialNorm::Chebyshev).d_p(), 25 + 9);
    }

    #[test]
    fn plc_offsets_strictly_past_and_ordered() {
        let g = geom(2, 1, 1, SpatialNorm::Chebyshev);
        let offs = g.plc_offsets();
        assert!(offs.iter().all(|o| o.dt < 0));
        // Farthest past slice first.
        assert_eq!(offs[0].dt, -2);
        for w in offs.windows(2) {
            let a = (w[0].dt, w[0].dr, w[0].dc);
            let b = (w[1].dt, w[1].dr, w[1].dc);
            assert!(a < b, "template not in canonical order: {a:?} !< {b:?}");
        }
    }

    #[test]
    fn flc_includes_present_and_targets_origin() {
        let g = geom(1, 1, 1, SpatialNorm::Chebyshev);
        let offs = g.flc_offsets();
        assert_eq!(offs.len(), 9 + 1);
        assert!(offs.iter().all(|o| o.dt >= 0));
        let tgt = g.flc_target_index();
        assert_eq!(offs[tgt], ConeOffset { dt: 0, dr: 0, dc: 0 });
        assert_eq!(tgt, offs.len() - 1);
    }

    #[test]
    fn cone_count_formula() {
        // 256x256 frames, default geometry: 254x254 interior per usable frame.
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        let field = Field::constant(3, 256, 256, 0.0).unwrap();
        let cones = extract_cones(&field, g).unwrap();
        assert_eq!(cones.len(), 2 * 254 * 254);
    }

    #[test]
    fn cone_count_formula_with_future_horizon() {
        let g = geom(1, 1, 1, SpatialNorm::Chebyshev);
        let field = Field::constant(6, 10, 12, 0.0).unwrap();
        let cones = extract_cones(&field, g).unwrap();
        assert_eq!(cones.len(), (6 - 2) * (10 - 2) * (12 - 2));
    }

    #[test]
    fn too_small_field_yields_no_cones() {
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        let field = Field::constant(1, 8, 8, 0.0).unwrap();
        assert!(matches!(
            extract_cones(&field, g),
            Err(Error::NoInteriorCones)
        ));
        let thin = Field::constant(5, 2, 8, 0.0).unwrap();
        assert!(matches!(
            extract_cones(&thin, g),
            Err(Error::NoInteriorCones)
        ));
    }

    #[test]
    fn extracted_values_match_field_samples() {
        // Field with value t*10000 + row*100 + col makes each sample's source
        // site readable off its value.
        let (tn, h, w) = (4, 6, 7);
        let mut values = Vec::new();
        for t in 0..tn {
            for r in 0..h {
                for c in 0..w {
                    values.push((t * 10000 + r * 100 + c) as f64);
                }
            }
        }
        let field = Field::new(tn, h, w, values).unwrap();
        let g = geom(1, 1, 1, SpatialNorm::Chebyshev);
        let cones = extract_cones(&field, g).unwrap();
        let plc_off = g.plc_offsets();
        let flc_off = g.flc_offsets();
        for (i, o) in cones.origins().iter().enumerate() {
            for (k, off) in plc_off.iter().enumerate() {
                let expect = ((o.t as isize + off.dt) * 10000
                    + (o.row as isize + off.dr) * 100
                    + (o.col as isize + off.dc)) as f64;
                assert_eq!(cones.plcs().get(i, k), expect);
            }
            for (k, off) in flc_off.iter().enumerate() {
                let expect = ((o.t as isize + off.dt) * 10000
                    + (o.row as isize + off.dr) * 100
                    + (o.col as isize + off.dc)) as f64;
                assert_eq!(cones.flcs().get(i, k), expect);
            }
            let tgt = cones.flcs().get(i, g.flc_target_index());
            assert_eq!(tgt, field.get(o.t, o.row, o.col));
        }
    }

    #[test]
    fn standardize_centers_and_scales() {
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        let mut rngv = rng_from(5);
        let values: Vec<f64> = (0..4 * 8 * 8)
            .map(|_| rand::Rng::random_range(&mut rngv, -3.0..9.0))
            .collect();
        let field = Field::new(4, 8, 8, values).unwrap();
        let cones = extract_cones(&field, g).unwrap();
        let (std, params) = standardize(&cones);

        let all: Vec<f64> = std
            .plcs()
            .data()
            .iter()
            .chain(std.flcs().data())
            .copied()
            .collect();
        let mean: f64 = all.iter().sum::<f64>() / all.len() as f64;
        let var: f64 = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 1e-10, "pooled mean {mean}");
        assert!((var - 1.0).abs() < 1e-10, "pooled variance {var}");

        // Round trip within 1e-12 relative error.
        for (orig, z) in cones.plcs().data().iter().zip(std.plcs().data()) {
            let back = params.invert(*z);
            assert!((back - orig).abs() <= 1e-12 * orig.abs().max(1.0));
        }

        // Idempotence: re-standardizing is within 1e-12 of a no-op.
        let (std2, p2) = standardize(&std);
        assert!(p2.shift.abs() < 1e-12 && (p2.scale - 1.0).abs() < 1e-12);
        for (a, b) in std.plcs().data().iter().zip(std2.plcs().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_constant_field_keeps_unit_scale() {
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        let field = Field::constant(3, 6, 6, 7.25).unwrap();
        let cones = extract_cones(&field, g).unwrap();
        let (std, params) = standardize(&cones);
        assert_eq!(params.scale, 1.0);
        assert_eq!(params.shift, 7.25);
        assert!(std.plcs().data().iter().all(|&v| v == 0.0));
        assert!(std.flcs().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subsample_within_budget_is_identity() {
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        let field = Field::constant(3, 6, 6, 1.0).unwrap();
        let cones = extract_cones(&field, g).unwrap();
        let sub = subsample(&cones, cones.len(), 1).unwrap();
        assert_eq!(sub, cones);
        let sub2 = subsample(&cones, cones.len() + 10, 1).unwrap();
        assert_eq!(sub2, cones);
    }

    #[test]
    fn subsample_deterministic_and_seed_sensitive() {
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        let mut rngv = rng_from(2);
        let values: Vec<f64> = (0..5 * 8 * 8)
            .map(|_| rand::Rng::random::<f64>(&mut rngv))
            .collect();
        let field = Field::new(5, 8, 8, values).unwrap();
        let cones = extract_cones(&field, g).unwrap();
        let a = subsample(&cones, 20, 7).unwrap();
        let b = subsample(&cones, 20, 7).unwrap();
        let c = subsample(&cones, 20, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.origins(), c.origins());
        assert_eq!(a.len(), 20);
        // Original relative order preserved.
        for w in a.origins().windows(2) {
            let ka = (w[0].t, w[0].row, w[0].col);
            let kb = (w[1].t, w[1].row, w[1].col);
            assert!(ka < kb);
        }
    }

    #[test]
    fn stf1_round_trip_bit_exact() {
        let mut rngv = rng_from(13);
        let values: Vec<f64> = (0..2 * 3 * 4)
            .map(|_| rand::Rng::random_range(&mut rngv, -1e9..1e9))
            .collect();
        let field = Field::new(2, 3, 4, values).unwrap();
        let mut buf = Vec::new();
        write_field_stf1(&field, &mut buf).unwrap();
        let back = read_field_stf1(&mut buf.as_slice()).unwrap();
        assert_eq!(back, field);

        let mut buf2 = Vec::new();
        write_field_stf1(&back, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn stf1_rejects_bad_magic() {
        let mut buf = Vec::new();
        write_field_stf1(&Field::constant(1, 2, 2, 0.0).unwrap(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_field_stf1(&mut buf.as_slice()),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn stf1_rejects_truncation_and_trailing() {
        let mut buf = Vec::new();
        write_field_stf1(&Field::constant(1, 2, 2, 0.0).unwrap(), &mut buf).unwrap();
        let short = &buf[..buf.len() - 3];
        assert!(matches!(
            read_field_stf1(&mut &short[..]),
            Err(Error::Truncated(_))
        ));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(
            read_field_stf1(&mut long.as_slice()),
            Err(Error::HeaderMismatch(_))
        ));
    }

    #[test]
    fn stf1_rejects_non_finite_payload() {
        let mut buf = Vec::new();
        write_field_stf1(&Field::constant(1, 2, 2, 0.0).unwrap(), &mut buf).unwrap();
        let payload_start = buf.len() - 4 * 8;
        buf[payload_start..payload_start + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            read_field_stf1(&mut buf.as_slice()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn csv_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for t in 0..3 {
            let mut text = String::new();
            for r in 0..2 {
                text.push_str(&format!("{}.5,{}\n", t * 10 + r, t * 100 + r));
            }
            fs::write(dir.path().join(format!("frame_{t:04}.csv")), text).unwrap();
        }
        let field = read_field(dir.path()).unwrap();
        assert_eq!(
            (field.frames(), field.height(), field.width()),
            (3, 2, 2)
        );
        assert_eq!(field.get(1, 0, 0), 10.5);
        assert_eq!(field.get(2, 1, 1), 201.0);
    }

    #[test]
    fn csv_dir_rejects_ragged_and_mismatched_frames() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "1,2\n3,4\n").unwrap();
        fs::write(dir.path().join("b.csv"), "1,2,3\n4,5,6\n").unwrap();
        assert!(matches!(
            read_field(dir.path()),
            Err(Error::HeaderMismatch(_))
        ));
    }

    #[test]
    fn concat_offsets_origin_times() {
        let g = geom(1, 0, 1, SpatialNorm::Chebyshev);
        let f1 = Field::constant(3, 4, 4, 0.0).unwrap();
        let f2 = Field::constant(4, 4, 4, 1.0).unwrap();
        let c1 = extract_cones(&f1, g).unwrap();
        let c2 = extract_cones(&f2, g).unwrap();
        let all = concat_cone_sets(&[&c1, &c2]).unwrap();
        assert_eq!(all.len(), c1.len() + c2.len());
        let max_t1 = c1.origins().iter().map(|o| o.t).max().unwrap();
        assert_eq!(all.origins()[c1.len()].t, c2.origins()[0].t + max_t1 + 1);
    }
}
