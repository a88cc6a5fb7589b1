//! Binary container for fitted models. One tagged format (`LCSM1`) holds
//! either a state model or a linear cone model; writing then reading is
//! bit-exact for every stored number.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::baselines::LinearConeModel;
use crate::error::{Error, Result};
use crate::field::{ConeGeometry, ScalingParams, SpatialNorm};
use crate::kde::Kde;
use crate::matrix::Matrix;
use crate::states::{PredictiveState, StateMethod, StateModel};

pub const MODEL_MAGIC: &[u8; 5] = b"LCSM1";

const METHOD_MOONSHINE: u8 = 0;
const METHOD_OHP: u8 = 1;
const METHOD_LCLR: u8 = 2;

/// Any model the container can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    States(StateModel),
    Linear(LinearConeModel),
}

impl Model {
    pub fn method_name(&self) -> &'static str {
        match self {
            Model::States(m) => m.method().name(),
            Model::Linear(_) => "lclr",
        }
    }

    pub fn geometry(&self) -> ConeGeometry {
        match self {
            Model::States(m) => m.geometry(),
            Model::Linear(m) => m.geometry(),
        }
    }
}

struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    fn new() -> Self {
        ByteWriter { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated(what.into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64(what)?);
        }
        Ok(out)
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_kde(w: &mut ByteWriter, kde: &Kde) {
    w.f64(kde.bandwidth());
    w.u64(kde.cap() as u64);
    w.u64(kde.support().rows() as u64);
    w.u64(kde.support().cols() as u64);
    w.f64_slice(kde.support().data());
    w.f64_slice(kde.weights());
}

fn read_kde(r: &mut ByteReader) -> Result<Kde> {
    let bandwidth = r.f64("kde bandwidth")?;
    let cap = r.u64("kde cap")? as usize;
    let rows = r.u64("kde support rows")? as usize;
    let cols = r.u64("kde support cols")? as usize;
    let total = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::HeaderMismatch("kde support size overflow".into()))?;
    let support = Matrix::from_vec(rows, cols, r.f64_vec(total, "kde support")?)?;
    let weights = r.f64_vec(rows, "kde weights")?;
    Kde::from_parts(support, weights, bandwidth, cap)
}

/// Serializes a model to the `LCSM1` byte layout.
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.buf.extend_from_slice(MODEL_MAGIC);
    let (method, geometry, scaling, seed, training_size) = match model {
        Model::States(m) => (
            match m.method() {
                StateMethod::Moonshine => METHOD_MOONSHINE,
                StateMethod::Ohp => METHOD_OHP,
            },
            m.geometry(),
            m.scaling(),
            m.seed(),
            m.training_size() as u64,
        ),
        Model::Linear(m) => (METHOD_LCLR, m.geometry(), m.scaling(), 0, 0),
    };
    w.u8(method);
    w.u32(geometry.h_p as u32);
    w.u32(geometry.h_f as u32);
    w.u32(geometry.c as u32);
    w.u8(match geometry.norm {
        SpatialNorm::Chebyshev => 0,
        SpatialNorm::Euclidean => 1,
    });
    w.f64(scaling.shift);
    w.f64(scaling.scale);
    w.u64(seed);
    w.u64(training_size);

    match model {
        Model::States(m) => {
            w.u32(m.k() as u32);
            for s in m.states() {
                w.u64(s.count as u64);
                w.f64_slice(&s.mean_flc);
                write_kde(&mut w, &s.plc_kde);
                write_kde(&mut w, &s.flc_kde);
            }
        }
        Model::Linear(m) => {
            w.f64_slice(m.beta());
            w.f64(m.intercept());
        }
    }
    w.buf
}

/// Parses a model from `LCSM1` bytes, revalidating all invariants.
pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(5, "magic bytes")?;
    if magic != MODEL_MAGIC {
        return Err(Error::BadMagic { expected: "LCSM1" });
    }
    let method = r.u8("method tag")?;
    let h_p = r.u32("h_p")? as usize;
    let h_f = r.u32("h_f")? as usize;
    let c = r.u32("c")? as usize;
    let norm = match r.u8("norm tag")? {
        0 => SpatialNorm::Chebyshev,
        1 => SpatialNorm::Euclidean,
        other => {
            return Err(Error::HeaderMismatch(format!("unknown norm tag {other}")));
        }
    };
    let geometry = ConeGeometry::new(h_p, h_f, c, norm)?;
    let scaling = ScalingParams {
        shift: r.f64("scaling shift")?,
        scale: r.f64("scaling scale")?,
    };
    if !scaling.shift.is_finite() || !scaling.scale.is_finite() || scaling.scale <= 0.0 {
        return Err(Error::HeaderMismatch("invalid scaling parameters".into()));
    }
    let seed = r.u64("seed")?;
    let training_size = r.u64("training size")? as usize;

    let model = match method {
        METHOD_MOONSHINE | METHOD_OHP => {
            let k = r.u32("state count")? as usize;
            if k == 0 {
                return Err(Error::HeaderMismatch("model with zero states".into()));
            }
            let d_f = geometry.d_f();
            let mut states = Vec::with_capacity(k);
            for id in 0..k {
                let count = r.u64("state member count")? as usize;
                let mean_flc = r.f64_vec(d_f, "state mean")?;
                let plc_kde = read_kde(&mut r)?;
                let flc_kde = read_kde(&mut r)?;
                states.push(PredictiveState {
                    id,
                    count,
                    member_indices: Vec::new(),
                    mean_flc,
                    plc_kde,
                    flc_kde,
                });
            }
            let method = if method == METHOD_MOONSHINE {
                StateMethod::Moonshine
            } else {
                StateMethod::Ohp
            };
            Model::States(StateModel::new(
                method,
                geometry,
                scaling,
                states,
                training_size,
                seed,
            )?)
        }
        METHOD_LCLR => {
            let beta = r.f64_vec(geometry.d_p(), "beta")?;
            let intercept = r.f64("intercept")?;
            Model::Linear(LinearConeModel::new(beta, intercept, geometry, scaling)?)
        }
        other => {
            return Err(Error::HeaderMismatch(format!(
                "unknown method tag {other}"
            )));
        }
    };
    if !r.done() {
        return Err(Error::HeaderMismatch(
            "trailing bytes after model payload".into(),
        ));
    }
    Ok(model)
}

pub fn write_model(model: &Model, path: &Path) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(&model_to_bytes(model))?;
    writer.flush()?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<Model> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    model_from_bytes(&bytes)
}
