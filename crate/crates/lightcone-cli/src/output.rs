//! Run-directory outputs: resolved config records, grayscale PGM exports,
//! and small text files. Everything written here is deterministic for a
//! given run configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lightcone::{Error, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(content.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Writes the fully resolved run configuration to `config.txt` in the run
/// directory, replayable via `--config`.
pub fn write_config(dir: &Path, command: &str, entries: &[(String, String)]) -> Result<PathBuf> {
    let mut content = String::new();
    content.push_str(&format!("command = {command}\n"));
    content.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
    for (key, value) in entries {
        content.push_str(&format!("{key} = {value}\n"));
    }
    let path = dir.join("config.txt");
    write_text(&path, &content)?;
    Ok(path)
}

/// Writes a binary grayscale PGM (P5). Values are scaled linearly so the
/// smallest unmasked value maps to 0 and the largest to 255; masked pixels
/// render black; a constant image renders mid-gray.
pub fn write_pgm(
    path: &Path,
    height: usize,
    width: usize,
    values: &[f64],
    mask: Option<&[bool]>,
) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::DimMismatch {
            expected: height * width,
            got: values.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != values.len() {
            return Err(Error::DimMismatch {
                expected: values.len(),
                got: m.len(),
            });
        }
    }
    let visible = |i: usize| mask.is_none_or(|m| m[i]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if visible(i) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let range = hi - lo;
    let mut bytes = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let b = if !visible(i) {
            0
        } else if range > 0.0 {
            ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        };
        bytes.push(b);
    }
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}
