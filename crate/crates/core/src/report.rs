//! CSV formatting, output-file bookkeeping, and the run manifest.
//!
//! Table values print with '.' decimals and six significant digits, switching
//! to scientific notation below 1e-3 to match the granularity of the
//! reported experiments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;

/// Format with six significant digits; scientific for |v| < 1e-3.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    let a = v.abs();
    if a < 1e-3 {
        format!("{v:.5e}")
    } else {
        let exponent = a.log10().floor() as i64;
        let decimals = (5 - exponent).max(0) as usize;
        format!("{v:.decimals$}")
    }
}

/// A CSV table under construction: a header row and value rows.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Csv {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.buf, "{}", cells.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.buf.as_bytes())?;
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Write `manifest.toml` next to the outputs: the serialized configuration
/// (round-trippable), its hash, and a checksum per written file.
pub fn write_manifest(
    out_dir: &Path,
    config_toml: &str,
    files: &[PathBuf],
) -> Result<PathBuf> {
    let mut body = String::new();
    let _ = writeln!(body, "config_sha256 = \"{}\"", sha256_hex(config_toml.as_bytes()));
    let _ = writeln!(body);
    let _ = writeln!(body, "[files]");
    let mut sorted: Vec<&PathBuf> = files.iter().collect();
    sorted.sort();
    for path in sorted {
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        let bytes = std::fs::read(path)?;
        let _ = writeln!(body, "\"{name}\" = \"{}\"", sha256_hex(&bytes));
    }
    let _ = writeln!(body);
    let _ = writeln!(body, "[config]");
    // Inline the full configuration so the manifest round-trips it.
    body.push_str(config_toml);
    let path = out_dir.join("manifest.toml");
    std::fs::write(&path, body.as_bytes())?;
    Ok(path)
}

/// Extract the `[config]` section of a manifest for round-trip parsing.
pub fn manifest_config_section(manifest: &str) -> Option<String> {
    let idx = manifest.find("[config]")?;
    Some(manifest[idx + "[config]".len()..].trim_start().to_string())
}

/// Write a saturation (or any cell) field as an n×n CSV grid, row y = 0
/// first, matching the cell indexing of the solver.
pub fn write_cell_grid(path: &Path, n: usize, values: &[f64]) -> Result<()> {
    let mut buf = String::new();
    for iy in 0..n {
        let row: Vec<String> = (0..n).map(|ix| fmt_sig(values[iy * n + ix])).collect();
        let _ = writeln!(buf, "{}", row.join(","));
    }
    std::fs::write(path, buf.as_bytes())?;
    Ok(())
}
