//! Permeability fields on the fine grid.
//!
//! Three sources: the periodic analytic coefficient, a seeded high-contrast
//! synthetic generator (channels plus inclusions on a unit background), and a
//! plain-text layer file in the SPE10 layout (one layer = 220·60 values,
//! whitespace separated, x index fastest) resampled to the fine grid by
//! nearest neighbor in each axis.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SPE10_NX: usize = 220;
pub const SPE10_NY: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Periodic,
    Synthetic,
    File,
}

/// Cell-wise positive permeability at the fine-grid resolution, stored
/// row-major from the lower-left corner.
#[derive(Debug, Clone)]
pub struct PermField {
    n: usize,
    values: Vec<f64>,
    provenance: Provenance,
}

impl PermField {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Permeability of a fine cell.
    #[inline]
    pub fn at(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    /// Uniform field of ones.
    pub fn uniform(n: usize) -> PermField {
        PermField {
            n,
            values: vec![1.0; n * n],
            provenance: Provenance::Synthetic,
        }
    }

    /// Field from explicit cell values; all must be positive and finite.
    pub fn from_values(n: usize, values: Vec<f64>, provenance: Provenance) -> Result<PermField> {
        if values.len() != n * n {
            return Err(Error::SizeMismatch {
                what: "permeability values",
                expected: n * n,
                got: values.len(),
            });
        }
        if let Some(bad) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "permeability value {} at cell {bad} is not a positive finite number",
                values[bad]
            )));
        }
        Ok(PermField {
            n,
            values,
            provenance,
        })
    }

    /// Cell-wise scaling, e.g. by a mobility field. Scales must be positive.
    pub fn scaled_by(&self, scale: &[f64]) -> Result<PermField> {
        if scale.len() != self.values.len() {
            return Err(Error::SizeMismatch {
                what: "mobility scaling",
                expected: self.values.len(),
                got: scale.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(scale)
            .map(|(k, s)| k * s)
            .collect();
        PermField::from_values(self.n, values, self.provenance)
    }
}

/// The periodic coefficient: 1 outside [0.1, 0.9]², otherwise
/// `1 + Γ(x1,x2)·(0.4 − |x1 − 0.5|)(0.4 − |x2 − 0.5|)` with
/// `Γ = (2 + 1.8 sin(2πx1/ε))/(2 + 1.8 sin(2πx2/ε))
///    + (2 + 1.8 sin(2πx1/ε))/(2 + 1.8 cos(2πx2/ε))`,
/// evaluated at fine-cell centers.
pub fn periodic_field(n: usize, epsilon: f64) -> Result<PermField> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!(
            "periodic coefficient requires epsilon > 0, got {epsilon}"
        )));
    }
    let h = 1.0 / n as f64;
    let mut values = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let x1 = (ix as f64 + 0.5) * h;
            let x2 = (iy as f64 + 0.5) * h;
            values.push(periodic_value(x1, x2, epsilon));
        }
    }
    PermField::from_values(n, values, Provenance::Periodic)
}

pub(crate) fn periodic_value(x1: f64, x2: f64, epsilon: f64) -> f64 {
    let inside = (0.1..=0.9).contains(&x1) && (0.1..=0.9).contains(&x2);
    if !inside {
        return 1.0;
    }
    let sx1 = (2.0 * std::f64::consts::PI * x1 / epsilon).sin();
    let sx2 = (2.0 * std::f64::consts::PI * x2 / epsilon).sin();
    let cx2 = (2.0 * std::f64::consts::PI * x2 / epsilon).cos();
    let gamma = (2.0 + 1.8 * sx1) / (2.0 + 1.8 * sx2) + (2.0 + 1.8 * sx1) / (2.0 + 1.8 * cx2);
    let envelope = (0.4 - (x1 - 0.5).abs()) * (0.4 - (x2 - 0.5).abs());
    1.0 + gamma * envelope
}

/// Seeded high-contrast field: unit background with sinuous channels and
/// rectangular inclusions of value `contrast`. Deterministic for a fixed
/// seed; both extremes (1 and `contrast`) are attained by construction for
/// `contrast > 1` because painting is capped below half the domain.
pub fn synthetic_field(n: usize, seed: u64, contrast: f64) -> Result<PermField> {
    if !(contrast >= 1.0 && contrast.is_finite()) {
        return Err(Error::Config(format!(
            "synthetic contrast must be a finite value >= 1, got {contrast}"
        )));
    }
    let mut values = vec![1.0; n * n];
    if contrast > 1.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = n * n / 2;
        let mut painted = 0usize;
        let paint = |values: &mut Vec<f64>, ix: usize, iy: usize, painted: &mut usize| {
            let idx = iy * n + ix;
            if values[idx] != contrast {
                values[idx] = contrast;
                *painted += 1;
            }
        };

        // Horizontal channels: lateral random walks across the domain.
        let n_channels = 2 + n / 20;
        for _ in 0..n_channels {
            let mut iy = rng.gen_range(0..n);
            let thick = if n >= 16 { rng.gen_range(1..=2) } else { 1 };
            for ix in 0..n {
                for t in 0..thick {
                    let y = (iy + t).min(n - 1);
                    paint(&mut values, ix, y, &mut painted);
                }
                let step: i64 = rng.gen_range(-1..=1);
                iy = (iy as i64 + step).clamp(0, n as i64 - 1) as usize;
            }
            if painted >= budget {
                break;
            }
        }
        // Vertical channels.
        let n_vchannels = 1 + n / 40;
        for _ in 0..n_vchannels {
            if painted >= budget {
                break;
            }
            let mut ix = rng.gen_range(0..n);
            for iy in 0..n {
                paint(&mut values, ix, iy, &mut painted);
                let step: i64 = rng.gen_range(-1..=1);
                ix = (ix as i64 + step).clamp(0, n as i64 - 1) as usize;
            }
        }
        // Rectangular inclusions.
        let n_incl = 2 + n / 10;
        let max_side = (n / 6).max(1);
        for _ in 0..n_incl {
            if painted >= budget {
                break;
            }
            let w = rng.gen_range(1..=max_side);
            let ht = rng.gen_range(1..=max_side);
            let x0 = rng.gen_range(0..n.saturating_sub(w).max(1));
            let y0 = rng.gen_range(0..n.saturating_sub(ht).max(1));
            for iy in y0..(y0 + ht).min(n) {
                for ix in x0..(x0 + w).min(n) {
                    paint(&mut values, ix, iy, &mut painted);
                }
            }
        }
    }
    PermField::from_values(n, values, Provenance::Synthetic)
}

/// Load one layer from a plain-text permeability file and resample it to a
/// `target_n`×`target_n` fine grid. The file holds whitespace-separated
/// positive decimals in layer-major order, each layer being 220·60 values
/// with the x index fastest.
pub fn load_layer(path: &Path, layer: usize, target_n: usize) -> Result<PermField> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::LoadIo {
        path: path.to_owned(),
        source,
    })?;
    let per_layer = SPE10_NX * SPE10_NY;
    let skip = layer * per_layer;
    let mut found = 0usize;
    let mut layer_values = Vec::with_capacity(per_layer);
    for (offset, token) in text.split_whitespace().enumerate() {
        found = offset + 1;
        if offset < skip {
            continue;
        }
        if layer_values.len() == per_layer {
            break;
        }
        let value: f64 = token.parse().map_err(|_| Error::LoadParse {
            path: path.to_owned(),
            offset,
        })?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::LoadNonPositive {
                path: path.to_owned(),
                offset,
                value,
            });
        }
        layer_values.push(value);
    }
    if layer_values.len() < per_layer {
        return Err(Error::LoadShortRead {
            path: path.to_owned(),
            layer,
            needed: skip + per_layer,
            found,
        });
    }
    let values = resample(&layer_values, SPE10_NX, SPE10_NY, target_n, target_n);
    PermField::from_values(target_n, values, Provenance::File)
}

/// Nearest-neighbor resampling of a row-major `src_w`×`src_h` grid onto a
/// `dst_w`×`dst_h` grid. Resampling to the source size is the identity.
pub fn resample(src: &[f64], src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Vec<f64> {
    assert_eq!(src.len(), src_w * src_h);
    let pick = |i: usize, dst: usize, srcn: usize| -> usize {
        (((i as f64 + 0.5) * srcn as f64 / dst as f64).floor() as usize).min(srcn - 1)
    };
    let mut out = Vec::with_capacity(dst_w * dst_h);
    for iy in 0..dst_h {
        let sy = pick(iy, dst_h, src_h);
        for ix in 0..dst_w {
            let sx = pick(ix, dst_w, src_w);
            out.push(src[sy * src_w + sx]);
        }
    }
    out
}
