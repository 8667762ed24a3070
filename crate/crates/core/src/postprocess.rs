//! Recovery of a fine-grid conservative velocity from the coarse solution
//! by per-coarse-block local mixed solves with the coarse trace as boundary
//! data.
//!
//! On blocks where the source is constant the coarse velocity is already
//! fine-conservative (snapshot fields have blockwise-constant divergence),
//! so those blocks are skipped unless `force_all` is set.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fine::{scatter_field, MixedSolution, Region, RegionSolver};
use crate::grid::GridHierarchy;
use crate::perm::PermField;

/// Postprocess `coarse` into a field satisfying per-fine-cell conservation
/// against `f` (pointwise cell values). The trace of the result on every
/// coarse-block boundary equals the coarse trace exactly.
pub fn postprocess(
    grid: &GridHierarchy,
    kappa: &PermField,
    coarse: &MixedSolution,
    f: &[f64],
    force_all: bool,
) -> Result<MixedSolution> {
    if f.len() != grid.num_cells() {
        return Err(Error::SizeMismatch {
            what: "source field",
            expected: grid.num_cells(),
            got: f.len(),
        });
    }
    let h2 = grid.h() * grid.h();
    let f_scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut out = MixedSolution::zeros(grid);
    out.flux.copy_from_slice(&coarse.flux);
    out.pressure.copy_from_slice(&coarse.pressure);

    let results: Vec<Option<(Region, crate::fine::LocalField)>> = (0..grid.num_coarse_blocks())
        .into_par_iter()
        .map(|block| {
            let cells = grid.block_cells(block);
            let fbar = cells.iter().map(|&c| f[c]).sum::<f64>() / cells.len() as f64;
            let constant = cells
                .iter()
                .all(|&c| (f[c] - fbar).abs() <= 1e-14 * f_scale.max(1.0));
            if constant && !force_all {
                return Ok(None);
            }
            let solver = RegionSolver::new(grid, kappa, cells)?;
            let region = solver.region();
            let g: Vec<f64> = region
                .boundary_edges
                .iter()
                .map(|&e| coarse.flux[e])
                .collect();
            let f_int: Vec<f64> = region.cells.iter().map(|&c| f[c] * h2).collect();
            let field = solver.solve(&f_int, &g).map_err(|e| match e {
                // Name the block rather than the region-local component.
                Error::Incompatible { defect, .. } => Error::Incompatible {
                    component: block,
                    defect,
                },
                other => other,
            })?;
            Ok(Some((solver.region.clone(), field)))
        })
        .collect::<Result<_>>()?;

    for entry in results.iter().flatten() {
        let (region, field) = entry;
        scatter_field(region, field, &mut out.flux, Some(&mut out.pressure));
        for &e in &region.boundary_edges {
            out.flux[e] = coarse.flux[e];
        }
    }
    Ok(out)
}

/// Maximum fine-cell conservation residual `|∮_{∂τ} v·n − ∫_τ f|`.
pub fn fine_conservation_residual(grid: &GridHierarchy, flux: &[f64], f: &[f64]) -> f64 {
    let h2 = grid.h() * grid.h();
    (0..grid.num_cells())
        .map(|cell| (crate::fine::cell_divergence(grid, flux, cell) - f[cell] * h2).abs())
        .fold(0.0, f64::max)
}
