//! Coarse saddle system over an offline (or snapshot) velocity basis with
//! piecewise-constant coarse pressures, plus the fine-velocity projection
//! into the snapshot space and the relative error metrics.

use faer::linalg::solvers::{PartialPivLu, Solve};

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::fine::{
    cell_divergence, scatter_field, MixedSolution, Region, RegionSolver, COMPAT_TOL, SOLVER_TOL,
};
use crate::forms;
use crate::grid::GridHierarchy;
use crate::perm::PermField;

/// Assembled coarse system: the basis-projected velocity mass block, the
/// coarse flux-balance block (in the symmetric `B = −D` sign convention),
/// and the coarse-pressure gauge.
pub struct CoarseSystem {
    pub m_c: faer::Mat<f64>,
    pub b_c: faer::Mat<f64>,
    num_cols: usize,
    num_blocks: usize,
}

/// Project the fine mass and flux-balance operators onto the basis columns.
/// The mass block is accumulated block by block: each coarse block supports
/// only the columns of its own coarse edges, so the local Gram matrices stay
/// small.
pub fn assemble_coarse(
    grid: &GridHierarchy,
    kappa: &PermField,
    basis: &BasisSet,
) -> Result<CoarseSystem> {
    let m = basis.num_columns();
    let nb = grid.num_coarse_blocks();
    let mut m_c = faer::Mat::<f64>::zeros(m, m);
    let mut b_c = faer::Mat::<f64>::zeros(nb, m);

    // Columns supported on each coarse block: those of its up-to-four
    // interior coarse edges.
    let mut block_cols: Vec<Vec<usize>> = vec![Vec::new(); nb];
    for (edge_id, range) in &basis.per_edge {
        let edge = grid.coarse_edge(*edge_id);
        for b in edge.adjacent_blocks() {
            block_cols[b].extend(range.clone());
        }
    }

    for block in 0..nb {
        let cols = &block_cols[block];
        if cols.is_empty() {
            continue;
        }
        let region = Region::new(grid, grid.block_cells(block));
        // Restrict each supported column to the block.
        let fields: Vec<crate::fine::LocalField> = cols
            .iter()
            .map(|&c| {
                let col = &basis.columns[c];
                let mut flux = vec![0.0; region.num_local_edges()];
                for (&gid, &v) in col.idx.iter().zip(&col.val) {
                    if let Some(slot) = region.local_edge_slot(gid as usize) {
                        flux[slot] = v;
                    }
                }
                crate::fine::LocalField {
                    flux,
                    pressure: Vec::new(),
                }
            })
            .collect();
        let gram = forms::mass_gram(grid, kappa, &region, &fields);
        for (i, &ci) in cols.iter().enumerate() {
            for (j, &cj) in cols.iter().enumerate() {
                m_c[(ci, cj)] += gram[(i, j)];
            }
        }
    }

    // Coarse flux balance: B_c[K, j] = −Σ_{τ∈K} (D col_j)_τ.
    for (j, col) in basis.columns.iter().enumerate() {
        for (&gid, &v) in col.idx.iter().zip(&col.val) {
            let (minus, plus) = grid.edge_cells(gid as usize);
            if let Some(c) = minus {
                b_c[(grid.block_of_cell(c), j)] -= v;
            }
            if let Some(c) = plus {
                b_c[(grid.block_of_cell(c), j)] += v;
            }
        }
    }

    Ok(CoarseSystem {
        m_c,
        b_c,
        num_cols: m,
        num_blocks: nb,
    })
}

/// Solve the coarse saddle system for pointwise cell source values `f` and
/// expand the solution to the fine grid. The coarse pressure is gauged to
/// zero mean through a scalar multiplier.
pub fn solve_coarse(
    grid: &GridHierarchy,
    kappa: &PermField,
    basis: &BasisSet,
    f: &[f64],
) -> Result<MixedSolution> {
    let sys = assemble_coarse(grid, kappa, basis)?;
    solve_coarse_with(grid, &sys, basis, f)
}

pub fn solve_coarse_with(
    grid: &GridHierarchy,
    sys: &CoarseSystem,
    basis: &BasisSet,
    f: &[f64],
) -> Result<MixedSolution> {
    if f.len() != grid.num_cells() {
        return Err(Error::SizeMismatch {
            what: "source field",
            expected: grid.num_cells(),
            got: f.len(),
        });
    }
    let h2 = grid.h() * grid.h();
    let hc2 = grid.coarse_h() * grid.coarse_h();
    let m = sys.num_cols;
    let nb = sys.num_blocks;
    let dim = m + nb + 1;

    // Compatibility of the source.
    let total: f64 = f.iter().map(|v| v * h2).sum();
    let scale: f64 = f.iter().map(|v| (v * h2).abs()).sum();
    if total.abs() > COMPAT_TOL * scale.max(1e-300) && total.abs() > 1e-300 {
        return Err(Error::Incompatible {
            component: 0,
            defect: total.abs(),
        });
    }

    let mut mat = faer::Mat::<f64>::zeros(dim, dim);
    for i in 0..m {
        for j in 0..m {
            mat[(i, j)] = sys.m_c[(i, j)];
        }
    }
    for k in 0..nb {
        for j in 0..m {
            mat[(m + k, j)] = sys.b_c[(k, j)];
            mat[(j, m + k)] = sys.b_c[(k, j)];
        }
        mat[(m + k, dim - 1)] = hc2;
        mat[(dim - 1, m + k)] = hc2;
    }

    // Coarse source integrals in the symmetric convention: rhs = −∫_K f.
    let mut rhs = faer::Mat::<f64>::zeros(dim, 1);
    for (cell, &fv) in f.iter().enumerate() {
        rhs[(m + grid.block_of_cell(cell), 0)] -= fv * h2;
    }

    let lu = PartialPivLu::new(mat.as_ref());
    let mut x = lu.solve(&rhs);
    // Iterative refinement against the assembled matrix.
    let b_norm = rhs.norm_l2();
    let mut ok = b_norm == 0.0;
    if !ok {
        for _ in 0..6 {
            let r = &rhs - &mat * &x;
            let r_norm = r.norm_l2();
            if !r_norm.is_finite() {
                return Err(Error::Singular("non-finite coarse solve residual".into()));
            }
            if r_norm <= SOLVER_TOL * b_norm {
                ok = true;
                break;
            }
            let dx = lu.solve(&r);
            x += &dx;
        }
    }
    if !ok {
        let r_norm = (&rhs - &mat * &x).norm_l2();
        if r_norm > SOLVER_TOL * b_norm {
            // Try to name a dependent edge before giving up.
            if let Some(edge) = find_dependent_edge(sys, basis) {
                return Err(Error::DependentBasis { edge });
            }
            return Err(Error::ResidualTooLarge {
                residual: r_norm / b_norm,
                tol: SOLVER_TOL,
            });
        }
    }

    let coeffs: Vec<f64> = (0..m).map(|i| x[(i, 0)]).collect();
    let flux = basis.expand(&coeffs, grid.num_edges());
    let mut pressure = vec![0.0; grid.num_cells()];
    for cell in 0..grid.num_cells() {
        pressure[cell] = x[(m + grid.block_of_cell(cell), 0)];
    }
    Ok(MixedSolution { flux, pressure })
}

/// Scan per-edge diagonal blocks of the projected mass matrix for numerical
/// rank deficiency; returns the first offending edge.
fn find_dependent_edge(sys: &CoarseSystem, basis: &BasisSet) -> Option<usize> {
    for (edge, range) in &basis.per_edge {
        let l = range.len();
        if l == 0 {
            continue;
        }
        let block = nalgebra::DMatrix::from_fn(l, l, |i, j| {
            sys.m_c[(range.start + i, range.start + j)]
        });
        let eig = nalgebra::SymmetricEigen::new(block.clone());
        let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
        if min <= 1e-14 * max {
            return Some(*edge);
        }
    }
    None
}

/// Maximum over coarse blocks of `|∮_{∂K} v·n − ∫_K f|`.
pub fn coarse_conservation_check(grid: &GridHierarchy, flux: &[f64], f: &[f64]) -> f64 {
    let h2 = grid.h() * grid.h();
    let mut residual = vec![0.0; grid.num_coarse_blocks()];
    for cell in 0..grid.num_cells() {
        residual[grid.block_of_cell(cell)] += cell_divergence(grid, flux, cell) - f[cell] * h2;
    }
    residual.iter().fold(0.0f64, |a, r| a.max(r.abs()))
}

/// Project a fine solution into the snapshot space: per coarse block, solve
/// the local mixed problem with boundary flux `v_h·n` and the block-averaged
/// source, then match the pressure mean to the fine pressure.
pub fn project_fine(
    grid: &GridHierarchy,
    kappa: &PermField,
    fine: &MixedSolution,
    f: &[f64],
) -> Result<MixedSolution> {
    let h2 = grid.h() * grid.h();
    let mut out = MixedSolution::zeros(grid);
    out.flux.copy_from_slice(&fine.flux);
    use rayon::prelude::*;
    let results: Vec<(Region, crate::fine::LocalField)> = (0..grid.num_coarse_blocks())
        .into_par_iter()
        .map(|block| {
            let cells = grid.block_cells(block);
            let fbar = cells.iter().map(|&c| f[c]).sum::<f64>() / cells.len() as f64;
            let solver = RegionSolver::new(grid, kappa, cells)?;
            let region = solver.region();
            let g: Vec<f64> = region
                .boundary_edges
                .iter()
                .map(|&e| fine.flux[e])
                .collect();
            let f_int = vec![fbar * h2; region.num_cells()];
            let mut field = solver.solve(&f_int, &g)?;
            // Match the pressure mean on the block (cells are uniform).
            let mean_fine = region.cells.iter().map(|&c| fine.pressure[c]).sum::<f64>()
                / region.cells.len() as f64;
            let mean_local =
                field.pressure.iter().sum::<f64>() / field.pressure.len() as f64;
            for p in &mut field.pressure {
                *p += mean_fine - mean_local;
            }
            Ok((solver.region.clone(), field))
        })
        .collect::<Result<_>>()?;
    for (region, field) in &results {
        scatter_field(region, field, &mut out.flux, Some(&mut out.pressure));
        // Block-boundary edges keep the fine flux (shared consistently).
        for &e in &region.boundary_edges {
            out.flux[e] = fine.flux[e];
        }
    }
    Ok(out)
}

/// Relative weighted errors of a solution pair set.
#[derive(Debug, Clone, Copy)]
pub struct ErrorReport {
    pub e_of_v: f64,
    pub e_of_p: f64,
    pub e_os_v: f64,
    pub e_os_p: f64,
    pub e_pf_v: Option<f64>,
}

fn rel_velocity_error(
    grid: &GridHierarchy,
    kappa: &PermField,
    a: &[f64],
    reference: &[f64],
    what: &'static str,
) -> Result<f64> {
    let diff: Vec<f64> = a.iter().zip(reference).map(|(x, y)| x - y).collect();
    let den = forms::kappa_energy(grid, kappa, reference);
    if den <= 0.0 {
        return Err(Error::UndefinedMetric { what });
    }
    Ok((forms::kappa_energy(grid, kappa, &diff) / den).sqrt())
}

fn rel_pressure_error(
    grid: &GridHierarchy,
    a: &[f64],
    reference: &[f64],
    what: &'static str,
) -> Result<f64> {
    let diff: Vec<f64> = a.iter().zip(reference).map(|(x, y)| x - y).collect();
    let den = forms::pressure_l2_sq(grid, reference);
    if den <= 0.0 {
        return Err(Error::UndefinedMetric { what });
    }
    Ok((forms::pressure_l2_sq(grid, &diff) / den).sqrt())
}

/// Total and spectral errors of the offline solution against the fine and
/// snapshot solutions, plus the postprocessed velocity error when given.
pub fn error_report(
    grid: &GridHierarchy,
    kappa: &PermField,
    fine: &MixedSolution,
    snap: &MixedSolution,
    offline: &MixedSolution,
    post: Option<&MixedSolution>,
) -> Result<ErrorReport> {
    let e_of_v = rel_velocity_error(grid, kappa, &offline.flux, &fine.flux, "fine velocity")?;
    let e_of_p = rel_pressure_error(grid, &offline.pressure, &fine.pressure, "fine pressure")?;
    let e_os_v = rel_velocity_error(grid, kappa, &offline.flux, &snap.flux, "snapshot velocity")?;
    let e_os_p =
        rel_pressure_error(grid, &offline.pressure, &snap.pressure, "snapshot pressure")?;
    let e_pf_v = match post {
        Some(p) => Some(rel_velocity_error(
            grid,
            kappa,
            &p.flux,
            &fine.flux,
            "fine velocity",
        )?),
        None => None,
    };
    Ok(ErrorReport {
        e_of_v,
        e_of_p,
        e_os_v,
        e_os_p,
        e_pf_v,
    })
}
