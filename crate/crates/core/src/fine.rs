//! Lowest-order Raviart–Thomas mixed systems on the fine grid.
//!
//! Velocity unknowns are edge-integrated normal fluxes (`∫_e v·n̂` with the
//! fixed edge normal), pressure unknowns are cell constants. With this
//! normalization the per-cell velocity mass block for one direction is
//! `κ⁻¹ [[1/3, 1/6], [1/6, 1/3]]` coupling the two opposite parallel edges,
//! and the flux-balance matrix has entries ±1.
//!
//! Systems are assembled on a [`Region`] — any conforming union of fine
//! cells; the global problem is the region of all cells. Edges with both
//! neighbor cells inside the region carry velocity unknowns ("free"); the
//! remaining edges of region cells carry prescribed normal-flux data
//! ("boundary"). The pure-Neumann pressure gauge is a zero-mean constraint
//! per connected component, enforced through scalar Lagrange multipliers
//! rather than by pinning a cell.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMat, Triplet};

use crate::error::{Error, Result};
use crate::grid::GridHierarchy;
use crate::perm::PermField;

/// Relative compatibility tolerance for Neumann data (`|∫f − ∮g|` against the
/// data magnitude).
pub const COMPAT_TOL: f64 = 1e-10;

/// Relative algebraic residual contract for every saddle solve.
pub const SOLVER_TOL: f64 = 1e-12;

const MAX_REFINE: usize = 6;

/// One-direction RT0 velocity mass stencil on a single cell, weighted by
/// κ⁻¹, in edge-integrated flux coordinates. Exact integration of the two
/// opposite-edge shape functions gives diagonal 1/3 and off-diagonal 1/6
/// independent of the mesh size.
#[inline]
pub fn cell_mass_stencil(kappa_inv: f64) -> [[f64; 2]; 2] {
    [
        [kappa_inv / 3.0, kappa_inv / 6.0],
        [kappa_inv / 6.0, kappa_inv / 3.0],
    ]
}

/// Role of a fine edge relative to a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRole {
    /// Velocity unknown; local slot in `0..num_free`.
    Free(usize),
    /// Prescribed normal flux; local slot in `0..num_boundary`.
    Boundary(usize),
    Outside,
}

/// A conforming union of fine cells with its edge classification and
/// connected components.
#[derive(Debug, Clone)]
pub struct Region {
    /// Sorted global cell ids.
    pub cells: Vec<usize>,
    /// Sorted global ids of edges interior to the region.
    pub free_edges: Vec<usize>,
    /// Sorted global ids of region-boundary edges (including domain-boundary
    /// edges of region cells).
    pub boundary_edges: Vec<usize>,
    /// Connected component of each local cell.
    pub component: Vec<usize>,
    pub num_components: usize,
    /// Outward orientation of each boundary edge: +1 if the fixed normal
    /// points out of the region, −1 otherwise.
    pub outward_sign: Vec<f64>,
    /// Connected component adjacent to each boundary edge.
    pub boundary_component: Vec<usize>,
}

impl Region {
    pub fn new(grid: &GridHierarchy, mut cells: Vec<usize>) -> Region {
        cells.sort_unstable();
        cells.dedup();
        let in_region = |cell: Option<usize>| match cell {
            Some(c) => cells.binary_search(&c).is_ok(),
            None => false,
        };

        let mut free_edges = Vec::new();
        let mut boundary_edges = Vec::new();
        let mut outward_sign = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for &cell in &cells {
            for edge in grid.cell_edges(cell) {
                if !seen.insert(edge) {
                    continue;
                }
                let (minus, plus) = grid.edge_cells(edge);
                match (in_region(minus), in_region(plus)) {
                    (true, true) => free_edges.push(edge),
                    (true, false) => {
                        boundary_edges.push(edge);
                        outward_sign.push(1.0);
                    }
                    (false, true) => {
                        boundary_edges.push(edge);
                        outward_sign.push(-1.0);
                    }
                    (false, false) => unreachable!("edge of a region cell"),
                }
            }
        }
        // `seen` iteration was per-cell; re-sort boundary data together.
        let mut order: Vec<usize> = (0..boundary_edges.len()).collect();
        order.sort_unstable_by_key(|&i| boundary_edges[i]);
        let boundary_sorted: Vec<usize> = order.iter().map(|&i| boundary_edges[i]).collect();
        let sign_sorted: Vec<f64> = order.iter().map(|&i| outward_sign[i]).collect();
        free_edges.sort_unstable();

        let (component, num_components) =
            connected_components(grid, &cells, &free_edges, &boundary_sorted);

        let boundary_component = boundary_sorted
            .iter()
            .map(|&edge| {
                let (minus, plus) = grid.edge_cells(edge);
                let cell = [minus, plus]
                    .into_iter()
                    .flatten()
                    .find(|c| cells.binary_search(c).is_ok())
                    .expect("boundary edge touches a region cell");
                component[cells.binary_search(&cell).unwrap()]
            })
            .collect();

        Region {
            cells,
            free_edges,
            boundary_edges: boundary_sorted,
            component,
            num_components,
            outward_sign: sign_sorted,
            boundary_component,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_free(&self) -> usize {
        self.free_edges.len()
    }

    pub fn num_boundary(&self) -> usize {
        self.boundary_edges.len()
    }

    /// Total local edges; free edges take slots `0..num_free`, boundary
    /// edges follow.
    pub fn num_local_edges(&self) -> usize {
        self.free_edges.len() + self.boundary_edges.len()
    }

    pub fn cell_slot(&self, cell: usize) -> Option<usize> {
        self.cells.binary_search(&cell).ok()
    }

    pub fn edge_role(&self, edge: usize) -> EdgeRole {
        if let Ok(s) = self.free_edges.binary_search(&edge) {
            EdgeRole::Free(s)
        } else if let Ok(s) = self.boundary_edges.binary_search(&edge) {
            EdgeRole::Boundary(s)
        } else {
            EdgeRole::Outside
        }
    }

    /// Local edge slot in the combined free-then-boundary numbering.
    pub fn local_edge_slot(&self, edge: usize) -> Option<usize> {
        match self.edge_role(edge) {
            EdgeRole::Free(s) => Some(s),
            EdgeRole::Boundary(s) => Some(self.free_edges.len() + s),
            EdgeRole::Outside => None,
        }
    }

    /// Global edge id of a combined local slot.
    pub fn global_edge(&self, slot: usize) -> usize {
        if slot < self.free_edges.len() {
            self.free_edges[slot]
        } else {
            self.boundary_edges[slot - self.free_edges.len()]
        }
    }

    pub fn area(&self, grid: &GridHierarchy) -> f64 {
        let h = grid.h();
        self.cells.len() as f64 * h * h
    }
}

fn connected_components(
    grid: &GridHierarchy,
    cells: &[usize],
    free_edges: &[usize],
    _boundary: &[usize],
) -> (Vec<usize>, usize) {
    let mut component = vec![usize::MAX; cells.len()];
    let mut next = 0usize;
    let mut stack = Vec::new();
    for start in 0..cells.len() {
        if component[start] != usize::MAX {
            continue;
        }
        component[start] = next;
        stack.push(start);
        while let Some(local) = stack.pop() {
            for edge in grid.cell_edges(cells[local]) {
                if free_edges.binary_search(&edge).is_err() {
                    continue;
                }
                let (minus, plus) = grid.edge_cells(edge);
                for nb in [minus, plus].into_iter().flatten() {
                    if let Ok(nb_local) = cells.binary_search(&nb) {
                        if component[nb_local] == usize::MAX {
                            component[nb_local] = next;
                            stack.push(nb_local);
                        }
                    }
                }
            }
        }
        next += 1;
    }
    (component, next)
}

/// Velocity/pressure field supported on a region: flux per local edge slot
/// (free then boundary) and pressure per local cell. The associated region
/// defines the slot layout.
#[derive(Debug, Clone)]
pub struct LocalField {
    pub flux: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl LocalField {
    pub fn flux_at(&self, region: &Region, edge: usize) -> f64 {
        region
            .local_edge_slot(edge)
            .map_or(0.0, |slot| self.flux[slot])
    }
}

/// Fine-grid mixed solution: edge-integrated flux per fine edge and constant
/// pressure per fine cell, zero-mean per connected component of its region.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub flux: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl MixedSolution {
    pub fn zeros(grid: &GridHierarchy) -> MixedSolution {
        MixedSolution {
            flux: vec![0.0; grid.num_edges()],
            pressure: vec![0.0; grid.num_cells()],
        }
    }
}

/// Assembled and factorized saddle system on a region:
/// `[[M, Bᵀ, 0], [B, 0, C], [0, Cᵀ, 0]]`
/// with `B` the negated flux-balance matrix (so the block is symmetric) and
/// `C` the per-component cell-measure gauge columns. The factorization is
/// computed once; `solve` accepts arbitrary right-hand sides, so many local
/// problems on the same region reuse one factorization.
pub struct RegionSolver {
    pub region: Region,
    num_free: usize,
    dim: usize,
    /// Assembled matrix triplets, kept for residual evaluation.
    triplets: Vec<(usize, usize, f64)>,
    lu: Lu<usize, f64>,
    /// Momentum-row coupling to boundary-edge values: (free row, boundary slot, value).
    mass_fb: Vec<(usize, usize, f64)>,
    /// Flux-balance coupling of boundary edges: (cell row, boundary slot, ±1),
    /// in the sign convention of `B` (negated divergence).
    bal_fb: Vec<(usize, usize, f64)>,
    cell_measure: f64,
}

fn ensure_sequential_faer() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

impl RegionSolver {
    /// Assemble and factor the mixed system for `cells` of the grid.
    pub fn new(grid: &GridHierarchy, kappa: &PermField, cells: Vec<usize>) -> Result<RegionSolver> {
        if kappa.n() != grid.n() {
            return Err(Error::SizeMismatch {
                what: "permeability grid size",
                expected: grid.n(),
                got: kappa.n(),
            });
        }
        ensure_sequential_faer();
        let region = Region::new(grid, cells);
        let nf = region.num_free();
        let nc = region.num_cells();
        let dim = nf + nc + region.num_components;
        let h = grid.h();
        let cell_measure = h * h;

        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(16 * nc);
        let mut mass_fb = Vec::new();
        let mut bal_fb = Vec::new();

        let add_mass_pair = |region: &Region,
                                 e0: usize,
                                 e1: usize,
                                 kinv: f64,
                                 triplets: &mut Vec<(usize, usize, f64)>,
                                 mass_fb: &mut Vec<(usize, usize, f64)>| {
            let stencil = cell_mass_stencil(kinv);
            let roles = [region.edge_role(e0), region.edge_role(e1)];
            for (i, &ri) in roles.iter().enumerate() {
                let EdgeRole::Free(row) = ri else { continue };
                for (j, &rj) in roles.iter().enumerate() {
                    match rj {
                        EdgeRole::Free(col) => triplets.push((row, col, stencil[i][j])),
                        EdgeRole::Boundary(b) => mass_fb.push((row, b, stencil[i][j])),
                        EdgeRole::Outside => unreachable!(),
                    }
                }
            }
        };

        for (local, &cell) in region.cells.iter().enumerate() {
            let kinv = 1.0 / kappa.at(cell);
            let [left, right, bottom, top] = grid.cell_edges(cell);
            add_mass_pair(&region, left, right, kinv, &mut triplets, &mut mass_fb);
            add_mass_pair(&region, bottom, top, kinv, &mut triplets, &mut mass_fb);

            // Flux balance in the symmetric sign convention: B = −D where
            // (D v)_τ = v_R − v_L + v_T − v_B is the edge-integrated
            // divergence.
            let signed = [(left, 1.0), (right, -1.0), (bottom, 1.0), (top, -1.0)];
            for (edge, s) in signed {
                match region.edge_role(edge) {
                    EdgeRole::Free(slot) => {
                        triplets.push((nf + local, slot, s));
                        triplets.push((slot, nf + local, s));
                    }
                    EdgeRole::Boundary(b) => bal_fb.push((local, b, s)),
                    EdgeRole::Outside => unreachable!(),
                }
            }

            // Zero-mean pressure gauge per connected component.
            let comp_col = nf + nc + region.component[local];
            triplets.push((nf + local, comp_col, cell_measure));
            triplets.push((comp_col, nf + local, cell_measure));
        }

        let faer_trips: Vec<Triplet<usize, usize, f64>> = triplets
            .iter()
            .map(|&(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(dim, dim, &faer_trips)
            .map_err(|e| Error::Singular(format!("saddle assembly failed: {e:?}")))?;
        let symbolic = SymbolicLu::try_new(mat.symbolic())
            .map_err(|e| Error::Singular(format!("symbolic factorization failed: {e:?}")))?;
        let lu = Lu::try_new_with_symbolic(symbolic, mat.as_ref())
            .map_err(|e| Error::Singular(format!("numeric factorization failed: {e:?}")))?;

        Ok(RegionSolver {
            region,
            num_free: nf,
            dim,
            triplets,
            lu,
            mass_fb,
            bal_fb,
            cell_measure,
        })
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for &(r, c, v) in &self.triplets {
            y[r] += v * x[c];
        }
    }

    /// Check Neumann compatibility per connected component:
    /// `∫_comp f = ∮_comp g·n_out` within `COMPAT_TOL` relative to the data
    /// magnitude. `f_int` holds `∫_τ f` per local cell, `g` edge-integrated
    /// boundary fluxes per boundary slot.
    fn check_compatibility(&self, f_int: &[f64], g: &[f64]) -> Result<()> {
        let r = &self.region;
        let mut source = vec![0.0; r.num_components];
        let mut scale = vec![0.0; r.num_components];
        for (local, fi) in f_int.iter().enumerate() {
            source[r.component[local]] += fi;
            scale[r.component[local]] += fi.abs();
        }
        // A boundary edge touches exactly one region cell; attribute its
        // outflow to that cell's component.
        for (slot, g_b) in g.iter().enumerate() {
            let comp = r.boundary_component[slot];
            source[comp] -= r.outward_sign[slot] * g_b;
            scale[comp] += g_b.abs();
        }
        for comp in 0..r.num_components {
            let defect = source[comp].abs();
            if defect > COMPAT_TOL * scale[comp].max(1e-300) && defect > 1e-300 {
                return Err(Error::Incompatible {
                    component: comp,
                    defect,
                });
            }
        }
        Ok(())
    }

    /// Solve with per-cell source integrals `f_int[local] = ∫_τ f` and
    /// prescribed edge-integrated boundary fluxes `g` (one per boundary
    /// slot). Returns the field over region slots (boundary values copied
    /// from `g`) with zero-mean pressure per component.
    pub fn solve(&self, f_int: &[f64], g: &[f64]) -> Result<LocalField> {
        let r = &self.region;
        if f_int.len() != r.num_cells() {
            return Err(Error::SizeMismatch {
                what: "cell source vector",
                expected: r.num_cells(),
                got: f_int.len(),
            });
        }
        if g.len() != r.num_boundary() {
            return Err(Error::SizeMismatch {
                what: "boundary flux vector",
                expected: r.num_boundary(),
                got: g.len(),
            });
        }
        self.check_compatibility(f_int, g)?;

        let nf = self.num_free;
        let mut rhs = vec![0.0; self.dim];
        // Momentum rows: −M_fb g.
        for &(row, b, v) in &self.mass_fb {
            rhs[row] -= v * g[b];
        }
        // Balance rows: B_f v = −∫f − B_b g.
        for (local, fi) in f_int.iter().enumerate() {
            rhs[nf + local] = -fi;
        }
        for &(row, b, v) in &self.bal_fb {
            rhs[nf + row] -= v * g[b];
        }

        let x = self.solve_refined(&rhs)?;

        let mut flux = Vec::with_capacity(r.num_local_edges());
        flux.extend_from_slice(&x[..nf]);
        flux.extend_from_slice(g);
        let pressure = x[nf..nf + r.num_cells()].to_vec();
        Ok(LocalField { flux, pressure })
    }

    /// Direct solve of the assembled system with iterative refinement until
    /// the relative residual meets [`SOLVER_TOL`].
    fn solve_refined(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let dim = self.dim;
        let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if b_norm == 0.0 {
            return Ok(vec![0.0; dim]);
        }
        let to_mat = |v: &[f64]| faer::Mat::<f64>::from_fn(dim, 1, |i, _| v[i]);
        let mut x: Vec<f64> = {
            let sol = self.lu.solve(&to_mat(rhs));
            (0..dim).map(|i| sol[(i, 0)]).collect()
        };
        let mut residual = vec![0.0; dim];
        for _ in 0..MAX_REFINE {
            self.matvec(&x, &mut residual);
            for i in 0..dim {
                residual[i] = rhs[i] - residual[i];
            }
            let r_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !r_norm.is_finite() {
                return Err(Error::Singular("non-finite solve residual".into()));
            }
            if r_norm <= SOLVER_TOL * b_norm {
                return Ok(x);
            }
            let dx = self.lu.solve(&to_mat(&residual));
            for i in 0..dim {
                x[i] += dx[(i, 0)];
            }
        }
        self.matvec(&x, &mut residual);
        let r_norm = residual
            .iter()
            .zip(rhs)
            .map(|(ax, b)| (b - ax) * (b - ax))
            .sum::<f64>()
            .sqrt();
        if r_norm <= SOLVER_TOL * b_norm {
            Ok(x)
        } else {
            Err(Error::ResidualTooLarge {
                residual: r_norm / b_norm,
                tol: SOLVER_TOL,
            })
        }
    }

    pub fn cell_measure(&self) -> f64 {
        self.cell_measure
    }
}

/// Scatter a region field into global flux/pressure arrays.
pub fn scatter_field(
    region: &Region,
    field: &LocalField,
    flux: &mut [f64],
    pressure: Option<&mut [f64]>,
) {
    for (slot, value) in field.flux.iter().enumerate() {
        flux[region.global_edge(slot)] = *value;
    }
    if let Some(pressure) = pressure {
        for (local, &cell) in region.cells.iter().enumerate() {
            pressure[cell] = field.pressure[local];
        }
    }
}

/// Assemble the global fine system (all cells, zero normal flux on ∂D).
pub fn assemble(grid: &GridHierarchy, kappa: &PermField) -> Result<RegionSolver> {
    RegionSolver::new(grid, kappa, (0..grid.num_cells()).collect())
}

/// Solve the global fine problem for pointwise cell source values `f`
/// (so `∫_τ f = f_τ h²`) under the zero-Neumann boundary condition.
pub fn solve_global(grid: &GridHierarchy, kappa: &PermField, f: &[f64]) -> Result<MixedSolution> {
    let solver = assemble(grid, kappa)?;
    solve_global_with(grid, &solver, f)
}

/// Global solve reusing an assembled system (e.g. across right-hand sides).
pub fn solve_global_with(
    grid: &GridHierarchy,
    solver: &RegionSolver,
    f: &[f64],
) -> Result<MixedSolution> {
    if f.len() != grid.num_cells() {
        return Err(Error::SizeMismatch {
            what: "source field",
            expected: grid.num_cells(),
            got: f.len(),
        });
    }
    let h2 = solver.cell_measure();
    let f_int: Vec<f64> = solver.region.cells.iter().map(|&c| f[c] * h2).collect();
    let g = vec![0.0; solver.region.num_boundary()];
    let field = solver.solve(&f_int, &g)?;
    let mut out = MixedSolution::zeros(grid);
    scatter_field(&solver.region, &field, &mut out.flux, Some(&mut out.pressure));
    Ok(out)
}

/// Solve a local Neumann problem on an arbitrary conforming cell set with
/// prescribed edge-integrated boundary fluxes and a constant divergence per
/// coarse block (`block_rhs` maps block id → divergence value α; unlisted
/// blocks get zero).
pub fn solve_local_neumann(
    grid: &GridHierarchy,
    kappa: &PermField,
    cells: Vec<usize>,
    boundary_flux: &[(usize, f64)],
    block_rhs: &[(usize, f64)],
) -> Result<(Region, LocalField)> {
    let solver = RegionSolver::new(grid, kappa, cells)?;
    let region = solver.region();
    let mut g = vec![0.0; region.num_boundary()];
    for &(edge, value) in boundary_flux {
        match region.edge_role(edge) {
            EdgeRole::Boundary(slot) => g[slot] = value,
            _ => {
                return Err(Error::Config(format!(
                    "edge {edge} is not a boundary edge of the region"
                )))
            }
        }
    }
    let h2 = solver.cell_measure();
    let mut f_int = vec![0.0; region.num_cells()];
    for &(block, alpha) in block_rhs {
        for (local, &cell) in region.cells.iter().enumerate() {
            if grid.block_of_cell(cell) == block {
                f_int[local] = alpha * h2;
            }
        }
    }
    let field = solver.solve(&f_int, &g)?;
    let region = solver.region.clone();
    Ok((region, field))
}

/// Edge-integrated divergence of a flux field on one cell: `(D v)_τ = ∫_τ div v`.
pub fn cell_divergence(grid: &GridHierarchy, flux: &[f64], cell: usize) -> f64 {
    let [left, right, bottom, top] = grid.cell_edges(cell);
    flux[right] - flux[left] + flux[top] - flux[bottom]
}
