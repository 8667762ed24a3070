//! Per-coarse-edge snapshot spaces of unit-flux local solutions.
//!
//! For an interior coarse edge E_i with J_i fine edges, the j-th snapshot is
//! the field whose normal trace on E_i is the indicator of the j-th fine
//! edge, with zero normal flux on ∂ω_i, obtained by two independent block
//! solves whose constant divergence α keeps each block compatible:
//! `α·|K| = ±∫_{E_i} δ_j` with the sign set by the block side relative to
//! the fixed edge normal.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::basis::{assemble_identity, BasisSet, EdgeBlock};
use crate::error::{Error, Result};
use crate::fine::{LocalField, Region, RegionSolver};
use crate::grid::{CoarseEdge, GridHierarchy};
use crate::perm::PermField;

/// Build the snapshot block of one interior coarse edge with freshly
/// factored block systems.
pub fn build_edge_snapshots(
    grid: &GridHierarchy,
    kappa: &PermField,
    edge: &CoarseEdge,
) -> Result<EdgeBlock> {
    if edge.boundary {
        return Err(Error::Config(format!(
            "coarse edge {} lies on the domain boundary; snapshots are built for interior edges",
            edge.id
        )));
    }
    let minus = RegionSolver::new(grid, kappa, grid.block_cells(edge.blocks[0].unwrap()))?;
    let plus = RegionSolver::new(grid, kappa, grid.block_cells(edge.blocks[1].unwrap()))?;
    build_with_solvers(grid, edge, &minus, &plus)
}

/// Build snapshot blocks for every interior coarse edge, factoring each
/// coarse block once and sharing the factorizations across its edges.
pub fn build_all_snapshots(grid: &GridHierarchy, kappa: &PermField) -> Result<Vec<EdgeBlock>> {
    let block_solvers: Vec<RegionSolver> = (0..grid.num_coarse_blocks())
        .into_par_iter()
        .map(|b| RegionSolver::new(grid, kappa, grid.block_cells(b)))
        .collect::<Result<_>>()?;
    let edges: Vec<&CoarseEdge> = grid.interior_coarse_edges().collect();
    edges
        .par_iter()
        .map(|edge| {
            let minus = &block_solvers[edge.blocks[0].unwrap()];
            let plus = &block_solvers[edge.blocks[1].unwrap()];
            build_with_solvers(grid, edge, minus, plus)
        })
        .collect()
}

/// Solve the two block problems for a prescribed pointwise trace on E_i and
/// merge them into one ω_i-supported field.
pub(crate) fn solve_trace_field(
    grid: &GridHierarchy,
    edge: &CoarseEdge,
    minus: &RegionSolver,
    plus: &RegionSolver,
    omega: &Region,
    trace: &[f64],
) -> Result<LocalField> {
    let h = grid.h();
    let h2 = h * h;
    let hc = grid.coarse_h();
    let block_area = hc * hc;
    // ∫_{E_i} trace = Σ_e trace_e · h.
    let total: f64 = trace.iter().map(|t| t * h).sum();

    let mut flux = vec![0.0; omega.num_local_edges()];
    let mut pressure = vec![0.0; omega.num_cells()];
    for (side, solver) in [(0usize, minus), (1usize, plus)] {
        let region = solver.region();
        let mut g = vec![0.0; region.num_boundary()];
        for (j, &fine_edge) in edge.fine_edges.iter().enumerate() {
            match region.edge_role(fine_edge) {
                crate::fine::EdgeRole::Boundary(slot) => g[slot] = trace[j] * h,
                _ => unreachable!("coarse-edge fine edges bound both blocks"),
            }
        }
        // Outward normal of the minus block equals the fixed normal.
        let sign = if side == 0 { 1.0 } else { -1.0 };
        let alpha = sign * total / block_area;
        let f_int = vec![alpha * h2; region.num_cells()];
        let field = solver.solve(&f_int, &g)?;
        for (slot, value) in field.flux.iter().enumerate() {
            let gid = region.global_edge(slot);
            let oslot = omega.local_edge_slot(gid).expect("block edge in omega");
            flux[oslot] = *value;
        }
        for (local, &cell) in region.cells.iter().enumerate() {
            let oslot = omega.cell_slot(cell).expect("block cell in omega");
            pressure[oslot] = field.pressure[local];
        }
    }
    Ok(LocalField { flux, pressure })
}

fn build_with_solvers(
    grid: &GridHierarchy,
    edge: &CoarseEdge,
    minus: &RegionSolver,
    plus: &RegionSolver,
) -> Result<EdgeBlock> {
    let omega = Region::new(grid, grid.neighborhood(edge));
    let j_count = edge.fine_count();
    let mut fields = Vec::with_capacity(j_count);
    let mut trace = vec![0.0; j_count];
    for j in 0..j_count {
        trace.fill(0.0);
        trace[j] = 1.0;
        fields.push(solve_trace_field(grid, edge, minus, plus, &omega, &trace)?);
    }
    Ok(EdgeBlock {
        edge_id: edge.id,
        region: omega,
        fields,
    })
}

/// Assemble the global snapshot coefficient matrix with columns ordered by
/// (edge id, local index); the column count is `M_snap = Σ_i J_i` over
/// interior edges.
pub fn assemble_r_snap(blocks: &[EdgeBlock]) -> BasisSet {
    assemble_identity(blocks)
}

/// Normal trace of a region field on a coarse edge, as pointwise values per
/// fine edge.
pub fn edge_trace(
    grid: &GridHierarchy,
    edge: &CoarseEdge,
    region: &Region,
    field: &LocalField,
) -> Vec<f64> {
    let h = grid.h();
    edge.fine_edges
        .iter()
        .map(|&e| field.flux_at(region, e) / h)
        .collect()
}

/// Binary dump of basis columns: header of three little-endian u64 values
/// (n, N, column count) followed by the columns as dense f64 vectors over
/// all fine edges, column-major, little endian.
pub fn write_columns_dump(path: &Path, grid: &GridHierarchy, basis: &BasisSet) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for header in [
        grid.n() as u64,
        grid.coarse_n() as u64,
        basis.num_columns() as u64,
    ] {
        file.write_all(&header.to_le_bytes())?;
    }
    let num_edges = grid.num_edges();
    let mut dense = vec![0.0f64; num_edges];
    for col in &basis.columns {
        dense.fill(0.0);
        col.axpy_into(1.0, &mut dense);
        for v in &dense {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Read back a column dump written by [`write_columns_dump`].
pub fn read_columns_dump(path: &Path) -> Result<(u64, u64, Vec<Vec<f64>>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut buf8 = [0u8; 8];
    let mut header = [0u64; 3];
    for h in &mut header {
        file.read_exact(&mut buf8)?;
        *h = u64::from_le_bytes(buf8);
    }
    let [n, coarse_n, cols] = header;
    let num_edges = 2 * (n as usize) * (n as usize + 1);
    let mut columns = Vec::with_capacity(cols as usize);
    for _ in 0..cols {
        let mut col = Vec::with_capacity(num_edges);
        for _ in 0..num_edges {
            file.read_exact(&mut buf8)?;
            col.push(f64::from_le_bytes(buf8));
        }
        columns.push(col);
    }
    Ok((n, coarse_n, columns))
}

/// Columns of a snapshot block restricted to their E_i traces; the identity
/// for true snapshot blocks.
pub fn trace_matrix(grid: &GridHierarchy, edge: &CoarseEdge, block: &EdgeBlock) -> Vec<Vec<f64>> {
    block
        .fields
        .iter()
        .map(|f| edge_trace(grid, edge, &block.region, f))
        .collect()
}
