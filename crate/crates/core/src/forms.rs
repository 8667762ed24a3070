//! Bilinear forms evaluated on region-supported velocity fields.
//!
//! Every Gram matrix here is accumulated symmetrically from per-cell or
//! per-edge contributions, so symmetry holds to round-off by construction.
//! Velocity values are edge-integrated fluxes; pointwise normal components
//! on an edge are `flux / h`.

use nalgebra::DMatrix;

use crate::fine::{cell_mass_stencil, LocalField, Region};
use crate::grid::{CoarseEdge, GridHierarchy};
use crate::perm::PermField;

/// κ⁻¹ on a fine edge: average of the inverse permeabilities of the one or
/// two adjacent cells.
fn edge_kappa_inv(grid: &GridHierarchy, kappa: &PermField, edge: usize) -> f64 {
    let (minus, plus) = grid.edge_cells(edge);
    let mut sum = 0.0;
    let mut count = 0.0;
    for cell in [minus, plus].into_iter().flatten() {
        sum += 1.0 / kappa.at(cell);
        count += 1.0;
    }
    sum / count
}

/// `∫_R κ⁻¹ u·w` over the region for each field pair.
pub fn mass_gram(
    grid: &GridHierarchy,
    kappa: &PermField,
    region: &Region,
    fields: &[LocalField],
) -> DMatrix<f64> {
    let m = fields.len();
    let mut gram = DMatrix::zeros(m, m);
    let mut vals = vec![[0.0f64; 2]; m];
    for &cell in &region.cells {
        let kinv = 1.0 / kappa.at(cell);
        let stencil = cell_mass_stencil(kinv);
        let [left, right, bottom, top] = grid.cell_edges(cell);
        for pair in [[left, right], [bottom, top]] {
            let s0 = region.local_edge_slot(pair[0]).expect("region edge");
            let s1 = region.local_edge_slot(pair[1]).expect("region edge");
            for (k, f) in fields.iter().enumerate() {
                vals[k] = [f.flux[s0], f.flux[s1]];
            }
            for i in 0..m {
                for j in i..m {
                    let mut acc = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            acc += stencil[a][b] * vals[i][a] * vals[j][b];
                        }
                    }
                    gram[(i, j)] += acc;
                    if i != j {
                        gram[(j, i)] += acc;
                    }
                }
            }
        }
    }
    gram
}

/// `∫_R div u · div w` for each field pair.
pub fn divdiv_gram(grid: &GridHierarchy, region: &Region, fields: &[LocalField]) -> DMatrix<f64> {
    let m = fields.len();
    let h2 = grid.h() * grid.h();
    let mut gram = DMatrix::zeros(m, m);
    let mut divs = vec![0.0f64; m];
    for &cell in &region.cells {
        let [left, right, bottom, top] = grid.cell_edges(cell);
        let slots = [
            region.local_edge_slot(left).unwrap(),
            region.local_edge_slot(right).unwrap(),
            region.local_edge_slot(bottom).unwrap(),
            region.local_edge_slot(top).unwrap(),
        ];
        for (k, f) in fields.iter().enumerate() {
            // Pointwise divergence = edge-integrated divergence / |τ|.
            divs[k] = (f.flux[slots[1]] - f.flux[slots[0]] + f.flux[slots[3]] - f.flux[slots[2]])
                / h2;
        }
        for i in 0..m {
            for j in i..m {
                let acc = divs[i] * divs[j] * h2;
                gram[(i, j)] += acc;
                if i != j {
                    gram[(j, i)] += acc;
                }
            }
        }
    }
    gram
}

/// `∫_{E} κ⁻¹ (u·m)(w·m)` over the fine edges of a coarse edge.
pub fn edge_trace_gram(
    grid: &GridHierarchy,
    kappa: &PermField,
    edge: &CoarseEdge,
    region: &Region,
    fields: &[LocalField],
) -> DMatrix<f64> {
    let m = fields.len();
    let h = grid.h();
    let mut gram = DMatrix::zeros(m, m);
    for &fine_edge in &edge.fine_edges {
        let slot = region.local_edge_slot(fine_edge).expect("edge in region");
        let kinv = edge_kappa_inv(grid, kappa, fine_edge);
        // Pointwise traces u·m = flux / h; weight h for the edge measure.
        let w = kinv / h;
        for i in 0..m {
            for j in i..m {
                let acc = w * fields[i].flux[slot] * fields[j].flux[slot];
                gram[(i, j)] += acc;
                if i != j {
                    gram[(j, i)] += acc;
                }
            }
        }
    }
    gram
}

/// `∫_{E} [p_u][p_w]` over the fine edges of a coarse edge, with `[p]` the
/// pressure jump from the minus to the plus side of the fixed normal.
pub fn pressure_jump_gram(
    grid: &GridHierarchy,
    edge: &CoarseEdge,
    region: &Region,
    fields: &[LocalField],
) -> DMatrix<f64> {
    let m = fields.len();
    let h = grid.h();
    let mut gram = DMatrix::zeros(m, m);
    let mut jumps = vec![0.0f64; m];
    for &fine_edge in &edge.fine_edges {
        let (minus, plus) = grid.edge_cells(fine_edge);
        let (minus, plus) = (minus.expect("interior"), plus.expect("interior"));
        let sm = region.cell_slot(minus).expect("cell in region");
        let sp = region.cell_slot(plus).expect("cell in region");
        for (k, f) in fields.iter().enumerate() {
            jumps[k] = f.pressure[sm] - f.pressure[sp];
        }
        for i in 0..m {
            for j in i..m {
                let acc = h * jumps[i] * jumps[j];
                gram[(i, j)] += acc;
                if i != j {
                    gram[(j, i)] += acc;
                }
            }
        }
    }
    gram
}

/// `∫_R curl(κ⁻¹u)·curl(κ⁻¹w)` with the discrete curl defined as the
/// circulation of κ⁻¹u around each region-interior fine vertex divided by
/// the cell area.
pub fn curl_gram(
    grid: &GridHierarchy,
    kappa: &PermField,
    region: &Region,
    fields: &[LocalField],
) -> DMatrix<f64> {
    let m = fields.len();
    let n = grid.n();
    let h = grid.h();
    let h2 = h * h;
    let mut gram = DMatrix::zeros(m, m);
    let mut circs = vec![0.0f64; m];
    for &cell in &region.cells {
        // Assign each interior vertex to its lower-left cell so it is
        // visited exactly once.
        let (ix, iy) = grid.cell_coords(cell);
        let (vx, vy) = (ix + 1, iy + 1);
        if vx >= n || vy >= n {
            continue;
        }
        let others = [
            grid.cell_id(vx, vy - 1),
            grid.cell_id(vx - 1, vy),
            grid.cell_id(vx, vy),
        ];
        if others.iter().any(|c| region.cell_slot(*c).is_none()) {
            continue;
        }
        // Edges incident to the vertex: south/north vertical, west/east
        // horizontal. Counterclockwise circulation over the dual loop of
        // side h crossing each incident edge once.
        let south = grid.vedge_id(vx, vy - 1);
        let north = grid.vedge_id(vx, vy);
        let west = grid.hedge_id(vx - 1, vy);
        let east = grid.hedge_id(vx, vy);
        let coeffs = [
            (south, 1.0, edge_kappa_inv(grid, kappa, south)),
            (east, 1.0, edge_kappa_inv(grid, kappa, east)),
            (north, -1.0, edge_kappa_inv(grid, kappa, north)),
            (west, -1.0, edge_kappa_inv(grid, kappa, west)),
        ];
        for (k, f) in fields.iter().enumerate() {
            let mut c = 0.0;
            for &(e, sign, kinv) in &coeffs {
                let slot = region.local_edge_slot(e).expect("incident edge in region");
                // Pointwise normal component times segment length h: the
                // fluxes are already edge-integrated, so the factor is kinv.
                c += sign * kinv * f.flux[slot];
            }
            circs[k] = c;
        }
        for i in 0..m {
            for j in i..m {
                // curl = circulation / h²; vertex weight h².
                let acc = circs[i] * circs[j] / h2;
                gram[(i, j)] += acc;
                if i != j {
                    gram[(j, i)] += acc;
                }
            }
        }
    }
    gram
}

/// Squared κ⁻¹-weighted L² norm of a global flux field.
pub fn kappa_energy(grid: &GridHierarchy, kappa: &PermField, flux: &[f64]) -> f64 {
    let mut acc = 0.0;
    for cell in 0..grid.num_cells() {
        let stencil = cell_mass_stencil(1.0 / kappa.at(cell));
        let [left, right, bottom, top] = grid.cell_edges(cell);
        for [e0, e1] in [[left, right], [bottom, top]] {
            let (a, b) = (flux[e0], flux[e1]);
            acc += stencil[0][0] * a * a
                + stencil[1][1] * b * b
                + 2.0 * stencil[0][1] * a * b;
        }
    }
    acc
}

/// Squared L² norm of a cell-wise constant pressure field.
pub fn pressure_l2_sq(grid: &GridHierarchy, pressure: &[f64]) -> f64 {
    let h2 = grid.h() * grid.h();
    pressure.iter().map(|p| p * p * h2).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fine::Region;
    use crate::grid::{build_hierarchy, Orientation};
    use crate::perm::PermField;

    /// Indicator fields on a region: one per local edge slot.
    fn indicator_fields(region: &Region, slots: &[usize]) -> Vec<LocalField> {
        slots
            .iter()
            .map(|&s| {
                let mut flux = vec![0.0; region.num_local_edges()];
                flux[s] = 1.0;
                LocalField {
                    flux,
                    pressure: vec![0.0; region.num_cells()],
                }
            })
            .collect()
    }

    #[test]
    fn mass_gram_reproduces_cell_stencil() {
        // One-cell region, unit-flux indicators on its horizontal pair:
        // 1/3 diagonal, 1/6 cross, zero coupling to the vertical pair.
        let grid = build_hierarchy(4, 2).unwrap();
        let kappa = PermField::uniform(4);
        let cell = grid.cell_id(1, 1);
        let region = Region::new(&grid, vec![cell]);
        let [left, right, bottom, _top] = grid.cell_edges(cell);
        let sl = region.local_edge_slot(left).unwrap();
        let sr = region.local_edge_slot(right).unwrap();
        let sb = region.local_edge_slot(bottom).unwrap();
        let fields = indicator_fields(&region, &[sl, sr, sb]);
        let g = mass_gram(&grid, &kappa, &region, &fields);
        assert!((g[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((g[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        assert!((g[(0, 1)] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(g[(0, 2)], 0.0);
        // κ scaling: doubling κ halves the gram.
        let kappa2 = PermField::from_values(
            4,
            vec![2.0; 16],
            crate::perm::Provenance::Synthetic,
        )
        .unwrap();
        let g2 = mass_gram(&grid, &kappa2, &region, &fields);
        assert!((g2[(0, 0)] - g[(0, 0)] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn curl_of_constant_field_vanishes() {
        // A constant κ⁻¹v (κ ≡ 1, uniform unit horizontal velocity) has zero
        // circulation around every interior vertex.
        let grid = build_hierarchy(6, 3).unwrap();
        let kappa = PermField::uniform(6);
        let region = Region::new(&grid, (0..36).collect());
        let mut flux = vec![0.0; region.num_local_edges()];
        let h = grid.h();
        for (slot, value) in flux.iter_mut().enumerate() {
            let edge = region.global_edge(slot);
            if matches!(grid.edge_coords(edge).0, Orientation::Vertical) {
                *value = h; // pointwise velocity 1
            }
        }
        let fields = vec![LocalField {
            flux,
            pressure: vec![0.0; region.num_cells()],
        }];
        let g = curl_gram(&grid, &kappa, &region, &fields);
        assert!(g[(0, 0)].abs() < 1e-24);
    }

    #[test]
    fn divdiv_counts_divergent_cell() {
        let grid = build_hierarchy(4, 2).unwrap();
        let kappa = PermField::uniform(4);
        let cell = grid.cell_id(1, 1);
        let region = Region::new(&grid, vec![cell]);
        let [_l, right, _b, _t] = grid.cell_edges(cell);
        let sr = region.local_edge_slot(right).unwrap();
        let fields = indicator_fields(&region, &[sr]);
        let g = divdiv_gram(&grid, &region, &fields);
        // div = 1/h² on one cell of measure h²  →  ∫ (div)² = 1/h².
        let h2 = grid.h() * grid.h();
        assert!((g[(0, 0)] - 1.0 / h2).abs() < 1e-9);
        let _ = kappa;
    }
}
