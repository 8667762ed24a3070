//! Sparse per-edge basis columns and their assembly into the global
//! coarse-to-fine coefficient matrix.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::fine::{LocalField, Region};

/// One velocity basis column: values on its supporting fine edges, sorted by
/// global edge id.
#[derive(Debug, Clone)]
pub struct SparseField {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseField {
    pub fn from_local(region: &Region, flux: &[f64]) -> SparseField {
        let mut entries: Vec<(u32, f64)> = flux
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(slot, &v)| (region.global_edge(slot) as u32, v))
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        SparseField {
            idx: entries.iter().map(|e| e.0).collect(),
            val: entries.iter().map(|e| e.1).collect(),
        }
    }

    pub fn at(&self, edge: usize) -> f64 {
        match self.idx.binary_search(&(edge as u32)) {
            Ok(pos) => self.val[pos],
            Err(_) => 0.0,
        }
    }

    /// Add `scale` times this column into a global flux vector.
    pub fn axpy_into(&self, scale: f64, out: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i as usize] += scale * v;
        }
    }
}

/// Columns of a coarse-to-fine map (`R_snap`, `R_off`, or an oversampled
/// variant), grouped by coarse edge in edge-id order.
#[derive(Debug, Clone)]
pub struct BasisSet {
    pub columns: Vec<SparseField>,
    pub per_edge: Vec<(usize, Range<usize>)>,
}

impl BasisSet {
    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn edge_of_column(&self, col: usize) -> usize {
        self.per_edge
            .iter()
            .find(|(_, r)| r.contains(&col))
            .map(|(edge, _)| *edge)
            .expect("column in range")
    }

    /// Expand a coefficient vector into a global fine flux field.
    pub fn expand(&self, coeffs: &[f64], num_edges: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_edges];
        for (col, &c) in self.columns.iter().zip(coeffs) {
            col.axpy_into(c, &mut out);
        }
        out
    }
}

/// Per-edge blocks of velocity fields supported in a neighborhood region,
/// e.g. the unit-flux snapshots of a coarse edge or oversampled POD modes.
#[derive(Debug, Clone)]
pub struct EdgeBlock {
    pub edge_id: usize,
    pub region: Region,
    pub fields: Vec<LocalField>,
}

impl EdgeBlock {
    pub fn count(&self) -> usize {
        self.fields.len()
    }
}

/// Identity assembly: every field of every block becomes one column, ordered
/// by (edge id, local index).
pub fn assemble_identity(blocks: &[EdgeBlock]) -> BasisSet {
    let mut columns = Vec::new();
    let mut per_edge = Vec::new();
    for block in blocks {
        let start = columns.len();
        for field in &block.fields {
            columns.push(SparseField::from_local(&block.region, &field.flux));
        }
        per_edge.push((block.edge_id, start..columns.len()));
    }
    BasisSet { columns, per_edge }
}

/// Assemble combination columns `Σ_j coeff[j][k] · field_j` per block.
pub fn assemble_combined(blocks: &[EdgeBlock], coeffs: &[DMatrix<f64>]) -> BasisSet {
    assert_eq!(blocks.len(), coeffs.len());
    let mut columns = Vec::new();
    let mut per_edge = Vec::new();
    for (block, z) in blocks.iter().zip(coeffs) {
        assert_eq!(z.nrows(), block.fields.len());
        let start = columns.len();
        let nslots = block.region.num_local_edges();
        for k in 0..z.ncols() {
            let mut flux = vec![0.0; nslots];
            for (j, field) in block.fields.iter().enumerate() {
                let c = z[(j, k)];
                if c != 0.0 {
                    for (slot, value) in field.flux.iter().enumerate() {
                        flux[slot] += c * value;
                    }
                }
            }
            columns.push(SparseField::from_local(&block.region, &flux));
        }
        per_edge.push((block.edge_id, start..columns.len()));
    }
    BasisSet { columns, per_edge }
}
