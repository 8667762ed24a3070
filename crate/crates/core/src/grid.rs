//! Nested structured grid hierarchy on the unit square.
//!
//! The domain (0,1)² carries an n×n fine grid and an N×N coarse grid with
//! n divisible by N. Velocity unknowns live on fine edges as edge-integrated
//! normal fluxes; every edge has a fixed unit normal (+x for vertical edges,
//! +y for horizontal edges) so that flux signs are reproducible across runs.
//!
//! Index layout (row-major from the lower-left corner):
//! - cells: `id = iy * n + ix`
//! - vertical edges: `id = iy * (n + 1) + ix` with `ix ∈ 0..=n`, `iy ∈ 0..n`
//! - horizontal edges: `id = n*(n+1) + iy * n + ix` with `ix ∈ 0..n`, `iy ∈ 0..=n`
//!
//! Coarse blocks and coarse edges follow the same layout with N in place of n.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// Edge parallel to the x axis; fixed normal +y.
    Horizontal,
    /// Edge parallel to the y axis; fixed normal +x.
    Vertical,
}

/// One coarse-grid edge with its fine-edge decomposition and neighborhood.
#[derive(Debug, Clone)]
pub struct CoarseEdge {
    pub id: usize,
    pub orientation: Orientation,
    /// Coarse lattice coordinates: for vertical edges `ix ∈ 0..=N`, `iy ∈ 0..N`;
    /// for horizontal edges `ix ∈ 0..N`, `iy ∈ 0..=N`.
    pub ix: usize,
    pub iy: usize,
    /// Fine edges composing this coarse edge, ordered by increasing coordinate.
    pub fine_edges: Vec<usize>,
    /// Adjacent coarse blocks `[minus side, plus side]` relative to the fixed
    /// normal. Boundary edges have exactly one adjacent block.
    pub blocks: [Option<usize>; 2],
    pub boundary: bool,
}

impl CoarseEdge {
    /// Number of fine edges on this coarse edge (J_i).
    pub fn fine_count(&self) -> usize {
        self.fine_edges.len()
    }

    pub fn adjacent_blocks(&self) -> impl Iterator<Item = usize> + '_ {
        self.blocks.iter().flatten().copied()
    }
}

/// Nested fine/coarse structured grid with edge and cell index maps.
#[derive(Debug, Clone)]
pub struct GridHierarchy {
    n: usize,
    coarse_n: usize,
    coarse_edges: Vec<CoarseEdge>,
}

/// Construct the hierarchy, checking divisibility and the minimum refinement
/// ratio of 2.
pub fn build_hierarchy(n: usize, coarse_n: usize) -> Result<GridHierarchy> {
    if n < 2 || coarse_n < 2 {
        return Err(Error::Config(format!(
            "grid sizes must be at least 2, got n = {n}, N = {coarse_n}"
        )));
    }
    if n % coarse_n != 0 {
        return Err(Error::IndivisibleGrid { n, coarse_n });
    }
    let ratio = n / coarse_n;
    if ratio < 2 {
        return Err(Error::Config(format!(
            "refinement ratio n/N = {ratio} must be at least 2 (n = {n}, N = {coarse_n})"
        )));
    }

    let nc = coarse_n;
    let mut coarse_edges = Vec::with_capacity(2 * nc * (nc + 1));
    // Vertical coarse edges.
    for iy in 0..nc {
        for ix in 0..=nc {
            let id = iy * (nc + 1) + ix;
            let fine_ix = ix * ratio;
            let fine_edges = (iy * ratio..(iy + 1) * ratio)
                .map(|fy| fy * (n + 1) + fine_ix)
                .collect();
            let minus = (ix > 0).then(|| iy * nc + ix - 1);
            let plus = (ix < nc).then(|| iy * nc + ix);
            coarse_edges.push(CoarseEdge {
                id,
                orientation: Orientation::Vertical,
                ix,
                iy,
                fine_edges,
                blocks: [minus, plus],
                boundary: ix == 0 || ix == nc,
            });
        }
    }
    // Horizontal coarse edges.
    let offset = nc * (nc + 1);
    for iy in 0..=nc {
        for ix in 0..nc {
            let id = offset + iy * nc + ix;
            let fine_iy = iy * ratio;
            let fine_edges = (ix * ratio..(ix + 1) * ratio)
                .map(|fx| n * (n + 1) + fine_iy * n + fx)
                .collect();
            let minus = (iy > 0).then(|| (iy - 1) * nc + ix);
            let plus = (iy < nc).then(|| iy * nc + ix);
            coarse_edges.push(CoarseEdge {
                id,
                orientation: Orientation::Horizontal,
                ix,
                iy,
                fine_edges,
                blocks: [minus, plus],
                boundary: iy == 0 || iy == nc,
            });
        }
    }

    Ok(GridHierarchy {
        n,
        coarse_n,
        coarse_edges,
    })
}

impl GridHierarchy {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coarse_n(&self) -> usize {
        self.coarse_n
    }

    /// Fine mesh size h = 1/n.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Coarse mesh size H = 1/N.
    pub fn coarse_h(&self) -> f64 {
        1.0 / self.coarse_n as f64
    }

    /// Fine cells per coarse cell side.
    pub fn ratio(&self) -> usize {
        self.n / self.coarse_n
    }

    pub fn num_cells(&self) -> usize {
        self.n * self.n
    }

    pub fn num_vertical_edges(&self) -> usize {
        self.n * (self.n + 1)
    }

    pub fn num_edges(&self) -> usize {
        2 * self.n * (self.n + 1)
    }

    pub fn cell_id(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.n && iy < self.n);
        iy * self.n + ix
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.n, cell / self.n)
    }

    /// Center of a fine cell in domain coordinates.
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (ix, iy) = self.cell_coords(cell);
        let h = self.h();
        ((ix as f64 + 0.5) * h, (iy as f64 + 0.5) * h)
    }

    pub fn vedge_id(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix <= self.n && iy < self.n);
        iy * (self.n + 1) + ix
    }

    pub fn hedge_id(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.n && iy <= self.n);
        self.num_vertical_edges() + iy * self.n + ix
    }

    /// Orientation and lattice coordinates of a fine edge.
    pub fn edge_coords(&self, edge: usize) -> (Orientation, usize, usize) {
        let nv = self.num_vertical_edges();
        if edge < nv {
            (Orientation::Vertical, edge % (self.n + 1), edge / (self.n + 1))
        } else {
            let e = edge - nv;
            (Orientation::Horizontal, e % self.n, e / self.n)
        }
    }

    /// Edge ids of a cell as `[left, right, bottom, top]`.
    pub fn cell_edges(&self, cell: usize) -> [usize; 4] {
        let (ix, iy) = self.cell_coords(cell);
        [
            self.vedge_id(ix, iy),
            self.vedge_id(ix + 1, iy),
            self.hedge_id(ix, iy),
            self.hedge_id(ix, iy + 1),
        ]
    }

    /// Cells adjacent to an edge as `(minus side, plus side)` relative to the
    /// fixed normal; `None` outside the domain.
    pub fn edge_cells(&self, edge: usize) -> (Option<usize>, Option<usize>) {
        let (orient, ix, iy) = self.edge_coords(edge);
        match orient {
            Orientation::Vertical => (
                (ix > 0).then(|| self.cell_id(ix - 1, iy)),
                (ix < self.n).then(|| self.cell_id(ix, iy)),
            ),
            Orientation::Horizontal => (
                (iy > 0).then(|| self.cell_id(ix, iy - 1)),
                (iy < self.n).then(|| self.cell_id(ix, iy)),
            ),
        }
    }

    pub fn is_boundary_edge(&self, edge: usize) -> bool {
        let (minus, plus) = self.edge_cells(edge);
        minus.is_none() || plus.is_none()
    }

    pub fn num_coarse_blocks(&self) -> usize {
        self.coarse_n * self.coarse_n
    }

    pub fn num_coarse_edges(&self) -> usize {
        self.coarse_edges.len()
    }

    pub fn num_interior_coarse_edges(&self) -> usize {
        2 * self.coarse_n * (self.coarse_n - 1)
    }

    pub fn coarse_edges(&self) -> &[CoarseEdge] {
        &self.coarse_edges
    }

    pub fn coarse_edge(&self, id: usize) -> &CoarseEdge {
        &self.coarse_edges[id]
    }

    pub fn interior_coarse_edges(&self) -> impl Iterator<Item = &CoarseEdge> {
        self.coarse_edges.iter().filter(|e| !e.boundary)
    }

    pub fn block_id(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.coarse_n && iy < self.coarse_n);
        iy * self.coarse_n + ix
    }

    pub fn block_of_cell(&self, cell: usize) -> usize {
        let (ix, iy) = self.cell_coords(cell);
        let r = self.ratio();
        self.block_id(ix / r, iy / r)
    }

    /// Fine cells of a coarse block, sorted by cell id.
    pub fn block_cells(&self, block: usize) -> Vec<usize> {
        let bx = block % self.coarse_n;
        let by = block / self.coarse_n;
        let r = self.ratio();
        let mut cells = Vec::with_capacity(r * r);
        for iy in by * r..(by + 1) * r {
            for ix in bx * r..(bx + 1) * r {
                cells.push(self.cell_id(ix, iy));
            }
        }
        cells
    }

    /// Fine cells of the coarse neighborhood ω_i: the one or two blocks
    /// adjacent to the edge. Sorted by cell id.
    pub fn neighborhood(&self, edge: &CoarseEdge) -> Vec<usize> {
        let mut cells: Vec<usize> = edge
            .adjacent_blocks()
            .flat_map(|b| self.block_cells(b))
            .collect();
        cells.sort_unstable();
        cells
    }

    /// Cell bounding box `(x0, x1, y0, y1)` (inclusive) of ω_i.
    fn neighborhood_box(&self, edge: &CoarseEdge) -> (usize, usize, usize, usize) {
        let r = self.ratio();
        let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
        for b in edge.adjacent_blocks() {
            let bx = b % self.coarse_n;
            let by = b / self.coarse_n;
            x0 = x0.min(bx * r);
            x1 = x1.max((bx + 1) * r - 1);
            y0 = y0.min(by * r);
            y1 = y1.max((by + 1) * r - 1);
        }
        (x0, x1, y0, y1)
    }

    /// ω_i enlarged by `layers` rings of fine cells, clipped to the domain.
    pub fn oversampled_neighborhood(&self, edge: &CoarseEdge, layers: usize) -> Result<Vec<usize>> {
        if layers == 0 {
            return Err(Error::Config(
                "oversampling layers must be at least 1".into(),
            ));
        }
        let (x0, x1, y0, y1) = self.neighborhood_box(edge);
        let x0 = x0.saturating_sub(layers);
        let y0 = y0.saturating_sub(layers);
        let x1 = (x1 + layers).min(self.n - 1);
        let y1 = (y1 + layers).min(self.n - 1);
        let mut cells = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1));
        for iy in y0..=y1 {
            for ix in x0..=x1 {
                cells.push(self.cell_id(ix, iy));
            }
        }
        Ok(cells)
    }

    /// Default oversampling width: half a coarse block, at least one layer.
    pub fn default_oversampling_layers(&self) -> usize {
        (self.ratio() / 2).max(1)
    }
}
