//! Local spectral model reduction on per-edge snapshot blocks.
//!
//! Three pencil kinds select the dominant snapshot modes:
//! - spectral-1: edge-trace form against (mass + div-div),
//! - spectral-2: mass form against the pressure-jump form,
//! - curl:       curl form against the mass form.
//!
//! Each pencil designates its SPD member; eigenvalues are reported ascending
//! for `a(v,w) = λ s(v,w)`. Spectral-2's jump form can be singular, so it is
//! solved in the swapped form `s z = μ a z` against its SPD mass side, with
//! μ = 0 mapped to a λ = +∞ sentinel ordered last.

use nalgebra::DMatrix;

use crate::basis::{assemble_combined, BasisSet, EdgeBlock};
use crate::error::{Error, Result};
use crate::forms;
use crate::grid::GridHierarchy;
use crate::perm::PermField;

/// Relative tolerance under which neighboring eigenvalues are treated as one
/// multiple eigenvalue during selection.
pub const MULTIPLICITY_TOL: f64 = 1e-9;

/// Residual contract for each computed eigenpair.
pub const EIG_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralKind {
    Spectral1,
    Spectral2,
    Curl,
}

impl SpectralKind {
    pub fn label(&self) -> &'static str {
        match self {
            SpectralKind::Spectral1 => "spectral1",
            SpectralKind::Spectral2 => "spectral2",
            SpectralKind::Curl => "curl",
        }
    }
}

/// Which member of the pencil is the designated SPD inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpdSide {
    A,
    S,
}

/// Matrix pencil `a(v,w) = λ s(v,w)` on one snapshot block.
#[derive(Debug, Clone)]
pub struct LocalPencil {
    pub edge: usize,
    pub kind: SpectralKind,
    pub a: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

impl LocalPencil {
    pub fn spd_side(&self) -> SpdSide {
        match self.kind {
            SpectralKind::Spectral1 | SpectralKind::Curl => SpdSide::S,
            SpectralKind::Spectral2 => SpdSide::A,
        }
    }

    /// The SPD matrix of the pencil.
    pub fn spd_matrix(&self) -> &DMatrix<f64> {
        match self.spd_side() {
            SpdSide::A => &self.a,
            SpdSide::S => &self.s,
        }
    }
}

/// Assemble the pencil of the requested kind from a snapshot block.
pub fn build_pencil(
    grid: &GridHierarchy,
    kappa: &PermField,
    block: &EdgeBlock,
    kind: SpectralKind,
) -> Result<LocalPencil> {
    let edge = grid.coarse_edge(block.edge_id);
    let region = &block.region;
    let fields = &block.fields;
    let (a, s) = match kind {
        SpectralKind::Spectral1 => {
            let a = forms::edge_trace_gram(grid, kappa, edge, region, fields);
            let s = forms::mass_gram(grid, kappa, region, fields)
                + forms::divdiv_gram(grid, region, fields);
            (a, s)
        }
        SpectralKind::Spectral2 => {
            if fields.iter().any(|f| f.pressure.len() != region.num_cells()) {
                return Err(Error::MissingPressures);
            }
            let a = forms::mass_gram(grid, kappa, region, fields);
            let s = forms::pressure_jump_gram(grid, edge, region, fields);
            (a, s)
        }
        SpectralKind::Curl => {
            let a = forms::curl_gram(grid, kappa, region, fields);
            let s = forms::mass_gram(grid, kappa, region, fields);
            (a, s)
        }
    };
    Ok(LocalPencil {
        edge: block.edge_id,
        kind,
        a,
        s,
    })
}

/// Eigenpairs of a pencil: ascending eigenvalues (possibly with trailing
/// +∞ sentinels) and coefficient vectors orthonormal in the pencil's SPD
/// inner product.
#[derive(Debug, Clone)]
pub struct PencilEigs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Dense symmetric-definite generalized eigensolve `A z = λ B z` with SPD B.
/// Returns ascending eigenvalues and B-orthonormal vectors.
fn sym_definite_eig(
    a: &DMatrix<f64>,
    b_spd: &DMatrix<f64>,
    edge: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = b_spd.clone().cholesky().ok_or(Error::DegeneratePencil {
        edge,
        msg: "designated SPD member failed its positive-definiteness check".into(),
    })?;
    let l = chol.l();
    let x = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::DegeneratePencil {
            edge,
            msg: "triangular solve failed".into(),
        })?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::DegeneratePencil {
            edge,
            msg: "triangular solve failed".into(),
        })?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(c);
    let m = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let lt = l.transpose();
    let mut vectors = DMatrix::zeros(m, m);
    for (k, &i) in order.iter().enumerate() {
        let y = eig.eigenvectors.column(i).into_owned();
        let z = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::DegeneratePencil {
                edge,
                msg: "back substitution failed".into(),
            })?;
        vectors.set_column(k, &z);
    }
    normalize_signs(&mut vectors);
    Ok((values, vectors))
}

/// Deterministic sign convention: the entry of largest magnitude in each
/// column is positive.
fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for k in 0..vectors.ncols() {
        let col = vectors.column(k);
        let mut best = 0usize;
        for i in 0..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            vectors.column_mut(k).neg_mut();
        }
    }
}

/// Solve the pencil, reporting eigenvalues ascending. Spectral-2 is solved
/// in swapped form against its SPD mass side; zero swapped eigenvalues
/// become +∞ sentinels ordered last.
pub fn solve_pencil(pencil: &LocalPencil) -> Result<PencilEigs> {
    let eigs = match pencil.spd_side() {
        SpdSide::S => {
            let (values, vectors) = sym_definite_eig(&pencil.a, &pencil.s, pencil.edge)?;
            PencilEigs { values, vectors }
        }
        SpdSide::A => {
            // s z = μ a z, μ ascending; report λ = 1/μ ascending.
            let (mu, vectors) = sym_definite_eig(&pencil.s, &pencil.a, pencil.edge)?;
            let m = mu.len();
            let mu_max = mu.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let mut values = Vec::with_capacity(m);
            let mut reordered = DMatrix::zeros(m, m);
            // Reverse: largest μ (smallest λ) first.
            for (k, i) in (0..m).rev().enumerate() {
                let lambda = if mu[i] <= 1e-14 * mu_max.max(1e-300) {
                    f64::INFINITY
                } else {
                    1.0 / mu[i]
                };
                values.push(lambda);
                reordered.set_column(k, &vectors.column(i).into_owned());
            }
            PencilEigs {
                values,
                vectors: reordered,
            }
        }
    };
    check_eig_residuals(pencil, &eigs)?;
    Ok(eigs)
}

fn check_eig_residuals(pencil: &LocalPencil, eigs: &PencilEigs) -> Result<()> {
    let a_norm = pencil.a.norm();
    let s_norm = pencil.s.norm();
    for (k, &lambda) in eigs.values.iter().enumerate() {
        if !lambda.is_finite() {
            continue;
        }
        let z = eigs.vectors.column(k);
        let r = &pencil.a * z - (&pencil.s * z) * lambda;
        let bound = EIG_RESIDUAL_TOL * (a_norm + lambda.abs() * s_norm);
        if r.norm() > bound {
            return Err(Error::DegeneratePencil {
                edge: pencil.edge,
                msg: format!(
                    "eigenpair {k} residual {:.3e} exceeds {:.3e}",
                    r.norm(),
                    bound
                ),
            });
        }
    }
    Ok(())
}

/// Extend a selection count over trailing multiplicities: if the eigenvalue
/// at the cut equals the last selected one within [`MULTIPLICITY_TOL`]
/// relative, the whole eigenspace is included.
fn extend_for_multiplicity(values: &[f64], l: usize) -> usize {
    let mut l = l;
    while l < values.len() {
        let (prev, next) = (values[l - 1], values[l]);
        if !prev.is_finite() || !next.is_finite() {
            break;
        }
        if (next - prev).abs() <= MULTIPLICITY_TOL * prev.abs().max(next.abs()) {
            l += 1;
        } else {
            break;
        }
    }
    l
}

/// Selected offline columns of one edge, as coefficient vectors in the
/// snapshot basis.
#[derive(Debug, Clone)]
pub struct EdgeSelection {
    pub edge: usize,
    pub coeff: DMatrix<f64>,
}

impl EdgeSelection {
    pub fn count(&self) -> usize {
        self.coeff.ncols()
    }
}

/// Select `l` offline basis vectors by ascending eigenvalue, growing over
/// multiplicities at the cut. For spectral-2 the constant-normal-trace field
/// is prepended as basis 1 and the remaining vectors are taken from its
/// orthogonal complement in the SPD (mass) inner product.
pub fn select_offline(
    pencil: &LocalPencil,
    eigs: &PencilEigs,
    l: usize,
) -> Result<EdgeSelection> {
    let j_count = eigs.values.len();
    if l < 1 || l > j_count {
        return Err(Error::SelectionOutOfRange {
            requested: l,
            max: j_count,
        });
    }
    match pencil.kind {
        SpectralKind::Spectral1 | SpectralKind::Curl => {
            let l = extend_for_multiplicity(&eigs.values, l);
            let coeff = eigs.vectors.columns(0, l).into_owned();
            Ok(EdgeSelection {
                edge: pencil.edge,
                coeff,
            })
        }
        SpectralKind::Spectral2 => select_spectral2(pencil, l),
    }
}

/// Spectral-2 selection: normalize the all-ones coefficient vector (the
/// constant-flux field of Chen–Hou type) in the mass inner product, build an
/// A-orthonormal complement, solve the reduced swapped pencil there, and
/// prepend the constant field. The prepended field counts toward `l`.
fn select_spectral2(pencil: &LocalPencil, l: usize) -> Result<EdgeSelection> {
    let a = &pencil.a;
    let j_count = a.nrows();
    let ones = DMatrix::from_element(j_count, 1, 1.0);
    let e_norm2 = (ones.transpose() * a * &ones)[(0, 0)];
    if e_norm2 <= 0.0 {
        return Err(Error::DegeneratePencil {
            edge: pencil.edge,
            msg: "constant-trace field has nonpositive mass energy".into(),
        });
    }
    let e = &ones / e_norm2.sqrt();

    if l == 1 {
        return Ok(EdgeSelection {
            edge: pencil.edge,
            coeff: e,
        });
    }

    // A-orthonormal basis of the complement of e via Gram–Schmidt over the
    // canonical coefficient directions.
    let scale = a.diagonal().iter().sum::<f64>() / j_count as f64;
    let mut q: Vec<DMatrix<f64>> = vec![e.clone()];
    for k in 0..j_count {
        if q.len() == j_count {
            break;
        }
        let mut v = DMatrix::zeros(j_count, 1);
        v[(k, 0)] = 1.0;
        for _ in 0..2 {
            for qi in &q {
                let proj = (qi.transpose() * a * &v)[(0, 0)];
                v -= qi * proj;
            }
        }
        let norm2 = (v.transpose() * a * &v)[(0, 0)];
        if norm2 > 1e-24 * scale {
            q.push(&v / norm2.sqrt());
        }
    }
    let m = q.len() - 1;
    let mut qmat = DMatrix::zeros(j_count, m);
    for (k, qi) in q.iter().skip(1).enumerate() {
        qmat.set_column(k, &qi.column(0));
    }

    // Reduced swapped pencil: Qᵀ S Q y = μ y (Qᵀ A Q = I).
    let s_r = qmat.transpose() * &pencil.s * &qmat;
    let s_r = (&s_r + s_r.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(s_r);
    let mut order: Vec<usize> = (0..m).collect();
    // Largest μ first: smallest λ = 1/μ.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mu_max = mu.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let lambdas: Vec<f64> = mu
        .iter()
        .map(|&m| {
            if m <= 1e-14 * mu_max.max(1e-300) {
                f64::INFINITY
            } else {
                1.0 / m
            }
        })
        .collect();
    let take = extend_for_multiplicity(&lambdas, l - 1).min(m);

    let mut coeff = DMatrix::zeros(j_count, 1 + take);
    coeff.set_column(0, &e.column(0));
    for (k, &i) in order.iter().take(take).enumerate() {
        let y = eig.eigenvectors.column(i).into_owned();
        let z = &qmat * y;
        coeff.set_column(1 + k, &z.column(0));
    }
    normalize_signs(&mut coeff);
    // Keep the constant field's own sign convention positive.
    if coeff[(0, 0)] < 0.0 {
        coeff.column_mut(0).neg_mut();
    }
    Ok(EdgeSelection {
        edge: pencil.edge,
        coeff,
    })
}

/// Offline space: per-edge spectra, selections, the assembled coefficient
/// matrix, and the Λ = min_i λ_{l_i+1} diagnostic.
#[derive(Debug, Clone)]
pub struct OfflineSpace {
    pub kind: SpectralKind,
    pub eigs: Vec<PencilEigs>,
    pub selections: Vec<EdgeSelection>,
    pub basis: BasisSet,
    pub lambda_next_min: Option<f64>,
}

impl OfflineSpace {
    pub fn num_columns(&self) -> usize {
        self.basis.num_columns()
    }
}

/// Build the offline space with `dof` basis functions per edge (before
/// multiplicity growth).
pub fn build_offline(
    grid: &GridHierarchy,
    kappa: &PermField,
    blocks: &[EdgeBlock],
    kind: SpectralKind,
    dof: usize,
) -> Result<OfflineSpace> {
    use rayon::prelude::*;
    let solved: Vec<(LocalPencil, PencilEigs)> = blocks
        .par_iter()
        .map(|block| {
            let pencil = build_pencil(grid, kappa, block, kind)?;
            let eigs = solve_pencil(&pencil)?;
            Ok((pencil, eigs))
        })
        .collect::<Result<_>>()?;
    let mut eigs = Vec::with_capacity(blocks.len());
    let mut selections = Vec::with_capacity(blocks.len());
    let mut lambda_next_min: Option<f64> = None;
    for (pencil, e) in solved {
        let sel = select_offline(&pencil, &e, dof)?;
        if sel.count() < e.values.len() {
            let next = e.values[sel.count()];
            lambda_next_min = Some(match lambda_next_min {
                Some(cur) => cur.min(next),
                None => next,
            });
        }
        selections.push(sel);
        eigs.push(e);
    }
    let coeffs: Vec<DMatrix<f64>> = selections.iter().map(|s| s.coeff.clone()).collect();
    let basis = assemble_combined(blocks, &coeffs);
    Ok(OfflineSpace {
        kind,
        eigs,
        selections,
        basis,
        lambda_next_min,
    })
}
