//! Python bindings: the main grid/permeability/solver types and the
//! multiscale workflow as plain functions returning lists and floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gmsfem::basis::BasisSet;
use gmsfem::coarse;
use gmsfem::fine;
use gmsfem::grid::GridHierarchy;
use gmsfem::perm::PermField;
use gmsfem::snapshot;
use gmsfem::spectral::{self, SpectralKind};
use gmsfem::transport;
use gmsfem::{Error, ErrorCategory};

fn to_py_err(err: Error) -> PyErr {
    match err.category() {
        ErrorCategory::Config => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn parse_kind(kind: &str) -> PyResult<SpectralKind> {
    match kind {
        "spectral1" => Ok(SpectralKind::Spectral1),
        "spectral2" => Ok(SpectralKind::Spectral2),
        "curl" => Ok(SpectralKind::Curl),
        other => Err(PyValueError::new_err(format!(
            "spectral kind must be spectral1, spectral2 or curl, got {other}"
        ))),
    }
}

/// Nested fine/coarse structured grid on the unit square.
#[pyclass(name = "Grid")]
struct PyGrid {
    inner: GridHierarchy,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(n: usize, coarse_n: usize) -> PyResult<Self> {
        Ok(PyGrid {
            inner: gmsfem::grid::build_hierarchy(n, coarse_n).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn coarse_n(&self) -> usize {
        self.inner.coarse_n()
    }

    #[getter]
    fn ratio(&self) -> usize {
        self.inner.ratio()
    }

    fn num_cells(&self) -> usize {
        self.inner.num_cells()
    }

    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    fn num_interior_coarse_edges(&self) -> usize {
        self.inner.num_interior_coarse_edges()
    }

    /// Corner source pair (flow source f, injection r) as cell-value lists.
    fn corner_source(&self) -> (Vec<f64>, Vec<f64>) {
        transport::corner_source(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Grid(n={}, N={})", self.inner.n(), self.inner.coarse_n())
    }
}

/// Cell-wise positive permeability at fine resolution.
#[pyclass(name = "PermField")]
struct PyPerm {
    inner: PermField,
}

#[pymethods]
impl PyPerm {
    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("PermField(n={})", self.inner.n())
    }
}

#[pyfunction]
fn uniform_field(n: usize) -> PyPerm {
    PyPerm {
        inner: PermField::uniform(n),
    }
}

#[pyfunction]
fn synthetic_field(n: usize, seed: u64, contrast: f64) -> PyResult<PyPerm> {
    Ok(PyPerm {
        inner: gmsfem::perm::synthetic_field(n, seed, contrast).map_err(to_py_err)?,
    })
}

#[pyfunction]
fn periodic_field(n: usize, epsilon: f64) -> PyResult<PyPerm> {
    Ok(PyPerm {
        inner: gmsfem::perm::periodic_field(n, epsilon).map_err(to_py_err)?,
    })
}

#[pyfunction]
fn load_spe10_layer(path: std::path::PathBuf, layer: usize, target_n: usize) -> PyResult<PyPerm> {
    Ok(PyPerm {
        inner: gmsfem::perm::load_layer(&path, layer, target_n).map_err(to_py_err)?,
    })
}

/// Fine-grid mixed solution: edge-integrated fluxes and cell pressures.
#[pyclass(name = "Solution")]
struct PySolution {
    inner: fine::MixedSolution,
}

#[pymethods]
impl PySolution {
    fn flux(&self) -> Vec<f64> {
        self.inner.flux.clone()
    }

    fn pressure(&self) -> Vec<f64> {
        self.inner.pressure.clone()
    }
}

/// A coarse velocity basis (snapshot or offline) with its spectra.
#[pyclass(name = "Basis")]
struct PyBasis {
    basis: BasisSet,
    eigenvalues: Vec<Vec<f64>>,
    lambda_next_min: Option<f64>,
}

#[pymethods]
impl PyBasis {
    fn num_columns(&self) -> usize {
        self.basis.num_columns()
    }

    /// Ascending eigenvalues of one interior coarse edge (by build order);
    /// empty for snapshot bases.
    fn eigenvalues(&self, edge_index: usize) -> PyResult<Vec<f64>> {
        self.eigenvalues
            .get(edge_index)
            .cloned()
            .ok_or_else(|| PyValueError::new_err("edge index out of range"))
    }

    #[getter]
    fn lambda_next_min(&self) -> Option<f64> {
        self.lambda_next_min
    }
}

#[pyfunction]
fn solve_fine(grid: &PyGrid, kappa: &PyPerm, f: Vec<f64>) -> PyResult<PySolution> {
    Ok(PySolution {
        inner: fine::solve_global(&grid.inner, &kappa.inner, &f).map_err(to_py_err)?,
    })
}

#[pyfunction]
fn snapshot_basis(grid: &PyGrid, kappa: &PyPerm) -> PyResult<PyBasis> {
    let blocks = snapshot::build_all_snapshots(&grid.inner, &kappa.inner).map_err(to_py_err)?;
    Ok(PyBasis {
        basis: snapshot::assemble_r_snap(&blocks),
        eigenvalues: Vec::new(),
        lambda_next_min: None,
    })
}

#[pyfunction]
fn offline_basis(grid: &PyGrid, kappa: &PyPerm, kind: &str, dof: usize) -> PyResult<PyBasis> {
    let kind = parse_kind(kind)?;
    let blocks = snapshot::build_all_snapshots(&grid.inner, &kappa.inner).map_err(to_py_err)?;
    let offline =
        spectral::build_offline(&grid.inner, &kappa.inner, &blocks, kind, dof).map_err(to_py_err)?;
    Ok(PyBasis {
        basis: offline.basis,
        eigenvalues: offline.eigs.iter().map(|e| e.values.clone()).collect(),
        lambda_next_min: offline.lambda_next_min,
    })
}

#[pyfunction]
fn solve_coarse(grid: &PyGrid, kappa: &PyPerm, basis: &PyBasis, f: Vec<f64>) -> PyResult<PySolution> {
    Ok(PySolution {
        inner: coarse::solve_coarse(&grid.inner, &kappa.inner, &basis.basis, &f)
            .map_err(to_py_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (grid, kappa, solution, f, force_all = false))]
fn postprocess(
    grid: &PyGrid,
    kappa: &PyPerm,
    solution: &PySolution,
    f: Vec<f64>,
    force_all: bool,
) -> PyResult<PySolution> {
    Ok(PySolution {
        inner: gmsfem::postprocess::postprocess(
            &grid.inner,
            &kappa.inner,
            &solution.inner,
            &f,
            force_all,
        )
        .map_err(to_py_err)?,
    })
}

/// Relative errors (E_of_v, E_of_p, E_os_v, E_os_p) of an offline solution.
#[pyfunction]
fn error_report(
    grid: &PyGrid,
    kappa: &PyPerm,
    fine_sol: &PySolution,
    snap_sol: &PySolution,
    offline_sol: &PySolution,
) -> PyResult<(f64, f64, f64, f64)> {
    let r = coarse::error_report(
        &grid.inner,
        &kappa.inner,
        &fine_sol.inner,
        &snap_sol.inner,
        &offline_sol.inner,
        None,
    )
    .map_err(to_py_err)?;
    Ok((r.e_of_v, r.e_of_p, r.e_os_v, r.e_os_p))
}

#[pyfunction]
fn coarse_conservation(grid: &PyGrid, solution: &PySolution, f: Vec<f64>) -> f64 {
    coarse::coarse_conservation_check(&grid.inner, &solution.inner.flux, &f)
}

#[pyfunction]
fn fine_conservation(grid: &PyGrid, solution: &PySolution, f: Vec<f64>) -> f64 {
    gmsfem::postprocess::fine_conservation_residual(&grid.inner, &solution.inner.flux, &f)
}

/// Run the flow-and-transport loop; returns (times, saturation snapshots).
/// `basis = None` drives the saturation with the fine velocity.
#[pyfunction]
#[pyo3(signature = (grid, kappa, basis, two_phase, output_times, cfl = 0.5, pressure_cadence = 1, postprocess = true))]
#[allow(clippy::too_many_arguments)]
fn run_transport(
    grid: &PyGrid,
    kappa: &PyPerm,
    basis: Option<&PyBasis>,
    two_phase: bool,
    output_times: Vec<f64>,
    cfl: f64,
    pressure_cadence: usize,
    postprocess: bool,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let (f, r) = transport::corner_source(&grid.inner);
    let source = match basis {
        Some(b) => transport::VelocitySource::Multiscale {
            basis: &b.basis,
            postprocess,
        },
        None => transport::VelocitySource::Fine,
    };
    let setup = transport::TransportSetup {
        f: &f,
        r: &r,
        model: two_phase.then(transport::FluidModel::default),
        cfl,
        output_times: &output_times,
        pressure_cadence,
        source,
    };
    let run = transport::impes_loop(&grid.inner, &kappa.inner, &setup).map_err(to_py_err)?;
    Ok((run.times, run.snapshots))
}

#[pyfunction]
fn saturation_rel_l2(a: Vec<f64>, reference: Vec<f64>) -> PyResult<f64> {
    transport::saturation_rel_l2(&a, &reference).map_err(to_py_err)
}

#[pyfunction]
fn frac_flow(s: f64) -> f64 {
    transport::FluidModel::default().frac_flow(s)
}

#[pyfunction]
fn total_mobility(s: f64) -> f64 {
    transport::FluidModel::default().eta(s)
}

#[pymodule]
fn gmsfem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyPerm>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyBasis>()?;
    m.add_function(wrap_pyfunction!(uniform_field, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_field, m)?)?;
    m.add_function(wrap_pyfunction!(periodic_field, m)?)?;
    m.add_function(wrap_pyfunction!(load_spe10_layer, m)?)?;
    m.add_function(wrap_pyfunction!(solve_fine, m)?)?;
    m.add_function(wrap_pyfunction!(snapshot_basis, m)?)?;
    m.add_function(wrap_pyfunction!(offline_basis, m)?)?;
    m.add_function(wrap_pyfunction!(solve_coarse, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(error_report, m)?)?;
    m.add_function(wrap_pyfunction!(coarse_conservation, m)?)?;
    m.add_function(wrap_pyfunction!(fine_conservation, m)?)?;
    m.add_function(wrap_pyfunction!(run_transport, m)?)?;
    m.add_function(wrap_pyfunction!(saturation_rel_l2, m)?)?;
    m.add_function(wrap_pyfunction!(frac_flow, m)?)?;
    m.add_function(wrap_pyfunction!(total_mobility, m)?)?;
    Ok(())
}
