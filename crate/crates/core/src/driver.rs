//! Orchestration of the experiment subcommands: each one runs a configured
//! workflow, writes its CSV artifacts into the output directory, and records
//! a manifest with the config hash and per-file checksums.

use std::path::PathBuf;

use crate::coarse::{error_report, solve_coarse};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fine::{cell_divergence, solve_global};
use crate::grid::{build_hierarchy, GridHierarchy};
use crate::oversample::{cosine_source, CaseContext};
use crate::perm::{self, PermField};
use crate::postprocess::postprocess;
use crate::report::{fmt_sig, write_cell_grid, write_manifest, Csv};
use crate::snapshot::{assemble_r_snap, build_all_snapshots, write_columns_dump};
use crate::spectral::{build_offline, build_pencil, solve_pencil};
use crate::transport::{
    corner_source, impes_loop, saturation_rel_l2, FluidModel, TransportSetup, VelocitySource,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Fine,
    Table,
    Eigens,
    Oversample,
    Transport,
    TwoPhase,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Fine => "fine",
            Subcommand::Table => "table",
            Subcommand::Eigens => "eigens",
            Subcommand::Oversample => "oversample",
            Subcommand::Transport => "transport",
            Subcommand::TwoPhase => "twophase",
        }
    }
}

pub struct Driver {
    pub config: RunConfig,
    out_dir: PathBuf,
}

impl Driver {
    pub fn new(config: RunConfig, out_dir: Option<PathBuf>) -> Driver {
        let out_dir = out_dir.unwrap_or_else(|| config.output.dir.clone());
        Driver { config, out_dir }
    }

    pub fn out_dir(&self) -> &PathBuf {
        &self.out_dir
    }

    fn grid(&self) -> Result<GridHierarchy> {
        build_hierarchy(self.config.n, self.config.coarse_n)
    }

    fn kappa(&self) -> Result<PermField> {
        let c = &self.config;
        match c.perm.kind.as_str() {
            "uniform" => Ok(PermField::uniform(c.n)),
            "synthetic" => perm::synthetic_field(c.n, c.seed, c.perm.contrast),
            "periodic" => perm::periodic_field(c.n, c.perm.epsilon),
            "spe10" => {
                let path = c.perm.path.as_ref().ok_or_else(|| {
                    Error::Config("perm.path is required for spe10 fields".into())
                })?;
                perm::load_layer(path, c.perm.layer, c.n)
            }
            other => Err(Error::Config(format!("unknown permeability kind {other}"))),
        }
    }

    /// Run one subcommand and write its manifest. Returns the written files.
    pub fn run(&self, sub: Subcommand) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.out_dir)?;
        let mut files = match sub {
            Subcommand::Fine => self.run_fine()?,
            Subcommand::Table => self.run_table()?,
            Subcommand::Eigens => self.run_eigens()?,
            Subcommand::Oversample => self.run_oversample()?,
            Subcommand::Transport => self.run_transport(false)?,
            Subcommand::TwoPhase => self.run_transport(true)?,
        };
        let manifest = write_manifest(&self.out_dir, &self.config.to_toml(), &files)?;
        files.push(manifest);
        Ok(files)
    }

    /// Reference fine solve on the corner source: per-cell pressure and
    /// conservation diagnostics.
    fn run_fine(&self) -> Result<Vec<PathBuf>> {
        let grid = self.grid()?;
        let kappa = self.kappa()?;
        let (f, _) = corner_source(&grid);
        let sol = solve_global(&grid, &kappa, &f)?;
        let h2 = grid.h() * grid.h();

        let pressure_path = self.out_dir.join("fine_pressure.csv");
        write_cell_grid(&pressure_path, grid.n(), &sol.pressure)?;

        let mut csv = Csv::new(&["cell", "ix", "iy", "pressure", "conservation_residual"]);
        for cell in 0..grid.num_cells() {
            let (ix, iy) = grid.cell_coords(cell);
            let residual = cell_divergence(&grid, &sol.flux, cell) - f[cell] * h2;
            csv.row(&[
                cell.to_string(),
                ix.to_string(),
                iy.to_string(),
                fmt_sig(sol.pressure[cell]),
                fmt_sig(residual),
            ]);
        }
        let cells_path = self.out_dir.join("fine_cells.csv");
        csv.write(&cells_path)?;
        Ok(vec![pressure_path, cells_path])
    }

    /// Dof sweep: one row per requested basis count with the total and
    /// spectral errors, plus the postprocessed velocity error when enabled.
    fn run_table(&self) -> Result<Vec<PathBuf>> {
        let grid = self.grid()?;
        let kappa = self.kappa()?;
        let kind = self
            .config
            .spectral_kind()
            .ok_or_else(|| Error::Config("invalid spectral kind".into()))?;
        let (f, _) = corner_source(&grid);
        let fine = solve_global(&grid, &kappa, &f)?;
        let blocks = build_all_snapshots(&grid, &kappa)?;
        let snap_basis = assemble_r_snap(&blocks);
        let snap = solve_coarse(&grid, &kappa, &snap_basis, &f)?;

        let with_post = self.config.spectral.postprocess;
        let header: Vec<&str> = if with_post {
            vec!["dof_per_E", "E_of_v", "E_of_p", "E_os_v", "E_os_p", "E_pf_v"]
        } else {
            vec!["dof_per_E", "E_of_v", "E_of_p", "E_os_v", "E_os_p"]
        };
        let mut csv = Csv::new(&header);
        for &dof in &self.config.spectral.dofs {
            let offline = build_offline(&grid, &kappa, &blocks, kind, dof)?;
            let sol = solve_coarse(&grid, &kappa, &offline.basis, &f)?;
            let post = if with_post {
                Some(postprocess(&grid, &kappa, &sol, &f, true)?)
            } else {
                None
            };
            let report = error_report(&grid, &kappa, &fine, &snap, &sol, post.as_ref())?;
            let mut row = vec![
                dof.to_string(),
                fmt_sig(report.e_of_v),
                fmt_sig(report.e_of_p),
                fmt_sig(report.e_os_v),
                fmt_sig(report.e_os_p),
            ];
            if let Some(e_pf) = report.e_pf_v {
                row.push(fmt_sig(e_pf));
            }
            csv.row(&row);
        }
        let path = self.out_dir.join("table.csv");
        csv.write(&path)?;
        let mut files = vec![path];
        if self.config.output.dump_snapshot_basis {
            let dump = self.out_dir.join("r_snap.bin");
            write_columns_dump(&dump, &grid, &snap_basis)?;
            files.push(dump);
        }
        Ok(files)
    }

    /// Per-edge spectra of the configured pencil kind.
    fn run_eigens(&self) -> Result<Vec<PathBuf>> {
        let grid = self.grid()?;
        let kappa = self.kappa()?;
        let kind = self
            .config
            .spectral_kind()
            .ok_or_else(|| Error::Config("invalid spectral kind".into()))?;
        let blocks = build_all_snapshots(&grid, &kappa)?;
        let mut csv = Csv::new(&["edge", "k", "lambda", "inv_lambda"]);
        for block in &blocks {
            let pencil = build_pencil(&grid, &kappa, block, kind)?;
            let eigs = solve_pencil(&pencil)?;
            for (k, &lambda) in eigs.values.iter().enumerate() {
                let inv = if lambda == 0.0 { f64::INFINITY } else { 1.0 / lambda };
                csv.row(&[
                    block.edge_id.to_string(),
                    (k + 1).to_string(),
                    fmt_sig(lambda),
                    fmt_sig(inv),
                ]);
            }
        }
        let path = self.out_dir.join("eigenvalues.csv");
        csv.write(&path)?;
        Ok(vec![path])
    }

    /// The four oversampling cases per requested dof, plus the per-edge
    /// singular values of the trace ensembles.
    fn run_oversample(&self) -> Result<Vec<PathBuf>> {
        let grid = self.grid()?;
        let kappa = self.kappa()?;
        let layers = self
            .config
            .oversample_layers(grid.default_oversampling_layers());
        let f = cosine_source(&grid);
        let max_dof = self
            .config
            .oversample
            .dofs
            .iter()
            .copied()
            .max()
            .unwrap_or(1)
            .max(self.config.oversample.pod_width);
        let ctx = CaseContext::new(
            &grid,
            &kappa,
            f,
            layers,
            max_dof,
            self.config.oversample.pod_width,
        )?;

        let mut sv = Csv::new(&["edge", "k", "sigma"]);
        for p in &ctx.pods {
            for (k, s) in p.singular_values.iter().enumerate() {
                sv.row(&[p.edge_id.to_string(), (k + 1).to_string(), fmt_sig(*s)]);
            }
        }
        let sv_path = self.out_dir.join("singular_values.csv");
        sv.write(&sv_path)?;

        let mut csv = Csv::new(&["dof_per_E", "case1", "case2", "case3", "case4"]);
        for &dof in &self.config.oversample.dofs {
            let mut row = vec![dof.to_string()];
            for case in 1..=4 {
                let report = ctx.run_case(case, dof)?;
                row.push(fmt_sig(report.e_of_v));
            }
            csv.row(&row);
        }
        let cases_path = self.out_dir.join("oversample_cases.csv");
        csv.write(&cases_path)?;
        Ok(vec![sv_path, cases_path])
    }

    /// Transport runs: a fine-velocity reference plus one multiscale run per
    /// basis count, with saturation grids at the output times and a summary
    /// of relative errors.
    fn run_transport(&self, two_phase: bool) -> Result<Vec<PathBuf>> {
        let grid = self.grid()?;
        let kappa = self.kappa()?;
        let (f, r) = corner_source(&grid);
        let model = two_phase.then(FluidModel::default);
        let tc = &self.config.transport;
        let mut files = Vec::new();

        let reference = impes_loop(
            &grid,
            &kappa,
            &TransportSetup {
                f: &f,
                r: &r,
                model,
                cfl: tc.cfl,
                output_times: &tc.output_times,
                pressure_cadence: tc.pressure_cadence,
                source: VelocitySource::Fine,
            },
        )?;
        for (t, snap) in reference.times.iter().zip(&reference.snapshots) {
            let path = self.out_dir.join(format!("saturation_fine_t{t}.csv"));
            write_cell_grid(&path, grid.n(), snap)?;
            files.push(path);
        }

        let blocks = build_all_snapshots(&grid, &kappa)?;
        let kind = self
            .config
            .spectral_kind()
            .ok_or_else(|| Error::Config("invalid spectral kind".into()))?;
        let mut summary = Csv::new(&["dof_per_E", "time", "rel_l2_error"]);
        for &dof in &tc.basis_counts {
            let offline = build_offline(&grid, &kappa, &blocks, kind, dof)?;
            let run = impes_loop(
                &grid,
                &kappa,
                &TransportSetup {
                    f: &f,
                    r: &r,
                    model,
                    cfl: tc.cfl,
                    output_times: &tc.output_times,
                    pressure_cadence: tc.pressure_cadence,
                    source: VelocitySource::Multiscale {
                        basis: &offline.basis,
                        postprocess: tc.postprocess,
                    },
                },
            )?;
            for ((t, snap), reference_snap) in run
                .times
                .iter()
                .zip(&run.snapshots)
                .zip(&reference.snapshots)
            {
                let err = saturation_rel_l2(snap, reference_snap)?;
                summary.row(&[dof.to_string(), fmt_sig(*t), fmt_sig(err)]);
                let path = self
                    .out_dir
                    .join(format!("saturation_dof{dof}_t{t}.csv"));
                write_cell_grid(&path, grid.n(), snap)?;
                files.push(path);
            }
        }
        let summary_path = self.out_dir.join("transport_summary.csv");
        summary.write(&summary_path)?;
        files.push(summary_path);
        Ok(files)
    }
}
