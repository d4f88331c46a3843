//! Experiment drivers: penalty sweeps on the boundary-layer benchmark, the
//! continuous-region strip study, and the quarter-five-spot displacement
//! runs with checkpoint-streamed comparisons against a reference run.

use crate::config::{Experiment, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::io::{
    cell_means, checkpoint_path, fmt_sci, read_checkpoint, snapshot_path, write_checkpoint,
    write_vtk, Checkpoint, CsvFile,
};
use penalimit_core::adapt::AdaptPolicy;
use penalimit_core::mesh::{build_uniform_mesh, make_region, Mesh};
use penalimit_core::nncf::{self, Discretization, NncfProblem, PenaltyConfig};
use penalimit_core::spaces::{build_constraints, build_dg_space, DofMap, ScalarField};
use penalimit_core::transport::{self, RunMode, StepRecord};
use std::path::Path;

/// One row of the penalty-sweep table: distances between the super-penalized
/// and cdG solutions, true errors of the former, and the penalized jump
/// energy sigma |w_sigma|_S^2.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub sigma: f64,
    pub diff_l2: f64,
    pub diff_h1_semi: f64,
    pub diff_jump: f64,
    pub err_l2: f64,
    pub err_h1_semi: f64,
    pub sigma_s_sq: f64,
    pub ref_l2: f64,
}

pub fn run_nncf_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    let mesh = build_uniform_mesh(cfg.n)?;
    let dofmap = build_dg_space(&mesh, cfg.degree)?;
    let region = make_region(&mesh, |_| true);
    let disc = Discretization::new(&mesh, &dofmap, &region).with_quad_order(cfg.quad());
    let problem = NncfProblem::boundary_layer(cfg.epsilon);
    let base = cfg.penalty();

    let v_h = nncf::solve_cdg_direct(&problem, &base, &disc)?;
    let ref_l2 = nncf::norms(&v_h, &problem, &base, &disc)?.l2_norm;

    let mut rows = Vec::with_capacity(cfg.sigmas.len());
    let mut csv = CsvFile::create(
        &out.join("results.csv"),
        &[
            "sigma",
            "diff_l2",
            "diff_h1_semi",
            "diff_jump",
            "err_l2",
            "err_h1_semi",
            "sigma_s_sq",
            "ref_l2",
        ],
    )?;
    for &sigma in &cfg.sigmas {
        let w = nncf::solve_super_penalized(&problem, &PenaltyConfig { sigma, ..base }, &disc)?;
        let w_report = nncf::norms(&w, &problem, &base, &disc)?;
        let diff = w.sub(&v_h);
        let d_report = nncf::norms(&diff, &problem, &base, &disc)?;
        let row = SweepRow {
            sigma,
            diff_l2: d_report.l2_norm,
            diff_h1_semi: d_report.h1_semi_norm,
            diff_jump: d_report.jump_l2,
            err_l2: w_report.l2_error.unwrap_or(f64::NAN),
            err_h1_semi: w_report.h1_semi_error.unwrap_or(f64::NAN),
            sigma_s_sq: sigma * w_report.s_seminorm * w_report.s_seminorm,
            ref_l2,
        };
        csv.row(&[
            fmt_sci(row.sigma),
            fmt_sci(row.diff_l2),
            fmt_sci(row.diff_h1_semi),
            fmt_sci(row.diff_jump),
            fmt_sci(row.err_l2),
            fmt_sci(row.err_h1_semi),
            fmt_sci(row.sigma_s_sq),
            fmt_sci(row.ref_l2),
        ])?;
        rows.push(row);
    }
    csv.finish()?;
    Ok(rows)
}

/// One row of the strip study: direct cdG solve with T_C = (0, 1 - a h)^2.
#[derive(Debug, Clone)]
pub struct StripRow {
    pub a: usize,
    pub err_h1_semi: f64,
    pub err_l2: f64,
    pub free_dofs: usize,
}

pub fn run_nncf_strip(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<StripRow>> {
    let n = cfg.n;
    let mesh = build_uniform_mesh(n)?;
    let dofmap = build_dg_space(&mesh, cfg.degree)?;
    let problem = NncfProblem::boundary_layer(cfg.epsilon);
    let base = cfg.penalty();

    let mut rows = Vec::new();
    let mut csv = CsvFile::create(
        &out.join("results.csv"),
        &["a", "err_h1_semi", "err_l2", "free_dofs"],
    )?;
    for &a in &cfg.strip_widths {
        // cells whose closure lies inside (0, 1 - a h)^2
        let region = make_region(&mesh, |cell| {
            let i = cell % n;
            let j = cell / n;
            i + a < n && j + a < n
        });
        let disc = Discretization::new(&mesh, &dofmap, &region).with_quad_order(cfg.quad());
        let cm = build_constraints(&dofmap, &mesh, &region, true)?;
        let v = nncf::solve_cdg_direct(&problem, &base, &disc)?;
        let report = nncf::norms(&v, &problem, &base, &disc)?;
        let row = StripRow {
            a,
            err_h1_semi: report.h1_semi_error.unwrap_or(f64::NAN),
            err_l2: report.l2_error.unwrap_or(f64::NAN),
            free_dofs: cm.free_dofs(),
        };
        csv.row(&[
            row.a.to_string(),
            fmt_sci(row.err_h1_semi),
            fmt_sci(row.err_l2),
            row.free_dofs.to_string(),
        ])?;
        rows.push(row);
    }
    csv.finish()?;
    Ok(rows)
}

/// Summary of one displacement run within an experiment.
#[derive(Debug, Clone)]
pub struct ImdRunSummary {
    pub label: String,
    pub param: f64,
    pub cumulative_dofs: usize,
    /// L2((0,T); L2) distance to the reference run (0 for the reference).
    pub l2_l2: f64,
}

struct ImdContext<'a> {
    cfg: &'a ExperimentConfig,
    mesh: Mesh,
    dofmap: DofMap,
    out: &'a Path,
}

impl<'a> ImdContext<'a> {
    fn params(&self) -> penalimit_core::darcy::ImdParams {
        self.cfg.imd_params()
    }

    fn write_step_row(
        &self,
        csv: &mut CsvFile,
        label: &str,
        param: f64,
        rec: &StepRecord,
        diff: f64,
    ) -> Result<()> {
        let params = self.params();
        let mass = transport::total_mass(rec.concentration, &params, &self.mesh);
        csv.row(&[
            label.to_string(),
            fmt_sci(param),
            rec.step.to_string(),
            fmt_sci(rec.time),
            rec.free_dofs.to_string(),
            rec.region.continuous_cells().to_string(),
            fmt_sci(mass),
            fmt_sci(diff),
        ])
    }

    fn snapshot(&self, sub: Option<&str>, rec: &StepRecord) -> Result<()> {
        let every = self.cfg.snapshot_every;
        if every == 0 || rec.step % every != 0 {
            return Ok(());
        }
        let dir = match sub {
            None => self.out.join("snapshots"),
            Some(s) => self.out.join("snapshots").join(s),
        };
        let conc = cell_means(rec.concentration, &self.mesh);
        let region: Vec<f64> = (0..self.mesh.cell_count())
            .map(|c| if rec.region.cell_in_continuous(c) { 0.0 } else { 1.0 })
            .collect();
        write_vtk(
            &snapshot_path(&dir, rec.step),
            &self.mesh,
            &[("concentration", &conc), ("discontinuous_region", &region)],
        )
    }

    /// Run the reference and write its checkpoint series; returns its summary.
    fn run_reference(
        &self,
        label: &str,
        mode: &RunMode,
        csv: &mut CsvFile,
    ) -> Result<ImdRunSummary> {
        let params = self.params();
        let ckpt_dir = self.out.join("checkpoints");
        let summary = transport::run(&self.mesh, &self.dofmap, &params, mode, |rec| {
            write_checkpoint(
                &checkpoint_path(&ckpt_dir, rec.step),
                &Checkpoint {
                    step: rec.step as u64,
                    time: rec.time,
                    degree: rec.concentration.degree as u32,
                    concentration: rec.concentration.coeffs.clone(),
                    region_continuous: (0..self.mesh.cell_count())
                        .map(|c| rec.region.cell_in_continuous(c))
                        .collect(),
                    velocity: rec.darcy.velocity.clone(),
                    pressure: rec.darcy.pressure.clone(),
                },
            )
            .map_err(io_as_core)?;
            self.write_step_row(csv, label, 0.0, rec, 0.0).map_err(io_as_core)?;
            self.snapshot(None, rec).map_err(io_as_core)?;
            Ok(())
        })?;
        Ok(ImdRunSummary {
            label: label.to_string(),
            param: 0.0,
            cumulative_dofs: summary.cumulative_dofs,
            l2_l2: 0.0,
        })
    }

    /// Run a comparison configuration, streaming the reference checkpoints.
    fn run_comparison(
        &self,
        label: &str,
        param: f64,
        mode: &RunMode,
        ref_dir: &Path,
        csv: &mut CsvFile,
    ) -> Result<ImdRunSummary> {
        let params = self.params();
        let mut l2l2_sq = 0.0;
        let sub = format!("{label}_{param:.0e}");
        let summary = transport::run(&self.mesh, &self.dofmap, &params, mode, |rec| {
            let cp = read_checkpoint(&checkpoint_path(ref_dir, rec.step)).map_err(cli_as_core)?;
            let reference = ScalarField::from_coeffs(cp.degree as usize, cp.concentration);
            let diff = transport::l2_distance(rec.concentration, &reference, &self.mesh);
            l2l2_sq += params.dt * diff * diff;
            self.write_step_row(csv, label, param, rec, diff).map_err(io_as_core)?;
            self.snapshot(Some(&sub), rec).map_err(io_as_core)?;
            Ok(())
        })?;
        Ok(ImdRunSummary {
            label: label.to_string(),
            param,
            cumulative_dofs: summary.cumulative_dofs,
            l2_l2: l2l2_sq.sqrt(),
        })
    }
}

// The transport observer speaks core errors; carry io/config failures
// through as invalid-parameter reports.
fn io_as_core(e: CliError) -> penalimit_core::Error {
    penalimit_core::Error::InvalidParameter(e.to_string())
}

fn cli_as_core(e: CliError) -> penalimit_core::Error {
    penalimit_core::Error::InvalidParameter(e.to_string())
}

pub fn run_imd(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<ImdRunSummary>> {
    let mesh = build_uniform_mesh(cfg.n)?;
    let dofmap = build_dg_space(&mesh, cfg.degree)?;
    let ctx = ImdContext {
        cfg,
        mesh,
        dofmap,
        out,
    };
    let mut csv = CsvFile::create(
        &out.join("results.csv"),
        &[
            "run",
            "param",
            "step",
            "time",
            "free_dofs",
            "tc_cells",
            "mass",
            "l2_diff_ref",
        ],
    )?;

    let (ref_label, ref_mode) = match cfg.experiment {
        Experiment::ImdSweep => ("cg_ref", RunMode::Cg),
        Experiment::ImdAdapt => ("dg_ref", RunMode::Dg),
        _ => {
            return Err(CliError::Config(
                "run_imd called with a non-displacement experiment".into(),
            ))
        }
    };

    let mut summaries = Vec::new();
    let ref_dir = match &cfg.reference_dir {
        Some(dir) => {
            // verify upfront that the stream exists before spending any time
            let n_steps = (cfg.t_end / cfg.dt).round() as usize;
            let first = checkpoint_path(dir, 1);
            let last = checkpoint_path(dir, n_steps);
            if !first.exists() || !last.exists() {
                return Err(CliError::Config(format!(
                    "reference_dir {} does not contain checkpoints for steps 1..{n_steps}",
                    dir.display()
                )));
            }
            dir.clone()
        }
        None => {
            eprintln!("[{}] reference run: {ref_label}", cfg.experiment.id());
            summaries.push(ctx.run_reference(ref_label, &ref_mode, &mut csv)?);
            out.join("checkpoints")
        }
    };

    match cfg.experiment {
        Experiment::ImdSweep => {
            for &sigma in &cfg.sigmas {
                eprintln!("[{}] super-penalized run, sigma = {sigma:.1e}", cfg.experiment.id());
                summaries.push(ctx.run_comparison(
                    "super",
                    sigma,
                    &RunMode::Super { sigma },
                    &ref_dir,
                    &mut csv,
                )?);
            }
        }
        Experiment::ImdAdapt => {
            eprintln!("[{}] fully continuous run", cfg.experiment.id());
            summaries.push(ctx.run_comparison("cg", 0.0, &RunMode::Cg, &ref_dir, &mut csv)?);
            for &tol in &cfg.tols {
                eprintln!("[{}] adaptive run, tol = {tol:.1e}", cfg.experiment.id());
                let policy = AdaptPolicy {
                    tol,
                    period: cfg.adapt_period,
                    enabled: true,
                    include_boundary: cfg.include_boundary_jumps,
                };
                summaries.push(ctx.run_comparison(
                    "adaptive",
                    tol,
                    &RunMode::Adaptive { policy },
                    &ref_dir,
                    &mut csv,
                )?);
            }
        }
        _ => unreachable!(),
    }
    csv.finish()?;

    let mut summary_csv = CsvFile::create(
        &out.join("summary.csv"),
        &["run", "param", "cumulative_dofs", "l2_l2_distance"],
    )?;
    for s in &summaries {
        summary_csv.row(&[
            s.label.clone(),
            fmt_sci(s.param),
            s.cumulative_dofs.to_string(),
            fmt_sci(s.l2_l2),
        ])?;
    }
    summary_csv.finish()?;
    Ok(summaries)
}

/// Dispatch an experiment to its driver.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    match cfg.experiment {
        Experiment::NncfSweep | Experiment::NncfLayer => {
            run_nncf_sweep(cfg, out)?;
        }
        Experiment::NncfStrip => {
            run_nncf_strip(cfg, out)?;
        }
        Experiment::ImdSweep | Experiment::ImdAdapt => {
            run_imd(cfg, out)?;
        }
    }
    Ok(())
}
