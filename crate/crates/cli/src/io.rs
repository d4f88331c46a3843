//! Output formats: CSV with fixed 10-significant-digit scientific notation,
//! legacy ASCII VTK with cell data, and the binary checkpoint series the
//! comparison runs stream against.

use crate::error::{CliError, Result};
use penalimit_core::linalg::gauss_rule;
use penalimit_core::mesh::Mesh;
use penalimit_core::spaces::{CellTable, ReferenceBasis, ScalarField};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

/// Scientific notation with 10 significant digits, the CSV number format.
pub fn fmt_sci(x: f64) -> String {
    format!("{x:.9e}")
}

pub struct CsvFile {
    out: BufWriter<File>,
}

impl CsvFile {
    pub fn create(path: &Path, header: &[&str]) -> Result<CsvFile> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", header.join(","))?;
        Ok(CsvFile { out })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

/// Legacy ASCII VTK unstructured grid of the mesh with per-cell scalars.
pub fn write_vtk(path: &Path, mesh: &Mesh, fields: &[(&str, &[f64])]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let n = mesh.n_per_side;
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "penalimit snapshot")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    let npts = (n + 1) * (n + 1);
    writeln!(out, "POINTS {npts} double")?;
    let l = mesh.cell_side();
    for j in 0..=n {
        for i in 0..=n {
            writeln!(out, "{} {} 0", fmt_sci(i as f64 * l), fmt_sci(j as f64 * l))?;
        }
    }
    let ncells = mesh.cell_count();
    writeln!(out, "CELLS {ncells} {}", 5 * ncells)?;
    for cell in 0..ncells {
        let i = cell % n;
        let j = cell / n;
        let v0 = j * (n + 1) + i;
        writeln!(out, "4 {} {} {} {}", v0, v0 + 1, v0 + n + 2, v0 + n + 1)?;
    }
    writeln!(out, "CELL_TYPES {ncells}")?;
    for _ in 0..ncells {
        writeln!(out, "9")?;
    }
    writeln!(out, "CELL_DATA {ncells}")?;
    for (name, values) in fields {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in *values {
            writeln!(out, "{}", fmt_sci(*v))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Cell means of a dG field, the quantity shown in snapshots.
pub fn cell_means(field: &ScalarField, mesh: &Mesh) -> Vec<f64> {
    let rule = gauss_rule(field.degree + 1, 2).expect("rule");
    let basis = ReferenceBasis::new(field.degree);
    let table = CellTable::tabulate(&basis, &rule);
    (0..mesh.cell_count())
        .map(|cell| field.cell_mean(cell, &rule, &table))
        .collect()
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PLCK";
const CHECKPOINT_VERSION: u32 = 1;

/// One time step of a displacement run: concentration coefficients, the
/// region bitmap and the Darcy state.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: u64,
    pub time: f64,
    pub degree: u32,
    pub concentration: Vec<f64>,
    pub region_continuous: Vec<bool>,
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

pub fn checkpoint_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:05}.bin"))
}

pub fn snapshot_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:05}.vtk"))
}

fn write_f64s(out: &mut impl Write, xs: &[f64]) -> Result<()> {
    out.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(inp: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(inp: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_f64s(inp: &mut impl Read) -> Result<Vec<f64>> {
    let len = read_u64(inp)? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(read_f64(inp)?);
    }
    Ok(out)
}

pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&cp.step.to_le_bytes())?;
    out.write_all(&cp.time.to_le_bytes())?;
    out.write_all(&cp.degree.to_le_bytes())?;
    write_f64s(&mut out, &cp.concentration)?;
    out.write_all(&(cp.region_continuous.len() as u64).to_le_bytes())?;
    for &b in &cp.region_continuous {
        out.write_all(&[u8::from(b)])?;
    }
    write_f64s(&mut out, &cp.velocity)?;
    write_f64s(&mut out, &cp.pressure)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut inp = BufReader::new(File::open(path).map_err(|e| {
        CliError::Config(format!(
            "missing reference checkpoint {}: {e}",
            path.display()
        ))
    })?);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CliError::Config(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let mut v = [0u8; 4];
    inp.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(CliError::Config(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let step = read_u64(&mut inp)?;
    let time = read_f64(&mut inp)?;
    let mut d = [0u8; 4];
    inp.read_exact(&mut d)?;
    let degree = u32::from_le_bytes(d);
    let concentration = read_f64s(&mut inp)?;
    let nreg = read_u64(&mut inp)? as usize;
    let mut region_continuous = Vec::with_capacity(nreg);
    for _ in 0..nreg {
        let mut b = [0u8; 1];
        inp.read_exact(&mut b)?;
        region_continuous.push(b[0] != 0);
    }
    let velocity = read_f64s(&mut inp)?;
    let pressure = read_f64s(&mut inp)?;
    Ok(Checkpoint {
        step,
        time,
        degree,
        concentration,
        region_continuous,
        velocity,
        pressure,
    })
}
