//! The stationary diffusion-advection-reaction problem in non-negative
//! characteristic form, discretized with the interior penalty family
//! (theta = -1 symmetric, 0 incomplete, 1 nonsymmetric):
//!
//!   B_d(w, v) = sum_E (a grad w, grad v)_E + sum_e m ([w],[v])_e
//!             - sum_e ({a grad w}.[v] - theta {a grad v}.[w])_e
//!   B_ar(w, v) = sum_E ((b.grad w) v + c w v)_E
//!             - sum_{e interior} (b.[w], v_down)_e - sum_{e in Gin} ((b.n) w v)_e
//!
//! where v_down is the trace on the cell the flow enters, so that
//! B_ar(w, w) recovers the advective jump terms of the dG norm exactly.
//! Super-penalization adds sigma * S with S supported on the continuous
//! skeleton E_hC, and the cdG solution is obtained by restricting the same
//! system through the constraint prolongation.

use crate::error::{Error, Result};
use crate::linalg::{self, gauss_rule, LinearSystem, QuadratureRule, SparseMatrix};
use crate::mesh::{FlowClass, Mesh, RegionPartition};
use crate::spaces::{
    build_constraints, CellTable, DofMap, ReferenceBasis, ScalarField, SideTable,
};
use rayon::prelude::*;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync>;

/// Closed-form solution used for error reporting.
#[derive(Clone)]
pub struct ExactSolution {
    pub value: ScalarFn,
    pub gradient: VectorFn,
}

/// Coefficients of -div(a grad u) + b . grad u + c u = f with u = 0 on the
/// boundary. The diffusion matrix must be positive semidefinite and
/// c - div(b)/2 nonnegative; both are checked at quadrature points.
#[derive(Clone)]
pub struct NncfProblem {
    pub diffusion: MatrixFn,
    pub advection: VectorFn,
    pub advection_div: ScalarFn,
    pub reaction: ScalarFn,
    pub source: ScalarFn,
    pub exact: Option<ExactSolution>,
}

impl NncfProblem {
    /// c0^2 = c - div(b)/2, the weight of the reaction part of the dG norm.
    pub fn c0_sq(&self, x: [f64; 2]) -> f64 {
        (self.reaction)(x) - 0.5 * (self.advection_div)(x)
    }

    /// The advection-dominated benchmark on (0,1)^2:
    /// -eps Lap u + (1,1).grad u = f with exponential boundary layers of
    /// width O(eps) along x = 1 and y = 1.
    pub fn boundary_layer(eps: f64) -> NncfProblem {
        // g(t) = t - (exp((t-1)/eps) - exp(-1/eps)) / (1 - exp(-1/eps))
        let denom = -(-1.0 / eps).exp_m1(); // 1 - exp(-1/eps), stable for small eps
        let shift = (-1.0 / eps).exp();
        let g = move |t: f64| t - (((t - 1.0) / eps).exp() - shift) / denom;
        let dg = move |t: f64| 1.0 - ((t - 1.0) / eps).exp() / (eps * denom);
        let ddg = move |t: f64| -((t - 1.0) / eps).exp() / (eps * eps * denom);
        let value: ScalarFn = Arc::new(move |x: [f64; 2]| g(x[0]) * g(x[1]));
        let gradient: VectorFn =
            Arc::new(move |x: [f64; 2]| [dg(x[0]) * g(x[1]), g(x[0]) * dg(x[1])]);
        let source: ScalarFn = Arc::new(move |x: [f64; 2]| {
            -eps * (ddg(x[0]) * g(x[1]) + g(x[0]) * ddg(x[1]))
                + dg(x[0]) * g(x[1])
                + g(x[0]) * dg(x[1])
        });
        NncfProblem {
            diffusion: Arc::new(move |_| [[eps, 0.0], [0.0, eps]]),
            advection: Arc::new(|_| [1.0, 1.0]),
            advection_div: Arc::new(|_| 0.0),
            reaction: Arc::new(|_| 0.0),
            source,
            exact: Some(ExactSolution { value, gradient }),
        }
    }
}

/// Every knob of the penalized bilinear form B_sigma = B + sigma S.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyConfig {
    /// -1 (symmetric), 0 (incomplete) or 1 (nonsymmetric).
    pub theta: i32,
    /// Interior penalty constant; must be large enough for theta = -1.
    pub c_p: f64,
    /// Diffusive part of the super-penalty weight M.
    pub c_d: f64,
    /// Constant part of the super-penalty weight M.
    pub c_ar: f64,
    /// Super-penalty factor.
    pub sigma: f64,
}

impl Default for PenaltyConfig {
    /// C_p = 10 for both theta = +/-1; C_d = 1e-3 places the dG-to-cG
    /// transition of the boundary-layer benchmarks inside the sigma sweep
    /// window 1e3..1e9 (sigma M crosses the base penalty m near sigma = 1e6).
    fn default() -> Self {
        PenaltyConfig {
            theta: -1,
            c_p: 10.0,
            c_d: 1e-3,
            c_ar: 0.0,
            sigma: 0.0,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if ![-1, 0, 1].contains(&self.theta) {
            return Err(Error::InvalidParameter(format!(
                "theta must be -1, 0 or 1, got {}",
                self.theta
            )));
        }
        for (name, v) in [
            ("C_p", self.c_p),
            ("C_d", self.c_d),
            ("C_ar", self.c_ar),
            ("sigma", self.sigma),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Mesh, space and quadrature bundle shared by all operations.
pub struct Discretization<'a> {
    pub mesh: &'a Mesh,
    pub dofmap: &'a DofMap,
    pub region: &'a RegionPartition,
    pub quad_order: usize,
}

impl<'a> Discretization<'a> {
    pub fn new(mesh: &'a Mesh, dofmap: &'a DofMap, region: &'a RegionPartition) -> Self {
        Discretization {
            mesh,
            dofmap,
            region,
            quad_order: dofmap.degree() + 2,
        }
    }

    pub fn with_quad_order(mut self, q: usize) -> Self {
        self.quad_order = q;
        self
    }
}

fn lambda_max_sym(a: [[f64; 2]; 2]) -> f64 {
    let tr = 0.5 * (a[0][0] + a[1][1]);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    tr + (tr * tr - det).max(0.0).sqrt()
}

fn lambda_min_sym(a: [[f64; 2]; 2]) -> f64 {
    let tr = 0.5 * (a[0][0] + a[1][1]);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    tr - (tr * tr - det).max(0.0).sqrt()
}

fn mat_vec(a: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        a[0][0] * v[0] + a[0][1] * v[1],
        a[1][0] * v[0] + a[1][1] * v[1],
    ]
}

/// a_bar per cell: the sup over the cell's volume quadrature points of the
/// matrix 2-norm of sqrt(a).
fn abar_per_cell(problem: &NncfProblem, mesh: &Mesh, rule: &QuadratureRule) -> Result<Vec<f64>> {
    (0..mesh.cell_count())
        .map(|cell| {
            let mut abar = 0.0f64;
            for q in 0..rule.len() {
                let x = mesh.to_physical(cell, rule.point_2d(q));
                let a = (problem.diffusion)(x);
                let lmax = lambda_max_sym(a);
                let lmin = lambda_min_sym(a);
                if lmin < -1e-12 * (1.0 + lmax.abs()) {
                    return Err(Error::IndefiniteCoefficient {
                        point: x,
                        what: format!("diffusion matrix has eigenvalue {lmin:.3e}"),
                    });
                }
                abar = abar.max(lmax.max(0.0).sqrt());
            }
            Ok(abar)
        })
        .collect()
}

fn face_average_abar(mesh: &Mesh, face: usize, abar: &[f64]) -> f64 {
    let (plus, _, minus) = mesh.faces[face].sides();
    match minus {
        Some((mc, _)) => 0.5 * (abar[plus] + abar[mc]),
        None => abar[plus],
    }
}

/// Interior penalty weight m = C_p {a_bar r^2} / h_e.
pub fn penalty_m(
    problem: &NncfProblem,
    mesh: &Mesh,
    face: usize,
    r: usize,
    c_p: f64,
    quad_order: usize,
) -> Result<f64> {
    let rule = gauss_rule(quad_order, 2)?;
    let abar = abar_per_cell(problem, mesh, &rule)?;
    Ok(c_p * face_average_abar(mesh, face, &abar) * (r * r) as f64 / mesh.faces[face].h_e)
}

/// Super-penalty weight M = C_ar + C_d {a_bar r^2} / h_e.
pub fn superpenalty_m(
    problem: &NncfProblem,
    mesh: &Mesh,
    face: usize,
    r: usize,
    c_d: f64,
    c_ar: f64,
    quad_order: usize,
) -> Result<f64> {
    let rule = gauss_rule(quad_order, 2)?;
    let abar = abar_per_cell(problem, mesh, &rule)?;
    Ok(c_ar + c_d * face_average_abar(mesh, face, &abar) * (r * r) as f64 / mesh.faces[face].h_e)
}

struct FaceWeights {
    /// m per face.
    m: Vec<f64>,
    /// M per face (super-penalty weight).
    m_super: Vec<f64>,
}

fn face_weights(cfg: &PenaltyConfig, mesh: &Mesh, r: usize, abar: &[f64]) -> FaceWeights {
    let r2 = (r * r) as f64;
    let mut m = Vec::with_capacity(mesh.face_count());
    let mut m_super = Vec::with_capacity(mesh.face_count());
    for fi in 0..mesh.face_count() {
        let avg = face_average_abar(mesh, fi, abar) * r2 / mesh.faces[fi].h_e;
        m.push(cfg.c_p * avg);
        m_super.push(cfg.c_ar + cfg.c_d * avg);
    }
    FaceWeights { m, m_super }
}

/// Run a deterministic indexed map, in parallel when the batch is large.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n >= 256 {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

type Triplet = (usize, usize, f64);

fn check_volume_coefficients(
    problem: &NncfProblem,
    mesh: &Mesh,
    rule: &QuadratureRule,
) -> Result<()> {
    for cell in 0..mesh.cell_count() {
        for q in 0..rule.len() {
            let x = mesh.to_physical(cell, rule.point_2d(q));
            let c0 = problem.c0_sq(x);
            if c0 < -1e-12 {
                return Err(Error::IndefiniteCoefficient {
                    point: x,
                    what: format!("c - div(b)/2 = {c0:.3e} is negative"),
                });
            }
        }
    }
    Ok(())
}

/// Volume part of B: sum_E (a grad w . grad v + (b.grad w) v + c w v)_E.
pub fn assemble_volume_matrix(
    problem: &NncfProblem,
    disc: &Discretization,
) -> Result<SparseMatrix> {
    let mesh = disc.mesh;
    let r = disc.dofmap.degree();
    let basis = ReferenceBasis::new(r);
    let rule = gauss_rule(disc.quad_order, 2)?;
    let table = CellTable::tabulate(&basis, &rule);
    let npc = basis.len();
    let l = mesh.cell_side();
    let jac = l * l;

    let locals = map_indexed(mesh.cell_count(), |cell| {
        let mut k = vec![0.0; npc * npc];
        for q in 0..rule.len() {
            let x = mesh.to_physical(cell, rule.point_2d(q));
            let w = rule.weights[q] * jac;
            let a = (problem.diffusion)(x);
            let b = (problem.advection)(x);
            let c = (problem.reaction)(x);
            for j in 0..npc {
                let gj = table.grad(q, j);
                let gj = [gj[0] / l, gj[1] / l];
                let agj = mat_vec(a, gj);
                let bj = b[0] * gj[0] + b[1] * gj[1];
                let vj = table.value(q, j);
                for i in 0..npc {
                    let gi = table.grad(q, i);
                    let gi = [gi[0] / l, gi[1] / l];
                    let vi = table.value(q, i);
                    k[i * npc + j] += w * (agj[0] * gi[0] + agj[1] * gi[1] + (bj + c * vj) * vi);
                }
            }
        }
        k
    });

    let mut triplets: Vec<Triplet> = Vec::with_capacity(mesh.cell_count() * npc * npc);
    for (cell, k) in locals.iter().enumerate() {
        for i in 0..npc {
            for j in 0..npc {
                triplets.push((cell * npc + i, cell * npc + j, k[i * npc + j]));
            }
        }
    }
    let n = disc.dofmap.ndofs;
    Ok(SparseMatrix::from_triplets(n, n, triplets))
}

struct FaceLocal {
    /// (row dof, col dof, value) contributions of one face.
    entries: Vec<Triplet>,
}

/// Assemble the full operator B + sigma * S and the load vector.
///
/// Matrix entries are B_sigma(phi_j, phi_i); the upwind trace in the
/// advection form is taken from the cell the flow enters, per quadrature
/// point; the inflow boundary term runs over Gamma_in only; S integrates
/// over faces of the continuous skeleton E_hC only.
pub fn assemble(
    problem: &NncfProblem,
    cfg: &PenaltyConfig,
    disc: &Discretization,
) -> Result<LinearSystem> {
    cfg.validate()?;
    let mesh = disc.mesh;
    let r = disc.dofmap.degree();
    let basis = ReferenceBasis::new(r);
    let vol_rule = gauss_rule(disc.quad_order, 2)?;
    let face_rule = gauss_rule(disc.quad_order, 1)?;
    let cell_table = CellTable::tabulate(&basis, &vol_rule);
    let side_table = SideTable::tabulate(&basis, &face_rule);
    let npc = basis.len();
    let l = mesh.cell_side();
    let jac = l * l;

    check_volume_coefficients(problem, mesh, &vol_rule)?;
    let abar = abar_per_cell(problem, mesh, &vol_rule)?;
    let weights = face_weights(cfg, mesh, r, &abar);
    let flow = crate::mesh::classify_boundary(mesh, |x| (problem.advection)(x), &face_rule)?;

    // volume: local matrices and load
    let volume = map_indexed(mesh.cell_count(), |cell| {
        let mut k = vec![0.0; npc * npc];
        let mut load = vec![0.0; npc];
        for q in 0..vol_rule.len() {
            let x = mesh.to_physical(cell, vol_rule.point_2d(q));
            let w = vol_rule.weights[q] * jac;
            let a = (problem.diffusion)(x);
            let b = (problem.advection)(x);
            let c = (problem.reaction)(x);
            let f = (problem.source)(x);
            for j in 0..npc {
                let gj = cell_table.grad(q, j);
                let gj = [gj[0] / l, gj[1] / l];
                let agj = mat_vec(a, gj);
                let bj = b[0] * gj[0] + b[1] * gj[1];
                let vj = cell_table.value(q, j);
                load[j] += w * f * vj;
                for i in 0..npc {
                    let gi = cell_table.grad(q, i);
                    let gi = [gi[0] / l, gi[1] / l];
                    let vi = cell_table.value(q, i);
                    k[i * npc + j] += w * (agj[0] * gi[0] + agj[1] * gi[1] + (bj + c * vj) * vi);
                }
            }
        }
        (k, load)
    });

    // faces: penalty, consistency, upwind, inflow and super-penalty terms
    let theta = cfg.theta as f64;
    let face_locals = map_indexed(mesh.face_count(), |fi| {
        let face = &mesh.faces[fi];
        let m = weights.m[fi];
        let s_weight = if disc.region.in_continuous_skeleton(fi) {
            cfg.sigma * weights.m_super[fi]
        } else {
            0.0
        };
        let n = face.normal;
        let (pc, ps, minus) = face.sides();
        let mut entries = Vec::new();
        match minus {
            Some((mc, ms)) => {
                // sides: (cell, side, jump sign)
                let sides = [(pc, ps, 1.0), (mc, ms, -1.0)];
                let mut k = vec![0.0; (2 * npc) * (2 * npc)];
                for q in 0..face_rule.len() {
                    let x = face.point_at(face_rule.point_1d(q));
                    let w = face_rule.weights[q] * face.length;
                    let a = (problem.diffusion)(x);
                    let b = (problem.advection)(x);
                    let bn = b[0] * n[0] + b[1] * n[1];
                    // downwind side index: the cell the flow enters
                    let down = if bn > 0.0 { 1 } else { 0 };
                    for (sj, &(_, side_j, sgn_j)) in sides.iter().enumerate() {
                        for j in 0..npc {
                            let vj = side_table.value(side_j, q, j);
                            let gj = side_table.grad(side_j, q, j);
                            let gj = [gj[0] / l, gj[1] / l];
                            let agj = mat_vec(a, gj);
                            let agjn = agj[0] * n[0] + agj[1] * n[1];
                            for (si, &(_, side_i, sgn_i)) in sides.iter().enumerate() {
                                for i in 0..npc {
                                    let vi = side_table.value(side_i, q, i);
                                    let gi = side_table.grad(side_i, q, i);
                                    let gi = [gi[0] / l, gi[1] / l];
                                    let agi = mat_vec(a, gi);
                                    let agin = agi[0] * n[0] + agi[1] * n[1];
                                    let mut val = (m + s_weight) * sgn_j * sgn_i * vj * vi;
                                    val +=
                                        -0.5 * agjn * sgn_i * vi + theta * 0.5 * agin * sgn_j * vj;
                                    if si == down {
                                        val += -bn * sgn_j * vj * vi;
                                    }
                                    k[(si * npc + i) * (2 * npc) + sj * npc + j] += w * val;
                                }
                            }
                        }
                    }
                }
                let cells = [pc, mc];
                for si in 0..2 {
                    for i in 0..npc {
                        for sj in 0..2 {
                            for j in 0..npc {
                                let v = k[(si * npc + i) * (2 * npc) + sj * npc + j];
                                entries.push((cells[si] * npc + i, cells[sj] * npc + j, v));
                            }
                        }
                    }
                }
            }
            None => {
                let inflow = flow[fi] == Some(FlowClass::Inflow);
                let mut k = vec![0.0; npc * npc];
                for q in 0..face_rule.len() {
                    let x = face.point_at(face_rule.point_1d(q));
                    let w = face_rule.weights[q] * face.length;
                    let a = (problem.diffusion)(x);
                    let b = (problem.advection)(x);
                    let bn = b[0] * n[0] + b[1] * n[1];
                    for j in 0..npc {
                        let vj = side_table.value(ps, q, j);
                        let gj = side_table.grad(ps, q, j);
                        let gj = [gj[0] / l, gj[1] / l];
                        let agj = mat_vec(a, gj);
                        let agjn = agj[0] * n[0] + agj[1] * n[1];
                        for i in 0..npc {
                            let vi = side_table.value(ps, q, i);
                            let gi = side_table.grad(ps, q, i);
                            let gi = [gi[0] / l, gi[1] / l];
                            let agi = mat_vec(a, gi);
                            let agin = agi[0] * n[0] + agi[1] * n[1];
                            let mut val = (m + s_weight) * vj * vi;
                            val += -agjn * vi + theta * agin * vj;
                            if inflow {
                                val += -bn * vj * vi;
                            }
                            k[i * npc + j] += w * val;
                        }
                    }
                }
                for i in 0..npc {
                    for j in 0..npc {
                        entries.push((pc * npc + i, pc * npc + j, k[i * npc + j]));
                    }
                }
            }
        }
        FaceLocal { entries }
    });

    let ndofs = disc.dofmap.ndofs;
    let mut triplets: Vec<Triplet> =
        Vec::with_capacity(mesh.cell_count() * npc * npc + mesh.face_count() * 4 * npc * npc);
    let mut rhs = vec![0.0; ndofs];
    for (cell, (k, load)) in volume.iter().enumerate() {
        for i in 0..npc {
            rhs[cell * npc + i] += load[i];
            for j in 0..npc {
                triplets.push((cell * npc + i, cell * npc + j, k[i * npc + j]));
            }
        }
    }
    for fl in &face_locals {
        triplets.extend_from_slice(&fl.entries);
    }
    LinearSystem::new(SparseMatrix::from_triplets(ndofs, ndofs, triplets), rhs)
}

/// Assemble the super-penalty operator S alone (entries S(phi_j, phi_i)).
pub fn assemble_s_matrix(
    problem: &NncfProblem,
    cfg: &PenaltyConfig,
    disc: &Discretization,
) -> Result<SparseMatrix> {
    let mesh = disc.mesh;
    let r = disc.dofmap.degree();
    let basis = ReferenceBasis::new(r);
    let vol_rule = gauss_rule(disc.quad_order, 2)?;
    let face_rule = gauss_rule(disc.quad_order, 1)?;
    let side_table = SideTable::tabulate(&basis, &face_rule);
    let npc = basis.len();
    let abar = abar_per_cell(problem, mesh, &vol_rule)?;
    let weights = face_weights(cfg, mesh, r, &abar);

    let mut triplets: Vec<Triplet> = Vec::new();
    for (fi, face) in mesh.faces.iter().enumerate() {
        if !disc.region.in_continuous_skeleton(fi) {
            continue;
        }
        let m_super = weights.m_super[fi];
        let (pc, ps, minus) = face.sides();
        let sides: Vec<(usize, crate::mesh::Side, f64)> = match minus {
            Some((mc, ms)) => vec![(pc, ps, 1.0), (mc, ms, -1.0)],
            None => vec![(pc, ps, 1.0)],
        };
        for q in 0..face_rule.len() {
            let w = face_rule.weights[q] * face.length * m_super;
            for &(cj, side_j, sgn_j) in &sides {
                for j in 0..npc {
                    let vj = sgn_j * side_table.value(side_j, q, j);
                    for &(ci, side_i, sgn_i) in &sides {
                        for i in 0..npc {
                            let vi = sgn_i * side_table.value(side_i, q, i);
                            triplets.push((ci * npc + i, cj * npc + j, w * vj * vi));
                        }
                    }
                }
            }
        }
    }
    let n = disc.dofmap.ndofs;
    Ok(SparseMatrix::from_triplets(n, n, triplets))
}

/// The super-penalty in factored form S = G^T G: one row per quadrature
/// point of each continuous-skeleton face, carrying sqrt(w M)-weighted
/// one-sided traces. Exact zero entries are not stored, so plus and minus
/// rows of a face list the paired trace values in the same order and G
/// annihilates continuous fields bitwise.
pub fn assemble_s_factors(
    problem: &NncfProblem,
    cfg: &PenaltyConfig,
    disc: &Discretization,
) -> Result<linalg::JumpFactor> {
    let mesh = disc.mesh;
    let r = disc.dofmap.degree();
    let basis = ReferenceBasis::new(r);
    let vol_rule = gauss_rule(disc.quad_order, 2)?;
    let face_rule = gauss_rule(disc.quad_order, 1)?;
    let side_table = SideTable::tabulate(&basis, &face_rule);
    let npc = basis.len();
    let abar = abar_per_cell(problem, mesh, &vol_rule)?;
    let weights = face_weights(cfg, mesh, r, &abar);

    let mut plus = Vec::new();
    let mut minus = Vec::new();
    let mut row = 0usize;
    for (fi, face) in mesh.faces.iter().enumerate() {
        if !disc.region.in_continuous_skeleton(fi) {
            continue;
        }
        let (pc, ps, mside) = face.sides();
        for q in 0..face_rule.len() {
            let s = (face_rule.weights[q] * face.length * weights.m_super[fi]).sqrt();
            for k in 0..npc {
                let v = side_table.value(ps, q, k);
                if v != 0.0 {
                    plus.push((row, pc * npc + k, s * v));
                }
            }
            if let Some((mc, ms)) = mside {
                for k in 0..npc {
                    let v = side_table.value(ms, q, k);
                    if v != 0.0 {
                        minus.push((row, mc * npc + k, s * v));
                    }
                }
            }
            row += 1;
        }
    }
    Ok(linalg::JumpFactor::new(row, disc.dofmap.ndofs, plus, minus))
}

/// Solve B_sigma(w, v) = l(v) over the full dG space.
///
/// B and sigma S are kept as separate operators through the solve, so the
/// unpenalized part is not lost to rounding against entries of order sigma
/// and the penalty annihilates continuous fields exactly.
pub fn solve_super_penalized(
    problem: &NncfProblem,
    cfg: &PenaltyConfig,
    disc: &Discretization,
) -> Result<ScalarField> {
    let base = PenaltyConfig { sigma: 0.0, ..*cfg };
    let system = assemble(problem, &base, disc)?;
    let x = if cfg.sigma == 0.0 {
        linalg::solve_direct(&system)?
    } else {
        let jumps = assemble_s_factors(problem, cfg, disc)?;
        let s = jumps.matrix();
        linalg::solve_penalized(&system.matrix, &s, &jumps, cfg.sigma, &system.rhs)?
    };
    Ok(ScalarField::from_coeffs(disc.dofmap.degree(), x))
}

/// Solve the cdG problem directly: restrict the assembled system through the
/// constraint prolongation (strong Dirichlet data on Gamma_C) and prolong
/// the solution back into dG coefficients. The result does not depend on
/// sigma since S vanishes on the constrained subspace.
pub fn solve_cdg_direct(
    problem: &NncfProblem,
    cfg: &PenaltyConfig,
    disc: &Discretization,
) -> Result<ScalarField> {
    let system = assemble(problem, cfg, disc)?;
    let cm = build_constraints(disc.dofmap, disc.mesh, disc.region, true)?;
    let restricted = linalg::apply_constraints(&system, &cm)?;
    let x = linalg::solve_direct(&restricted)?;
    Ok(cm.prolong(&x))
}

/// All pieces of the dG norm (squares), the S-seminorm, the plain norms of
/// the field and, when an exact solution is attached, the errors against it.
#[derive(Debug, Clone)]
pub struct NormReport {
    pub diffusive_sq: f64,
    pub reaction_sq: f64,
    pub advective_jump_sq: f64,
    pub penalty_jump_sq: f64,
    pub dg_norm: f64,
    pub s_seminorm: f64,
    pub l2_norm: f64,
    pub h1_semi_norm: f64,
    pub jump_l2: f64,
    pub l2_error: Option<f64>,
    pub h1_semi_error: Option<f64>,
}

impl NormReport {
    pub fn dg_norm_sq(&self) -> f64 {
        self.diffusive_sq + self.reaction_sq + self.advective_jump_sq + self.penalty_jump_sq
    }
}

/// Evaluate all norm pieces of a dG field by quadrature. This path shares no
/// code with the matrix assembly, so S(x, x) can be cross-checked against
/// the S-seminorm computed here.
pub fn norms(
    field: &ScalarField,
    problem: &NncfProblem,
    cfg: &PenaltyConfig,
    disc: &Discretization,
) -> Result<NormReport> {
    let mesh = disc.mesh;
    let r = disc.dofmap.degree();
    assert_eq!(field.degree, r, "field degree does not match the space");
    let basis = ReferenceBasis::new(r);
    let vol_rule = gauss_rule(disc.quad_order, 2)?;
    let face_rule = gauss_rule(disc.quad_order, 1)?;
    let cell_table = CellTable::tabulate(&basis, &vol_rule);
    let side_table = SideTable::tabulate(&basis, &face_rule);
    let npc = basis.len();
    let l = mesh.cell_side();
    let jac = l * l;
    let abar = abar_per_cell(problem, mesh, &vol_rule)?;
    let weights = face_weights(cfg, mesh, r, &abar);

    let mut diffusive = 0.0;
    let mut reaction = 0.0;
    let mut l2 = 0.0;
    let mut h1 = 0.0;
    let mut l2_err = 0.0;
    let mut h1_err = 0.0;
    for cell in 0..mesh.cell_count() {
        for q in 0..vol_rule.len() {
            let x = mesh.to_physical(cell, vol_rule.point_2d(q));
            let w = vol_rule.weights[q] * jac;
            let a = (problem.diffusion)(x);
            let mut v = 0.0;
            let mut g = [0.0, 0.0];
            for k in 0..npc {
                let c = field.coeffs[cell * npc + k];
                v += c * cell_table.value(q, k);
                let gk = cell_table.grad(q, k);
                g[0] += c * gk[0] / l;
                g[1] += c * gk[1] / l;
            }
            let ag = mat_vec(a, g);
            diffusive += w * (ag[0] * g[0] + ag[1] * g[1]);
            reaction += w * problem.c0_sq(x).max(0.0) * v * v;
            l2 += w * v * v;
            h1 += w * (g[0] * g[0] + g[1] * g[1]);
            if let Some(exact) = &problem.exact {
                let ue = (exact.value)(x);
                let ge = (exact.gradient)(x);
                l2_err += w * (v - ue) * (v - ue);
                h1_err += w * ((g[0] - ge[0]).powi(2) + (g[1] - ge[1]).powi(2));
            }
        }
    }

    let mut advective = 0.0;
    let mut penalty = 0.0;
    let mut s_semi = 0.0;
    let mut jump_sq = 0.0;
    for (fi, face) in mesh.faces.iter().enumerate() {
        let (pc, ps, minus) = face.sides();
        let in_ehc = disc.region.in_continuous_skeleton(fi);
        for q in 0..face_rule.len() {
            let x = face.point_at(face_rule.point_1d(q));
            let w = face_rule.weights[q] * face.length;
            let b = (problem.advection)(x);
            let bn = b[0] * face.normal[0] + b[1] * face.normal[1];
            let vp: f64 = (0..npc)
                .map(|k| field.coeffs[pc * npc + k] * side_table.value(ps, q, k))
                .sum();
            let jump = match minus {
                Some((mc, ms)) => {
                    let vm: f64 = (0..npc)
                        .map(|k| field.coeffs[mc * npc + k] * side_table.value(ms, q, k))
                        .sum();
                    vp - vm
                }
                None => vp,
            };
            advective += w * 0.5 * bn.abs() * jump * jump;
            penalty += w * weights.m[fi] * jump * jump;
            jump_sq += w * jump * jump;
            if in_ehc {
                s_semi += w * weights.m_super[fi] * jump * jump;
            }
        }
    }

    let has_exact = problem.exact.is_some();
    Ok(NormReport {
        diffusive_sq: diffusive,
        reaction_sq: reaction,
        advective_jump_sq: advective,
        penalty_jump_sq: penalty,
        dg_norm: (diffusive + reaction + advective + penalty).sqrt(),
        s_seminorm: s_semi.sqrt(),
        l2_norm: l2.sqrt(),
        h1_semi_norm: h1.sqrt(),
        jump_l2: jump_sq.sqrt(),
        l2_error: has_exact.then(|| l2_err.sqrt()),
        h1_semi_error: has_exact.then(|| h1_err.sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_uniform_mesh, make_region};
    use crate::spaces::build_dg_space;
    use rand::{Rng, SeedableRng};

    fn constant_problem(a: [[f64; 2]; 2], b: [f64; 2], c: f64, f: f64) -> NncfProblem {
        NncfProblem {
            diffusion: Arc::new(move |_| a),
            advection: Arc::new(move |_| b),
            advection_div: Arc::new(|_| 0.0),
            reaction: Arc::new(move |_| c),
            source: Arc::new(move |_| f),
            exact: None,
        }
    }

    #[test]
    fn penalty_m_matches_formula() {
        // a = 1e-4 I, r = 1, C_p = 10, h_e = sqrt(2)/32: m = 0.1 * 32 / sqrt(2)
        let mesh = build_uniform_mesh(32).unwrap();
        let eps = 1e-4;
        let problem = constant_problem([[eps, 0.0], [0.0, eps]], [0.0, 0.0], 0.0, 0.0);
        let m = penalty_m(&problem, &mesh, 0, 1, 10.0, 3).unwrap();
        let expect = 10.0 * eps.sqrt() * 32.0 / crate::mesh::SQRT_2;
        assert!((m - expect).abs() < 1e-12);
        assert!((m - 2.2627).abs() < 1e-4);
    }

    #[test]
    fn penalty_m_zero_diffusion() {
        let mesh = build_uniform_mesh(4).unwrap();
        let problem = constant_problem([[0.0; 2]; 2], [1.0, 0.0], 0.0, 0.0);
        assert_eq!(penalty_m(&problem, &mesh, 3, 1, 10.0, 3).unwrap(), 0.0);
    }

    #[test]
    fn penalty_same_on_boundary_faces() {
        // uniform coefficient: the single-cell boundary average equals the
        // interior two-cell average
        let mesh = build_uniform_mesh(4).unwrap();
        let problem = constant_problem([[2.0, 0.0], [0.0, 2.0]], [0.0, 0.0], 0.0, 0.0);
        let mut values = Vec::new();
        for fi in 0..mesh.face_count() {
            values.push(penalty_m(&problem, &mesh, fi, 1, 10.0, 3).unwrap());
        }
        for v in &values {
            assert!((v - values[0]).abs() < 1e-13);
        }
    }

    #[test]
    fn superpenalty_limits() {
        let mesh = build_uniform_mesh(32).unwrap();
        let problem = constant_problem([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], 0.0, 0.0);
        // C_ar = C_d = 0 recovers the plain interior penalty method
        assert_eq!(
            superpenalty_m(&problem, &mesh, 0, 1, 0.0, 0.0, 3).unwrap(),
            0.0
        );
        // a = 0, C_ar = 1: M = 1 on every face
        let hyp = constant_problem([[0.0; 2]; 2], [1.0, 1.0], 0.0, 0.0);
        assert_eq!(superpenalty_m(&hyp, &mesh, 7, 1, 1.0, 1.0, 3).unwrap(), 1.0);
        // C_ar = C_d = 1, a = I, r = 1: M = 1 + 32/sqrt(2)
        let m = superpenalty_m(&problem, &mesh, 0, 1, 1.0, 1.0, 3).unwrap();
        assert!((m - (1.0 + 32.0 / crate::mesh::SQRT_2)).abs() < 1e-12);
        assert!((m - 23.627).abs() < 1e-3);
    }

    #[test]
    fn symmetric_for_theta_minus_one() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |c| c % 3 == 0);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = constant_problem([[1.0, 0.3], [0.3, 2.0]], [0.0, 0.0], 0.0, 1.0);
        let cfg = PenaltyConfig {
            theta: -1,
            sigma: 5.0,
            ..Default::default()
        };
        let system = assemble(&problem, &cfg, &disc).unwrap();
        let scale = system.matrix.norm_inf();
        assert!(system.matrix.asymmetry() < 1e-12 * scale);
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| true);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = constant_problem([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0], 0.0, 0.0);
        for sigma in [0.0, 1e6] {
            let cfg = PenaltyConfig {
                sigma,
                ..Default::default()
            };
            let w = solve_super_penalized(&problem, &cfg, &disc).unwrap();
            for c in &w.coeffs {
                assert!(c.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn q1_volume_block_matches_reference_stiffness() {
        // a = I on the unit cell: K = 1/6 * [[4,-1,-1,-2],[-1,4,-2,-1],
        // [-1,-2,4,-1],[-2,-1,-1,4]] in the node order (0,0),(1,0),(0,1),(1,1)
        let mesh = build_uniform_mesh(1).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| false);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = constant_problem([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], 0.0, 0.0);
        let k = assemble_volume_matrix(&problem, &disc).unwrap();
        let reference = [
            [4.0, -1.0, -1.0, -2.0],
            [-1.0, 4.0, -2.0, -1.0],
            [-1.0, -2.0, 4.0, -1.0],
            [-2.0, -1.0, -1.0, 4.0],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (k.get(i, j) - reference[i][j] / 6.0).abs() < 1e-14,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn cdg_direct_is_sigma_independent() {
        let mesh = build_uniform_mesh(8).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |c| c % 2 == 0);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = NncfProblem::boundary_layer(1.0);
        let v0 = solve_cdg_direct(&problem, &PenaltyConfig::default(), &disc).unwrap();
        let v1 = solve_cdg_direct(
            &problem,
            &PenaltyConfig {
                sigma: 1e6,
                ..Default::default()
            },
            &disc,
        )
        .unwrap();
        for (a, b) in v0.coeffs.iter().zip(&v1.coeffs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_region_cdg_equals_plain_dg() {
        let mesh = build_uniform_mesh(6).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| false);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = NncfProblem::boundary_layer(1.0);
        let cfg = PenaltyConfig::default();
        let w = solve_super_penalized(&problem, &cfg, &disc).unwrap();
        let v = solve_cdg_direct(&problem, &cfg, &disc).unwrap();
        for (a, b) in w.coeffs.iter().zip(&v.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn norm_of_zero_field_is_zero() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| true);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = NncfProblem::boundary_layer(0.5);
        let field = ScalarField::zeros(&dofmap);
        let report = norms(&field, &problem, &PenaltyConfig::default(), &disc).unwrap();
        assert_eq!(report.dg_norm, 0.0);
        assert_eq!(report.s_seminorm, 0.0);
        assert_eq!(report.jump_l2, 0.0);
    }

    #[test]
    fn constant_field_reaction_norm() {
        // w = 1 with a = 0, b = 0, c = 1: only |c0 w| survives and equals 1
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| true);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = constant_problem([[0.0; 2]; 2], [0.0, 0.0], 1.0, 0.0);
        let field = ScalarField::from_coeffs(1, vec![1.0; dofmap.ndofs]);
        let report = norms(&field, &problem, &PenaltyConfig::default(), &disc).unwrap();
        assert!((report.dg_norm - 1.0).abs() < 1e-13);
        assert!(report.penalty_jump_sq.abs() < 1e-14);
        assert!(report.jump_l2 > 0.0); // boundary trace counts as a jump
    }

    #[test]
    fn prolonged_field_has_zero_s_seminorm() {
        let mesh = build_uniform_mesh(5).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let flags: Vec<bool> = (0..mesh.cell_count()).map(|_| rng.gen_bool(0.5)).collect();
        let region = make_region(&mesh, |c| flags[c]);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = NncfProblem::boundary_layer(1.0);
        let cm = crate::spaces::build_constraints(&dofmap, &mesh, &region, true).unwrap();
        let free: Vec<f64> = (0..cm.free_dofs())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let field = cm.prolong(&free);
        let report = norms(&field, &problem, &PenaltyConfig::default(), &disc).unwrap();
        assert!(report.s_seminorm < 1e-12);
    }

    #[test]
    fn q2_polynomial_solution_reproduced() {
        // u = x(1-x)y(1-y) in Q2 with zero trace; the dG solution matches it
        // to solver accuracy (Galerkin consistency).
        let mesh = build_uniform_mesh(3).unwrap();
        let dofmap = build_dg_space(&mesh, 2).unwrap();
        let region = make_region(&mesh, |_| false);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let value: ScalarFn = Arc::new(|x: [f64; 2]| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
        let gradient: VectorFn = Arc::new(|x: [f64; 2]| {
            [
                (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]),
                x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]),
            ]
        });
        let source: ScalarFn = Arc::new(|x: [f64; 2]| {
            let lap = -2.0 * x[1] * (1.0 - x[1]) - 2.0 * x[0] * (1.0 - x[0]);
            let gx = (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]);
            let u = x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]);
            -lap + gx + u
        });
        let problem = NncfProblem {
            diffusion: Arc::new(|_| [[1.0, 0.0], [0.0, 1.0]]),
            advection: Arc::new(|_| [1.0, 0.0]),
            advection_div: Arc::new(|_| 0.0),
            reaction: Arc::new(|_| 1.0),
            source,
            exact: Some(ExactSolution { value, gradient }),
        };
        for theta in [-1, 0, 1] {
            let cfg = PenaltyConfig {
                theta,
                ..Default::default()
            };
            let w = solve_super_penalized(&problem, &cfg, &disc).unwrap();
            let report = norms(&w, &problem, &cfg, &disc).unwrap();
            assert!(
                report.l2_error.unwrap() < 1e-10,
                "theta={theta}: {:.3e}",
                report.l2_error.unwrap()
            );
        }
    }

    #[test]
    fn coercivity_spot_check() {
        // B(w,w) >= Lambda |w|_dG^2 with Lambda = 1 (theta=1), 1/2 (theta=-1)
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| false);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = constant_problem([[0.1, 0.0], [0.0, 0.1]], [1.0, 1.0], 1.0, 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for (theta, lambda) in [(1, 1.0), (-1, 0.5)] {
            let cfg = PenaltyConfig {
                theta,
                ..Default::default()
            };
            let system = assemble(&problem, &cfg, &disc).unwrap();
            for _ in 0..20 {
                let w: Vec<f64> = (0..dofmap.ndofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let aw = system.matrix.matvec(&w);
                let bww: f64 = w.iter().zip(&aw).map(|(a, b)| a * b).sum();
                let field = ScalarField::from_coeffs(1, w.clone());
                let nrm = norms(&field, &problem, &cfg, &disc).unwrap();
                assert!(
                    bww >= lambda * nrm.dg_norm_sq() - 1e-10,
                    "theta={theta}: B={bww}, norm^2={}",
                    nrm.dg_norm_sq()
                );
            }
        }
    }

    #[test]
    fn s_matrix_matches_seminorm_quadrature() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        let flags: Vec<bool> = (0..mesh.cell_count()).map(|_| rng.gen_bool(0.5)).collect();
        let region = make_region(&mesh, |c| flags[c]);
        let disc = Discretization::new(&mesh, &dofmap, &region);
        let problem = constant_problem([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], 0.0, 0.0);
        let cfg = PenaltyConfig {
            c_ar: 0.5,
            ..Default::default()
        };
        let s = assemble_s_matrix(&problem, &cfg, &disc).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..dofmap.ndofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sx = s.matvec(&x);
            let xsx: f64 = x.iter().zip(&sx).map(|(a, b)| a * b).sum();
            let field = ScalarField::from_coeffs(1, x.clone());
            let nrm = norms(&field, &problem, &cfg, &disc).unwrap();
            let semi2 = nrm.s_seminorm * nrm.s_seminorm;
            assert!(
                (xsx - semi2).abs() <= 1e-12 * (1.0 + xsx.abs()),
                "S(x,x)={xsx} vs |x|_S^2={semi2}"
            );
        }
    }
}
