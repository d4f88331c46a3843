//! Concentration transport for the miscible displacement system: the
//! velocity-dependent dispersion form, the half-weighted skew convection and
//! wells form with per-point upwinding, super-penalization on the continuous
//! skeleton, backward Euler in time and the sequentially coupled Darcy /
//! transport loop.
//!
//! The convection form is
//!
//!   B_cq(c, d; u) = 1/2 [ (u.grad c, d) - (u c, grad d) + ((qI+qP) c, d) ]
//!                 + 1/2 sum_{e interior} (u.[c], d*)_e
//!
//! with d* the trace from the cell the flow exits (the upwind side); this
//! choice makes B_cq positive semidefinite for divergence-consistent
//! velocities, which the backward Euler energy argument needs.

use crate::adapt::{self, AdaptPolicy, StepPlan};
use crate::darcy::{solve_darcy, DarcyState, ImdParams};
use crate::error::{Error, Result};
use crate::linalg::{self, gauss_rule, LinearSystem, SparseMatrix};
use crate::mesh::{make_region, Mesh, RegionPartition};
use crate::nncf::map_indexed;
use crate::spaces::{
    build_constraints, rt0_eval, CellTable, DofMap, ReferenceBasis, ScalarField, SideTable,
};

/// The diffusion-dispersion tensor
/// D(u) = phi (d_m I + |u| d_l E(u) + |u| d_t (I - E(u))), E(u) = u u^T/|u|^2,
/// with D(0) = phi d_m I (the |u|-weighted terms vanish in the limit).
pub fn dispersion(u: [f64; 2], params: &ImdParams) -> [[f64; 2]; 2] {
    let phi = params.porosity;
    let norm = (u[0] * u[0] + u[1] * u[1]).sqrt();
    if norm == 0.0 {
        let d = phi * params.d_m;
        return [[d, 0.0], [0.0, d]];
    }
    let iso = phi * (params.d_m + norm * params.d_t);
    let aniso = phi * (params.d_l - params.d_t) / norm;
    [
        [iso + aniso * u[0] * u[0], aniso * u[0] * u[1]],
        [aniso * u[1] * u[0], iso + aniso * u[1] * u[1]],
    ]
}

fn normal_component(d: [[f64; 2]; 2], n: [f64; 2]) -> f64 {
    n[0] * (d[0][0] * n[0] + d[0][1] * n[1]) + n[1] * (d[1][0] * n[0] + d[1][1] * n[1])
}

/// Interior penalty weight of the dispersion form at a face point:
/// m = sqrt(C_pen max(n^T D(u+) n, n^T D(u-) n) / h_e), single-sided on
/// boundary faces.
pub fn penalty_m_imd(
    mesh: &Mesh,
    face: usize,
    velocity: &[f64],
    params: &ImdParams,
    t: f64,
) -> f64 {
    let f = &mesh.faces[face];
    let (pc, ps, minus) = f.sides();
    let up = rt0_eval(mesh, velocity, pc, ps.ref_coords(t));
    let dnn_plus = normal_component(dispersion(up, params), f.normal);
    let dnn = match minus {
        Some((mc, ms)) => {
            let um = rt0_eval(mesh, velocity, mc, ms.ref_coords(t));
            dnn_plus.max(normal_component(dispersion(um, params), f.normal))
        }
        None => dnn_plus,
    };
    (params.c_pen * dnn / f.h_e).sqrt()
}

/// Pieces (squares) of the mesh-dependent energy norm of the transport form
/// and the S-seminorm of the super-penalty.
#[derive(Debug, Clone)]
pub struct TripleNormReport {
    pub dispersion_sq: f64,
    pub wells_sq: f64,
    pub advective_jump_sq: f64,
    pub penalty_jump_sq: f64,
    pub s_seminorm: f64,
}

impl TripleNormReport {
    pub fn triple_norm_sq(&self) -> f64 {
        self.dispersion_sq + self.wells_sq + self.advective_jump_sq + self.penalty_jump_sq
    }

    pub fn triple_norm(&self) -> f64 {
        self.triple_norm_sq().sqrt()
    }
}

/// Super-penalty weight for the displacement problem: M = C_d r^2 / h_e.
pub fn superpenalty_weight(params: &ImdParams, mesh: &Mesh) -> f64 {
    params.c_d * (params.degree * params.degree) as f64 * mesh.n_per_side as f64
        / crate::mesh::SQRT_2
}

struct FaceGeometry {
    rule_1d: crate::linalg::QuadratureRule,
    side_table: SideTable,
    npc: usize,
}

impl FaceGeometry {
    fn new(degree: usize, quad_order: usize) -> Result<Self> {
        let rule_1d = gauss_rule(quad_order, 1)?;
        let basis = ReferenceBasis::new(degree);
        let side_table = SideTable::tabulate(&basis, &rule_1d);
        let npc = basis.len();
        Ok(FaceGeometry {
            rule_1d,
            side_table,
            npc,
        })
    }

    fn trace(&self, coeffs: &[f64], cell: usize, side: crate::mesh::Side, q: usize) -> f64 {
        (0..self.npc)
            .map(|k| coeffs[cell * self.npc + k] * self.side_table.value(side, q, k))
            .sum()
    }
}

/// Assemble the transport operator.
///
/// With `time_term` present the matrix is (phi/dt) mass + B_d + B_cq + sigma S
/// and the right-hand side carries (phi/dt)(c_prev, d) + (c_hat q_I, d);
/// without it only B = B_d + B_cq (for form-level tests). `sigma_s` adds the
/// super-penalty over interior faces of the continuous skeleton.
fn assemble_operator(
    velocity: &[f64],
    params: &ImdParams,
    mesh: &Mesh,
    dofmap: &DofMap,
    region: &RegionPartition,
    sigma: f64,
    time_term: Option<&ScalarField>,
    star_from_exit: bool,
) -> Result<LinearSystem> {
    let r = dofmap.degree();
    let basis = ReferenceBasis::new(r);
    let vol_rule = gauss_rule(params.quad_order, 2)?;
    let face_rule = gauss_rule(params.quad_order, 1)?;
    let cell_table = CellTable::tabulate(&basis, &vol_rule);
    let side_table = SideTable::tabulate(&basis, &face_rule);
    let npc = basis.len();
    let l = mesh.cell_side();
    let jac = l * l;
    let mass_scale = if time_term.is_some() {
        params.porosity / params.dt
    } else {
        0.0
    };
    let m_super = superpenalty_weight(params, mesh);

    let volume = map_indexed(mesh.cell_count(), |cell| {
        let rt = crate::spaces::Rt0Cell::new(mesh, cell);
        let faces = mesh.cell_faces(cell);
        let qi = params.q_injection(mesh, cell);
        let qp = params.q_production(mesh, cell);
        let mut k = vec![0.0; npc * npc];
        let mut load = vec![0.0; npc];
        for q in 0..vol_rule.len() {
            let w = vol_rule.weights[q] * jac;
            let xi = vol_rule.point_2d(q);
            let mut u = [0.0, 0.0];
            for m in 0..4 {
                let v = rt.value(m, xi);
                u[0] += velocity[faces[m]] * v[0];
                u[1] += velocity[faces[m]] * v[1];
            }
            let d = dispersion(u, params);
            let c_prev_val = time_term.map(|c| {
                (0..npc)
                    .map(|m| c.coeffs[cell * npc + m] * cell_table.value(q, m))
                    .sum::<f64>()
            });
            for j in 0..npc {
                let vj = cell_table.value(q, j);
                let gj = cell_table.grad(q, j);
                let gj = [gj[0] / l, gj[1] / l];
                let dgj = [
                    d[0][0] * gj[0] + d[0][1] * gj[1],
                    d[1][0] * gj[0] + d[1][1] * gj[1],
                ];
                let ugj = u[0] * gj[0] + u[1] * gj[1];
                if let Some(cp) = c_prev_val {
                    load[j] += w * (mass_scale * cp + params.injected_concentration * qi) * vj;
                }
                for i in 0..npc {
                    let vi = cell_table.value(q, i);
                    let gi = cell_table.grad(q, i);
                    let gi = [gi[0] / l, gi[1] / l];
                    let ugi = u[0] * gi[0] + u[1] * gi[1];
                    let mut val = dgj[0] * gi[0] + dgj[1] * gi[1];
                    val += 0.5 * (ugj * vi - vj * ugi + (qi + qp) * vj * vi);
                    val += mass_scale * vj * vi;
                    k[i * npc + j] += w * val;
                }
            }
        }
        (k, load)
    });

    let face_locals = map_indexed(mesh.face_count(), |fi| {
        let face = &mesh.faces[fi];
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        let (pc, ps, minus) = face.sides();
        let Some((mc, ms)) = minus else {
            return entries; // Neumann problem: no boundary face terms
        };
        let s_weight = if sigma != 0.0 && region.in_continuous_skeleton(fi) {
            sigma * m_super
        } else {
            0.0
        };
        let n = face.normal;
        let sides = [(pc, ps, 1.0), (mc, ms, -1.0)];
        let mut k = vec![0.0; (2 * npc) * (2 * npc)];
        for q in 0..face_rule.len() {
            let t = face_rule.point_1d(q);
            let w = face_rule.weights[q] * face.length;
            let u_plus = rt0_eval(mesh, velocity, pc, ps.ref_coords(t));
            let u_minus = rt0_eval(mesh, velocity, mc, ms.ref_coords(t));
            let d_sides = [
                dispersion(u_plus, params),
                dispersion(u_minus, params),
            ];
            let dnn = normal_component(d_sides[0], n).max(normal_component(d_sides[1], n));
            let m_pen = (params.c_pen * dnn / face.h_e).sqrt();
            let un = u_plus[0] * n[0] + u_plus[1] * n[1]; // single valued for RT0
            let star = if star_from_exit {
                usize::from(un <= 0.0) // exit side: plus when un > 0
            } else {
                usize::from(un > 0.0) // entry side: minus when un > 0
            };
            for (sj, &(_, side_j, sgn_j)) in sides.iter().enumerate() {
                for j in 0..npc {
                    let vj = side_table.value(side_j, q, j);
                    let gj = side_table.grad(side_j, q, j);
                    let gj = [gj[0] / l, gj[1] / l];
                    let dj = d_sides[sj];
                    let dgj = [
                        dj[0][0] * gj[0] + dj[0][1] * gj[1],
                        dj[1][0] * gj[0] + dj[1][1] * gj[1],
                    ];
                    let dgjn = dgj[0] * n[0] + dgj[1] * n[1];
                    for (si, &(_, side_i, sgn_i)) in sides.iter().enumerate() {
                        for i in 0..npc {
                            let vi = side_table.value(side_i, q, i);
                            let gi = side_table.grad(side_i, q, i);
                            let gi = [gi[0] / l, gi[1] / l];
                            let di = d_sides[si];
                            let dgi = [
                                di[0][0] * gi[0] + di[0][1] * gi[1],
                                di[1][0] * gi[0] + di[1][1] * gi[1],
                            ];
                            let dgin = dgi[0] * n[0] + dgi[1] * n[1];
                            // penalty + super-penalty jumps
                            let mut val = (m_pen + s_weight) * sgn_j * sgn_i * vj * vi;
                            // symmetric consistency terms of the dispersion form
                            val += -0.5 * (sgn_i * vi * dgjn + sgn_j * vj * dgin);
                            // upwinded skew convection: (u.[c], d*) / 2
                            if si == star {
                                val += 0.5 * un * sgn_j * vj * vi;
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
                        entries.push((
                            cells[si] * npc + i,
                            cells[sj] * npc + j,
                            k[(si * npc + i) * (2 * npc) + sj * npc + j],
                        ));
                    }
                }
            }
        }
        entries
    });

    let ndofs = dofmap.ndofs;
    let mut triplets = Vec::with_capacity(mesh.cell_count() * npc * npc * 5);
    let mut rhs = vec![0.0; ndofs];
    for (cell, (k, load)) in volume.iter().enumerate() {
        for i in 0..npc {
            rhs[cell * npc + i] += load[i];
            for j in 0..npc {
                triplets.push((cell * npc + i, cell * npc + j, k[i * npc + j]));
            }
        }
    }
    for entries in &face_locals {
        triplets.extend_from_slice(entries);
    }
    LinearSystem::new(SparseMatrix::from_triplets(ndofs, ndofs, triplets), rhs)
}

/// Full backward-Euler transport system for one step.
pub fn assemble_transport(
    c_prev: &ScalarField,
    darcy: &DarcyState,
    region: &RegionPartition,
    sigma: f64,
    params: &ImdParams,
    mesh: &Mesh,
    dofmap: &DofMap,
) -> Result<LinearSystem> {
    assemble_operator(
        &darcy.velocity,
        params,
        mesh,
        dofmap,
        region,
        sigma,
        Some(c_prev),
        true,
    )
}

/// The stationary part B = B_d + B_cq alone (no mass term, no super-penalty).
pub fn assemble_b_matrix(
    velocity: &[f64],
    params: &ImdParams,
    mesh: &Mesh,
    dofmap: &DofMap,
) -> Result<SparseMatrix> {
    let region = make_region(mesh, |_| false);
    Ok(assemble_operator(
        velocity, params, mesh, dofmap, &region, 0.0, None, true,
    )?
    .matrix)
}

/// B with the test trace taken from the cell the flow enters instead; kept
/// for convention comparisons in tests.
#[doc(hidden)]
pub fn assemble_b_matrix_entry_star(
    velocity: &[f64],
    params: &ImdParams,
    mesh: &Mesh,
    dofmap: &DofMap,
) -> Result<SparseMatrix> {
    let region = make_region(mesh, |_| false);
    Ok(assemble_operator(
        velocity, params, mesh, dofmap, &region, 0.0, None, false,
    )?
    .matrix)
}

/// The super-penalty in factored form (see `linalg::JumpFactor`): rows over
/// quadrature points of interior continuous-skeleton faces with weight
/// sqrt(w M), M = C_d r^2 / h_e.
pub fn assemble_s_factors(
    region: &RegionPartition,
    params: &ImdParams,
    mesh: &Mesh,
    dofmap: &DofMap,
) -> Result<linalg::JumpFactor> {
    let geom = FaceGeometry::new(dofmap.degree(), params.quad_order)?;
    let npc = geom.npc;
    let m_super = superpenalty_weight(params, mesh);
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    let mut row = 0usize;
    for (fi, face) in mesh.faces.iter().enumerate() {
        if face.is_boundary() || !region.in_continuous_skeleton(fi) {
            continue;
        }
        let (pc, ps, mside) = face.sides();
        let (mc, ms) = mside.unwrap();
        for q in 0..geom.rule_1d.len() {
            let s = (geom.rule_1d.weights[q] * face.length * m_super).sqrt();
            for k in 0..npc {
                let v = geom.side_table.value(ps, q, k);
                if v != 0.0 {
                    plus.push((row, pc * npc + k, s * v));
                }
                let v = geom.side_table.value(ms, q, k);
                if v != 0.0 {
                    minus.push((row, mc * npc + k, s * v));
                }
            }
            row += 1;
        }
    }
    Ok(linalg::JumpFactor::new(row, dofmap.ndofs, plus, minus))
}

/// The super-penalty operator S with M = C_d r^2 / h_e over interior faces
/// of the continuous skeleton.
pub fn assemble_s_matrix(
    region: &RegionPartition,
    params: &ImdParams,
    mesh: &Mesh,
    dofmap: &DofMap,
) -> Result<SparseMatrix> {
    let geom = FaceGeometry::new(dofmap.degree(), params.quad_order)?;
    let npc = geom.npc;
    let m_super = superpenalty_weight(params, mesh);
    let mut triplets = Vec::new();
    for (fi, face) in mesh.faces.iter().enumerate() {
        if face.is_boundary() || !region.in_continuous_skeleton(fi) {
            continue;
        }
        let (pc, ps, minus) = face.sides();
        let (mc, ms) = minus.unwrap();
        let sides = [(pc, ps, 1.0), (mc, ms, -1.0)];
        for q in 0..geom.rule_1d.len() {
            let w = geom.rule_1d.weights[q] * face.length * m_super;
            for &(cj, side_j, sgn_j) in &sides {
                for j in 0..npc {
                    let vj = sgn_j * geom.side_table.value(side_j, q, j);
                    for &(ci, side_i, sgn_i) in &sides {
                        for i in 0..npc {
                            let vi = sgn_i * geom.side_table.value(side_i, q, i);
                            triplets.push((ci * npc + i, cj * npc + j, w * vj * vi));
                        }
                    }
                }
            }
        }
    }
    Ok(SparseMatrix::from_triplets(
        dofmap.ndofs,
        dofmap.ndofs,
        triplets,
    ))
}

/// Energy-norm pieces of a concentration field for a given velocity, by
/// direct quadrature (independent of the assembled matrices).
pub fn triple_norms(
    field: &ScalarField,
    velocity: &[f64],
    region: &RegionPartition,
    params: &ImdParams,
    mesh: &Mesh,
) -> Result<TripleNormReport> {
    let r = field.degree;
    let basis = ReferenceBasis::new(r);
    let vol_rule = gauss_rule(params.quad_order, 2)?;
    let face_rule = gauss_rule(params.quad_order, 1)?;
    let cell_table = CellTable::tabulate(&basis, &vol_rule);
    let geom = FaceGeometry::new(r, params.quad_order)?;
    let npc = basis.len();
    let l = mesh.cell_side();
    let jac = l * l;
    let m_super = superpenalty_weight(params, mesh);

    let mut dispersion_sq = 0.0;
    let mut wells_sq = 0.0;
    for cell in 0..mesh.cell_count() {
        let q0_sq = params.q_injection(mesh, cell) + params.q_production(mesh, cell);
        for q in 0..vol_rule.len() {
            let w = vol_rule.weights[q] * jac;
            let xi = vol_rule.point_2d(q);
            let u = rt0_eval(mesh, velocity, cell, xi);
            let d = dispersion(u, params);
            let mut v = 0.0;
            let mut g = [0.0, 0.0];
            for k in 0..npc {
                let c = field.coeffs[cell * npc + k];
                v += c * cell_table.value(q, k);
                let gk = cell_table.grad(q, k);
                g[0] += c * gk[0] / l;
                g[1] += c * gk[1] / l;
            }
            let dg = [
                d[0][0] * g[0] + d[0][1] * g[1],
                d[1][0] * g[0] + d[1][1] * g[1],
            ];
            dispersion_sq += w * (dg[0] * g[0] + dg[1] * g[1]);
            wells_sq += w * 0.5 * q0_sq * v * v;
        }
    }

    let mut advective = 0.0;
    let mut penalty = 0.0;
    let mut s_semi = 0.0;
    for (fi, face) in mesh.faces.iter().enumerate() {
        if face.is_boundary() {
            continue;
        }
        let (pc, ps, minus) = face.sides();
        let (mc, ms) = minus.unwrap();
        let in_ehc = region.in_continuous_skeleton(fi);
        for q in 0..face_rule.len() {
            let t = face_rule.point_1d(q);
            let w = face_rule.weights[q] * face.length;
            let jump = geom.trace(&field.coeffs, pc, ps, q) - geom.trace(&field.coeffs, mc, ms, q);
            let u_plus = rt0_eval(mesh, velocity, pc, ps.ref_coords(t));
            let un = u_plus[0] * face.normal[0] + u_plus[1] * face.normal[1];
            let m_pen = penalty_m_imd(mesh, fi, velocity, params, t);
            advective += w * 0.5 * un.abs() * jump * jump;
            penalty += w * m_pen * jump * jump;
            if in_ehc {
                s_semi += w * m_super * jump * jump;
            }
        }
    }

    Ok(TripleNormReport {
        dispersion_sq,
        wells_sq,
        advective_jump_sq: advective,
        penalty_jump_sq: penalty,
        s_seminorm: s_semi.sqrt(),
    })
}

/// The porosity-weighted L2 norm, |phi^(1/2) c|.
pub fn mass_weighted_l2(field: &ScalarField, params: &ImdParams, mesh: &Mesh) -> f64 {
    (params.porosity * l2_norm_sq(field, mesh)).sqrt()
}

/// Total tracer volume, integral of phi c.
pub fn total_mass(field: &ScalarField, params: &ImdParams, mesh: &Mesh) -> f64 {
    let rule = gauss_rule(field.degree + 1, 2).expect("rule");
    let basis = ReferenceBasis::new(field.degree);
    let table = CellTable::tabulate(&basis, &rule);
    let jac = mesh.cell_side() * mesh.cell_side();
    let mut acc = 0.0;
    for cell in 0..mesh.cell_count() {
        for q in 0..rule.len() {
            let mut v = 0.0;
            for k in 0..table.npc {
                v += field.coeffs[cell * table.npc + k] * table.value(q, k);
            }
            acc += rule.weights[q] * jac * v;
        }
    }
    params.porosity * acc
}

fn l2_norm_sq(field: &ScalarField, mesh: &Mesh) -> f64 {
    let rule = gauss_rule(field.degree + 1, 2).expect("rule");
    let basis = ReferenceBasis::new(field.degree);
    let table = CellTable::tabulate(&basis, &rule);
    let jac = mesh.cell_side() * mesh.cell_side();
    let mut acc = 0.0;
    for cell in 0..mesh.cell_count() {
        for q in 0..rule.len() {
            let mut v = 0.0;
            for k in 0..table.npc {
                v += field.coeffs[cell * table.npc + k] * table.value(q, k);
            }
            acc += rule.weights[q] * jac * v * v;
        }
    }
    acc
}

/// L2 distance of two fields over the same dG space.
pub fn l2_distance(a: &ScalarField, b: &ScalarField, mesh: &Mesh) -> f64 {
    l2_norm_sq(&a.sub(b), mesh).sqrt()
}

/// How the concentration space is chosen at each step.
#[derive(Debug, Clone)]
pub enum RunMode {
    /// Plain dG: sigma = 0, empty continuous region.
    Dg,
    /// Super-penalized dG over the full region T_C = T_h.
    Super { sigma: f64 },
    /// Direct cdG with the full region: the cG run.
    Cg,
    /// Direct cdG with the automatic region procedure.
    Adaptive { policy: AdaptPolicy },
}

/// Everything the time loop knows after completing a step.
pub struct StepRecord<'a> {
    pub step: usize,
    pub time: f64,
    pub concentration: &'a ScalarField,
    pub darcy: &'a DarcyState,
    pub region: &'a RegionPartition,
    /// Dofs of the space actually solved at this step.
    pub free_dofs: usize,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub cumulative_dofs: usize,
    pub final_concentration: ScalarField,
}

/// State carried between steps of the coupled loop.
pub struct TimeLoopState {
    pub step: usize,
    pub time: f64,
    pub concentration: ScalarField,
    pub held_region: RegionPartition,
}

fn step_count(params: &ImdParams) -> Result<usize> {
    let ratio = params.t_end / params.dt;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-8 * ratio.max(1.0) {
        return Err(Error::NonIntegralSteps {
            t_end: params.t_end,
            dt: params.dt,
        });
    }
    Ok(n as usize)
}

/// Advance one step: Darcy with the lagged concentration, then transport,
/// optionally iterating the coupling.
fn advance(
    state: &TimeLoopState,
    region: &RegionPartition,
    restrict: bool,
    sigma: f64,
    params: &ImdParams,
    mesh: &Mesh,
    dofmap: &DofMap,
) -> Result<(ScalarField, DarcyState, usize)> {
    let mut c_for_darcy = state.concentration.clone();
    let mut result = None;
    for _ in 0..params.coupling_passes.max(1) {
        let darcy = solve_darcy(&c_for_darcy, params, mesh)?;
        // sigma S is kept out of the assembled matrix and applied as a
        // separate operator so B survives rounding at large sigma
        let system =
            assemble_transport(&state.concentration, &darcy, region, 0.0, params, mesh, dofmap)?;
        let (c_new, free) = if restrict {
            let cm = build_constraints(dofmap, mesh, region, false)?;
            let restricted = linalg::apply_constraints(&system, &cm)?;
            let x = linalg::solve_direct(&restricted)?;
            (cm.prolong(&x), cm.free_dofs())
        } else if sigma == 0.0 {
            let x = linalg::solve_direct(&system)?;
            (ScalarField::from_coeffs(dofmap.degree(), x), dofmap.ndofs)
        } else {
            let jumps = assemble_s_factors(region, params, mesh, dofmap)?;
            let s = jumps.matrix();
            let x = linalg::solve_penalized(&system.matrix, &s, &jumps, sigma, &system.rhs)?;
            (ScalarField::from_coeffs(dofmap.degree(), x), dofmap.ndofs)
        };
        c_for_darcy = c_new.clone();
        result = Some((c_new, darcy, free));
    }
    Ok(result.expect("at least one coupling pass"))
}

/// Run the coupled loop from a given initial concentration, invoking the
/// observer after every step.
pub fn run_with_initial<F>(
    mesh: &Mesh,
    dofmap: &DofMap,
    params: &ImdParams,
    mode: &RunMode,
    initial: ScalarField,
    mut observer: F,
) -> Result<RunSummary>
where
    F: FnMut(&StepRecord) -> Result<()>,
{
    params.validate(mesh)?;
    let n_steps = step_count(params)?;
    let empty = make_region(mesh, |_| false);
    let full = make_region(mesh, |_| true);
    let mut state = TimeLoopState {
        step: 0,
        time: 0.0,
        concentration: initial,
        held_region: empty.clone(),
    };
    let mut cumulative_dofs = 0usize;
    for j in 1..=n_steps {
        let (region, restrict, sigma): (&RegionPartition, bool, f64) = match mode {
            RunMode::Dg => (&empty, false, 0.0),
            RunMode::Super { sigma } => (&full, false, *sigma),
            RunMode::Cg => (&full, true, 0.0),
            RunMode::Adaptive { policy } => match adapt::schedule(j, policy) {
                StepPlan::ResetAndReselect => (&empty, false, 0.0),
                StepPlan::HoldRegion => (&state.held_region, true, 0.0),
            },
        };
        let region = region.clone();
        let (c_new, darcy, free) = advance(&state, &region, restrict, sigma, params, mesh, dofmap)?;
        cumulative_dofs += free;
        state.concentration = c_new;
        state.step = j;
        state.time = j as f64 * params.dt;
        if let RunMode::Adaptive { policy } = mode {
            if adapt::schedule(j, policy) == StepPlan::ResetAndReselect {
                state.held_region = adapt::select_region(
                    &state.concentration,
                    mesh,
                    policy.tol,
                    params.quad_order,
                    policy.include_boundary,
                );
            }
        }
        observer(&StepRecord {
            step: j,
            time: state.time,
            concentration: &state.concentration,
            darcy: &darcy,
            region: &region,
            free_dofs: free,
        })?;
    }
    Ok(RunSummary {
        steps: n_steps,
        cumulative_dofs,
        final_concentration: state.concentration,
    })
}

/// Run from the zero initial concentration.
pub fn run<F>(
    mesh: &Mesh,
    dofmap: &DofMap,
    params: &ImdParams,
    mode: &RunMode,
    observer: F,
) -> Result<RunSummary>
where
    F: FnMut(&StepRecord) -> Result<()>,
{
    run_with_initial(
        mesh,
        dofmap,
        params,
        mode,
        ScalarField::zeros(dofmap),
        observer,
    )
}
