//! Mixed RT0-P0 discretization of the incompressible pressure/velocity
//! system of the miscible displacement problem:
//!
//!   (div u, w)             = (q_I - q_P, w)        for all w in P0,
//!   (K^-1 mu(c) u, v) - (p, div v) = (rho(c) g, v) for all v in RT0,
//!
//! with no-flow boundary conditions imposed strongly (boundary flux dofs
//! eliminated) and the pressure constant fixed by pinning one cell.

use crate::error::{Error, Result};
use crate::linalg::{self, gauss_rule, LinearSystem, SparseMatrix};
use crate::mesh::Mesh;
use crate::spaces::{CellTable, ReferenceBasis, Rt0Cell, ScalarField};

/// Physical and numerical parameters of the displacement problem. Defaults
/// reproduce the quarter-five-spot configuration: injection at (1,1) and
/// production at (0,0), each represented by a piecewise constant over one
/// cell with total rate 0.018.
#[derive(Debug, Clone)]
pub struct ImdParams {
    pub porosity: f64,
    pub permeability: [[f64; 2]; 2],
    /// Mobility ratio of the displaced to the injected fluid.
    pub mobility_ratio: f64,
    pub mu0: f64,
    /// Density law rho(c) = rho0 + (rho1 - rho0) c; zero by default.
    pub rho0: f64,
    pub rho1: f64,
    pub gravity: [f64; 2],
    /// Concentration of the injected fluid.
    pub injected_concentration: f64,
    pub d_m: f64,
    pub d_l: f64,
    pub d_t: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Super-penalty weight M = C_d r^2 / h_e.
    pub c_d: f64,
    /// Interior penalty constant of the dispersion form.
    pub c_pen: f64,
    /// Total well rate: integral of q_I (and of q_P).
    pub well_rate: f64,
    pub degree: usize,
    pub quad_order: usize,
    /// Darcy/transport alternations per step; 1 = lagged splitting.
    pub coupling_passes: usize,
}

impl Default for ImdParams {
    fn default() -> Self {
        ImdParams {
            porosity: 0.1,
            permeability: [[0.0288, 0.0], [0.0, 0.0288]],
            mobility_ratio: 41.0,
            mu0: 1.0,
            rho0: 0.0,
            rho1: 0.0,
            gravity: [0.0, 0.0],
            injected_concentration: 1.0,
            d_m: 1.8e-6,
            d_l: 1.8e-4,
            d_t: 1.8e-5,
            dt: 4e-3,
            t_end: 2.0,
            c_d: 1.0,
            c_pen: 10.0,
            well_rate: 0.018,
            degree: 1,
            quad_order: 3,
            coupling_passes: 1,
        }
    }
}

impl ImdParams {
    /// Cell carrying the injection well (contains the corner (1,1)).
    pub fn injection_cell(&self, mesh: &Mesh) -> usize {
        mesh.cell_count() - 1
    }

    /// Cell carrying the production well (contains the corner (0,0)).
    pub fn production_cell(&self, _mesh: &Mesh) -> usize {
        0
    }

    /// q_I as a piecewise constant: well_rate * n^2 on the injection cell.
    pub fn q_injection(&self, mesh: &Mesh, cell: usize) -> f64 {
        if cell == self.injection_cell(mesh) {
            self.well_rate * mesh.cell_count() as f64
        } else {
            0.0
        }
    }

    pub fn q_production(&self, mesh: &Mesh, cell: usize) -> f64 {
        if cell == self.production_cell(mesh) {
            self.well_rate * mesh.cell_count() as f64
        } else {
            0.0
        }
    }

    pub fn rho(&self, c: f64) -> f64 {
        self.rho0 + (self.rho1 - self.rho0) * c.clamp(0.0, 1.0)
    }

    /// Compatibility of the wells: the no-flow problem is solvable only when
    /// the injected and produced volumes balance.
    pub fn check_wells(&self, mesh: &Mesh) -> Result<()> {
        let area = mesh.cell_side() * mesh.cell_side();
        let qi: f64 = (0..mesh.cell_count())
            .map(|c| self.q_injection(mesh, c) * area)
            .sum();
        let qp: f64 = (0..mesh.cell_count())
            .map(|c| self.q_production(mesh, c) * area)
            .sum();
        if (qi - qp).abs() > 1e-12 * (1.0 + qi.abs()) {
            return Err(Error::IncompatibleWells {
                injection: qi,
                production: qp,
            });
        }
        Ok(())
    }

    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        if self.degree != 1 && self.degree != 2 {
            return Err(Error::InvalidParameter(format!(
                "degree {} not supported",
                self.degree
            )));
        }
        for (name, v) in [
            ("porosity", self.porosity),
            ("d_m", self.d_m),
            ("d_l", self.d_l),
            ("d_t", self.d_t),
            ("dt", self.dt),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.well_rate < 0.0 {
            return Err(Error::InvalidParameter(
                "well_rate must be nonnegative".into(),
            ));
        }
        self.check_wells(mesh)
    }
}

/// Viscosity of the mixture, mu(c) = mu(0) (1 + (M^(1/4) - 1) c)^-4, with
/// the concentration clamped to [0, 1].
pub fn viscosity(c: f64, params: &ImdParams) -> f64 {
    let c = c.clamp(0.0, 1.0);
    let m4 = params.mobility_ratio.powf(0.25);
    params.mu0 * (1.0 + (m4 - 1.0) * c).powi(-4)
}

/// RT0 velocity (one flux per face along the face's stored normal; boundary
/// entries are zero) and P0 pressure (pinned at the production cell).
#[derive(Debug, Clone)]
pub struct DarcyState {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

/// Unknown numbering of the saddle-point system: interior face fluxes and
/// cell pressures interleaved by grid row to keep the matrix band narrow.
pub struct DarcyLayout {
    pub face_unknown: Vec<Option<usize>>,
    pub cell_unknown: Vec<usize>,
    pub n_unknowns: usize,
}

impl DarcyLayout {
    pub fn new(mesh: &Mesh) -> Self {
        let n = mesh.n_per_side;
        // (ykey, xkey, tag, is_cell, index); tag orders faces before cells
        let mut items: Vec<(usize, usize, usize, bool, usize)> = Vec::new();
        for (fi, face) in mesh.faces.iter().enumerate() {
            if face.is_boundary() {
                continue;
            }
            let vertical = fi < n * (n + 1);
            if vertical {
                let j = fi / (n + 1);
                let i = fi % (n + 1);
                items.push((2 * j + 1, 2 * i, 0, false, fi));
            } else {
                let k = fi - n * (n + 1);
                let j = k / n;
                let i = k % n;
                items.push((2 * j, 2 * i + 1, 0, false, fi));
            }
        }
        for cell in 0..mesh.cell_count() {
            let i = cell % n;
            let j = cell / n;
            items.push((2 * j + 1, 2 * i + 1, 1, true, cell));
        }
        items.sort_unstable();
        let mut face_unknown = vec![None; mesh.face_count()];
        let mut cell_unknown = vec![usize::MAX; mesh.cell_count()];
        for (u, &(_, _, _, is_cell, idx)) in items.iter().enumerate() {
            if is_cell {
                cell_unknown[idx] = u;
            } else {
                face_unknown[idx] = Some(u);
            }
        }
        DarcyLayout {
            face_unknown,
            cell_unknown,
            n_unknowns: items.len(),
        }
    }
}

fn inverse_2x2(k: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
    [
        [k[1][1] / det, -k[0][1] / det],
        [-k[1][0] / det, k[0][0] / det],
    ]
}

/// Assemble the pinned saddle-point system for a given concentration.
///
/// Velocity rows carry A u - B^T p = (rho g, v); pressure rows carry
/// B u = (q_I - q_P, w), except at the pinned cell whose continuity equation
/// is replaced by p = 0 (the discarded equation follows from the others by
/// the compatibility of the wells).
pub fn assemble_darcy(
    c_field: &ScalarField,
    params: &ImdParams,
    mesh: &Mesh,
    pin_cell: usize,
) -> Result<(LinearSystem, DarcyLayout)> {
    params.validate(mesh)?;
    let layout = DarcyLayout::new(mesh);
    let kinv = inverse_2x2(params.permeability);
    let rule = gauss_rule(params.quad_order, 2)?;
    let basis = ReferenceBasis::new(c_field.degree);
    let table = CellTable::tabulate(&basis, &rule);
    let npc = table.npc;
    let l = mesh.cell_side();
    let jac = l * l;

    let coeffs = &c_field.coeffs;
    let locals = crate::nncf::map_indexed(mesh.cell_count(), |cell| {
        let rt = Rt0Cell::new(mesh, cell);
        let mut a = [[0.0f64; 4]; 4];
        let mut g = [0.0f64; 4];
        for q in 0..rule.len() {
            let w = rule.weights[q] * jac;
            let mut c = 0.0;
            for k in 0..npc {
                c += coeffs[cell * npc + k] * table.value(q, k);
            }
            let mu = viscosity(c, params);
            let rho_g = [
                params.rho(c) * params.gravity[0],
                params.rho(c) * params.gravity[1],
            ];
            let xi = rule.point_2d(q);
            let psi: [[f64; 2]; 4] = [
                rt.value(0, xi),
                rt.value(1, xi),
                rt.value(2, xi),
                rt.value(3, xi),
            ];
            for k in 0..4 {
                let akv = [
                    mu * (kinv[0][0] * psi[k][0] + kinv[0][1] * psi[k][1]),
                    mu * (kinv[1][0] * psi[k][0] + kinv[1][1] * psi[k][1]),
                ];
                g[k] += w * (rho_g[0] * psi[k][0] + rho_g[1] * psi[k][1]);
                for m in 0..4 {
                    a[m][k] += w * (akv[0] * psi[m][0] + akv[1] * psi[m][1]);
                }
            }
        }
        let div: [f64; 4] = [
            rt.div(0) * jac,
            rt.div(1) * jac,
            rt.div(2) * jac,
            rt.div(3) * jac,
        ];
        (a, g, div)
    });

    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; layout.n_unknowns];
    for (cell, (a, g, div)) in locals.iter().enumerate() {
        let faces = mesh.cell_faces(cell);
        let pu = layout.cell_unknown[cell];
        for k in 0..4 {
            let Some(uk) = layout.face_unknown[faces[k]] else {
                continue;
            };
            rhs[uk] += g[k];
            for m in 0..4 {
                if let Some(um) = layout.face_unknown[faces[m]] {
                    triplets.push((um, uk, a[m][k]));
                }
            }
            // -(p, div v) on the velocity row; (div u, w) on the pressure row
            triplets.push((uk, pu, -div[k]));
            if cell != pin_cell {
                triplets.push((pu, uk, div[k]));
            }
        }
        if cell == pin_cell {
            triplets.push((pu, pu, 1.0));
            rhs[pu] = 0.0;
        } else {
            rhs[pu] = (params.q_injection(mesh, cell) - params.q_production(mesh, cell)) * jac;
        }
    }
    let system = LinearSystem::new(
        SparseMatrix::from_triplets(layout.n_unknowns, layout.n_unknowns, triplets),
        rhs,
    )?;
    Ok((system, layout))
}

/// Solve the Darcy problem for the given concentration field.
pub fn solve_darcy(c_field: &ScalarField, params: &ImdParams, mesh: &Mesh) -> Result<DarcyState> {
    solve_darcy_pinned(c_field, params, mesh, params.production_cell(mesh))
}

/// As `solve_darcy`, with an explicit choice of the pinned pressure cell.
pub fn solve_darcy_pinned(
    c_field: &ScalarField,
    params: &ImdParams,
    mesh: &Mesh,
    pin_cell: usize,
) -> Result<DarcyState> {
    let (system, layout) = assemble_darcy(c_field, params, mesh, pin_cell)?;
    let x = linalg::solve_direct(&system)?;
    let mut velocity = vec![0.0; mesh.face_count()];
    for (fi, u) in layout.face_unknown.iter().enumerate() {
        if let Some(u) = u {
            velocity[fi] = x[*u];
        }
    }
    let pressure = layout.cell_unknown.iter().map(|&u| x[u]).collect();
    Ok(DarcyState { velocity, pressure })
}

/// Signed residual of the elementwise balance: outward flux minus the well
/// source integral, per cell. Exact (to solver tolerance) for RT0-P0.
pub fn cell_balance_residuals(state: &DarcyState, params: &ImdParams, mesh: &Mesh) -> Vec<f64> {
    let l = mesh.cell_side();
    let area = l * l;
    (0..mesh.cell_count())
        .map(|cell| {
            let rt = Rt0Cell::new(mesh, cell);
            let faces = mesh.cell_faces(cell);
            let outward = (-rt.signs[0] * state.velocity[faces[0]]
                + rt.signs[1] * state.velocity[faces[1]]
                - rt.signs[2] * state.velocity[faces[2]]
                + rt.signs[3] * state.velocity[faces[3]])
                * l;
            let source = (params.q_injection(mesh, cell) - params.q_production(mesh, cell)) * area;
            outward - source
        })
        .collect()
}
