//! Finite element spaces on the structured mesh: tensor-product Lagrange
//! dG spaces Q_r (r = 1, 2), the continuous-discontinuous subspace realized
//! through a 0/1 prolongation of merged Lagrange nodes, and the lowest-order
//! Raviart-Thomas / piecewise-constant pair for the mixed Darcy solve.

use crate::error::{Error, Result};
use crate::linalg::{QuadratureRule, SparseMatrix};
use crate::mesh::{Mesh, RegionPartition, Side};
use std::collections::HashMap;

/// Scalar 1D Lagrange basis with nodes at k/r, k = 0..r.
fn lagrange_1d(r: usize, k: usize, t: f64) -> f64 {
    let mut v = 1.0;
    let xk = k as f64 / r as f64;
    for m in 0..=r {
        if m != k {
            let xm = m as f64 / r as f64;
            v *= (t - xm) / (xk - xm);
        }
    }
    v
}

fn lagrange_1d_deriv(r: usize, k: usize, t: f64) -> f64 {
    let xk = k as f64 / r as f64;
    let mut sum = 0.0;
    for l in 0..=r {
        if l == k {
            continue;
        }
        let xl = l as f64 / r as f64;
        let mut prod = 1.0 / (xk - xl);
        for m in 0..=r {
            if m != k && m != l {
                let xm = m as f64 / r as f64;
                prod *= (t - xm) / (xk - xm);
            }
        }
        sum += prod;
    }
    sum
}

/// Tensor Lagrange basis of degree r on the reference cell [0,1]^2. Local
/// node (ix, iy) sits at (ix/r, iy/r) and has local index iy*(r+1)+ix.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceBasis {
    pub degree: usize,
}

impl ReferenceBasis {
    pub fn new(degree: usize) -> Self {
        ReferenceBasis { degree }
    }

    /// Basis functions per cell.
    pub fn len(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, local: usize, xi: [f64; 2]) -> f64 {
        let r = self.degree;
        let ix = local % (r + 1);
        let iy = local / (r + 1);
        lagrange_1d(r, ix, xi[0]) * lagrange_1d(r, iy, xi[1])
    }

    /// Gradient with respect to the reference coordinates.
    pub fn grad_ref(&self, local: usize, xi: [f64; 2]) -> [f64; 2] {
        let r = self.degree;
        let ix = local % (r + 1);
        let iy = local / (r + 1);
        [
            lagrange_1d_deriv(r, ix, xi[0]) * lagrange_1d(r, iy, xi[1]),
            lagrange_1d(r, ix, xi[0]) * lagrange_1d_deriv(r, iy, xi[1]),
        ]
    }
}

/// Tabulated basis values and reference gradients at volume quadrature points.
#[derive(Debug, Clone)]
pub struct CellTable {
    pub npc: usize,
    pub nq: usize,
    /// values[q * npc + k]
    pub values: Vec<f64>,
    /// grads[q * npc + k]
    pub grads: Vec<[f64; 2]>,
}

impl CellTable {
    pub fn tabulate(basis: &ReferenceBasis, rule: &QuadratureRule) -> Self {
        assert_eq!(rule.dim, 2);
        let npc = basis.len();
        let nq = rule.len();
        let mut values = Vec::with_capacity(nq * npc);
        let mut grads = Vec::with_capacity(nq * npc);
        for q in 0..nq {
            let xi = rule.point_2d(q);
            for k in 0..npc {
                values.push(basis.value(k, xi));
                grads.push(basis.grad_ref(k, xi));
            }
        }
        CellTable {
            npc,
            nq,
            values,
            grads,
        }
    }

    #[inline]
    pub fn value(&self, q: usize, k: usize) -> f64 {
        self.values[q * self.npc + k]
    }

    #[inline]
    pub fn grad(&self, q: usize, k: usize) -> [f64; 2] {
        self.grads[q * self.npc + k]
    }
}

/// Tabulated traces on the four cell sides at 1D face quadrature points,
/// parameterized consistently with `Face::point_at`.
#[derive(Debug, Clone)]
pub struct SideTable {
    pub npc: usize,
    pub nq: usize,
    values: [Vec<f64>; 4],
    grads: [Vec<[f64; 2]>; 4],
}

fn side_index(side: Side) -> usize {
    match side {
        Side::Left => 0,
        Side::Right => 1,
        Side::Bottom => 2,
        Side::Top => 3,
    }
}

impl SideTable {
    pub fn tabulate(basis: &ReferenceBasis, rule: &QuadratureRule) -> Self {
        assert_eq!(rule.dim, 1);
        let npc = basis.len();
        let nq = rule.len();
        let mut values: [Vec<f64>; 4] = Default::default();
        let mut grads: [Vec<[f64; 2]>; 4] = Default::default();
        for side in [Side::Left, Side::Right, Side::Bottom, Side::Top] {
            let si = side_index(side);
            values[si] = Vec::with_capacity(nq * npc);
            grads[si] = Vec::with_capacity(nq * npc);
            for q in 0..nq {
                let xi = side.ref_coords(rule.point_1d(q));
                for k in 0..npc {
                    values[si].push(basis.value(k, xi));
                    grads[si].push(basis.grad_ref(k, xi));
                }
            }
        }
        SideTable {
            npc,
            nq,
            values,
            grads,
        }
    }

    #[inline]
    pub fn value(&self, side: Side, q: usize, k: usize) -> f64 {
        self.values[side_index(side)][q * self.npc + k]
    }

    #[inline]
    pub fn grad(&self, side: Side, q: usize, k: usize) -> [f64; 2] {
        self.grads[side_index(side)][q * self.npc + k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// Discontinuous tensor Lagrange space Q_r, (r+1)^2 dofs per cell.
    DgScalar { degree: usize },
    /// Lowest-order Raviart-Thomas space: one normal-flux dof per face.
    Rt0,
    /// Piecewise constants: one dof per cell.
    P0,
}

/// Global degree-of-freedom layout of a space over a given mesh.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub kind: SpaceKind,
    pub ndofs: usize,
}

impl DofMap {
    /// Global dof indices of a cell. For Rt0 these are the face indices in
    /// the order (left, right, bottom, top).
    pub fn cell_dofs(&self, mesh: &Mesh, cell: usize) -> Vec<usize> {
        match self.kind {
            SpaceKind::DgScalar { degree } => {
                let npc = (degree + 1) * (degree + 1);
                (0..npc).map(|k| cell * npc + k).collect()
            }
            SpaceKind::Rt0 => mesh.cell_faces(cell).to_vec(),
            SpaceKind::P0 => vec![cell],
        }
    }

    pub fn dofs_per_cell(&self) -> usize {
        match self.kind {
            SpaceKind::DgScalar { degree } => (degree + 1) * (degree + 1),
            SpaceKind::Rt0 => 4,
            SpaceKind::P0 => 1,
        }
    }

    pub fn degree(&self) -> usize {
        match self.kind {
            SpaceKind::DgScalar { degree } => degree,
            _ => 0,
        }
    }
}

/// Build the scalar dG space Q_r. Supported degrees: 1 and 2.
pub fn build_dg_space(mesh: &Mesh, r: usize) -> Result<DofMap> {
    if r != 1 && r != 2 {
        return Err(Error::InvalidParameter(format!(
            "build_dg_space: degree {r} not supported (use 1 or 2)"
        )));
    }
    let npc = (r + 1) * (r + 1);
    Ok(DofMap {
        kind: SpaceKind::DgScalar { degree: r },
        ndofs: npc * mesh.cell_count(),
    })
}

/// Build the RT0 velocity space and the P0 pressure space.
pub fn build_rt0_p0(mesh: &Mesh) -> (DofMap, DofMap) {
    (
        DofMap {
            kind: SpaceKind::Rt0,
            ndofs: mesh.face_count(),
        },
        DofMap {
            kind: SpaceKind::P0,
            ndofs: mesh.cell_count(),
        },
    )
}

/// Coefficient vector over a scalar dG space.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(dofmap: &DofMap) -> Self {
        ScalarField {
            degree: dofmap.degree(),
            coeffs: vec![0.0; dofmap.ndofs],
        }
    }

    pub fn from_coeffs(degree: usize, coeffs: Vec<f64>) -> Self {
        ScalarField { degree, coeffs }
    }

    pub fn dofs_per_cell(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Pointwise difference of two fields over the same space.
    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        assert_eq!(self.degree, other.degree);
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        ScalarField {
            degree: self.degree,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    /// Evaluate at reference coordinates within a cell.
    pub fn eval_ref(&self, cell: usize, xi: [f64; 2]) -> f64 {
        let basis = ReferenceBasis::new(self.degree);
        let npc = basis.len();
        (0..npc)
            .map(|k| self.coeffs[cell * npc + k] * basis.value(k, xi))
            .sum()
    }

    /// Mean value over a cell (exact for the tensor Lagrange basis).
    pub fn cell_mean(&self, cell: usize, rule: &QuadratureRule, table: &CellTable) -> f64 {
        let npc = table.npc;
        let mut s = 0.0;
        for q in 0..table.nq {
            let mut v = 0.0;
            for k in 0..npc {
                v += self.coeffs[cell * npc + k] * table.value(q, k);
            }
            s += rule.weights[q] * v;
        }
        s
    }
}

/// The 0/1 prolongation realizing the cdG subspace: coincident Lagrange nodes
/// of cells in the continuous region are merged into a single unknown, and,
/// when the problem carries strong Dirichlet data, merged nodes on the outer
/// boundary of the continuous region are eliminated.
#[derive(Debug, Clone)]
pub struct ConstraintMap {
    degree: usize,
    dof_to_free: Vec<Option<usize>>,
    free: usize,
    eliminated: usize,
}

impl ConstraintMap {
    pub fn free_dofs(&self) -> usize {
        self.free
    }

    pub fn eliminated_dofs(&self) -> usize {
        self.eliminated
    }

    pub fn dof_to_free(&self) -> &[Option<usize>] {
        &self.dof_to_free
    }

    /// Expand a coefficient vector over the free dofs into dG coefficients.
    pub fn prolong(&self, free: &[f64]) -> ScalarField {
        assert_eq!(free.len(), self.free);
        let coeffs = self
            .dof_to_free
            .iter()
            .map(|m| m.map_or(0.0, |i| free[i]))
            .collect();
        ScalarField {
            degree: self.degree,
            coeffs,
        }
    }

    /// Restrict dG coefficients onto the free dofs (P^T action).
    pub fn restrict(&self, dg: &[f64]) -> Vec<f64> {
        assert_eq!(dg.len(), self.dof_to_free.len());
        let mut out = vec![0.0; self.free];
        for (i, m) in self.dof_to_free.iter().enumerate() {
            if let Some(bi) = m {
                out[*bi] += dg[i];
            }
        }
        out
    }

    /// Materialize P as a sparse matrix (dG dofs x free dofs).
    pub fn prolongation_matrix(&self) -> SparseMatrix {
        let triplets = self
            .dof_to_free
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|bi| (i, bi, 1.0)))
            .collect();
        SparseMatrix::from_triplets(self.dof_to_free.len(), self.free, triplets)
    }
}

/// Build the constraint map for a scalar dG space over a region partition.
///
/// With `dirichlet` set, merged nodes on the domain boundary belonging to
/// continuous-region cells are pinned to zero; without it (the Neumann
/// problem of the displacement system) no dof is eliminated.
pub fn build_constraints(
    dofmap: &DofMap,
    mesh: &Mesh,
    region: &RegionPartition,
    dirichlet: bool,
) -> Result<ConstraintMap> {
    let r = match dofmap.kind {
        SpaceKind::DgScalar { degree } => degree,
        _ => {
            return Err(Error::InvalidParameter(
                "build_constraints requires a scalar dG space".into(),
            ))
        }
    };
    let n = mesh.n_per_side;
    let npc = (r + 1) * (r + 1);
    let lattice = r * n + 1; // merged nodes live on an (rn+1)^2 lattice

    // group id per dG dof, -1 = unassigned
    let mut group_of = vec![usize::MAX; dofmap.ndofs];
    let mut lattice_group: HashMap<usize, usize> = HashMap::new();
    let mut group_on_boundary: Vec<bool> = Vec::new();
    let mut group_in_tc: Vec<bool> = Vec::new();

    for cell in 0..mesh.cell_count() {
        let ci = cell % n;
        let cj = cell / n;
        let in_tc = region.cell_in_continuous(cell);
        for local in 0..npc {
            let ix = local % (r + 1);
            let iy = local / (r + 1);
            let dof = cell * npc + local;
            if in_tc {
                let kx = ci * r + ix;
                let ky = cj * r + iy;
                let key = ky * lattice + kx;
                let gid = *lattice_group.entry(key).or_insert_with(|| {
                    group_on_boundary.push(kx == 0 || ky == 0 || kx == lattice - 1 || ky == lattice - 1);
                    group_in_tc.push(true);
                    group_in_tc.len() - 1
                });
                group_of[dof] = gid;
            } else {
                group_on_boundary.push(false);
                group_in_tc.push(false);
                group_of[dof] = group_in_tc.len() - 1;
            }
        }
    }

    // free-dof numbering in group creation order, skipping eliminated groups
    let mut group_to_free = vec![None; group_in_tc.len()];
    let mut free = 0usize;
    let mut eliminated = 0usize;
    for g in 0..group_in_tc.len() {
        if dirichlet && group_in_tc[g] && group_on_boundary[g] {
            eliminated += 1;
        } else {
            group_to_free[g] = Some(free);
            free += 1;
        }
    }
    let dof_to_free = group_of.iter().map(|&g| group_to_free[g]).collect();
    Ok(ConstraintMap {
        degree: r,
        dof_to_free,
        free,
        eliminated,
    })
}

/// Raviart-Thomas basis helpers on a single cell. Coefficients are normal
/// fluxes along each face's stored normal, so the sign of a local shape
/// function flips when the face normal points in the -x / -y direction
/// (outer left and bottom boundary faces).
pub struct Rt0Cell {
    /// Per local face (left, right, bottom, top): +1 or -1.
    pub signs: [f64; 4],
    /// Cell side length.
    pub side: f64,
}

impl Rt0Cell {
    pub fn new(mesh: &Mesh, cell: usize) -> Self {
        let faces = mesh.cell_faces(cell);
        let mut signs = [1.0; 4];
        for (k, &fi) in faces.iter().enumerate() {
            let nrm = mesh.faces[fi].normal;
            signs[k] = if k < 2 { nrm[0] } else { nrm[1] };
        }
        Rt0Cell {
            signs,
            side: mesh.cell_side(),
        }
    }

    /// Value of local basis k at reference coordinates.
    pub fn value(&self, k: usize, xi: [f64; 2]) -> [f64; 2] {
        let s = self.signs[k];
        match k {
            0 => [s * (1.0 - xi[0]), 0.0],
            1 => [s * xi[0], 0.0],
            2 => [0.0, s * (1.0 - xi[1])],
            _ => [0.0, s * xi[1]],
        }
    }

    /// Divergence of local basis k (constant on the cell).
    pub fn div(&self, k: usize) -> f64 {
        let s = self.signs[k];
        match k {
            0 => -s / self.side,
            1 => s / self.side,
            2 => -s / self.side,
            _ => s / self.side,
        }
    }
}

/// Evaluate an RT0 field at reference coordinates within a cell.
pub fn rt0_eval(mesh: &Mesh, coeffs: &[f64], cell: usize, xi: [f64; 2]) -> [f64; 2] {
    let rt = Rt0Cell::new(mesh, cell);
    let faces = mesh.cell_faces(cell);
    let mut u = [0.0, 0.0];
    for k in 0..4 {
        let v = rt.value(k, xi);
        u[0] += coeffs[faces[k]] * v[0];
        u[1] += coeffs[faces[k]] * v[1];
    }
    u
}

/// Interpolate a vector field into RT0: dof = mean normal flux per face.
pub fn rt0_interpolate<F>(mesh: &Mesh, field: F, rule: &QuadratureRule) -> Vec<f64>
where
    F: Fn([f64; 2]) -> [f64; 2],
{
    let mut coeffs = vec![0.0; mesh.face_count()];
    for (fi, face) in mesh.faces.iter().enumerate() {
        let mut flux = 0.0;
        for q in 0..rule.len() {
            let x = face.point_at(rule.point_1d(q));
            let v = field(x);
            flux += rule.weights[q] * (v[0] * face.normal[0] + v[1] * face.normal[1]);
        }
        coeffs[fi] = flux; // reference weights already average over the face
    }
    coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gauss_rule;
    use crate::mesh::{build_uniform_mesh, make_region};
    use rand::{Rng, SeedableRng};

    #[test]
    fn dg_dof_counts() {
        let mesh = build_uniform_mesh(16).unwrap();
        assert_eq!(build_dg_space(&mesh, 1).unwrap().ndofs, 1024);
        let mesh = build_uniform_mesh(32).unwrap();
        assert_eq!(build_dg_space(&mesh, 1).unwrap().ndofs, 4096);
        let mesh = build_uniform_mesh(1).unwrap();
        assert_eq!(build_dg_space(&mesh, 2).unwrap().ndofs, 9);
        assert!(build_dg_space(&mesh, 3).is_err());
    }

    #[test]
    fn rt0_p0_counts() {
        let mesh = build_uniform_mesh(1).unwrap();
        let (rt, p0) = build_rt0_p0(&mesh);
        assert_eq!(rt.ndofs, 4);
        assert_eq!(p0.ndofs, 1);
        let mesh = build_uniform_mesh(16).unwrap();
        let (rt, p0) = build_rt0_p0(&mesh);
        assert_eq!(rt.ndofs, 2 * 16 * 17);
        assert_eq!(p0.ndofs, 256);
    }

    #[test]
    fn lagrange_partition_of_unity() {
        for r in [1usize, 2] {
            let basis = ReferenceBasis::new(r);
            for &xi in &[[0.2, 0.7], [0.0, 1.0], [0.5, 0.5]] {
                let s: f64 = (0..basis.len()).map(|k| basis.value(k, xi)).sum();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lagrange_nodal_property() {
        for r in [1usize, 2] {
            let basis = ReferenceBasis::new(r);
            for k in 0..basis.len() {
                for l in 0..basis.len() {
                    let xi = [
                        (l % (r + 1)) as f64 / r as f64,
                        (l / (r + 1)) as f64 / r as f64,
                    ];
                    let v = basis.value(k, xi);
                    let expect = if k == l { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn empty_region_gives_identity_prolongation() {
        let mesh = build_uniform_mesh(3).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| false);
        let cm = build_constraints(&dofmap, &mesh, &region, true).unwrap();
        assert_eq!(cm.free_dofs(), dofmap.ndofs);
        for (i, m) in cm.dof_to_free().iter().enumerate() {
            assert_eq!(*m, Some(i));
        }
    }

    #[test]
    fn full_region_dirichlet_dof_count_n32() {
        let mesh = build_uniform_mesh(32).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |_| true);
        let cm = build_constraints(&dofmap, &mesh, &region, true).unwrap();
        assert_eq!(cm.free_dofs(), 31 * 31);
        let cm_neumann = build_constraints(&dofmap, &mesh, &region, false).unwrap();
        assert_eq!(cm_neumann.free_dofs(), 33 * 33);
    }

    #[test]
    fn left_column_region_merges_one_face() {
        // 2x2 mesh, T_C = left column: exactly the two shared vertices on the
        // face between cells 0 and 2 merge; faces into the right column stay
        // unconstrained.
        let mesh = build_uniform_mesh(2).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = make_region(&mesh, |c| c % 2 == 0);
        let cm = build_constraints(&dofmap, &mesh, &region, false).unwrap();
        // 16 dG dofs, two merged pairs -> 14 free dofs
        assert_eq!(cm.free_dofs(), 14);
        let p = cm.prolongation_matrix();
        let mut multiplicities = vec![0usize; cm.free_dofs()];
        for (i, j, v) in p.triplets() {
            assert_eq!(v, 1.0);
            let _ = i;
            multiplicities[j] += 1;
        }
        assert_eq!(multiplicities.iter().filter(|&&m| m == 2).count(), 2);
        assert_eq!(multiplicities.iter().filter(|&&m| m == 1).count(), 12);
    }

    #[test]
    fn ptp_is_diagonal_with_positive_integers() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let flags: Vec<bool> = (0..mesh.cell_count()).map(|_| rng.gen_bool(0.6)).collect();
            let region = make_region(&mesh, |c| flags[c]);
            let cm = build_constraints(&dofmap, &mesh, &region, true).unwrap();
            let p = cm.prolongation_matrix();
            // P^T P via triplets of P
            let mut diag = vec![0.0f64; cm.free_dofs()];
            for (_, j, v) in p.triplets() {
                diag[j] += v * v;
            }
            for d in diag {
                assert!(d >= 1.0 && (d - d.round()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn prolonged_fields_are_continuous_on_continuous_skeleton() {
        let mesh = build_uniform_mesh(5).unwrap();
        let rule = gauss_rule(3, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for r in [1usize, 2] {
            let dofmap = build_dg_space(&mesh, r).unwrap();
            let basis = ReferenceBasis::new(r);
            let side_table = SideTable::tabulate(&basis, &rule);
            for _ in 0..20 {
                let flags: Vec<bool> =
                    (0..mesh.cell_count()).map(|_| rng.gen_bool(0.5)).collect();
                let region = make_region(&mesh, |c| flags[c]);
                let cm = build_constraints(&dofmap, &mesh, &region, true).unwrap();
                let free: Vec<f64> = (0..cm.free_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let field = cm.prolong(&free);
                let npc = basis.len();
                for (fi, face) in mesh.faces.iter().enumerate() {
                    if !region.in_continuous_skeleton(fi) {
                        continue;
                    }
                    let (pc, ps, minus) = face.sides();
                    for q in 0..rule.len() {
                        let vp: f64 = (0..npc)
                            .map(|k| field.coeffs[pc * npc + k] * side_table.value(ps, q, k))
                            .sum();
                        match minus {
                            Some((mc, ms)) => {
                                let vm: f64 = (0..npc)
                                    .map(|k| field.coeffs[mc * npc + k] * side_table.value(ms, q, k))
                                    .sum();
                                assert!(
                                    (vp - vm).abs() < 1e-12,
                                    "jump {} on continuous face {fi}",
                                    vp - vm
                                );
                            }
                            None => {
                                // Dirichlet: boundary trace of the continuous region is 0
                                assert!(vp.abs() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rt0_reproduces_constants_pointwise() {
        let mesh = build_uniform_mesh(3).unwrap();
        let rule = gauss_rule(2, 1).unwrap();
        let coeffs = rt0_interpolate(&mesh, |_| [1.0, 0.0], &rule);
        for cell in 0..mesh.cell_count() {
            for &xi in &[[0.0, 0.0], [0.3, 0.8], [1.0, 1.0], [0.5, 0.5]] {
                let u = rt0_eval(&mesh, &coeffs, cell, xi);
                assert!((u[0] - 1.0).abs() < 1e-14);
                assert!(u[1].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rt0_normal_trace_is_continuous() {
        let mesh = build_uniform_mesh(4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let coeffs: Vec<f64> = (0..mesh.face_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for face in &mesh.faces {
            let (pc, ps, minus) = face.sides();
            let Some((mc, ms)) = minus else { continue };
            for &t in &[0.1, 0.5, 0.9] {
                let up = rt0_eval(&mesh, &coeffs, pc, ps.ref_coords(t));
                let um = rt0_eval(&mesh, &coeffs, mc, ms.ref_coords(t));
                let n = face.normal;
                let fp = up[0] * n[0] + up[1] * n[1];
                let fm = um[0] * n[0] + um[1] * n[1];
                assert!((fp - fm).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rt0_divergence_matches_flux_balance() {
        let mesh = build_uniform_mesh(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let coeffs: Vec<f64> = (0..mesh.face_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l = mesh.cell_side();
        for cell in 0..mesh.cell_count() {
            let rt = Rt0Cell::new(&mesh, cell);
            let faces = mesh.cell_faces(cell);
            let div: f64 = (0..4).map(|k| coeffs[faces[k]] * rt.div(k)).sum();
            // outward flux of the cell: signs convert stored-normal fluxes
            let signs = rt.signs;
            let outward = -signs[0] * coeffs[faces[0]] + signs[1] * coeffs[faces[1]]
                - signs[2] * coeffs[faces[2]]
                + signs[3] * coeffs[faces[3]];
            assert!((div * l * l - outward * l).abs() < 1e-13);
        }
    }
}
