//! Uniform structured quadrilateral meshes of the unit square, face topology
//! with two-sided trace orientation, inflow/outflow boundary classification,
//! and the continuous/discontinuous region partition.
//!
//! Conventions:
//! - Cells are numbered row-major: cell (i, j) has index `j * n + i`, x fastest.
//! - Faces are numbered vertical-first: the vertical face on the line x = i/n
//!   next to cell row j has index `j * (n+1) + i`; horizontal faces follow.
//! - Interior faces store the two incident cells as (plus, minus) where plus
//!   is the cell with the smaller index; the stored unit normal points out of
//!   the plus cell (+x for vertical faces, +y for horizontal ones).
//! - Faces are parameterized bottom-to-top (vertical) or left-to-right
//!   (horizontal), so a quadrature point maps to consistent reference
//!   coordinates on both incident cells.

use crate::error::{Error, Result};
use crate::linalg::QuadratureRule;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Which side of a cell a face lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl Side {
    /// Reference coordinates of the face point with parameter t on this side.
    pub fn ref_coords(self, t: f64) -> [f64; 2] {
        match self {
            Side::Left => [0.0, t],
            Side::Right => [1.0, t],
            Side::Bottom => [t, 0.0],
            Side::Top => [t, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceKind {
    /// Two incident cells; `plus` is the smaller cell index.
    Interior {
        plus: usize,
        minus: usize,
        plus_side: Side,
        minus_side: Side,
    },
    /// One incident cell; the normal is the outward domain normal.
    Boundary { cell: usize, side: Side },
}

/// Boundary flow class with respect to an advection field: inflow means
/// b . n <= 0 everywhere on the face (ties count as inflow).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowClass {
    Inflow,
    Outflow,
}

#[derive(Debug, Clone)]
pub struct Face {
    pub kind: FaceKind,
    /// Unit normal out of the plus cell (outward for boundary faces).
    pub normal: [f64; 2],
    pub midpoint: [f64; 2],
    pub length: f64,
    /// min of the two incident cell diameters (they coincide here).
    pub h_e: f64,
    start: [f64; 2],
    horizontal: bool,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        matches!(self.kind, FaceKind::Boundary { .. })
    }

    /// Physical coordinates of the face point with parameter t in [0, 1].
    pub fn point_at(&self, t: f64) -> [f64; 2] {
        if self.horizontal {
            [self.start[0] + t * self.length, self.start[1]]
        } else {
            [self.start[0], self.start[1] + t * self.length]
        }
    }

    /// (cell, side) pairs seen from the plus and (for interior faces) minus side.
    pub fn sides(&self) -> (usize, Side, Option<(usize, Side)>) {
        match self.kind {
            FaceKind::Interior {
                plus,
                minus,
                plus_side,
                minus_side,
            } => (plus, plus_side, Some((minus, minus_side))),
            FaceKind::Boundary { cell, side } => (cell, side, None),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub n_per_side: usize,
    pub faces: Vec<Face>,
}

impl Mesh {
    pub fn cell_count(&self) -> usize {
        self.n_per_side * self.n_per_side
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn interior_face_count(&self) -> usize {
        2 * self.n_per_side * (self.n_per_side - 1)
    }

    pub fn boundary_face_count(&self) -> usize {
        4 * self.n_per_side
    }

    /// Side length of every cell.
    pub fn cell_side(&self) -> f64 {
        1.0 / self.n_per_side as f64
    }

    /// Diameter of every cell (diagonal of the square).
    pub fn cell_diameter(&self) -> f64 {
        SQRT_2 / self.n_per_side as f64
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        let n = self.n_per_side;
        let i = cell % n;
        let j = cell / n;
        let l = self.cell_side();
        [i as f64 * l, j as f64 * l]
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.n_per_side + i
    }

    /// Map reference coordinates in [0,1]^2 to physical coordinates.
    pub fn to_physical(&self, cell: usize, xi: [f64; 2]) -> [f64; 2] {
        let o = self.cell_origin(cell);
        let l = self.cell_side();
        [o[0] + l * xi[0], o[1] + l * xi[1]]
    }

    /// Face indices (left, right, bottom, top) of a cell.
    pub fn cell_faces(&self, cell: usize) -> [usize; 4] {
        let n = self.n_per_side;
        let i = cell % n;
        let j = cell / n;
        let nv = n * (n + 1);
        [
            j * (n + 1) + i,
            j * (n + 1) + i + 1,
            nv + j * n + i,
            nv + (j + 1) * n + i,
        ]
    }
}

/// Build the uniform n x n mesh of (0,1)^2.
pub fn build_uniform_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "build_uniform_mesh: n must be at least 1".into(),
        ));
    }
    let l = 1.0 / n as f64;
    let h_e = SQRT_2 * l;
    let mut faces = Vec::with_capacity(2 * n * (n + 1));
    // Vertical faces on the lines x = i/n.
    for j in 0..n {
        for i in 0..=n {
            let start = [i as f64 * l, j as f64 * l];
            let midpoint = [start[0], start[1] + 0.5 * l];
            let kind = if i == 0 {
                FaceKind::Boundary {
                    cell: j * n,
                    side: Side::Left,
                }
            } else if i == n {
                FaceKind::Boundary {
                    cell: j * n + (n - 1),
                    side: Side::Right,
                }
            } else {
                FaceKind::Interior {
                    plus: j * n + (i - 1),
                    minus: j * n + i,
                    plus_side: Side::Right,
                    minus_side: Side::Left,
                }
            };
            let normal = if i == 0 { [-1.0, 0.0] } else { [1.0, 0.0] };
            faces.push(Face {
                kind,
                normal,
                midpoint,
                length: l,
                h_e,
                start,
                horizontal: false,
            });
        }
    }
    // Horizontal faces on the lines y = j/n.
    for j in 0..=n {
        for i in 0..n {
            let start = [i as f64 * l, j as f64 * l];
            let midpoint = [start[0] + 0.5 * l, start[1]];
            let kind = if j == 0 {
                FaceKind::Boundary {
                    cell: i,
                    side: Side::Bottom,
                }
            } else if j == n {
                FaceKind::Boundary {
                    cell: (n - 1) * n + i,
                    side: Side::Top,
                }
            } else {
                FaceKind::Interior {
                    plus: (j - 1) * n + i,
                    minus: j * n + i,
                    plus_side: Side::Top,
                    minus_side: Side::Bottom,
                }
            };
            let normal = if j == 0 { [0.0, -1.0] } else { [0.0, 1.0] };
            faces.push(Face {
                kind,
                normal,
                midpoint,
                length: l,
                h_e,
                start,
                horizontal: true,
            });
        }
    }
    Ok(Mesh { n_per_side: n, faces })
}

/// Classify each boundary face as inflow or outflow for the advection field b.
///
/// Returns one entry per face, `None` for interior faces. The sign of b . n
/// must not change within a face; a face with both strictly positive and
/// non-positive values is rejected.
pub fn classify_boundary<F>(
    mesh: &Mesh,
    b: F,
    rule: &QuadratureRule,
) -> Result<Vec<Option<FlowClass>>>
where
    F: Fn([f64; 2]) -> [f64; 2],
{
    let mut out = vec![None; mesh.face_count()];
    for (fi, face) in mesh.faces.iter().enumerate() {
        if !face.is_boundary() {
            continue;
        }
        let mut any_pos = false;
        let mut any_nonpos = false;
        for q in 0..rule.len() {
            let x = face.point_at(rule.point_1d(q));
            let bv = b(x);
            let bn = bv[0] * face.normal[0] + bv[1] * face.normal[1];
            if bn > 0.0 {
                any_pos = true;
            } else {
                any_nonpos = true;
            }
        }
        if any_pos && any_nonpos {
            return Err(Error::SignChangeOnFace {
                face: fi,
                midpoint: face.midpoint,
            });
        }
        out[fi] = Some(if any_pos {
            FlowClass::Outflow
        } else {
            FlowClass::Inflow
        });
    }
    Ok(out)
}

/// How a face relates to the continuous/discontinuous split of the cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceClass {
    /// All incident cells lie in the continuous region T_C.
    Continuous,
    /// All incident cells lie in the discontinuous region T_D.
    Discontinuous,
    /// One incident cell in each region; part of the discontinuous skeleton.
    Interface,
}

/// The split of the mesh into continuous and discontinuous regions, together
/// with the induced classification of the skeleton.
#[derive(Debug, Clone)]
pub struct RegionPartition {
    in_continuous: Vec<bool>,
    face_class: Vec<FaceClass>,
}

impl RegionPartition {
    pub fn cell_in_continuous(&self, cell: usize) -> bool {
        self.in_continuous[cell]
    }

    pub fn continuous_cells(&self) -> usize {
        self.in_continuous.iter().filter(|&&b| b).count()
    }

    pub fn discontinuous_cells(&self) -> usize {
        self.in_continuous.len() - self.continuous_cells()
    }

    pub fn face_class(&self, face: usize) -> FaceClass {
        self.face_class[face]
    }

    /// Face belongs to the continuous skeleton E_hC (interface excluded).
    pub fn in_continuous_skeleton(&self, face: usize) -> bool {
        self.face_class[face] == FaceClass::Continuous
    }

    pub fn is_interface(&self, face: usize) -> bool {
        self.face_class[face] == FaceClass::Interface
    }

    pub fn interface_count(&self) -> usize {
        self.face_class
            .iter()
            .filter(|&&c| c == FaceClass::Interface)
            .count()
    }

    pub fn cell_flags(&self) -> &[bool] {
        &self.in_continuous
    }
}

/// Split the cells by a predicate: `selector(cell) == true` puts the cell in
/// the continuous region T_C. Interface faces (one cell on each side) count
/// as part of the discontinuous skeleton.
pub fn make_region<F>(mesh: &Mesh, selector: F) -> RegionPartition
where
    F: Fn(usize) -> bool,
{
    let in_continuous: Vec<bool> = (0..mesh.cell_count()).map(selector).collect();
    let face_class = mesh
        .faces
        .iter()
        .map(|face| match face.kind {
            FaceKind::Interior { plus, minus, .. } => {
                match (in_continuous[plus], in_continuous[minus]) {
                    (true, true) => FaceClass::Continuous,
                    (false, false) => FaceClass::Discontinuous,
                    _ => FaceClass::Interface,
                }
            }
            FaceKind::Boundary { cell, .. } => {
                if in_continuous[cell] {
                    FaceClass::Continuous
                } else {
                    FaceClass::Discontinuous
                }
            }
        })
        .collect();
    RegionPartition {
        in_continuous,
        face_class,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gauss_rule;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_cell_counts() {
        let mesh = build_uniform_mesh(1).unwrap();
        assert_eq!(mesh.cell_count(), 1);
        assert_eq!(mesh.interior_face_count(), 0);
        assert_eq!(mesh.boundary_face_count(), 4);
        assert_eq!(mesh.face_count(), 4);
    }

    #[test]
    fn two_by_two_counts() {
        let mesh = build_uniform_mesh(2).unwrap();
        assert_eq!(mesh.cell_count(), 4);
        assert_eq!(mesh.interior_face_count(), 4);
        assert_eq!(mesh.boundary_face_count(), 8);
    }

    #[test]
    fn count_formulas_up_to_64() {
        for n in 1..=64usize {
            let mesh = build_uniform_mesh(n).unwrap();
            assert_eq!(mesh.cell_count(), n * n);
            assert_eq!(mesh.face_count(), 2 * n * (n + 1));
            let interior = mesh.faces.iter().filter(|f| !f.is_boundary()).count();
            let boundary = mesh.faces.iter().filter(|f| f.is_boundary()).count();
            assert_eq!(interior, 2 * n * (n - 1));
            assert_eq!(boundary, 4 * n);
        }
    }

    #[test]
    fn face_h_is_cell_diameter() {
        let mesh = build_uniform_mesh(32).unwrap();
        let expect = SQRT_2 / 32.0;
        for face in &mesh.faces {
            assert!((face.h_e - expect).abs() < 1e-15);
        }
        assert!((expect - 4.4194e-2).abs() < 1e-5);
    }

    #[test]
    fn zero_cells_rejected() {
        assert!(build_uniform_mesh(0).is_err());
    }

    #[test]
    fn cell_faces_are_consistent() {
        let mesh = build_uniform_mesh(3).unwrap();
        for cell in 0..mesh.cell_count() {
            let faces = mesh.cell_faces(cell);
            for (k, &fi) in faces.iter().enumerate() {
                let face = &mesh.faces[fi];
                let (pc, ps, minus) = face.sides();
                let expected_side = [Side::Left, Side::Right, Side::Bottom, Side::Top][k];
                if pc == cell {
                    assert_eq!(ps, expected_side);
                } else if let Some((mc, ms)) = minus {
                    assert_eq!(mc, cell);
                    assert_eq!(ms, expected_side);
                } else {
                    panic!("face {fi} does not touch cell {cell}");
                }
            }
        }
    }

    #[test]
    fn diagonal_advection_classification() {
        let mesh = build_uniform_mesh(4).unwrap();
        let rule = gauss_rule(2, 1).unwrap();
        let classes = classify_boundary(&mesh, |_| [1.0, 1.0], &rule).unwrap();
        for (fi, face) in mesh.faces.iter().enumerate() {
            let Some(class) = classes[fi] else { continue };
            let on_outflow = face.midpoint[0] > 1.0 - 1e-12 || face.midpoint[1] > 1.0 - 1e-12;
            if on_outflow {
                assert_eq!(class, FlowClass::Outflow);
            } else {
                assert_eq!(class, FlowClass::Inflow);
            }
        }
    }

    #[test]
    fn zero_advection_is_all_inflow() {
        let mesh = build_uniform_mesh(3).unwrap();
        let rule = gauss_rule(2, 1).unwrap();
        let classes = classify_boundary(&mesh, |_| [0.0, 0.0], &rule).unwrap();
        for (face, class) in mesh.faces.iter().zip(&classes) {
            if face.is_boundary() {
                assert_eq!(class.unwrap(), FlowClass::Inflow);
            }
        }
    }

    #[test]
    fn horizontal_advection_ties_to_inflow() {
        let mesh = build_uniform_mesh(4).unwrap();
        let rule = gauss_rule(2, 1).unwrap();
        let classes = classify_boundary(&mesh, |_| [1.0, 0.0], &rule).unwrap();
        for (fi, face) in mesh.faces.iter().enumerate() {
            let Some(class) = classes[fi] else { continue };
            if face.midpoint[0] > 1.0 - 1e-12 {
                assert_eq!(class, FlowClass::Outflow, "right boundary flows out");
            } else {
                // left boundary and the tangential top/bottom faces (b.n = 0)
                assert_eq!(class, FlowClass::Inflow);
            }
        }
    }

    #[test]
    fn sign_change_rejected() {
        let mesh = build_uniform_mesh(1).unwrap();
        let rule = gauss_rule(3, 1).unwrap();
        // rotates across the top face of the single cell
        let res = classify_boundary(&mesh, |x| [0.0, x[0] - 0.5], &rule);
        assert!(matches!(res, Err(Error::SignChangeOnFace { .. })));
    }

    #[test]
    fn full_region_has_no_interface() {
        let mesh = build_uniform_mesh(4).unwrap();
        let region = make_region(&mesh, |_| true);
        assert_eq!(region.continuous_cells(), 16);
        assert_eq!(region.interface_count(), 0);
        for f in 0..mesh.face_count() {
            assert!(region.in_continuous_skeleton(f));
        }
    }

    #[test]
    fn empty_region_is_all_discontinuous() {
        let mesh = build_uniform_mesh(4).unwrap();
        let region = make_region(&mesh, |_| false);
        assert_eq!(region.continuous_cells(), 0);
        for f in 0..mesh.face_count() {
            assert_eq!(region.face_class(f), FaceClass::Discontinuous);
        }
    }

    #[test]
    fn strip_region_counts_on_n32() {
        // T_C = cells strictly inside (0, 1-h)^2 leaves an L-shaped strip of
        // 32^2 - 31^2 = 63 cells, and every strip/interior face is interface.
        let n = 32;
        let mesh = build_uniform_mesh(n).unwrap();
        let region = make_region(&mesh, |cell| {
            let i = cell % n;
            let j = cell / n;
            i < n - 1 && j < n - 1
        });
        assert_eq!(region.discontinuous_cells(), n * n - (n - 1) * (n - 1));
        for (fi, face) in mesh.faces.iter().enumerate() {
            if let FaceKind::Interior { plus, minus, .. } = face.kind {
                let pc = region.cell_in_continuous(plus);
                let mc = region.cell_in_continuous(minus);
                if pc != mc {
                    assert!(region.is_interface(fi));
                    assert!(!region.in_continuous_skeleton(fi));
                }
            }
        }
        // interface length: 31 vertical + 31 horizontal faces
        assert_eq!(region.interface_count(), 2 * (n - 1));
    }

    #[test]
    fn random_regions_satisfy_partition_invariants() {
        let mesh = build_uniform_mesh(6).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let flags: Vec<bool> = (0..mesh.cell_count()).map(|_| rng.gen_bool(0.5)).collect();
            let region = make_region(&mesh, |c| flags[c]);
            assert_eq!(
                region.continuous_cells() + region.discontinuous_cells(),
                mesh.cell_count()
            );
            for (fi, face) in mesh.faces.iter().enumerate() {
                match face.kind {
                    FaceKind::Interior { plus, minus, .. } => {
                        let pc = region.cell_in_continuous(plus);
                        let mc = region.cell_in_continuous(minus);
                        let class = region.face_class(fi);
                        match (pc, mc) {
                            (true, true) => assert_eq!(class, FaceClass::Continuous),
                            (false, false) => assert_eq!(class, FaceClass::Discontinuous),
                            _ => assert_eq!(class, FaceClass::Interface),
                        }
                    }
                    FaceKind::Boundary { cell, .. } => {
                        let expected = if region.cell_in_continuous(cell) {
                            FaceClass::Continuous
                        } else {
                            FaceClass::Discontinuous
                        };
                        assert_eq!(region.face_class(fi), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn face_points_agree_from_both_sides() {
        let mesh = build_uniform_mesh(3).unwrap();
        for face in &mesh.faces {
            let (pc, ps, minus) = face.sides();
            for &t in &[0.0, 0.3, 1.0] {
                let x = face.point_at(t);
                let xp = mesh.to_physical(pc, ps.ref_coords(t));
                assert!((x[0] - xp[0]).abs() < 1e-15 && (x[1] - xp[1]).abs() < 1e-15);
                if let Some((mc, ms)) = minus {
                    let xm = mesh.to_physical(mc, ms.ref_coords(t));
                    assert!((x[0] - xm[0]).abs() < 1e-15 && (x[1] - xm[1]).abs() < 1e-15);
                }
            }
        }
    }
}
