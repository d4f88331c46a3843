//! Automatic selection of the continuous region from inter-element jumps:
//! a cell joins T_C only when the L2 norm of the concentration jump is below
//! a tolerance on every one of its faces. The region is rebuilt from a fully
//! discontinuous step at a fixed period.

use crate::linalg::gauss_rule;
use crate::mesh::{Mesh, RegionPartition};
use crate::spaces::{ReferenceBasis, ScalarField, SideTable};

#[derive(Debug, Clone, Copy)]
pub struct AdaptPolicy {
    /// Jump threshold per face (L2 norm).
    pub tol: f64,
    /// Steps between region rebuilds; the first step of each cycle is fully
    /// discontinuous and its solution drives the next selection.
    pub period: usize,
    pub enabled: bool,
    /// Count boundary traces as continuity violations. Off by default: the
    /// displacement problem carries Neumann data, so a nonzero boundary
    /// trace is not a jump.
    pub include_boundary: bool,
}

impl AdaptPolicy {
    pub fn new(tol: f64) -> Self {
        AdaptPolicy {
            tol,
            period: 5,
            enabled: true,
            include_boundary: false,
        }
    }
}

/// Per-face indicator eta_e = (int_e [c]^2 ds)^(1/2). On boundary faces the
/// jump is the trace itself.
pub fn face_jump_indicator(field: &ScalarField, mesh: &Mesh, quad_order: usize) -> Vec<f64> {
    let rule = gauss_rule(quad_order, 1).expect("face rule");
    let basis = ReferenceBasis::new(field.degree);
    let table = SideTable::tabulate(&basis, &rule);
    let npc = table.npc;
    mesh.faces
        .iter()
        .map(|face| {
            let (pc, ps, minus) = face.sides();
            let mut acc = 0.0;
            for q in 0..rule.len() {
                let vp: f64 = (0..npc)
                    .map(|k| field.coeffs[pc * npc + k] * table.value(ps, q, k))
                    .sum();
                let jump = match minus {
                    Some((mc, ms)) => {
                        let vm: f64 = (0..npc)
                            .map(|k| field.coeffs[mc * npc + k] * table.value(ms, q, k))
                            .sum();
                        vp - vm
                    }
                    None => vp,
                };
                acc += rule.weights[q] * face.length * jump * jump;
            }
            acc.sqrt()
        })
        .collect()
}

/// Flag every cell whose faces all satisfy eta_e < tol (strict) as part of
/// the continuous region for the next steps.
pub fn select_region(
    field: &ScalarField,
    mesh: &Mesh,
    tol: f64,
    quad_order: usize,
    include_boundary: bool,
) -> RegionPartition {
    let eta = face_jump_indicator(field, mesh, quad_order);
    crate::mesh::make_region(mesh, |cell| {
        mesh.cell_faces(cell).iter().all(|&fi| {
            if !include_boundary && mesh.faces[fi].is_boundary() {
                true
            } else {
                eta[fi] < tol
            }
        })
    })
}

/// What the time loop should do at a given (1-based) step index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepPlan {
    /// Solve fully discontinuous, then rebuild the region from the solution.
    ResetAndReselect,
    /// Keep the region selected at the last reset.
    HoldRegion,
}

/// The reset schedule: step 1 and every period-th step after it run fully
/// discontinuous; the steps in between reuse the held region.
pub fn schedule(step: usize, policy: &AdaptPolicy) -> StepPlan {
    assert!(step >= 1, "steps are 1-based");
    if !policy.enabled {
        return StepPlan::HoldRegion;
    }
    if (step - 1) % policy.period == 0 {
        StepPlan::ResetAndReselect
    } else {
        StepPlan::HoldRegion
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_uniform_mesh;
    use crate::spaces::{build_constraints, build_dg_space};
    use rand::{Rng, SeedableRng};

    #[test]
    fn continuous_field_has_zero_interior_indicators() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = crate::mesh::make_region(&mesh, |_| true);
        let cm = build_constraints(&dofmap, &mesh, &region, false).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let free: Vec<f64> = (0..cm.free_dofs())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let field = cm.prolong(&free);
        let eta = face_jump_indicator(&field, &mesh, 3);
        for (fi, face) in mesh.faces.iter().enumerate() {
            if !face.is_boundary() {
                assert!(eta[fi] < 1e-13);
            }
        }
    }

    #[test]
    fn cell_indicator_jump_scales_with_side() {
        // field = 1 on a single cell: eta = sqrt(l) on each of its faces
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let mut field = ScalarField::zeros(&dofmap);
        let cell = 5;
        for k in 0..4 {
            field.coeffs[cell * 4 + k] = 1.0;
        }
        let eta = face_jump_indicator(&field, &mesh, 3);
        let expect = mesh.cell_side().sqrt();
        for &fi in &mesh.cell_faces(cell) {
            assert!((eta[fi] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_field_all_zero() {
        let mesh = build_uniform_mesh(3).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let field = ScalarField::zeros(&dofmap);
        for eta in face_jump_indicator(&field, &mesh, 3) {
            assert_eq!(eta, 0.0);
        }
    }

    #[test]
    fn continuous_field_selects_everything() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let region = crate::mesh::make_region(&mesh, |_| true);
        let cm = build_constraints(&dofmap, &mesh, &region, false).unwrap();
        let free: Vec<f64> = (0..cm.free_dofs()).map(|i| i as f64).collect();
        let field = cm.prolong(&free);
        let selected = select_region(&field, &mesh, 1e-8, 3, false);
        assert_eq!(selected.continuous_cells(), mesh.cell_count());
    }

    #[test]
    fn single_jump_face_disqualifies_both_cells() {
        let mesh = build_uniform_mesh(4).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        // continuous base plus a jump across exactly one interior face
        let region = crate::mesh::make_region(&mesh, |_| true);
        let cm = build_constraints(&dofmap, &mesh, &region, false).unwrap();
        let free: Vec<f64> = vec![1.0; cm.free_dofs()];
        let mut field = cm.prolong(&free);
        // perturb one cell uniformly: jumps appear on all four of its faces
        let cell = 9;
        for k in 0..4 {
            field.coeffs[cell * 4 + k] += 1.0;
        }
        let selected = select_region(&field, &mesh, 1e-6, 3, false);
        let n = mesh.n_per_side;
        for other in 0..mesh.cell_count() {
            let (i, j) = (other % n, other / n);
            let (ci, cj) = (cell % n, cell / n);
            let neighbor =
                (i == ci && j.abs_diff(cj) == 1) || (j == cj && i.abs_diff(ci) == 1);
            let expect_continuous = !(other == cell || neighbor);
            assert_eq!(
                selected.cell_in_continuous(other),
                expect_continuous,
                "cell {other}"
            );
        }
    }

    #[test]
    fn selection_is_monotone_in_tol() {
        let mesh = build_uniform_mesh(5).unwrap();
        let dofmap = build_dg_space(&mesh, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let field = ScalarField::from_coeffs(
                1,
                (0..dofmap.ndofs)
                    .map(|_| rng.gen_range(-1.0..1.0) * rng.gen_range(0.0..1e-2))
                    .collect(),
            );
            let lo = select_region(&field, &mesh, 1e-4, 3, false);
            let hi = select_region(&field, &mesh, 1e-2, 3, false);
            for cell in 0..mesh.cell_count() {
                if lo.cell_in_continuous(cell) {
                    assert!(hi.cell_in_continuous(cell));
                }
            }
        }
    }

    #[test]
    fn schedule_resets_every_period() {
        let policy = AdaptPolicy::new(1e-4);
        let resets: Vec<usize> = (1..=12)
            .filter(|&j| schedule(j, &policy) == StepPlan::ResetAndReselect)
            .collect();
        assert_eq!(resets, vec![1, 6, 11]);
        let disabled = AdaptPolicy {
            enabled: false,
            ..policy
        };
        assert_eq!(schedule(1, &disabled), StepPlan::HoldRegion);
    }
}
