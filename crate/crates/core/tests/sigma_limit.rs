//! The super-penalized dG solution converges to the directly-computed cdG
//! solution at first order in 1/sigma, on full and partial continuous
//! regions alike.

use penalimit_core::mesh::{build_uniform_mesh, make_region};
use penalimit_core::nncf::{self, Discretization, NncfProblem, PenaltyConfig};
use penalimit_core::spaces::build_dg_space;

fn sweep_distances(n: usize, eps: f64, sigmas: &[f64], selector: impl Fn(usize) -> bool) -> Vec<f64> {
    let mesh = build_uniform_mesh(n).unwrap();
    let dofmap = build_dg_space(&mesh, 1).unwrap();
    let region = make_region(&mesh, selector);
    let disc = Discretization::new(&mesh, &dofmap, &region);
    let problem = NncfProblem::boundary_layer(eps);
    let cfg = PenaltyConfig::default();
    let v_h = nncf::solve_cdg_direct(&problem, &cfg, &disc).unwrap();
    sigmas
        .iter()
        .map(|&sigma| {
            let w = nncf::solve_super_penalized(
                &problem,
                &PenaltyConfig {
                    sigma,
                    ..cfg
                },
                &disc,
            )
            .unwrap();
            let diff = w.sub(&v_h);
            nncf::norms(&diff, &problem, &cfg, &disc).unwrap().l2_norm
        })
        .collect()
}

#[test]
fn first_order_decay_towards_cg() {
    // the 1/sigma asymptotics set in once sigma M clears the base penalty m,
    // i.e. sigma >> C_p / C_d = 1e4
    let sigmas = [1e5, 1e6, 1e7, 1e8, 1e9];
    let d = sweep_distances(8, 10.0, &sigmas, |_| true);
    for k in 1..d.len() {
        let ratio = d[k] / d[k - 1];
        assert!(
            (0.05..=0.2).contains(&ratio),
            "decade {k}: ratio {ratio} outside [0.05, 0.2]; distances {d:?}"
        );
    }
}

#[test]
fn first_order_decay_towards_partial_cdg() {
    // continuous region away from the outflow boundary
    let n = 8;
    let sigmas = [1e5, 1e6, 1e7, 1e8];
    let d = sweep_distances(n, 0.05, &sigmas, |cell| {
        let i = cell % n;
        let j = cell / n;
        i < n - 2 && j < n - 2
    });
    for k in 1..d.len() {
        let ratio = d[k] / d[k - 1];
        assert!(
            (0.05..=0.2).contains(&ratio),
            "decade {k}: ratio {ratio} outside [0.05, 0.2]; distances {d:?}"
        );
    }
}
