mod common;

use common::{barycentric, basis_value, integrate_triangle, triangle_vertices};

use stokes_optctrl::adapt::{adaptive_loop, doerfler_mark, AdaptParams, Column, Refinement};
use stokes_optctrl::assembly::MethodConfig;
use stokes_optctrl::assembly::ProblemKind;
use stokes_optctrl::estimator::{efficiency_index, estimate};
use stokes_optctrl::mesh::{refine_nvb, refine_uniform, Grid};
use stokes_optctrl::optctrl::{field, solve_optimality_with, Discretization, ProblemSpec};
use stokes_optctrl::spaces::Bounds;
use stokes_optctrl::verify::{error_norms, example1, example2};
use stokes_optctrl::Vec2;

#[test]
fn volume_and_consistency_terms_match_independent_quadrature() {
    // smooth data, so both quadratures converge to the same integrals
    let spec = ProblemSpec::new(
        ProblemKind::Distributed,
        field(|x| [(3.0 * x[1]).sin(), (2.0 * x[0]).cos() - 0.4]),
        field(|x| [4.0 * x[0] * x[1] - 1.0, 2.0 * (x[0] - x[1])]),
        0.1,
        Bounds::scalar(-0.5, 0.4).unwrap(),
    )
    .unwrap();
    let config = MethodConfig {
        error_order: 10,
        ..MethodConfig::cr()
    };
    let grid = Grid::new(refine_uniform(&refine_uniform(&common::random_mesh(4, 2)).unwrap()).unwrap());
    let disc = Discretization::new(&grid, &spec, &config).unwrap();
    let sol = solve_optimality_with(&grid, &disc, &spec, &config).unwrap();
    let ind = estimate(&grid, &disc, &spec, &sol, &config).unwrap();
    for t in 0..grid.n_triangles() {
        let v = triangle_vertices(&grid, t);
        let loc = disc.vel.local_coeffs(&grid, t);
        let eval = |c: &[f64], x: Vec2| {
            let l = barycentric(&v, x);
            [0, 1].map(|k| {
                (0..3)
                    .map(|i| c[loc[i][k]] * basis_value(disc.vel.kind, l, i))
                    .sum::<f64>()
            })
        };
        let h2 = {
            let d = |a: Vec2, b: Vec2| (a[0] - b[0]).hypot(a[1] - b[1]);
            d(v[0], v[1]).max(d(v[1], v[2])).max(d(v[2], v[0])).powi(2)
        };
        let y = [sol.y.coeffs[2 * t], sol.y.coeffs[2 * t + 1]];
        let sv = h2
            * integrate_triangle(&v, 12, |x| {
                let f = (spec.f)(x);
                (f[0] + y[0]).powi(2) + (f[1] + y[1]).powi(2)
            });
        let av = h2
            * integrate_triangle(&v, 12, |x| {
                let (u, ud) = (eval(&sol.u.coeffs, x), (spec.u_d)(x));
                (u[0] - ud[0]).powi(2) + (u[1] - ud[1]).powi(2)
            });
        let area = integrate_triangle(&v, 2, |_| 1.0);
        let mean = [0, 1].map(|k| integrate_triangle(&v, 2, |x| eval(&sol.phi.coeffs, x)[k]) / area);
        let cc = integrate_triangle(&v, 4, |x| {
            let p = eval(&sol.phi.coeffs, x);
            (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2)
        });
        for (name, lib, ora) in [
            ("state volume", ind.state_volume[t], sv),
            ("adjoint volume", ind.adjoint_volume[t], av),
            ("control consistency", ind.control_consistency[t], cc),
        ] {
            assert!(
                (lib - ora).abs() <= 1e-8 * ora.abs().max(1e-14),
                "{name} on {t}: {lib:e} vs {ora:e}"
            );
        }
    }
    let sum: f64 = ind.element_squared().iter().sum();
    assert!((ind.total() - sum.sqrt()).abs() < 1e-12 * ind.total());
}

#[test]
fn estimator_decreases_and_stays_efficient_on_the_smooth_case() {
    let case = example1(1.0).unwrap();
    let spec = case.spec().unwrap();
    let config = MethodConfig::cr();
    let mut effs = Vec::new();
    let mut etas = Vec::new();
    for n in [4, 8, 16] {
        let grid = Grid::new(case.mesh(n).unwrap());
        let disc = Discretization::new(&grid, &spec, &config).unwrap();
        let sol = solve_optimality_with(&grid, &disc, &spec, &config).unwrap();
        let ind = estimate(&grid, &disc, &spec, &sol, &config).unwrap();
        let err = error_norms(&grid, &disc, &sol, &case, &config).unwrap();
        etas.push(ind.total());
        effs.push(efficiency_index(&ind, err.total()).unwrap());
    }
    assert!(etas.windows(2).all(|w| w[1] < w[0]), "{etas:?}");
    assert!(effs.iter().all(|&e| e >= 1.0 && e <= 2.0 * effs[0]), "{effs:?}");
}

#[test]
fn adaptivity_refines_towards_the_reentrant_corner() {
    let (case, _) = example2(1.0).unwrap();
    let spec = case.spec().unwrap();
    let params = AdaptParams {
        max_ndof: 10_000,
        ..AdaptParams::default()
    };
    let out = adaptive_loop(case.mesh(2).unwrap(), &spec, Some(&case), &MethodConfig::cr(), &params).unwrap();
    let h = &out.history;
    assert!(h.levels.len() >= 4);
    let eta = h.column(Column::Eta).unwrap();
    assert!(eta.last().unwrap() < &eta[0]);
    let centroid_distance = |t: usize| {
        let v = triangle_vertices(&out.grid, t);
        ((v[0][0] + v[1][0] + v[2][0]) / 3.0).hypot((v[0][1] + v[1][1] + v[2][1]) / 3.0)
    };
    let area = &out.grid.topo.area;
    let smallest = area.iter().copied().fold(f64::INFINITY, f64::min);
    let near = (0..area.len())
        .filter(|&t| centroid_distance(t) < 0.1)
        .map(|t| area[t])
        .fold(f64::INFINITY, f64::min);
    assert_eq!(near, smallest, "deepest refinement is away from the corner");
    let ndof = h.ndofs();
    assert!(ndof.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn full_marking_is_uniform_refinement() {
    let mesh = common::random_mesh(2, 1);
    let eta: Vec<f64> = (0..mesh.n_triangles()).map(|t| 1.0 + (t % 3) as f64).collect();
    let marked = doerfler_mark(&eta, 1.0).unwrap();
    let mut all = marked.marked.clone();
    all.sort_unstable();
    assert_eq!(all, (0..mesh.n_triangles()).collect::<Vec<_>>());
    assert_eq!(
        refine_nvb(&mesh, &marked.marked).unwrap().to_text(),
        refine_uniform(&mesh).unwrap().to_text()
    );
}

#[test]
fn budget_below_the_initial_mesh_gives_one_level() {
    let case = example1(1.0).unwrap();
    let spec = case.spec().unwrap();
    for refinement in [Refinement::Adaptive, Refinement::Uniform] {
        let params = AdaptParams {
            max_ndof: 10,
            refinement,
            ..AdaptParams::default()
        };
        let out = adaptive_loop(case.mesh(2).unwrap(), &spec, Some(&case), &MethodConfig::cr(), &params).unwrap();
        assert_eq!(out.history.levels.len(), 1);
        assert!(out.history.levels[0].errors.is_some());
    }
}
