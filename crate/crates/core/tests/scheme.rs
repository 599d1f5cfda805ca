use jumpmil::errorlab::{ErrorLab, Reference};
use jumpmil::meshdesign::equidistant_mesh;
use jumpmil::pathkit::{cross_sum, i_nn, union_grid};
use jumpmil::stats::ls_slope;
use jumpmil::{AffineCoef, GridPath, IntensityModel, Mesh, MethodKind, MilsteinScheme, RngStream, SdeModel};
use proptest::prelude::*;

#[test]
fn additive_jumps_are_reproduced_exactly_at_knots() {
    // dX = c dN with constant c: X(t) = x0 + c N(t)
    let model = SdeModel::pure_jump_additive(0.5, 1.0, AffineCoef::default(), vec![0.25]).unwrap();
    let scheme = MilsteinScheme::new(model, IntensityModel::constant(5.0).unwrap()).unwrap();
    let mesh = equidistant_mesh(1.0, 10).unwrap();
    for k in 0..50 {
        let mut rng = RngStream::new(3, k).rng();
        let path = GridPath::simulate(scheme.intensity(), mesh.knots(), &mut rng).unwrap();
        let x = scheme.run(&mesh, &path).unwrap();
        for (xi, ni) in x.iter().zip(&path.n) {
            assert_eq!(*xi, 0.5 + 0.25 * *ni as f64);
        }
    }
}

#[test]
fn pure_diffusion_knot_error_is_first_order() {
    let model = SdeModel::pure_diffusion(
        1.0,
        1.0,
        AffineCoef::new(vec![], vec![0.05]),
        AffineCoef::new(vec![], vec![0.9]),
    )
    .unwrap();
    // the intensity is irrelevant when c = 0
    let scheme = MilsteinScheme::new(model, IntensityModel::constant(1.0).unwrap()).unwrap();
    let lab = ErrorLab::new(scheme, Reference::FineMilstein { factor: 16 }, 1500, 8).unwrap().with_seed(11);
    let ns = [8usize, 16, 32, 64];
    let meshes: Vec<Mesh> = ns.iter().map(|&n| equidistant_mesh(1.0, n).unwrap()).collect();
    let est = lab.knot_errors(&meshes.iter().collect::<Vec<_>>()).unwrap();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = est.iter().map(|e| e.e_hat.ln()).collect();
    let slope = ls_slope(&xs, &ys);
    assert!((slope + 1.0).abs() < 0.2, "slope {slope}");
}

#[test]
fn linear_method_interpolates_knot_values() {
    let p = jumpmil::MertonParams::new(0.1, 0.4, 1.0, 1.0, 1.0).unwrap();
    let scheme = MilsteinScheme::new(p.model(), p.intensity()).unwrap();
    let mesh = Mesh::new(vec![0.0, 0.2, 0.5, 1.0]).unwrap();
    let eval = equidistant_mesh(1.0, 100).unwrap();
    let grid = union_grid([mesh.knots(), eval.knots()]);
    let mut rng = RngStream::new(5, 0).rng();
    let path = GridPath::simulate(scheme.intensity(), &grid, &mut rng).unwrap();
    let lin = scheme.build(MethodKind::Linear, &mesh, &path).unwrap();
    let cond = scheme.build(MethodKind::Conditional, &mesh, &path).unwrap();
    for (t, x) in mesh.knots().iter().zip(lin.knot_values()) {
        assert!((lin.eval(*t).unwrap() - x).abs() < 1e-14);
        assert!((cond.eval(*t).unwrap() - x).abs() < 1e-12);
    }
    let mid = lin.eval(0.35).unwrap();
    let x = lin.knot_values();
    assert!((mid - 0.5 * (x[1] + x[2])).abs() < 1e-12);
}

proptest! {
    #[test]
    fn i_nn_counts_pairs(d in 0u64..5000) {
        prop_assert_eq!(i_nn(d), (d * d.saturating_sub(1) / 2) as f64);
    }

    #[test]
    fn cross_sum_is_product(d in 0u64..1000, k in -(1i64 << 30)..(1i64 << 30)) {
        let dw = k as f64 / (1u64 << 20) as f64;
        prop_assert_eq!(cross_sum(d, dw), d as f64 * dw);
    }

    #[test]
    fn refine_keeps_knots(cuts in prop::collection::vec(0.01f64..0.99, 0..10), factor in 1usize..6) {
        let mut knots = cuts;
        knots.push(0.0);
        knots.push(1.0);
        knots.sort_by(f64::total_cmp);
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-6);
        let mesh = Mesh::new(knots).unwrap();
        let fine = mesh.refine(factor);
        prop_assert_eq!(fine.intervals(), mesh.intervals() * factor);
        for (i, t) in mesh.knots().iter().enumerate() {
            prop_assert_eq!(fine.knots()[i * factor], *t);
        }
    }
}
