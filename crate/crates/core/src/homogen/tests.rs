use super::*;
use crate::cell::{solve_cell, CellOptions};
use crate::fields::{PeriodicCoefficients, Preset};
use crate::grid::TorusGrid;
use std::f64::consts::PI;

fn eye(d: usize, k: f64) -> Tensor {
    let mut t = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..d {
        t[i][i] = k;
    }
    t
}

fn opts() -> SolveOptions {
    SolveOptions::with_tol(1e-12)
}

// (k u′)′ = 1 on (−½, ½), k = 2 for x > 0 and 1 for x < 0, u(±½) = 0
fn two_material(x: f64) -> f64 {
    let c = 1.0 / 12.0;
    let u0 = -0.125 + 0.5 * c;
    if x <= 0.0 {
        0.5 * x * x + c * x + u0
    } else {
        u0 + 0.5 * (0.5 * x * x + c * x)
    }
}

#[test]
fn identity_effective_problem_is_second_order() {
    // u = cos πx₁ cos πx₂ has Δu = −2π²u and vanishes on ∂Ω
    let src = Source::Expression(Expr::parse_in("-2*pi^2*cos(pi*x1)*cos(pi*x2)", 2, 'x').unwrap());
    let pt = PiecewiseTensor::uniform(2, eye(2, 1.0));
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let g = BoxGrid::new(2, n).unwrap();
        let sol = solve_effective(&pt, &src, &g, &opts()).unwrap();
        let exact = ScalarField::from_fn(g.lattice(), |x| (PI * x[0]).cos() * (PI * x[1]).cos());
        errs.push(error_norms(&sol.u, &exact, 0.0, 0.0).linf);
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..=2.2).contains(&order), "{errs:?}");
    }
}

#[test]
fn two_material_oracle_is_exact_on_even_grids() {
    let pt = PiecewiseTensor::new(1, eye(1, 2.0), eye(1, 1.0), 1.0, 1.0);
    for n in [8, 20, 64] {
        let g = BoxGrid::new(1, n).unwrap();
        let sol = solve_effective(&pt, &Source::Constant(1.0), &g, &opts()).unwrap();
        let exact = ScalarField::from_fn(g.lattice(), |x| two_material(x[0]));
        assert!(error_norms(&sol.u, &exact, 0.0, 0.0).linf < 1e-12);
    }
}

#[test]
fn two_material_odd_grids_converge() {
    let pt = PiecewiseTensor::new(1, eye(1, 2.0), eye(1, 1.0), 1.0, 1.0);
    let mut errs = Vec::new();
    for n in [15, 31, 63] {
        let g = BoxGrid::new(1, n).unwrap();
        let sol = solve_effective(&pt, &Source::Constant(1.0), &g, &opts()).unwrap();
        let exact = ScalarField::from_fn(g.lattice(), |x| two_material(x[0]));
        errs.push(error_norms(&sol.u, &exact, 0.0, 0.0).linf);
    }
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 0.9, "{errs:?}");
    }
}

#[test]
fn two_material_quadratic_source_is_second_order() {
    // (k u′)′ = x²: flux x³/3 + c, with c fixed by u(½) = 0
    let c = 1.0 / 288.0;
    let flux_int = |a: f64, b: f64, k: f64| ((b.powi(4) - a.powi(4)) / 12.0 + c * (b - a)) / k;
    let exact = |x: f64| {
        if x <= 0.0 {
            flux_int(-0.5, x, 1.0)
        } else {
            flux_int(-0.5, 0.0, 1.0) + flux_int(0.0, x, 2.0)
        }
    };
    assert!(exact(0.5).abs() < 1e-15);
    let pt = PiecewiseTensor::new(1, eye(1, 2.0), eye(1, 1.0), 1.0, 1.0);
    let src = Source::Expression(Expr::parse_in("x1^2", 1, 'x').unwrap());
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let g = BoxGrid::new(1, n).unwrap();
        let sol = solve_effective(&pt, &src, &g, &opts()).unwrap();
        let ex = ScalarField::from_fn(g.lattice(), |x| exact(x[0]));
        errs.push(error_norms(&sol.u, &ex, 0.0, 0.0).linf);
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..=2.2).contains(&order), "{errs:?}");
    }
}

fn cell(p: PeriodicCoefficients, n: usize) -> CellResult {
    solve_cell(&p, &TorusGrid::new(2, n).unwrap(), &CellOptions::default()).unwrap()
}

#[test]
fn identity_medium_reproduces_the_effective_solve() {
    let c = cell(PeriodicCoefficients::preset(Preset::Identity, 2).unwrap(), 16);
    let medium = SampledMedium::periodic(&c, 8).unwrap();
    let o = ConvergenceOptions {
        eps: vec![0.25, 0.125, 1.0 / 16.0],
        ..Default::default()
    };
    let exp = convergence_study(&medium, &Source::Bump, &o).unwrap();
    assert!(exp.rate.degenerate);
    assert!(exp.rows.iter().all(|r| r.errors.linf == 0.0));
    assert!(exp.rate_in((0.7, 1.3)));
}

#[test]
fn constant_medium_matches_constant_coefficients() {
    let c = cell(PeriodicCoefficients::preset(Preset::Identity, 2).unwrap().scaled(2.0), 16);
    let medium = SampledMedium::periodic(&c, 8).unwrap();
    let eff = medium.effective(&opts()).unwrap();
    assert_eq!(eff.plus, eye(2, 2.0));
    let (grid, osc) = solve_oscillating(&medium, &Source::Bump, 0.25, &opts()).unwrap();
    let direct = solve_effective(&PiecewiseTensor::uniform(2, eye(2, 2.0)), &Source::Bump, &grid, &opts()).unwrap();
    assert!(error_norms(&osc.u, &direct.u, 0.0, 0.0).linf < 1e-13);
}

#[test]
fn oscillating_energy_identity() {
    let c = cell(PeriodicCoefficients::preset(Preset::Trig, 2).unwrap(), 16);
    let medium = SampledMedium::periodic(&c, 8).unwrap();
    let (_, osc) = solve_oscillating(&medium, &Source::Bump, 0.25, &opts()).unwrap();
    assert!(osc.energy_defect < 1e-9, "{}", osc.energy_defect);
}

#[test]
fn piecewise_tensor_keeps_the_cell_output() {
    let a = [[1.3, 0.2, 0.0], [-0.1, 0.9, 0.0], [0.0; 3]];
    let pt = PiecewiseTensor::new(2, a, eye(2, 1.0), 0.7, 1.1);
    for i in 0..2 {
        for j in 0..2 {
            assert_eq!(pt.plus[i][j], 0.7 * a[i][j]);
        }
    }
    assert_eq!(pt.cell_plus, a);
    assert!(pt.min_eigenvalue() > 0.0);
}

#[test]
fn unresolved_eps_is_rejected() {
    assert!(matches!(grid_for(0.125, 4), Err(HomogenError::Resolution { .. })));
    assert!(matches!(grid_for(0.3, 8), Err(HomogenError::Resolution { .. })));
    assert!(grid_for(0.125, 8).is_ok());
}

#[test]
#[ignore]
fn explore_rates() {
    use crate::fields::CoefficientField;
    use crate::interface::{analyze_interface, InterfaceOptions};
    let t = std::time::Instant::now();
    let trig = cell(PeriodicCoefficients::preset(Preset::Trig, 2).unwrap(), 64);
    let medium = SampledMedium::periodic(&trig, 8).unwrap();
    let exp = convergence_study(&medium, &Source::Bump, &ConvergenceOptions::default()).unwrap();
    eprintln!("trig {:.1}s\n{}{:?}", t.elapsed().as_secs_f64(), exp.to_csv(), exp.rate);
    for (a, b) in [(Preset::Transverse, Preset::TransverseMirror), (Preset::Transverse, Preset::Drift), (Preset::Trig, Preset::Sheared)] {
        let field = CoefficientField::new(PeriodicCoefficients::preset(a, 2).unwrap(), PeriodicCoefficients::preset(b, 2).unwrap()).unwrap();
        let p = cell(field.plus.clone(), 64);
        let m = cell(field.minus.clone(), 64);
        let iface = analyze_interface(&field, &p, &m, &InterfaceOptions::default()).unwrap();
        let medium = SampledMedium::interface(&p, &m, &iface, 8).unwrap();
        let c = iface.corrector.as_ref().unwrap();
        eprintln!("{a:?}|{b:?} M+ {:?} M- {:?} fits {:?} {:?}", c.m_plus, c.m_minus, c.matching_plus, c.matching_minus);
        let exp = convergence_study(&medium, &Source::Bump, &ConvergenceOptions::default()).unwrap();
        eprintln!("{:.1}s\n{}{:?}", t.elapsed().as_secs_f64(), exp.to_csv(), exp.rate);
        let mut pt = exp.effective.clone();
        pt.shift_plus = [[0.0; 3]; 3];
        pt.shift_minus = [[0.0; 3]; 3];
        let (g, osc) = solve_oscillating(&medium, &Source::Bump, 1.0 / 32.0, &SolveOptions::with_tol(1e-11)).unwrap();
        let e = solve_effective(&pt, &Source::Bump, &g, &SolveOptions::with_tol(1e-11)).unwrap();
        eprintln!("without shifts at eps=1/32: {:?}", error_norms(&osc.u, &e.u, 0.125, 0.25));
    }
}
