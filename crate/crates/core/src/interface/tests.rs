use super::*;
use crate::cell::{solve_cell, CellOptions};
use crate::fields::{PeriodicCoefficients, Preset};
use crate::grid::TorusGrid;

fn piece(p: Preset) -> PeriodicCoefficients {
    PeriodicCoefficients::preset(p, 2).unwrap()
}

fn cells(field: &CoefficientField, n: usize) -> (CellResult, CellResult) {
    let g = TorusGrid::new(2, n).unwrap();
    let o = CellOptions::default();
    (solve_cell(&field.plus, &g, &o).unwrap(), solve_cell(&field.minus, &g, &o).unwrap())
}

fn run(field: &CoefficientField, n: usize, r: f64) -> (CellResult, CellResult, InterfaceResult) {
    let (p, m) = cells(field, n);
    let opts = InterfaceOptions { r, ..Default::default() };
    let res = analyze_interface(field, &p, &m, &opts).unwrap();
    (p, m, res)
}

#[test]
fn q_minus_oracles() {
    let g = TorusGrid::new(2, 16).unwrap();
    let o = SolveOptions::with_tol(1e-13);
    let id = piece(Preset::Identity);
    let two = piece(Preset::Identity).scaled(2.0);
    let mi = crate::cell::invariant_measure(&id, &g, &o).unwrap();
    let m2 = crate::cell::invariant_measure(&two, &g, &o).unwrap();
    let q = compute_q_minus((&id, &mi), (&id, &mi), 0.7, 1e-3).unwrap();
    assert!((q.q_minus - 0.7).abs() < 1e-14);
    let q = compute_q_minus((&two, &m2), (&id, &mi), 0.7, 1e-3).unwrap();
    assert!((q.q_minus - 1.4).abs() < 1e-13);

    // layered: ∫ a₁₁ m is the same on every slice
    let lay = piece(Preset::Layered);
    let g = TorusGrid::new(2, 32).unwrap();
    let ml = crate::cell::invariant_measure(&lay, &g, &o).unwrap();
    let mi = crate::cell::invariant_measure(&id, &g, &o).unwrap();
    let q = compute_q_minus((&lay, &ml), (&id, &mi), 1.0, 1e-3).unwrap();
    assert!(q.variation_plus < 1e-12);
    for c in &q.cross_check {
        assert!((c - q.q_minus).abs() < 1e-12);
    }
    assert!((q.q_minus - 3f64.sqrt()).abs() < 1e-2);
}

#[test]
fn normal_drift_is_rejected() {
    let b1 = PeriodicCoefficients::from_expressions(2, &[vec!["1", "0"], vec!["0", "1"]], &["0.5*sin(2*pi*y2)", "0"]).unwrap();
    let field = CoefficientField::one_sided(b1);
    let err = require_normal_drift_free(&field).unwrap_err();
    assert!(err.to_string().contains("b₁ ≡ 0"));
}

#[test]
fn identity_slab_is_trivial() {
    let field = CoefficientField::one_sided(piece(Preset::Identity));
    let (_, _, res) = run(&field, 16, 3.0);
    assert!(res.slab.values().iter().all(|m| (m - 1.0).abs() < 1e-12));
    // ψ₊ + ψ₋ < 1 inside the strip, so v and f live there (f up to stencil width)
    let grid = &res.slab.grid;
    let s = grid.slice_len();
    for p in 0..grid.lattice().len() {
        let y1 = grid.y1(p / s).abs();
        if y1 >= 1.0 {
            assert!(res.deviation.v.values()[p].abs() < 1e-12);
        }
        if y1 > 1.0 + 2.0 * grid.h1() {
            assert!(res.deviation.f.values()[p].abs() < 1e-10);
        }
    }
    assert!(res.decay_plus.degenerate() && res.decay_minus.degenerate());
    assert!(res.max_principle_ok());
    let c = res.corrector.as_ref().unwrap();
    assert!(c.psi.sup_norm() < 1e-12);
    assert!(c.m_plus[1][0].abs() < 1e-12 && c.m_minus[1][0].abs() < 1e-12);
}

#[test]
fn smooth_cutoffs_leave_a_deviation_inside_the_strip() {
    // with a = 2I on the plus side m_R = C/a, while the blend is linear in q±
    let field = CoefficientField::new(piece(Preset::Identity).scaled(2.0), piece(Preset::Identity)).unwrap();
    let (_, _, res) = run(&field, 16, 3.0);
    assert!((res.q.q_minus - 2.0).abs() < 1e-12);
    let grid = &res.slab.grid;
    for k in 0..grid.slices() {
        if grid.y1(k).abs() >= 1.0 {
            assert!(res.profile.sup_v[k] < 1e-10, "{} {}", grid.y1(k), res.profile.sup_v[k]);
        }
    }
    assert!(res.deviation.v_sup > 1e-3);
    // monotone profile between the data values 1 and 2
    assert!(res.slab.max_principle.passed);
}

#[test]
fn source_support_and_residual() {
    let field = CoefficientField::new(piece(Preset::Trig), piece(Preset::Sheared)).unwrap();
    let (_, _, res) = run(&field, 16, 3.0);
    assert!(res.deviation.support_defect <= res.deviation.support_tol);
    assert!(res.deviation.f_sup > 1.0);
    assert!(res.deviation.residual < 1e-12);
    assert!(res.flux_zero.boundary < 1e-14);
}

#[test]
fn layered_slab_leaves_the_data_range() {
    // m = c/(2 + sin 2πy₁) solves the slab problem exactly; its boundary
    // data is constant, yet it ranges over [c/3, c] inside
    let field = CoefficientField::one_sided(piece(Preset::Layered));
    let (_, _, res) = run(&field, 16, 3.0);
    let mp = &res.slab.max_principle;
    assert!(!mp.guaranteed);
    assert!(!mp.passed);
    assert!((mp.max / mp.data_max - 2.0).abs() < 0.05, "{mp:?}");
}

#[test]
fn flux_constancy_on_the_slab() {
    let field = CoefficientField::new(piece(Preset::Transverse), piece(Preset::TransverseMirror)).unwrap();
    let (_, _, res) = run(&field, 16, 4.0);
    assert!(res.slab.flux.max_rel_deviation < 1e-9);
    assert!(res.flux_zero.max < 1e-9);
    assert!(res.slab.bounds.passed);
}

#[test]
fn one_sided_transverse_matches_its_cell_corrector() {
    let field = CoefficientField::one_sided(piece(Preset::Transverse));
    let (_, _, res) = run(&field, 16, 4.0);
    let c = res.corrector.unwrap();
    // φ₊ vanishes and m_R = m₊, so Ψ is constant up to the centering defect
    assert!(c.matching_sup_plus < 1e-8, "{}", c.matching_sup_plus);
    assert!(c.matching_sup_minus < 1e-8);
}

#[test]
fn r_doubling_differences_shrink() {
    let field = CoefficientField::new(piece(Preset::Transverse), piece(Preset::TransverseMirror)).unwrap();
    let (p, m) = cells(&field, 16);
    let q = compute_q_minus((&field.plus, &p.measure), (&field.minus, &m.measure), 1.0, 1e-3).unwrap();
    let far = FarField {
        plus: &p.measure,
        minus: &m.measure,
        q_plus: 1.0,
        q_minus: q.q_minus,
    };
    let st = r_stability(&field, far, q.flux_plus, &[3.0, 4.0, 5.0], &SolveOptions::with_tol(1e-13)).unwrap();
    assert!(st.sup_diff.windows(2).all(|w| w[1] < w[0]), "{:?}", st.sup_diff);
    assert!(st.fit.rate > 0.0);
}
