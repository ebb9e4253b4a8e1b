//! Acceptance criteria 1–10, one line each. Runs as a plain binary so the
//! lines are printed whether or not a criterion fails; the process exits
//! non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::Instant;

use invmeasure::cell::{effective_tensor_nodal, invariant_measure, solve_cell, CellOptions, CellResult};
use invmeasure::cli::{duality_check, refinement_checks};
use invmeasure::fields::{CoefficientField, PeriodicCoefficients, Preset, Tensor, MAX_DIM};
use invmeasure::fit::RateCheck;
use invmeasure::grid::{assemble_nondiv, BoundaryRows, Lattice, ScalarField, SlabGrid, TorusGrid};
use invmeasure::homogen::{convergence_study, ConvergenceOptions, SampledMedium, Source};
use invmeasure::interface::{analyze_interface, decay_fit, InterfaceOptions, InterfaceResult, Side, SliceProfile};
use invmeasure::solver::SolveOptions;

const TAU: f64 = 2.0 * PI;
const ORDER: (f64, f64) = (1.7, 2.3);

struct Verdict {
    passed: bool,
    text: String,
}

fn verdict(passed: bool, text: String) -> Verdict {
    Verdict { passed, text }
}

fn piece(p: Preset) -> PeriodicCoefficients {
    PeriodicCoefficients::preset(p, 2).unwrap()
}

fn cell(p: &PeriodicCoefficients, n: usize) -> CellResult {
    solve_cell(p, &TorusGrid::new(p_dim(p), n).unwrap(), &CellOptions::default()).unwrap()
}

fn p_dim(p: &PeriodicCoefficients) -> usize {
    use invmeasure::fields::Coefficients;
    p.dim()
}

fn inv_h(ns: &[usize]) -> Vec<f64> {
    ns.iter().map(|&n| 1.0 / n as f64).collect()
}

/// The bundled two-sided preset at the default sizes, shared by 4–8 and 10.
struct Bundled {
    field: CoefficientField,
    plus: CellResult,
    minus: CellResult,
    r8: InterfaceResult,
    r12: InterfaceResult,
}

impl Bundled {
    fn new() -> Self {
        let field = CoefficientField::new(piece(Preset::Transverse), piece(Preset::TransverseMirror)).unwrap();
        let plus = cell(&field.plus, 64);
        let minus = cell(&field.minus, 64);
        let run = |r: f64| analyze_interface(&field, &plus, &minus, &InterfaceOptions { r, ..Default::default() }).unwrap();
        let r8 = run(8.0);
        let r12 = run(12.0);
        Self {
            field,
            plus,
            minus,
            r8,
            r12,
        }
    }
}

// 1. m ≡ 1 for the identity; layered density √3/(2 + sin 2πy₁) at second order.
fn criterion_1() -> Verdict {
    let id = cell(&piece(Preset::Identity), 32);
    let id_err = id.measure.values().iter().fold(0.0f64, |a, m| a.max((m - 1.0).abs()));
    // ∫₀¹ dt/(2 + sin 2πt) = 1/√3, so the unit-mean density is √3/(2 + sin 2πy₁)
    let exact = |y: &[f64]| 3f64.sqrt() / (2.0 + (TAU * y[0]).sin());
    let ns = [32, 64, 128];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let g = TorusGrid::new(2, n).unwrap();
            let m = invariant_measure(&piece(Preset::Layered), &g, &SolveOptions::with_tol(1e-13)).unwrap();
            let ex = ScalarField::from_fn(g.lattice(), exact);
            m.values().iter().zip(ex.values()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()))
        })
        .collect();
    // the discrete density of a layered operator is exactly c/a on the grid
    let rc = RateCheck::new("layered", &inv_h(&ns), &errs, ORDER, 1e-11);
    verdict(
        id_err <= 1e-12 && rc.passed,
        format!("identity |m − 1| = {id_err:.1e}; layered {}", rc.describe()),
    )
}

// 2. duality, positivity and unit mean on every preset, d = 2 and d = 3.
fn criterion_2() -> Verdict {
    let mut worst: (f64, f64, f64) = (0.0, f64::INFINITY, 0.0);
    let mut count = 0;
    for (d, n) in [(2, 32), (3, 12)] {
        let g = TorusGrid::new(d, n).unwrap();
        for p in Preset::ALL {
            let c = PeriodicCoefficients::preset(p, d).unwrap();
            let m = invariant_measure(&c, &g, &SolveOptions::with_tol(1e-13)).unwrap();
            let dual = duality_check(&c, &m, 20, 17 + count as u64).unwrap();
            worst.0 = worst.0.max(dual.max_ratio);
            worst.1 = worst.1.min(m.min);
            worst.2 = worst.2.max((m.mean - 1.0).abs());
            count += 1;
        }
    }
    verdict(
        worst.0 <= 1e-9 && worst.1 > 0.0 && worst.2 <= 1e-12,
        format!(
            "{count} preset/dimension pairs: max |⟨L_h u, m⟩|/(‖u‖‖m‖) = {:.1e}, min m = {:.3}, max |mean − 1| = {:.1e}",
            worst.0, worst.1, worst.2
        ),
    )
}

// 3. centering defect at rate h²; slice fluxes of a₁₁m constant.
fn criterion_3() -> Verdict {
    let ns = [32, 64, 128];
    let mut ok = true;
    let mut rated = Vec::new();
    let mut exact_flux = 0;
    let mut presets = 0;
    for p in [Preset::Trig, Preset::Sheared, Preset::Drift, Preset::Transverse, Preset::TransverseMirror, Preset::Layered] {
        let checks = refinement_checks(&piece(p), &ns, &CellOptions::default(), ORDER, 1e-10).unwrap();
        for c in checks.iter().filter(|c| c.name == "centering_defect" || c.name == "slice_flux_variation") {
            ok &= c.passed;
            if c.name == "centering_defect" && !c.exact {
                rated.push(format!("{} slope {:.3}", p.name(), c.fit.slope));
            }
            if c.name == "slice_flux_variation" && c.exact {
                exact_flux += 1;
            }
        }
        presets += 1;
    }
    ok &= !rated.is_empty();
    verdict(
        ok,
        format!(
            "centering defect: {} (others exact to solver noise); slice-flux variation exact to solver noise on {exact_flux}/{presets} presets",
            rated.join(", ")
        ),
    )
}

// 4. the slab solve stays within its boundary data; the stencil check flags
// a positivity-violating assembly.
fn criterion_4(b: &Bundled) -> Verdict {
    let mut lines = Vec::new();
    let mut ok = true;
    for (r, res) in [(8, &b.r8), (12, &b.r12)] {
        let mp = &res.slab.max_principle;
        let range = mp.data_max - mp.data_min;
        let held = mp.excess <= 1e-8 * range;
        ok &= held;
        let g = &res.slab.grid;
        let vals = res.slab.values();
        let (p, _) = vals.iter().enumerate().fold((0, f64::NEG_INFINITY), |a, (p, v)| if *v > a.1 { (p, *v) } else { a });
        lines.push(format!(
            "bundled R = {r}: max m_R − max g = {:.3e} vs 1e−8·range = {:.1e} at y₁ = {:.3}",
            mp.excess,
            1e-8 * range,
            g.y1(p / g.slice_len())
        ));
    }
    // m = c/(2 + sin 2πy₁) solves the layered slab problem exactly, with
    // boundary data c/2 at integer R and interior values up to c
    let lay = CoefficientField::one_sided(piece(Preset::Layered));
    let lc = cell(&lay.plus, 16);
    let res = analyze_interface(&lay, &lc, &lc, &InterfaceOptions { r: 4.0, ..Default::default() }).unwrap();
    let mp = &res.slab.max_principle;
    ok &= mp.excess <= 1e-8 * (mp.data_max - mp.data_min).max(mp.data_max.abs());
    lines.push(format!("layered slab: max m_R / max g = {:.4}", mp.max / mp.data_max));

    let strong = PeriodicCoefficients::from_expressions(2, &[vec!["1", "0"], vec!["0", "1"]], &["0", "40*cos(2*pi*y2)"]).unwrap();
    let asm = assemble_nondiv(&strong, &Lattice::torus(2, 8), 1.0, BoundaryRows::Identity).unwrap();
    let flagged = !asm.positivity.passed && asm.positivity.violations > 0;
    ok &= flagged;
    lines.push(format!(
        "stencil check on |b| = 40, n = 8: {} ({} violating nodes, suggested h {:?})",
        if flagged { "flagged" } else { "missed" },
        asm.positivity.violations,
        asm.positivity.suggested_h
    ));
    if !ok {
        lines.push(
            "a non-divergence adjoint with variable a has no maximum principle: the layered density solves the slab problem exactly and peaks at twice its boundary values, and the bundled overshoot stays near 1e−7 to 3e−7 for n = 32, 64, 128 instead of vanishing with h".into(),
        );
    }
    verdict(ok, lines.join("; "))
}

// 5. ½ min(q±m±) ≤ m_R ≤ 3/2 max(q±m±).
fn criterion_5(b: &Bundled) -> Verdict {
    let s = &b.r8.slab;
    let qp = s.q_plus * b.plus.measure.max.max(0.0);
    let qm = s.q_minus * b.minus.measure.max;
    let lo = 0.5 * (s.q_plus * b.plus.measure.min).min(s.q_minus * b.minus.measure.min);
    let hi = 1.5 * qp.max(qm);
    verdict(
        s.min >= lo && s.max <= hi && s.bounds.passed,
        format!("m_R ∈ [{:.4}, {:.4}] within [{lo:.4}, {hi:.4}], q₋ = {:.10}", s.min, s.max, s.q_minus),
    )
}

// 6. decay fits on both sides, stable in R; injected exponential recovered.
fn criterion_6(b: &Bundled) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (f8, f12) in [(&b.r8.decay_plus, &b.r12.decay_plus), (&b.r8.decay_minus, &b.r12.decay_minus)] {
        for (kind, a, c) in [("|v|", &f8.value, &f12.value), ("|∇v|", &f8.gradient, &f12.gradient)] {
            let change = (a.rate - c.rate).abs() / a.rate;
            ok &= a.rate > 0.0 && a.r_squared >= 0.98 && change < 0.1;
            parts.push(format!(
                "{:?} {kind} c = {:.4} (R² {:.5}) → {:.4} at R = 12 ({:.1}%)",
                f8.side,
                a.rate,
                a.r_squared,
                c.rate,
                100.0 * change
            ));
        }
    }
    let grid = SlabGrid::aligned(2, 8.0, 64).unwrap();
    let v = ScalarField::from_fn(grid.lattice(), |y| (-3.0 * y[0].abs()).exp() * (TAU * y[1]).cos());
    let profile = SliceProfile::new(&v, &piece(Preset::Identity), &grid).unwrap();
    let mut self_test: f64 = 0.0;
    for side in [Side::Plus, Side::Minus] {
        let fit = decay_fit(&profile, side, (2.0, 6.0), 1e-300);
        self_test = self_test.max((fit.value.rate - 3.0).abs() / 3.0).max((fit.gradient.rate - 3.0).abs() / 3.0);
    }
    ok &= self_test < 0.005;
    parts.push(format!("injected c = 3 recovered to {:.2e}", self_test));
    verdict(ok, parts.join("; "))
}

// 7. ∫ a₁₁ v = 0 on every slice; slice fluxes of m_R equal q₊∫ a₊,₁₁m₊.
fn criterion_7(b: &Bundled) -> Verdict {
    let ns = [16, 32, 64];
    let mut zero = Vec::new();
    let mut constancy = Vec::new();
    let pairs = [(Preset::Transverse, Preset::TransverseMirror), (Preset::Trig, Preset::Sheared)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, m) in pairs {
        zero.clear();
        constancy.clear();
        let field = CoefficientField::new(piece(p), piece(m)).unwrap();
        for &n in &ns {
            let (cp, cm) = (cell(&field.plus, n), cell(&field.minus, n));
            let res = analyze_interface(&field, &cp, &cm, &InterfaceOptions { r: 4.0, ..Default::default() }).unwrap();
            zero.push(res.flux_zero.max / res.slab.flux.reference.abs());
            constancy.push(res.slab.flux.max_rel_deviation);
        }
        // slab solve noise grows like n²
        let floors: Vec<f64> = ns.iter().map(|&n| 10.0 * 1e-13 * (n * n) as f64).collect();
        let z = RateCheck::with_floors("flux zero", &inv_h(&ns), &zero, ORDER, &floors);
        let c = RateCheck::with_floors("flux constancy", &inv_h(&ns), &constancy, ORDER, &floors);
        ok &= z.passed && c.passed;
        parts.push(format!("{}|{}: {}; {}", p.name(), m.name(), z.describe(), c.describe()));
    }
    let r8 = b.r8.slab.flux.max_rel_deviation.max(b.r8.flux_zero.max / b.r8.slab.flux.reference.abs());
    ok &= r8 <= 1e-9;
    parts.push(format!("bundled R = 8, n = 64: {r8:.1e}"));
    verdict(ok, parts.join("; "))
}

// 8. flux correctors: antisymmetry, divergence at h², stream-function oracle,
// matching of the interface corrector.
fn criterion_8(b: &Bundled) -> Verdict {
    let mut ok = true;
    let mut asym: f64 = 0.0;
    for c in [&b.plus, &b.minus] {
        let phi = &c.flux_corrector;
        let (p, q) = (phi.component(0, 1), phi.component(1, 0));
        asym = asym.max(p.iter().zip(&q).fold(0.0, |a: f64, (x, y)| a.max((x + y).abs())));
    }
    ok &= asym == 0.0;
    // trig: b̃ = (−∂₁F, ∂₁ψ) with F = 1.5 + 0.4 sin 2πy₁ cos 2πy₂ and
    // ψ = 0.4 cos 2πy₁ sin 2πy₂, so φ₂₁ = −ψ up to a constant
    let oracle = |y: &[f64]| -0.4 * (TAU * y[0]).cos() * (TAU * y[1]).sin();
    let ns = [32, 64, 128];
    let mut div = Vec::new();
    let mut stream = Vec::new();
    for &n in &ns {
        let c = cell(&piece(Preset::Trig), n);
        let phi = c.flux_corrector.component(1, 0);
        let lat = Lattice::torus(2, n);
        let ex = ScalarField::from_fn(&lat, oracle);
        let (mp, me) = (phi.iter().sum::<f64>() / phi.len() as f64, ex.mean());
        stream.push(phi.iter().zip(ex.values()).fold(0.0f64, |a, (x, y)| a.max((x - mp - (y - me)).abs())));
        div.push(c.flux_corrector.div_residual);
    }
    let d = RateCheck::new("divergence residual", &inv_h(&ns), &div, ORDER, 0.0);
    let s = RateCheck::new("stream function", &inv_h(&ns), &stream, ORDER, 0.0);
    ok &= d.passed && s.passed;
    let corr = b.r8.corrector.as_ref().expect("d = 2");
    let (fp, fm) = (&corr.matching_plus, &corr.matching_minus);
    ok &= fp.rate > 0.0 && fm.rate > 0.0 && fp.r_squared >= 0.95 && fm.r_squared >= 0.95;
    verdict(
        ok,
        format!(
            "max |φ_ij + φ_ji| = {asym:e}; {}; {}; matching c = {:.4}/{:.4}, R² {:.5}/{:.5}",
            d.describe(),
            s.describe(),
            fp.rate,
            fm.rate,
            fp.r_squared,
            fm.r_squared
        ),
    )
}

fn diag(a: f64, b: f64) -> Tensor {
    let mut t = [[0.0; MAX_DIM]; MAX_DIM];
    t[0][0] = a;
    t[1][1] = b;
    t
}

// 9. Â = I for the identity; laminate oracle: harmonic mean across the
// layers, arithmetic mean along them.
fn criterion_9() -> Verdict {
    let id = cell(&piece(Preset::Identity), 32).effective.a_hat;
    let id_err = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .fold(0.0f64, |a, (i, j)| a.max((id[i][j] - if i == j { 1.0 } else { 0.0 }).abs()));
    let ns = [16, 32, 64];
    let mut e11 = Vec::new();
    let mut e22 = Vec::new();
    for &n in &ns {
        let lat = Lattice::torus(2, n);
        let nodal: Vec<Tensor> = (0..lat.len())
            .map(|p| {
                let k = 2.0 + (TAU * lat.coord(p)[0]).sin();
                diag(k, k)
            })
            .collect();
        let a = effective_tensor_nodal(&lat, &nodal, &SolveOptions::with_tol(1e-12)).unwrap().a_hat;
        // 1/⟨1/(2 + sin)⟩ = √3, ⟨2 + sin⟩ = 2
        e11.push((a[0][0] - 3f64.sqrt()).abs());
        e22.push((a[1][1] - 2.0).abs());
    }
    let r11 = RateCheck::new("harmonic", &inv_h(&ns), &e11, ORDER, 1e-12);
    let r22 = RateCheck::new("arithmetic", &inv_h(&ns), &e22, ORDER, 1e-12);
    verdict(
        id_err <= 1e-10 && r11.passed && r22.passed,
        format!("identity |Â − I| = {id_err:.1e}; {}; {}", r11.describe(), r22.describe()),
    )
}

// 10. interior-L∞ error ~ ε on the bundled interface preset and the periodic control.
fn criterion_10(b: &Bundled) -> Verdict {
    let t = Instant::now();
    let medium = SampledMedium::interface(&b.plus, &b.minus, &b.r8, 8).unwrap();
    let opts = ConvergenceOptions::default();
    let main = convergence_study(&medium, &Source::Bump, &opts).unwrap();
    let trig = cell(&piece(Preset::Trig), 64);
    let control = convergence_study(&SampledMedium::periodic(&trig, 8).unwrap(), &Source::Bump, &opts).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let band = (0.7, 1.3);
    let ok = main.rate_in(band) && control.rate_in(band) && secs < 600.0;
    let errs = |e: &invmeasure::homogen::ConvergenceExperiment| {
        e.rows.iter().map(|r| format!("{:.2e}", r.errors.interior_linf)).collect::<Vec<_>>().join(" → ")
    };
    verdict(
        ok,
        format!(
            "interface slope {:.3} ({}), control slope {:.3} ({}), monotone {}/{}, {secs:.0} s; {}",
            main.rate.slope,
            errs(&main),
            control.rate.slope,
            errs(&control),
            main.monotone,
            control.monotone,
            b.field.plus.describe()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(u8, Verdict)> = Vec::new();
    results.push((1, criterion_1()));
    results.push((2, criterion_2()));
    results.push((3, criterion_3()));
    let bundled = Bundled::new();
    results.push((4, criterion_4(&bundled)));
    results.push((5, criterion_5(&bundled)));
    results.push((6, criterion_6(&bundled)));
    results.push((7, criterion_7(&bundled)));
    results.push((8, criterion_8(&bundled)));
    results.push((9, criterion_9()));
    results.push((10, criterion_10(&bundled)));
    println!();
    for (id, v) in &results {
        println!("criterion {id:>2}: {} {}", if v.passed { "PASS" } else { "FAIL" }, v.text);
    }
    let failed: Vec<u8> = results.iter().filter(|(_, v)| !v.passed).map(|(id, _)| *id).collect();
    println!("acceptance: {} passed, {} failed, {:.0} s", results.len() - failed.len(), failed.len(), start.elapsed().as_secs_f64());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
