//! wasm-bindgen entry points for the browser demo. Each call returns a JSON
//! string; the plain functions behind them are usable and tested natively.

use invmeasure::cell::{solve_cell, CellOptions, CellResult};
use invmeasure::fields::{CoefficientField, PeriodicCoefficients, Preset};
use invmeasure::grid::TorusGrid;
use invmeasure::interface::{analyze_interface, cutoff_minus, cutoff_plus, InterfaceOptions};
use invmeasure::solver::SolveOptions;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest cell resolution accepted from the page.
const MAX_N: usize = 96;
/// Largest slab half-width accepted from the page.
const MAX_R: f64 = 12.0;

#[derive(Debug, Serialize)]
pub struct CellView {
    pub n: usize,
    /// `m` row by row: row `i` is the slice `y₁ = i/n`.
    pub m: Vec<Vec<f64>>,
    pub min: f64,
    pub max: f64,
    pub residual: f64,
    pub a_hat: [[f64; 2]; 2],
    pub asymmetry: f64,
    pub iterations: usize,
}

#[derive(Debug, Serialize)]
pub struct SlabView {
    pub y1: Vec<f64>,
    /// Slice averages of `m_R` and of the blended far field.
    pub m_mean: Vec<f64>,
    pub blend_mean: Vec<f64>,
    pub sup_v: Vec<f64>,
    pub sup_grad: Vec<f64>,
    pub q_minus: f64,
    pub rate_plus: f64,
    pub rate_minus: f64,
    pub r_squared_plus: f64,
    pub r_squared_minus: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Serialize)]
pub struct BlendView {
    pub y1: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

fn check_n(n: usize) -> Result<(), String> {
    if !(8..=MAX_N).contains(&n) || n % 2 == 1 {
        return Err(format!("n must be even and in [8, {MAX_N}], got {n}"));
    }
    Ok(())
}

fn preset(name: &str) -> Result<PeriodicCoefficients, String> {
    let p = Preset::from_name(name).ok_or_else(|| format!("unknown preset '{name}'"))?;
    PeriodicCoefficients::preset(p, 2).map_err(|e| e.to_string())
}

fn solve(piece: &PeriodicCoefficients, n: usize) -> Result<CellResult, String> {
    check_n(n)?;
    let grid = TorusGrid::new(2, n).map_err(|e| e.to_string())?;
    solve_cell(piece, &grid, &CellOptions::default()).map_err(|e| e.to_string())
}

fn cell_view(c: &CellResult) -> CellView {
    let n = c.measure.grid.n();
    let vals = c.measure.values();
    let e = &c.effective;
    CellView {
        n,
        m: vals.chunks(n).map(<[f64]>::to_vec).collect(),
        min: c.measure.min,
        max: c.measure.max,
        residual: c.measure.residual,
        a_hat: [[e.a_hat[0][0], e.a_hat[0][1]], [e.a_hat[1][0], e.a_hat[1][1]]],
        asymmetry: e.asymmetry,
        iterations: c.measure.solve.iterations,
    }
}

/// Cell problem for a named preset.
pub fn cell_preset(name: &str, n: usize) -> Result<CellView, String> {
    Ok(cell_view(&solve(&preset(name)?, n)?))
}

/// Cell problem for `a = [[a11, a12], [a21, a22]]`, `b = (b1, b2)` given as
/// expressions in `y1, y2`.
pub fn cell_expressions(a: [&str; 4], b: [&str; 2], n: usize) -> Result<CellView, String> {
    let rows = vec![vec![a[0], a[1]], vec![a[2], a[3]]];
    let piece = PeriodicCoefficients::from_expressions(2, &rows, &b).map_err(|e| e.to_string())?;
    Ok(cell_view(&solve(&piece, n)?))
}

/// Slab measure, decay profile and fitted rates for a two-sided preset pair.
pub fn slab(plus: &str, minus: &str, r: f64, n: usize) -> Result<SlabView, String> {
    if !(5.0..=MAX_R).contains(&r) || r.fract() != 0.0 {
        return Err(format!("R must be an integer in [5, {MAX_R}], got {r}"));
    }
    let field = CoefficientField::new(preset(plus)?, preset(minus)?).map_err(|e| e.to_string())?;
    let (cp, cm) = (solve(&field.plus, n)?, solve(&field.minus, n)?);
    let opts = InterfaceOptions {
        r,
        slab: SolveOptions::with_tol(1e-12),
        ..Default::default()
    };
    let res = analyze_interface(&field, &cp, &cm, &opts).map_err(|e| e.to_string())?;
    let s = &res.slab;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let blend: Vec<f64> = s.plus_values.iter().zip(&s.minus_values).zip(0..).map(|((p, m), k)| {
        let y1 = s.grid.y1(k / s.grid.slice_len());
        s.q_plus * cutoff_plus(y1) * p + s.q_minus * cutoff_minus(y1) * m
    }).collect();
    let slices = 0..s.grid.slices();
    Ok(SlabView {
        y1: slices.clone().map(|k| s.grid.y1(k)).collect(),
        m_mean: slices.clone().map(|k| mean(&s.values()[s.grid.slice(k)])).collect(),
        blend_mean: slices.map(|k| mean(&blend[s.grid.slice(k)])).collect(),
        sup_v: res.profile.sup_v.clone(),
        sup_grad: res.profile.sup_grad.clone(),
        q_minus: s.q_minus,
        rate_plus: res.decay_plus.value.rate,
        rate_minus: res.decay_minus.value.rate,
        r_squared_plus: res.decay_plus.value.r_squared,
        r_squared_minus: res.decay_minus.value.r_squared,
        min: s.min,
        max: s.max,
    })
}

/// The interface cutoffs `ψ±` sampled on `[−2, 2]`.
pub fn blend(points: usize) -> BlendView {
    let points = points.clamp(2, 2000);
    let y1: Vec<f64> = (0..points).map(|i| -2.0 + 4.0 * i as f64 / (points - 1) as f64).collect();
    BlendView {
        plus: y1.iter().map(|&y| cutoff_plus(y)).collect(),
        minus: y1.iter().map(|&y| cutoff_minus(y)).collect(),
        y1,
    }
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = cellPreset)]
pub fn js_cell_preset(name: &str, n: usize) -> Result<String, JsError> {
    to_js(cell_preset(name, n))
}

#[wasm_bindgen(js_name = cellExpressions)]
#[allow(clippy::too_many_arguments)]
pub fn js_cell_expressions(a11: &str, a12: &str, a21: &str, a22: &str, b1: &str, b2: &str, n: usize) -> Result<String, JsError> {
    to_js(cell_expressions([a11, a12, a21, a22], [b1, b2], n))
}

#[wasm_bindgen(js_name = slab)]
pub fn js_slab(plus: &str, minus: &str, r: f64, n: usize) -> Result<String, JsError> {
    to_js(slab(plus, minus, r, n))
}

#[wasm_bindgen(js_name = blend)]
pub fn js_blend(points: usize) -> Result<String, JsError> {
    to_js(Ok(blend(points)))
}

#[wasm_bindgen(js_name = presets)]
pub fn js_presets() -> String {
    serde_json::to_string(&Preset::ALL.iter().map(|p| p.name()).collect::<Vec<_>>()).unwrap_or_default()
}
