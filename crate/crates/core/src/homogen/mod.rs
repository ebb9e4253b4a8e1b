//! The ε-scale experiment: the oscillating divergence-form problem
//! `div(B(x/ε)∇u_ε) = f m(x/ε)`, the piecewise-constant effective problem and
//! the convergence sweep on `Ω = (−½, ½)ᵈ` with zero Dirichlet data.

use web_time::Instant;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::cell::{effective_tensor_nodal, CellError, CellResult};
use crate::fields::{Expr, Tensor, MAX_DIM};
use crate::fit::{rate_fit, RateFit};
use crate::grid::divform::FaceCoefficients;
use crate::grid::{BoxGrid, GridError, Lattice, ScalarField};
use crate::interface::InterfaceResult;
use crate::solver::{solve_linear, SolveOptions, SolveReport, SolverError};

#[derive(Debug, Error)]
pub enum HomogenError {
    #[error("ε = {eps} is not resolved: {detail}")]
    Resolution { eps: f64, detail: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// The right-hand side `f` on `Ω`.
#[derive(Debug, Clone)]
pub enum Source {
    /// `β(|x|/0.45)·(1 + ½ sin 2πx₁)` with the standard bump `β(t) = e^{1 − 1/(1−t²)}`.
    Bump,
    Constant(f64),
    /// An expression in `x1..xd`.
    Expression(Expr),
}

impl Source {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Source::Bump => {
                let r2 = x.iter().map(|v| v * v).sum::<f64>() / (0.45 * 0.45);
                if r2 >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - r2)).exp() * (1.0 + 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin())
                }
            }
            Source::Constant(c) => *c,
            Source::Expression(e) => e.eval(x),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Source::Bump => "bump".into(),
            Source::Constant(c) => format!("{c}"),
            Source::Expression(e) => e.source().to_string(),
        }
    }
}

/// `Â(x) = Â₊` for `x₁ > 0` and `Â₋` for `x₁ < 0`, with source weights
/// `w±` so that the effective right side is `f·w±`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseTensor {
    pub dim: usize,
    pub plus: Tensor,
    pub minus: Tensor,
    pub weight_plus: f64,
    pub weight_minus: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    /// The unscaled cell tensors, `plus = q₊·cell_plus`.
    pub cell_plus: Tensor,
    pub cell_minus: Tensor,
    /// Constant antisymmetric parts added on each side when assembling. A
    /// jump between them is a tangential drift on `{x₁ = 0}`.
    pub shift_plus: Tensor,
    pub shift_minus: Tensor,
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut o = *a;
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            o[i][j] += b[i][j];
        }
    }
    o
}

fn scale(t: &Tensor, c: f64) -> Tensor {
    let mut o = *t;
    o.iter_mut().flatten().for_each(|v| *v *= c);
    o
}

impl PiecewiseTensor {
    /// `Â± = q±·cell±` with unit source weights.
    pub fn new(dim: usize, cell_plus: Tensor, cell_minus: Tensor, q_plus: f64, q_minus: f64) -> Self {
        Self {
            dim,
            plus: scale(&cell_plus, q_plus),
            minus: scale(&cell_minus, q_minus),
            weight_plus: 1.0,
            weight_minus: 1.0,
            q_plus,
            q_minus,
            cell_plus,
            cell_minus,
            shift_plus: [[0.0; MAX_DIM]; MAX_DIM],
            shift_minus: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }

    pub fn with_shifts(mut self, plus: Tensor, minus: Tensor) -> Self {
        self.shift_plus = plus;
        self.shift_minus = minus;
        self
    }

    /// The tensor assembled on the plus side, `Â₊ + shift₊`.
    pub fn assembled_plus(&self) -> Tensor {
        add(&self.plus, &self.shift_plus)
    }

    pub fn assembled_minus(&self) -> Tensor {
        add(&self.minus, &self.shift_minus)
    }

    pub fn uniform(dim: usize, a: Tensor) -> Self {
        Self::new(dim, a, a, 1.0, 1.0)
    }

    pub fn with_weights(mut self, plus: f64, minus: f64) -> Self {
        self.weight_plus = plus;
        self.weight_minus = minus;
        self
    }

    /// Smallest eigenvalue of the symmetric parts of both blocks.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim;
        [self.plus, self.minus]
            .iter()
            .map(|t| DMatrix::from_fn(d, d, |i, j| 0.5 * (t[i][j] + t[j][i])).symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }

    fn source_weight(&self, x1: f64) -> f64 {
        if x1.abs() < 1e-12 {
            0.5 * (self.weight_plus + self.weight_minus)
        } else if x1 > 0.0 {
            self.weight_plus
        } else {
            self.weight_minus
        }
    }

    // Face tensor at a face midpoint. Faces lying in {x₁ = 0} take the mean
    // of both sides; x₁-faces straddling it take the harmonic mean of the
    // normal entry.
    fn face(&self, mid: &[f64], axis: usize) -> Tensor {
        let x1 = mid[0];
        let (plus, minus) = (self.assembled_plus(), self.assembled_minus());
        if x1.abs() >= 1e-12 {
            return if x1 > 0.0 { plus } else { minus };
        }
        let mut t = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..self.dim {
            for j in 0..self.dim {
                t[i][j] = 0.5 * (plus[i][j] + minus[i][j]);
            }
        }
        if axis == 0 {
            let (a, b) = (plus[0][0], minus[0][0]);
            t[0][0] = 2.0 * a * b / (a + b);
        }
        t
    }
}

/// A discrete solution with its solver report.
#[derive(Debug, Clone)]
pub struct Solution {
    pub u: ScalarField,
    pub report: SolveReport,
    /// `|Σ_faces F·G vol + Σ g u vol| / |Σ_faces F·G vol|`.
    pub energy_defect: f64,
}

fn solve_divform(faces: &FaceCoefficients, g: &[f64], opts: &SolveOptions) -> Result<Solution, HomogenError> {
    let lat = faces.lattice();
    let mask = lat.boundary_mask();
    let op = faces.assemble(true);
    let rhs: Vec<f64> = g.iter().zip(&mask).map(|(v, b)| if *b { 0.0 } else { *v }).collect();
    let (u, report) = solve_linear(&op, &rhs, opts)?;
    let energy = faces.energy(&u);
    let work = rhs.iter().zip(&u).map(|(g, u)| g * u).sum::<f64>() * lat.cell_volume();
    let energy_defect = if energy == 0.0 { 0.0 } else { (energy + work).abs() / energy.abs() };
    Ok(Solution {
        u: ScalarField::new(lat.clone(), u)?,
        report,
        energy_defect,
    })
}

/// Solves `div(Â(x)∇u₀) = f·w(x)` on the box grid.
pub fn solve_effective(pt: &PiecewiseTensor, f: &Source, grid: &BoxGrid, opts: &SolveOptions) -> Result<Solution, HomogenError> {
    if grid.dim() != pt.dim {
        return Err(HomogenError::Config(format!("grid has d = {}, tensor d = {}", grid.dim(), pt.dim)));
    }
    let lat = grid.lattice();
    let faces = FaceCoefficients::from_fn(lat, |mid, axis| pt.face(mid, axis));
    let d = lat.dim();
    let g: Vec<f64> = (0..lat.len())
        .map(|p| {
            let x = lat.coord(p);
            f.eval(&x[..d]) * pt.source_weight(x[0])
        })
        .collect();
    solve_divform(&faces, &g, opts)
}

/// `B = ã + φ` and `m` sampled on the lattice `ℤᵈ/res` of the fast variable.
/// Inside `|y₁| ≤ R` the values come from the slab; outside from the periodic
/// pieces, `B = q±(ã± + φ±) − M±` and `m = q±m±`.
#[derive(Debug, Clone)]
pub struct SampledMedium {
    res: usize,
    /// `R·res`, or `None` without an interface slab.
    half_rows: Option<usize>,
    slab_b: Vec<Tensor>,
    slab_m: Vec<f64>,
    plus_b: Vec<Tensor>,
    plus_m: Vec<f64>,
    minus_b: Vec<Tensor>,
    minus_m: Vec<f64>,
    q_plus: f64,
    q_minus: f64,
    m_plus: Tensor,
    m_minus: Tensor,
}

fn stride_of(n: usize, res: usize) -> Result<usize, HomogenError> {
    if res == 0 || n % res != 0 {
        return Err(HomogenError::Config(format!(
            "sampling resolution {res} must divide the cell resolution {n}"
        )));
    }
    Ok(n / res)
}

fn sample_cell(cell: &CellResult, res: usize) -> Result<(Vec<Tensor>, Vec<f64>), HomogenError> {
    let g = &cell.measure.grid;
    if g.dim() != 2 {
        return Err(HomogenError::Config("the convergence study runs in d = 2".into()));
    }
    let s = stride_of(g.n(), res)?;
    let lat = g.lattice();
    let mut b = Vec::with_capacity(res * res);
    let mut m = Vec::with_capacity(res * res);
    for j1 in 0..res {
        for j2 in 0..res {
            let p = lat.index(&[j1 * s, j2 * s]);
            let mut t = cell.transformed.a_tilde[p];
            let phi = cell.flux_corrector.at(p);
            for i in 0..2 {
                for j in 0..2 {
                    t[i][j] += phi[i][j];
                }
            }
            b.push(t);
            m.push(cell.measure.values()[p]);
        }
    }
    Ok((b, m))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl SampledMedium {
    /// A purely periodic medium (no interface).
    pub fn periodic(cell: &CellResult, res: usize) -> Result<Self, HomogenError> {
        let (b, m) = sample_cell(cell, res)?;
        Ok(Self {
            res,
            half_rows: None,
            slab_b: Vec::new(),
            slab_m: Vec::new(),
            plus_b: b.clone(),
            plus_m: m.clone(),
            minus_b: b,
            minus_m: m,
            q_plus: 1.0,
            q_minus: 1.0,
            m_plus: [[0.0; MAX_DIM]; MAX_DIM],
            m_minus: [[0.0; MAX_DIM]; MAX_DIM],
        })
    }

    /// The interface medium built from the slab solve and its flux corrector.
    pub fn interface(plus: &CellResult, minus: &CellResult, iface: &InterfaceResult, res: usize) -> Result<Self, HomogenError> {
        let corr = iface
            .corrector
            .as_ref()
            .ok_or_else(|| HomogenError::Config("the interface flux corrector is missing (d ≠ 2)".into()))?;
        let grid = &iface.slab.grid;
        let s = stride_of(grid.nt(), res)?;
        let rr = grid.r() * res as f64;
        if (rr - rr.round()).abs() > 1e-9 {
            return Err(HomogenError::Config(format!("R·res = {rr} must be an integer")));
        }
        let half_rows = rr.round() as usize;
        let lat = grid.lattice();
        let mut slab_b = Vec::with_capacity((2 * half_rows + 1) * res);
        let mut slab_m = Vec::with_capacity((2 * half_rows + 1) * res);
        for j1 in 0..=2 * half_rows {
            for j2 in 0..res {
                let p = lat.index(&[j1 * s, j2 * s]);
                let mut t = corr.transformed.a_tilde[p];
                let psi = corr.psi.values()[p];
                t[0][1] -= psi;
                t[1][0] += psi;
                slab_b.push(t);
                slab_m.push(iface.slab.values()[p]);
            }
        }
        let (plus_b, plus_m) = sample_cell(plus, res)?;
        let (minus_b, minus_m) = sample_cell(minus, res)?;
        let lift = |m: [[f64; 2]; 2]| {
            let mut t = [[0.0; MAX_DIM]; MAX_DIM];
            for i in 0..2 {
                t[i][..2].copy_from_slice(&m[i]);
            }
            t
        };
        Ok(Self {
            res,
            half_rows: Some(half_rows),
            slab_b,
            slab_m,
            plus_b,
            plus_m,
            minus_b,
            minus_m,
            q_plus: iface.slab.q_plus,
            q_minus: iface.slab.q_minus,
            m_plus: lift(corr.m_plus),
            m_minus: lift(corr.m_minus),
        })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    /// `(B, m)` at `y = (i₁, i₂)/res`.
    pub fn at(&self, i1: i64, i2: i64) -> (Tensor, f64) {
        let res = self.res as i64;
        let j2 = i2.rem_euclid(res) as usize;
        if let Some(h) = self.half_rows {
            if i1.unsigned_abs() as usize <= h {
                let k = (i1 + h as i64) as usize * self.res + j2;
                return (self.slab_b[k], self.slab_m[k]);
            }
        }
        let k = i1.rem_euclid(res) as usize * self.res + j2;
        let (b, m, q, shift) = if i1 >= 0 {
            (&self.plus_b, &self.plus_m, self.q_plus, &self.m_plus)
        } else {
            (&self.minus_b, &self.minus_m, self.q_minus, &self.m_minus)
        };
        let mut t = scale(&b[k], q);
        for i in 0..2 {
            for j in 0..2 {
                t[i][j] -= shift[i][j];
            }
        }
        (t, q * m[k])
    }

    /// Effective tensors of the sampled periodic pieces (the cell problem on
    /// the `res`-lattice) and the mean of the sampled densities as source weights.
    pub fn effective(&self, opts: &SolveOptions) -> Result<PiecewiseTensor, HomogenError> {
        let lat = Lattice::torus(2, self.res);
        let plus = effective_tensor_nodal(&lat, &self.plus_b, opts)?;
        let minus = if self.plus_b == self.minus_b {
            plus.clone()
        } else {
            effective_tensor_nodal(&lat, &self.minus_b, opts)?
        };
        Ok(PiecewiseTensor::new(2, plus.a_hat, minus.a_hat, self.q_plus, self.q_minus)
            .with_weights(self.q_plus * mean(&self.plus_m), self.q_minus * mean(&self.minus_m))
            .with_shifts(scale(&self.m_plus, -1.0), scale(&self.m_minus, -1.0)))
    }
}

/// Box grid for `ε`: `N = res/ε` intervals, `N` even so `x₁ = 0` is a node row.
pub fn grid_for(eps: f64, res: usize) -> Result<BoxGrid, HomogenError> {
    if res < 8 {
        return Err(HomogenError::Resolution {
            eps,
            detail: format!("{res} samples per cell; at least 8 are required (h ≤ ε/8)"),
        });
    }
    let n = res as f64 / eps;
    let ni = n.round();
    if (n - ni).abs() > 1e-9 || ni as usize % 2 != 0 {
        return Err(HomogenError::Resolution {
            eps,
            detail: format!("res/ε = {n} must be an even integer"),
        });
    }
    Ok(BoxGrid::new(2, ni as usize)?)
}

/// Solves `div(B(x/ε)∇u_ε) = f·m(x/ε)` with face values averaged from nodes.
pub fn solve_oscillating(medium: &SampledMedium, f: &Source, eps: f64, opts: &SolveOptions) -> Result<(BoxGrid, Solution), HomogenError> {
    let grid = grid_for(eps, medium.res())?;
    let lat = grid.lattice();
    let half = (grid.n() / 2) as i64;
    let mut nodal = Vec::with_capacity(lat.len());
    let mut g = Vec::with_capacity(lat.len());
    for p in 0..lat.len() {
        let idx = lat.multi(p);
        let (b, m) = medium.at(idx[0] as i64 - half, idx[1] as i64 - half);
        nodal.push(b);
        let x = lat.coord(p);
        g.push(f.eval(&x[..2]) * m);
    }
    let faces = FaceCoefficients::from_nodal(lat, &nodal);
    let sol = solve_divform(&faces, &g, opts)?;
    Ok((grid, sol))
}

/// Error norms between two fields on the same box grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorNorms {
    pub l2: f64,
    pub linf: f64,
    /// Over nodes at distance ≥ `collar` from `∂Ω`.
    pub interior_linf: f64,
    /// Interior nodes that also have `|x₁| ≥ far`.
    pub far_linf: f64,
}

pub fn error_norms(a: &ScalarField, b: &ScalarField, collar: f64, far: f64) -> ErrorNorms {
    let lat = a.lattice();
    let d = lat.dim();
    let mut l2 = 0.0;
    let mut linf: f64 = 0.0;
    let mut interior: f64 = 0.0;
    let mut far_max: f64 = 0.0;
    for p in 0..lat.len() {
        let e = (a.values()[p] - b.values()[p]).abs();
        l2 += e * e;
        linf = linf.max(e);
        let x = lat.coord(p);
        let dist = x[..d].iter().map(|v| 0.5 - v.abs()).fold(f64::INFINITY, f64::min);
        if dist >= collar - 1e-12 {
            interior = interior.max(e);
            if x[0].abs() >= far - 1e-12 {
                far_max = far_max.max(e);
            }
        }
    }
    ErrorNorms {
        l2: (l2 * lat.cell_volume()).sqrt(),
        linf,
        interior_linf: interior,
        far_linf: far_max,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// Intervals per axis.
    pub grid: usize,
    pub unknowns: usize,
    pub errors: ErrorNorms,
    pub iterations: usize,
    pub effective_iterations: usize,
    pub energy_defect: f64,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Budget {
    pub max_seconds: f64,
    pub max_unknowns: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            max_seconds: 600.0,
            max_unknowns: 513 * 513,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceOptions {
    pub eps: Vec<f64>,
    pub res: usize,
    pub solve: SolveOptions,
    pub budget: Budget,
    pub collar: f64,
    pub far: f64,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        Self {
            eps: vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0],
            res: 8,
            solve: SolveOptions::with_tol(1e-11),
            budget: Budget::default(),
            collar: 0.125,
            far: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceExperiment {
    pub source: String,
    pub effective: PiecewiseTensor,
    pub rows: Vec<ConvergenceRow>,
    /// Log-log fit of interior-L∞ error against ε.
    pub rate: RateFit,
    pub rate_l2: RateFit,
    pub rate_far: RateFit,
    /// Errors below this count as numerical zero.
    pub floor: f64,
    pub monotone: bool,
    /// Set when the budget stopped the sweep early.
    pub truncated: Option<String>,
}

impl ConvergenceExperiment {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,grid,l2,linf,interior_linf,far_linf,iterations,seconds\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:e},{:e},{:e},{:e},{},{:.3}\n",
                r.eps, r.grid, r.errors.l2, r.errors.linf, r.errors.interior_linf, r.errors.far_linf, r.iterations, r.seconds
            ));
        }
        s
    }

    /// Monotone errors with a non-degenerate slope in `band`, or every error at the floor.
    pub fn rate_in(&self, band: (f64, f64)) -> bool {
        if self.truncated.is_some() || self.rows.len() < 3 {
            return false;
        }
        if self.rate.degenerate {
            return self.rows.iter().all(|r| r.errors.interior_linf <= self.floor);
        }
        self.monotone && self.rate.slope >= band.0 && self.rate.slope <= band.1
    }
}

/// Runs the oscillating and effective solves for each `ε` (descending) and
/// fits the rates.
pub fn convergence_study(medium: &SampledMedium, f: &Source, opts: &ConvergenceOptions) -> Result<ConvergenceExperiment, HomogenError> {
    if opts.eps.len() < 3 {
        return Err(HomogenError::Config("the ε list needs at least three entries".into()));
    }
    if opts.eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(HomogenError::Config("the ε list must be strictly descending".into()));
    }
    let effective = medium.effective(&opts.solve)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut truncated = None;
    let mut peak: f64 = 0.0;
    for &eps in &opts.eps {
        let grid = grid_for(eps, medium.res())?;
        let unknowns = grid.lattice().len();
        if unknowns > opts.budget.max_unknowns {
            truncated = Some(format!(
                "ε = {eps} needs {unknowns} unknowns (budget {})",
                opts.budget.max_unknowns
            ));
            break;
        }
        if start.elapsed().as_secs_f64() > opts.budget.max_seconds {
            truncated = Some(format!("time budget of {} s exhausted before ε = {eps}", opts.budget.max_seconds));
            break;
        }
        let t = Instant::now();
        let (grid, osc) = solve_oscillating(medium, f, eps, &opts.solve)?;
        let eff = solve_effective(&effective, f, &grid, &opts.solve)?;
        peak = peak.max(eff.u.sup_norm());
        rows.push(ConvergenceRow {
            eps,
            grid: grid.n(),
            unknowns,
            errors: error_norms(&osc.u, &eff.u, opts.collar, opts.far),
            iterations: osc.report.iterations,
            effective_iterations: eff.report.iterations,
            energy_defect: osc.energy_defect,
            seconds: t.elapsed().as_secs_f64(),
        });
        log::info!("ε = {eps}: grid {} done in {:.1} s", grid.n(), t.elapsed().as_secs_f64());
    }
    let floor = 100.0 * opts.solve.tol * peak.max(f64::MIN_POSITIVE);
    let eps: Vec<f64> = rows.iter().map(|r| r.eps).collect();
    let pick = |f: fn(&ErrorNorms) -> f64| rows.iter().map(|r| f(&r.errors)).collect::<Vec<f64>>();
    let interior = pick(|e| e.interior_linf);
    let monotone = interior.windows(2).all(|w| w[1] < w[0]);
    Ok(ConvergenceExperiment {
        source: f.describe(),
        effective,
        rate: rate_fit(&eps, &interior, floor),
        rate_l2: rate_fit(&eps, &pick(|e| e.l2), floor),
        rate_far: rate_fit(&eps, &pick(|e| e.far_linf), floor),
        floor,
        monotone,
        truncated,
        rows,
    })
}

#[cfg(test)]
mod tests;
