//! The flat interface `{y₁ = 0}` between two periodic structures: the
//! compatibility constant `q₋`, the truncated-slab measure `m_R`, the
//! deviation `v`, exponential decay fits and the interface flux corrector.

mod decay;

use serde::Serialize;
use thiserror::Error;

pub use decay::{decay_fit, fit_exponential, DecayFit, ExpFit, Side, SliceProfile};

use crate::cell::{transformed, CellError, CellResult, InvariantMeasure, TransformedCoefficients};
use crate::fields::{smoothstep, CoefficientField, Coefficients, FieldError};
use crate::grid::{
    adjoint, assemble_nondiv, slice_integral, BoundaryRows, GridError, PositivityReport, ScalarField, SlabGrid,
};
use crate::solver::{solve_linear_from, SolveOptions, SolveReport, SolverError, SparseMatrix};

#[derive(Debug, Error)]
pub enum InterfaceError {
    #[error("the interface analysis requires b₁ ≡ 0 (no drift across the interface); found max |b₁| = {0:.3e}")]
    NormalDrift(f64),
    #[error(
        "slice integrals of a₁₁m on the {side} side vary by {variation:.3e} relative (tolerance {tol:.1e}); \
         the slice-flux constancy check failed"
    )]
    FluxVariation { side: &'static str, variation: f64, tol: f64 },
    #[error("{0}")]
    Unaligned(String),
    #[error("the interface flux corrector is built in d = 2 only (got d = {0})")]
    Dimension(usize),
    #[error(
        "slab solution leaves its boundary-data range by {excess:.3e} (tolerance {tol:.3e}) although the \
         adjoint stencil is monotone; the assembly is broken"
    )]
    MaxPrinciple { excess: f64, tol: f64 },
    #[error("source f reaches {value:.3e} outside the interface band (tolerance {tol:.3e})")]
    Support { value: f64, tol: f64 },
    #[error("slice means of b̃₁ reach {value:.3e} (tolerance {tol:.1e}); slab flux constancy failed")]
    SliceMean { value: f64, tol: f64 },
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Cutoff of the plus side: 0 for `y₁ ≤ 0`, 1 for `y₁ ≥ 1`.
pub fn cutoff_plus(y1: f64) -> f64 {
    smoothstep(y1)
}

/// Mirror of [`cutoff_plus`].
pub fn cutoff_minus(y1: f64) -> f64 {
    smoothstep(-y1)
}

/// Fails unless `b₁` vanishes on both pieces and in the strip.
pub fn require_normal_drift_free(field: &CoefficientField) -> Result<(), InterfaceError> {
    let rep = field.validate(16);
    if rep.max_b1 > 1e-12 {
        return Err(InterfaceError::NormalDrift(rep.max_b1));
    }
    Ok(())
}

/// Slice integrals `∫ a₁₁ m dy′` over the node rows `y₁ = k h` of a torus.
pub fn torus_slice_fluxes(coeffs: &dyn Coefficients, m: &InvariantMeasure) -> Result<Vec<f64>, InterfaceError> {
    let lat = m.grid.lattice();
    let d = lat.dim();
    let mut prod = Vec::with_capacity(lat.len());
    for (p, mv) in m.values().iter().enumerate() {
        prod.push(coeffs.eval(&lat.coord(p)[..d])?.a[0][0] * mv);
    }
    let f = ScalarField::new(lat.clone(), prod)?;
    (0..lat.axes[0].count).map(|k| Ok(slice_integral(&f, k)?)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QMinus {
    pub q_plus: f64,
    pub q_minus: f64,
    /// Mean slice integral of `a₊,₁₁ m₊`.
    pub flux_plus: f64,
    pub flux_minus: f64,
    /// `(max − min)/|mean|` of the slice integrals.
    pub variation_plus: f64,
    pub variation_minus: f64,
    pub tol: f64,
    /// `q₋` recomputed from three single slices.
    pub cross_check: Vec<f64>,
}

fn flux_stats(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, (hi - lo) / mean.abs())
}

/// `q₋ = q₊ ⟨∫a₊,₁₁m₊⟩ / ⟨∫a₋,₁₁m₋⟩`, after checking that each side's slice
/// integrals are constant to relative `tol`.
pub fn compute_q_minus(
    plus: (&dyn Coefficients, &InvariantMeasure),
    minus: (&dyn Coefficients, &InvariantMeasure),
    q_plus: f64,
    tol: f64,
) -> Result<QMinus, InterfaceError> {
    let fp = torus_slice_fluxes(plus.0, plus.1)?;
    let fm = torus_slice_fluxes(minus.0, minus.1)?;
    let (flux_plus, variation_plus) = flux_stats(&fp);
    let (flux_minus, variation_minus) = flux_stats(&fm);
    for (side, variation) in [("plus", variation_plus), ("minus", variation_minus)] {
        if !(variation <= tol) {
            return Err(InterfaceError::FluxVariation { side, variation, tol });
        }
    }
    let q_minus = q_plus * flux_plus / flux_minus;
    let cross_check = [0.0, 1.0 / 3.0, 2.0 / 3.0]
        .iter()
        .map(|t| {
            let kp = (t * fp.len() as f64) as usize;
            let km = (t * fm.len() as f64) as usize;
            q_plus * fp[kp] / fm[km]
        })
        .collect();
    Ok(QMinus {
        q_plus,
        q_minus,
        flux_plus,
        flux_minus,
        variation_plus,
        variation_minus,
        tol,
        cross_check,
    })
}

/// The periodic measures that supply the slab's boundary data.
#[derive(Debug, Clone, Copy)]
pub struct FarField<'a> {
    pub plus: &'a InvariantMeasure,
    pub minus: &'a InvariantMeasure,
    pub q_plus: f64,
    pub q_minus: f64,
}

impl FarField<'_> {
    /// `(m₊, m₋)` at every slab node, read off the torus grids.
    pub fn sample(&self, grid: &SlabGrid) -> Result<(Vec<f64>, Vec<f64>), InterfaceError> {
        let n = grid.lattice().len();
        let mut mp = Vec::with_capacity(n);
        let mut mm = Vec::with_capacity(n);
        for p in 0..n {
            let (Some(a), Some(b)) = (grid.torus_node(p, &self.plus.grid), grid.torus_node(p, &self.minus.grid)) else {
                return Err(InterfaceError::Unaligned(format!(
                    "slab node {:?} is not a node of the cell grids (n₊ = {}, n₋ = {}, h₁ = {})",
                    &grid.lattice().coord(p)[..grid.dim()],
                    self.plus.grid.n(),
                    self.minus.grid.n(),
                    grid.h1()
                )));
            };
            mp.push(self.plus.values()[a]);
            mm.push(self.minus.values()[b]);
        }
        Ok((mp, mm))
    }

    /// `q₊m₊ψ₊ + q₋m₋ψ₋` at every slab node.
    pub fn blend(&self, grid: &SlabGrid, mp: &[f64], mm: &[f64]) -> Vec<f64> {
        let s = grid.slice_len();
        (0..mp.len())
            .map(|p| {
                let y1 = grid.y1(p / s);
                self.q_plus * mp[p] * cutoff_plus(y1) + self.q_minus * mm[p] * cutoff_minus(y1)
            })
            .collect()
    }
}

/// Discrete weak maximum principle on a slab solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaxPrincipleCheck {
    pub data_min: f64,
    pub data_max: f64,
    pub min: f64,
    pub max: f64,
    pub tol: f64,
    /// How far the solution leaves `[data_min, data_max]` (0 if inside).
    pub excess: f64,
    pub passed: bool,
    pub stencil_monotone: bool,
    /// Largest interior column sum of `L_h` relative to `‖L_h‖∞`. The
    /// principle is guaranteed only when this vanishes.
    pub column_sum_defect: f64,
    pub guaranteed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsCheck {
    pub lower: f64,
    pub upper: f64,
    pub min: f64,
    pub max: f64,
    pub passed: bool,
}

/// Constancy of `∫ a₁₁ m_R` over every slice, against `q₊ ∫ a₊,₁₁ m₊`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxConstancy {
    pub reference: f64,
    pub max_abs_deviation: f64,
    pub max_rel_deviation: f64,
    #[serde(skip)]
    pub slice_flux: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SlabMeasure {
    #[serde(skip)]
    pub grid: SlabGrid,
    #[serde(skip)]
    pub field: ScalarField,
    #[serde(skip)]
    pub plus_values: Vec<f64>,
    #[serde(skip)]
    pub minus_values: Vec<f64>,
    #[serde(skip)]
    pub adjoint: SparseMatrix,
    pub r: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    /// Interior residual `‖(L_hᵀ m)_int‖₂ / (‖L_hᵀ‖∞ ‖m‖₂)`.
    pub residual: f64,
    pub min: f64,
    pub max: f64,
    pub solve: SolveReport,
    pub positivity: PositivityReport,
    pub max_principle: MaxPrincipleCheck,
    pub bounds: BoundsCheck,
    pub flux: FluxConstancy,
}

impl SlabMeasure {
    pub fn values(&self) -> &[f64] {
        self.field.values()
    }
}

fn a11_values(field: &dyn Coefficients, grid: &SlabGrid) -> Result<Vec<f64>, InterfaceError> {
    let lat = grid.lattice();
    let d = lat.dim();
    (0..lat.len()).map(|p| Ok(field.eval(&lat.coord(p)[..d])?.a[0][0])).collect()
}

fn slice_fluxes(grid: &SlabGrid, a11: &[f64], values: &[f64]) -> Vec<f64> {
    let w = grid.ht().powi(grid.dim() as i32 - 1);
    (0..grid.slices())
        .map(|k| grid.slice(k).map(|p| a11[p] * values[p]).sum::<f64>() * w)
        .collect()
}

/// Solves `L_hᵀ m_R = 0` in the slab interior with `m_R = q₊m₊` at `y₁ = R`
/// and `m_R = q₋m₋` at `y₁ = −R`.
pub fn solve_slab_measure(
    field: &CoefficientField,
    far: FarField<'_>,
    flux_plus: f64,
    grid: &SlabGrid,
    opts: &SolveOptions,
) -> Result<SlabMeasure, InterfaceError> {
    let lat = grid.lattice();
    let n = lat.len();
    let (mp, mm) = far.sample(grid)?;
    let guess = far.blend(grid, &mp, &mm);

    let asm = assemble_nondiv(field, lat, 1.0, BoundaryRows::Stencil)?;
    let lt = adjoint(&asm.matrix);
    let mask = lat.boundary_mask();
    let mut system = lt.with_identity_rows(&mask);
    let mut rhs = vec![0.0; n];
    for k in [0, grid.n1()] {
        for p in grid.slice(k) {
            rhs[p] = guess[p];
        }
    }
    // unit diagonal keeps the residual test meaningful across 1/h² rows
    let scale: Vec<f64> = system.diagonal().iter().map(|d| 1.0 / d).collect();
    system.scale_rows(&scale);
    // solve for the correction to the blended far field, so the tolerance is
    // relative to the interface source rather than to the boundary data
    let aw = system.matvec(&guess);
    let defect: Vec<f64> = (0..n).map(|p| rhs[p] * scale[p] - aw[p]).collect();
    let (dv, solve) = solve_linear_from(&system, &defect, &vec![0.0; n], opts)?;
    let m: Vec<f64> = guess.iter().zip(&dv).map(|(w, v)| w + v).collect();

    let lt_norm = lt.norm_inf();
    let lm = lt.matvec(&m);
    let int_res: f64 = lm.iter().zip(&mask).filter(|(_, b)| !**b).map(|(v, _)| v * v).sum::<f64>().sqrt();
    let residual = int_res / (lt_norm * m.iter().map(|v| v * v).sum::<f64>().sqrt());

    let field_m = ScalarField::new(lat.clone(), m)?;
    let (min, max) = (field_m.min(), field_m.max());

    // boundary data range and monotonicity of the adjoint rows
    let data: Vec<f64> = (0..n).filter(|&p| mask[p]).map(|p| rhs[p]).collect();
    let data_min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let data_max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-8 * (data_max - data_min) + 1e-12 * data_max.abs();
    let excess = (data_min - min).max(max - data_max).max(0.0);
    let column_sum_defect = (0..n)
        .filter(|&p| !mask[p])
        .map(|p| lt.row_sum(p).abs())
        .fold(0.0, f64::max)
        / lt_norm;
    let guaranteed = asm.positivity.passed && column_sum_defect <= 1e-10;
    let max_principle = MaxPrincipleCheck {
        data_min,
        data_max,
        min,
        max,
        tol,
        excess,
        passed: excess <= tol,
        stencil_monotone: asm.positivity.passed,
        column_sum_defect,
        guaranteed,
    };
    if guaranteed && excess > tol {
        return Err(InterfaceError::MaxPrinciple { excess, tol });
    }

    let lo = mp.iter().map(|v| far.q_plus * v).chain(mm.iter().map(|v| far.q_minus * v)).fold(f64::INFINITY, f64::min);
    let hi = mp.iter().map(|v| far.q_plus * v).chain(mm.iter().map(|v| far.q_minus * v)).fold(0.0, f64::max);
    let bounds = BoundsCheck {
        lower: 0.5 * lo,
        upper: 1.5 * hi,
        min,
        max,
        passed: min >= 0.5 * lo && max <= 1.5 * hi,
    };

    let a11 = a11_values(field, grid)?;
    let slice_flux = slice_fluxes(grid, &a11, field_m.values());
    let reference = far.q_plus * flux_plus;
    let max_abs_deviation = slice_flux.iter().map(|f| (f - reference).abs()).fold(0.0, f64::max);
    let flux = FluxConstancy {
        reference,
        max_abs_deviation,
        max_rel_deviation: max_abs_deviation / reference.abs(),
        slice_flux,
    };

    Ok(SlabMeasure {
        grid: grid.clone(),
        field: field_m,
        plus_values: mp,
        minus_values: mm,
        adjoint: lt,
        r: grid.r(),
        q_plus: far.q_plus,
        q_minus: far.q_minus,
        residual,
        min,
        max,
        solve,
        positivity: asm.positivity,
        max_principle,
        bounds,
        flux,
    })
}

/// `v = m_R − q₊m₊ψ₊ − q₋m₋ψ₋` and the source `f` of `L_hᵀ v = f`.
#[derive(Debug, Clone, Serialize)]
pub struct Deviation {
    #[serde(skip)]
    pub v: ScalarField,
    #[serde(skip)]
    pub f: ScalarField,
    pub v_sup: f64,
    pub f_sup: f64,
    /// `max |f|` outside `|y₁| ≤ 1 + 2h₁`.
    pub support_defect: f64,
    pub support_tol: f64,
    /// `sup_int |L_hᵀ v − f| / (‖L_hᵀ‖∞ · max m_R)`.
    pub residual: f64,
}

pub fn deviation_field(sm: &SlabMeasure, cell_residuals: (f64, f64)) -> Result<Deviation, InterfaceError> {
    let grid = &sm.grid;
    let lat = grid.lattice();
    let far_plus = sm.plus_values.iter().map(|v| v * v).sum::<f64>().sqrt() * sm.q_plus;
    let far_minus = sm.minus_values.iter().map(|v| v * v).sum::<f64>().sqrt() * sm.q_minus;
    let s = grid.slice_len();
    let w: Vec<f64> = (0..lat.len())
        .map(|p| {
            let y1 = grid.y1(p / s);
            sm.q_plus * sm.plus_values[p] * cutoff_plus(y1) + sm.q_minus * sm.minus_values[p] * cutoff_minus(y1)
        })
        .collect();
    let mask = lat.boundary_mask();
    let lw = sm.adjoint.matvec(&w);
    let f: Vec<f64> = lw.iter().zip(&mask).map(|(v, b)| if *b { 0.0 } else { -v }).collect();
    let v: Vec<f64> = sm.values().iter().zip(&w).map(|(m, w)| m - w).collect();

    let norm = sm.adjoint.norm_inf();
    let wmax = w.iter().copied().fold(0.0, f64::max);
    let support_tol = 10.0 * norm * (cell_residuals.0 * far_plus + cell_residuals.1 * far_minus) + 1e-13 * norm * wmax;
    let band = 1.0 + 2.0 * grid.h1();
    let support_defect = (0..lat.len())
        .filter(|&p| grid.y1(p / s).abs() > band)
        .map(|p| f[p].abs())
        .fold(0.0, f64::max);
    if support_defect > support_tol {
        return Err(InterfaceError::Support {
            value: support_defect,
            tol: support_tol,
        });
    }
    let lv = sm.adjoint.matvec(&v);
    let residual = (0..lat.len())
        .filter(|&p| !mask[p])
        .map(|p| (lv[p] - f[p]).abs())
        .fold(0.0, f64::max)
        / (norm * sm.max);
    let v = ScalarField::new(lat.clone(), v)?;
    let f = ScalarField::new(lat.clone(), f)?;
    Ok(Deviation {
        v_sup: v.sup_norm(),
        f_sup: f.sup_norm(),
        v,
        f,
        support_defect,
        support_tol,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxZero {
    /// `max |∫ a₁₁ v|` over slices with `|y₁| ≥ 1`.
    pub max: f64,
    /// The value on the two boundary slices.
    pub boundary: f64,
}

/// `∫_{slice} a₁₁ v` on every slice with `|y₁| ≥ 1`, as `(y₁, value)` pairs.
pub fn flux_zero_check(v: &ScalarField, field: &dyn Coefficients, grid: &SlabGrid) -> Result<(Vec<(f64, f64)>, FluxZero), InterfaceError> {
    let a11 = a11_values(field, grid)?;
    let flux = slice_fluxes(grid, &a11, v.values());
    let rows: Vec<(f64, f64)> = (0..grid.slices())
        .filter(|&k| grid.y1(k).abs() >= 1.0 - 1e-12)
        .map(|k| (grid.y1(k), flux[k]))
        .collect();
    let max = rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
    let boundary = flux[0].abs().max(flux[grid.n1()].abs());
    Ok((rows, FluxZero { max, boundary }))
}

/// Antisymmetric 2×2 matrix with lower entry `m21`.
fn antisymmetric(m21: f64) -> [[f64; 2]; 2] {
    [[0.0, -m21], [m21, 0.0]]
}

/// Stream function `Ψ` of `b̃` on a 2-D slab, `φ_b̃ = [[0, −Ψ], [Ψ, 0]]`.
#[derive(Debug, Clone, Serialize)]
pub struct InterfaceFluxCorrector {
    #[serde(skip)]
    pub psi: ScalarField,
    #[serde(skip)]
    pub transformed: TransformedCoefficients,
    /// `max |⟨b̃₁⟩_slice|`.
    pub slice_mean_b1: f64,
    /// `sup_int |∂₂Ψ − b̃₁|` with centered differences.
    pub tangential_residual: f64,
    /// `sup_int |∂₁Ψ + b̃₂|` with centered differences.
    pub normal_residual: f64,
    pub m_plus: [[f64; 2]; 2],
    pub m_minus: [[f64; 2]; 2],
    pub matching_plus: ExpFit,
    pub matching_minus: ExpFit,
    /// Sup over the fitting window of `|φ_b̃ − q±φ± + M±|`.
    pub matching_sup_plus: f64,
    pub matching_sup_minus: f64,
    #[serde(skip)]
    pub matching_profile: Vec<(f64, f64)>,
}

fn cumulative_trapezoid(values: &[f64], h: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Builds `Ψ` from `b̃` on the slab and fits the matching constants `M±`.
pub fn interface_flux_corrector(
    field: &CoefficientField,
    sm: &SlabMeasure,
    plus: &CellResult,
    minus: &CellResult,
    window: (f64, f64),
    floor: f64,
) -> Result<InterfaceFluxCorrector, InterfaceError> {
    let grid = &sm.grid;
    if grid.dim() != 2 {
        return Err(InterfaceError::Dimension(grid.dim()));
    }
    let lat = grid.lattice();
    let tc = transformed(field, lat, sm.values())?;
    let s = grid.slice_len();
    let nt = grid.nt();
    let ht = grid.ht();
    let h1 = grid.h1();
    let bmax = tc.b_tilde.iter().map(|b| b[0].abs().max(b[1].abs())).fold(0.0, f64::max);

    let mut slice_mean_b1: f64 = 0.0;
    let mut mean_b2 = Vec::with_capacity(grid.slices());
    let mut psi = vec![0.0; lat.len()];
    for k in 0..grid.slices() {
        let r = grid.slice(k);
        let b1: Vec<f64> = tc.b_tilde[r.clone()].iter().map(|b| b[0]).collect();
        let mean1 = b1.iter().sum::<f64>() / nt as f64;
        slice_mean_b1 = slice_mean_b1.max(mean1.abs());
        mean_b2.push(tc.b_tilde[r.clone()].iter().map(|b| b[1]).sum::<f64>() / nt as f64);
        let mut g: Vec<f64> = b1.iter().map(|v| v - mean1).collect();
        g.push(g[0]);
        let mut c = cumulative_trapezoid(&g, ht);
        c.pop();
        let cm = c.iter().sum::<f64>() / nt as f64;
        for (j, p) in r.enumerate() {
            psi[p] = c[j] - cm;
        }
    }
    let mean_tol = 1e-9 * bmax.max(1.0);
    if slice_mean_b1 > mean_tol {
        return Err(InterfaceError::SliceMean {
            value: slice_mean_b1,
            tol: mean_tol,
        });
    }

    // slice constant G(y₁) = −∫₀^{y₁} (⟨b̃₂⟩ − far-field mean drift)
    let beta_plus = plus.transformed.mean_b_tilde[1];
    let beta_minus = minus.transformed.mean_b_tilde[1];
    let integrand: Vec<f64> = (0..grid.slices())
        .map(|k| {
            let y1 = grid.y1(k);
            mean_b2[k] - sm.q_plus * cutoff_plus(y1) * beta_plus - sm.q_minus * cutoff_minus(y1) * beta_minus
        })
        .collect();
    let cum = cumulative_trapezoid(&integrand, h1);
    let k0 = grid.slice_at(0.0).ok_or_else(|| InterfaceError::Unaligned("y₁ = 0 is not a node row".into()))?;
    for k in 0..grid.slices() {
        let g = -(cum[k] - cum[k0]);
        for p in grid.slice(k) {
            psi[p] += g;
        }
    }

    let d1 = crate::grid::gradient(lat, &psi, 0);
    let d2 = crate::grid::gradient(lat, &psi, 1);
    let mut tangential_residual: f64 = 0.0;
    let mut normal_residual: f64 = 0.0;
    for p in 0..lat.len() {
        if lat.is_boundary(p) {
            continue;
        }
        tangential_residual = tangential_residual.max((d2[p] - tc.b_tilde[p][0]).abs());
        normal_residual = normal_residual.max((d1[p] + tc.b_tilde[p][1]).abs());
    }

    // φ±₂₁ on slab nodes
    let phi_plus = plus.flux_corrector.component(1, 0);
    let phi_minus = minus.flux_corrector.component(1, 0);
    let mut offset_plus = vec![0.0; lat.len()];
    let mut offset_minus = vec![0.0; lat.len()];
    for p in 0..lat.len() {
        let a = grid.torus_node(p, &plus.measure.grid).ok_or_else(|| InterfaceError::Unaligned("slab and plus cell".into()))?;
        let b = grid.torus_node(p, &minus.measure.grid).ok_or_else(|| InterfaceError::Unaligned("slab and minus cell".into()))?;
        offset_plus[p] = psi[p] - sm.q_plus * phi_plus[a];
        offset_minus[p] = psi[p] - sm.q_minus * phi_minus[b];
    }
    let r = grid.r();
    let tail = |sel: &dyn Fn(f64) -> bool, vals: &[f64]| -> Vec<f64> {
        (0..lat.len()).filter(|&p| sel(grid.y1(p / s))).map(|p| vals[p]).collect()
    };
    let m21_plus = -median(tail(&|y| y >= 0.75 * r, &offset_plus));
    let m21_minus = -median(tail(&|y| y <= -0.75 * r, &offset_minus));

    let mut profile = Vec::with_capacity(grid.slices());
    for k in 0..grid.slices() {
        let y1 = grid.y1(k);
        let (vals, m) = if y1 >= 0.0 { (&offset_plus, m21_plus) } else { (&offset_minus, m21_minus) };
        let sup = grid.slice(k).map(|p| (vals[p] + m).abs()).fold(0.0, f64::max);
        profile.push((y1, sup));
    }
    let side_fit = |sign: f64| {
        let (t, v): (Vec<f64>, Vec<f64>) = profile
            .iter()
            .filter(|(y, _)| {
                let t = sign * y;
                t >= window.0 - 1e-12 && t <= window.1 + 1e-12
            })
            .map(|(y, v)| (sign * y, *v))
            .unzip();
        let sup = v.iter().copied().fold(0.0, f64::max);
        (fit_exponential(&t, &v, floor, 0.95), sup)
    };
    let (matching_plus, matching_sup_plus) = side_fit(1.0);
    let (matching_minus, matching_sup_minus) = side_fit(-1.0);

    Ok(InterfaceFluxCorrector {
        psi: ScalarField::new(lat.clone(), psi)?,
        transformed: tc,
        slice_mean_b1,
        tangential_residual,
        normal_residual,
        m_plus: antisymmetric(m21_plus),
        m_minus: antisymmetric(m21_minus),
        matching_plus,
        matching_minus,
        matching_sup_plus,
        matching_sup_minus,
        matching_profile: profile,
    })
}

/// Sup-difference of `m_R` and `m_{2R}` on `|y₁| ≤ R − 2`, for several `R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RStability {
    pub r: Vec<f64>,
    pub sup_diff: Vec<f64>,
    pub fit: ExpFit,
}

pub fn r_stability(
    field: &CoefficientField,
    far: FarField<'_>,
    flux_plus: f64,
    radii: &[f64],
    opts: &SolveOptions,
) -> Result<RStability, InterfaceError> {
    let n = far.plus.grid.n();
    let d = far.plus.grid.dim();
    let mut diffs = Vec::with_capacity(radii.len());
    for &r in radii {
        let short = SlabGrid::aligned(d, r, n)?;
        let long = SlabGrid::aligned(d, 2.0 * r, n)?;
        let a = solve_slab_measure(field, far, flux_plus, &short, opts)?;
        let b = solve_slab_measure(field, far, flux_plus, &long, opts)?;
        let shift = (r * n as f64).round() as usize;
        let mut sup: f64 = 0.0;
        for k in 0..short.slices() {
            if short.y1(k).abs() > r - 2.0 + 1e-12 {
                continue;
            }
            for (pa, pb) in short.slice(k).zip(long.slice(k + shift)) {
                sup = sup.max((a.values()[pa] - b.values()[pb]).abs());
            }
        }
        diffs.push(sup);
    }
    let fit = fit_exponential(radii, &diffs, 0.0, 0.0);
    Ok(RStability {
        r: radii.to_vec(),
        sup_diff: diffs,
        fit,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct InterfaceOptions {
    pub q_plus: f64,
    pub r: f64,
    pub slab: SolveOptions,
    /// Relative tolerance on the variation of slice fluxes, in units of `h²`.
    pub flux_gate: f64,
}

impl Default for InterfaceOptions {
    fn default() -> Self {
        Self {
            q_plus: 1.0,
            r: 8.0,
            slab: SolveOptions::with_tol(1e-13),
            flux_gate: 10.0,
        }
    }
}

/// Everything the interface stage produces.
#[derive(Debug, Clone, Serialize)]
pub struct InterfaceResult {
    pub q: QMinus,
    pub slab: SlabMeasure,
    pub deviation: Deviation,
    pub flux_zero: FluxZero,
    pub decay_plus: DecayFit,
    pub decay_minus: DecayFit,
    pub corrector: Option<InterfaceFluxCorrector>,
    #[serde(skip)]
    pub profile: SliceProfile,
    /// Values below this are treated as numerical zero in fits.
    pub floor: f64,
}

impl InterfaceResult {
    pub fn max_principle_ok(&self) -> bool {
        self.slab.max_principle.passed
    }
}

/// Runs `q₋ → m_R → (v, f) → decay fits → Ψ, M±` on an aligned slab.
pub fn analyze_interface(
    field: &CoefficientField,
    plus: &CellResult,
    minus: &CellResult,
    opts: &InterfaceOptions,
) -> Result<InterfaceResult, InterfaceError> {
    require_normal_drift_free(field)?;
    let n = plus.measure.grid.n();
    if minus.measure.grid.n() != n {
        return Err(InterfaceError::Unaligned(format!(
            "cell grids differ: n₊ = {n}, n₋ = {}",
            minus.measure.grid.n()
        )));
    }
    let h = plus.measure.grid.h();
    let q = compute_q_minus(
        (&field.plus, &plus.measure),
        (&field.minus, &minus.measure),
        opts.q_plus,
        opts.flux_gate * h * h,
    )?;
    let grid = SlabGrid::aligned(field.plus.dim(), opts.r, n)?;
    let far = FarField {
        plus: &plus.measure,
        minus: &minus.measure,
        q_plus: q.q_plus,
        q_minus: q.q_minus,
    };
    let slab = solve_slab_measure(field, far, q.flux_plus, &grid, &opts.slab)?;
    let deviation = deviation_field(&slab, (plus.measure.residual, minus.measure.residual))?;
    let (_, flux_zero) = flux_zero_check(&deviation.v, field, &grid)?;
    let profile = SliceProfile::new(&deviation.v, field, &grid)?;
    let peak = profile.sup_v.iter().copied().fold(0.0, f64::max);
    let floor = (100.0 * f64::EPSILON * peak).max(100.0 * opts.slab.tol * slab.max);
    let window = (2.0, opts.r - 2.0);
    let decay_plus = decay_fit(&profile, Side::Plus, window, floor);
    let decay_minus = decay_fit(&profile, Side::Minus, window, floor);
    let corrector = if grid.dim() == 2 {
        Some(interface_flux_corrector(field, &slab, plus, minus, window, floor)?)
    } else {
        None
    };
    Ok(InterfaceResult {
        q,
        slab,
        deviation,
        flux_zero,
        decay_plus,
        decay_minus,
        corrector,
        profile,
        floor,
    })
}

#[cfg(test)]
mod tests;
