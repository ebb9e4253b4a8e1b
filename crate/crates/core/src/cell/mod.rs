//! Periodic cell quantities: invariant measures, centering, transformed
//! coefficients, flux correctors and homogenized tensors.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::fields::{Coefficients, FieldError, Tensor, Vector, MAX_DIM};
use crate::grid::divform::FaceCoefficients;
use crate::grid::{
    adjoint, assemble_nondiv, gradient, BoundaryRows, GridError, Lattice, PositivityReport, ScalarField, TorusGrid,
};
use crate::solver::{
    solve_linear, solve_nullspace, solve_poisson_torus, Normalization, SolveOptions, SolveReport, SolverError,
};

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("{0}")]
    Mismatch(String),
}

/// Positive, mean-one kernel vector of `L_hᵀ` on a torus grid.
#[derive(Debug, Clone, Serialize)]
pub struct InvariantMeasure {
    #[serde(skip)]
    pub grid: TorusGrid,
    #[serde(skip)]
    pub field: ScalarField,
    /// `‖L_hᵀ m‖₂ / (‖L_hᵀ‖∞ ‖m‖₂)`.
    pub residual: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub solve: SolveReport,
    pub positivity: PositivityReport,
}

impl InvariantMeasure {
    pub fn values(&self) -> &[f64] {
        self.field.values()
    }
}

pub fn invariant_measure(
    coeffs: &dyn Coefficients,
    grid: &TorusGrid,
    opts: &SolveOptions,
) -> Result<InvariantMeasure, CellError> {
    let asm = assemble_nondiv(coeffs, grid.lattice(), 1.0, BoundaryRows::Identity)?;
    let lt = adjoint(&asm.matrix);
    let (m, solve) = solve_nullspace(&lt, Normalization::MeanOne, opts)?;
    let field = ScalarField::new(grid.lattice().clone(), m)?;
    Ok(InvariantMeasure {
        grid: grid.clone(),
        residual: solve.relative_residual,
        min: field.min(),
        max: field.max(),
        mean: field.mean(),
        field,
        solve,
        positivity: asm.positivity,
    })
}

/// `(∫ b_i m)_i` by the rectangle rule on the torus.
pub fn centering_defect(coeffs: &dyn Coefficients, m: &InvariantMeasure) -> Result<Vec<f64>, CellError> {
    let lat = m.grid.lattice();
    let d = lat.dim();
    let mut acc = vec![0.0; d];
    for (p, mv) in m.values().iter().enumerate() {
        let c = coeffs.eval(&lat.coord(p)[..d])?;
        for i in 0..d {
            acc[i] += c.b[i] * mv;
        }
    }
    let n = lat.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// `ã = a m`, `β̃ = b m` and `b̃ = β̃ − div ã` on a lattice.
#[derive(Debug, Clone)]
pub struct TransformedCoefficients {
    pub lattice: Lattice,
    pub a_tilde: Vec<Tensor>,
    pub beta: Vec<Vector>,
    pub b_tilde: Vec<Vector>,
    pub m: Vec<f64>,
    /// Sup of the centered divergence of `b̃` over interior nodes.
    pub div_b_tilde: f64,
    /// Node average of each component of `b̃`.
    pub mean_b_tilde: Vec<f64>,
}

pub fn transformed(coeffs: &dyn Coefficients, lattice: &Lattice, m: &[f64]) -> Result<TransformedCoefficients, CellError> {
    let d = lattice.dim();
    let n = lattice.len();
    if m.len() != n {
        return Err(CellError::Mismatch(format!("measure has {} values, lattice {}", m.len(), n)));
    }
    let mut a_tilde = vec![[[0.0; MAX_DIM]; MAX_DIM]; n];
    let mut beta = vec![[0.0; MAX_DIM]; n];
    for p in 0..n {
        let c = coeffs.eval(&lattice.coord(p)[..d])?;
        for i in 0..d {
            for j in 0..d {
                a_tilde[p][i][j] = c.a[i][j] * m[p];
            }
            beta[p][i] = c.b[i] * m[p];
        }
    }
    let mut b_tilde = beta.clone();
    for i in 0..d {
        for j in 0..d {
            let comp: Vec<f64> = a_tilde.iter().map(|t| t[i][j]).collect();
            let g = gradient(lattice, &comp, j);
            for p in 0..n {
                b_tilde[p][i] -= g[p];
            }
        }
    }
    let mut div = vec![0.0; n];
    for i in 0..d {
        let comp: Vec<f64> = b_tilde.iter().map(|v| v[i]).collect();
        for (acc, g) in div.iter_mut().zip(gradient(lattice, &comp, i)) {
            *acc += g;
        }
    }
    let div_b_tilde = (0..n)
        .filter(|&p| !lattice.is_boundary(p))
        .fold(0.0f64, |a, p| a.max(div[p].abs()));
    let mean_b_tilde = (0..d)
        .map(|i| b_tilde.iter().map(|v| v[i]).sum::<f64>() / n as f64)
        .collect();
    Ok(TransformedCoefficients {
        lattice: lattice.clone(),
        a_tilde,
        beta,
        b_tilde,
        m: m.to_vec(),
        div_b_tilde,
        mean_b_tilde,
    })
}

/// Antisymmetric potential `φ` with `∂_j φ_ji = b̃_i − ⟨b̃_i⟩`, stored by its
/// strictly upper entries.
#[derive(Debug, Clone, Serialize)]
pub struct FluxCorrector {
    #[serde(skip)]
    pub lattice: Lattice,
    #[serde(skip)]
    upper: Vec<Vec<f64>>,
    /// Sup over nodes and components of `|∂_j φ_ji − (b̃_i − ⟨b̃_i⟩)|`.
    pub div_residual: f64,
    /// The means removed from `b̃` before the Poisson solves.
    pub removed_mean: Vec<f64>,
    pub solves: Vec<SolveReport>,
}

impl FluxCorrector {
    fn slot(d: usize, i: usize, j: usize) -> usize {
        // position of (i, j), i < j, in row-major strictly-upper order
        i * d - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    /// Values of `φ_ij` at every node.
    pub fn component(&self, i: usize, j: usize) -> Vec<f64> {
        let d = self.dim();
        if i == j {
            vec![0.0; self.lattice.len()]
        } else if i < j {
            self.upper[Self::slot(d, i, j)].clone()
        } else {
            self.upper[Self::slot(d, j, i)].iter().map(|v| -v).collect()
        }
    }

    /// `φ` at node `p` as a full matrix.
    pub fn at(&self, p: usize) -> Tensor {
        let d = self.dim();
        let mut t = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..d {
            for j in i + 1..d {
                let v = self.upper[Self::slot(d, i, j)][p];
                t[i][j] = v;
                t[j][i] = -v;
            }
        }
        t
    }
}

/// Builds `φ_ji = ∂_j f_i − ∂_i f_j` from periodic potentials `Δ_h f_i = b̃_i − ⟨b̃_i⟩`.
pub fn flux_corrector(tc: &TransformedCoefficients, poisson_tol: f64) -> Result<FluxCorrector, CellError> {
    let lat = &tc.lattice;
    if !lat.axes.iter().all(|a| a.periodic) {
        return Err(CellError::Mismatch("flux correctors need a torus grid".into()));
    }
    let d = lat.dim();
    let n = lat.len();
    let mut potentials = Vec::with_capacity(d);
    let mut solves = Vec::with_capacity(d);
    for i in 0..d {
        let mean = tc.mean_b_tilde[i];
        let rhs = ScalarField::new(lat.clone(), tc.b_tilde.iter().map(|v| v[i] - mean).collect())?;
        let (f, rep) = solve_poisson_torus(&rhs, poisson_tol)?;
        potentials.push(f.into_values());
        solves.push(rep);
    }
    // grads[i][j] = ∂_j f_i
    let grads: Vec<Vec<Vec<f64>>> = potentials
        .iter()
        .map(|f| (0..d).map(|j| gradient(lat, f, j)).collect())
        .collect();
    let mut upper = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            // φ_ij = ∂_i f_j − ∂_j f_i
            upper.push((0..n).map(|p| grads[j][i][p] - grads[i][j][p]).collect::<Vec<f64>>());
        }
    }
    let mut fc = FluxCorrector {
        lattice: lat.clone(),
        upper,
        div_residual: 0.0,
        removed_mean: tc.mean_b_tilde.clone(),
        solves,
    };
    let mut res: f64 = 0.0;
    for i in 0..d {
        let mut acc = vec![0.0; n];
        for j in 0..d {
            let g = gradient(lat, &fc.component(j, i), j);
            for p in 0..n {
                acc[p] += g[p];
            }
        }
        for p in 0..n {
            res = res.max((acc[p] - (tc.b_tilde[p][i] - tc.mean_b_tilde[i])).abs());
        }
    }
    fc.div_residual = res;
    Ok(fc)
}

/// Homogenized tensor with its correctors.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveTensor {
    pub dim: usize,
    /// `Â` (entries past the dimension are zero).
    pub a_hat: Tensor,
    /// The same average computed from nodal coefficients and centered
    /// corrector gradients; agrees with `a_hat` to second order.
    pub a_hat_nodal: Tensor,
    /// `max |Â_ij − Â_ji|`.
    pub asymmetry: f64,
    /// Smallest eigenvalue of the symmetric part.
    pub min_eigenvalue: f64,
    pub solves: Vec<SolveReport>,
    #[serde(skip)]
    pub correctors: Vec<Vec<f64>>,
    #[serde(skip)]
    pub faces: Option<FaceCoefficients>,
}

impl EffectiveTensor {
    /// Recomputes `Â` from stored correctors and face coefficients.
    pub fn recompute(&self) -> Option<Tensor> {
        let faces = self.faces.as_ref()?;
        Some(average_flux(faces, &self.correctors))
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.a_hat[i][..self.dim].to_vec()).collect()
    }
}

/// `Â e_k = ⟨B(∇χ_k + e_k)⟩` with fluxes on faces.
pub fn average_flux(faces: &FaceCoefficients, correctors: &[Vec<f64>]) -> Tensor {
    let lat = faces.lattice();
    let d = lat.dim();
    let n = lat.len() as f64;
    let mut a = [[0.0; MAX_DIM]; MAX_DIM];
    for (k, chi) in correctors.iter().enumerate() {
        for i in 0..d {
            let mut s = 0.0;
            for p in 0..lat.len() {
                s += faces.flux(chi, p, i).expect("periodic faces exist") + faces.row(p, i)[k];
            }
            a[i][k] = s / n;
        }
    }
    a
}

/// Homogenized tensor of `div(B ∇·)` for nodal `B = ã + φ`.
pub fn effective_tensor(
    tc: &TransformedCoefficients,
    phi: &FluxCorrector,
    opts: &SolveOptions,
) -> Result<EffectiveTensor, CellError> {
    let d = tc.lattice.dim();
    let nodal: Vec<Tensor> = (0..tc.lattice.len())
        .map(|p| {
            let f = phi.at(p);
            let mut b = tc.a_tilde[p];
            for i in 0..d {
                for j in 0..d {
                    b[i][j] += f[i][j];
                }
            }
            b
        })
        .collect();
    effective_tensor_nodal(&tc.lattice, &nodal, opts)
}

/// Homogenized tensor for nodal coefficients `B` on a torus lattice. The
/// periodic corrector problems `div(B(∇χ_k + e_k)) = 0` are solved with a
/// mean-zero border row.
pub fn effective_tensor_nodal(lattice: &Lattice, nodal: &[Tensor], opts: &SolveOptions) -> Result<EffectiveTensor, CellError> {
    if !lattice.axes.iter().all(|a| a.periodic) {
        return Err(CellError::Mismatch("cell problems need a torus grid".into()));
    }
    let d = lattice.dim();
    let n = lattice.len();
    let faces = FaceCoefficients::from_nodal(lattice, nodal);
    let op = faces.assemble(false);
    let ones = vec![1.0; n];
    let bordered = op.bordered(&ones, &ones);
    let mut correctors = Vec::with_capacity(d);
    let mut solves = Vec::with_capacity(d);
    for k in 0..d {
        let mut rhs: Vec<f64> = faces.column_divergence(k).into_iter().map(|v| -v).collect();
        rhs.push(0.0);
        let (mut x, rep) = solve_linear(&bordered, &rhs, opts)?;
        x.truncate(n);
        correctors.push(x);
        solves.push(rep);
    }
    let a_hat = average_flux(&faces, &correctors);

    let mut a_nodal = [[0.0; MAX_DIM]; MAX_DIM];
    for (k, chi) in correctors.iter().enumerate() {
        let grads: Vec<Vec<f64>> = (0..d).map(|j| gradient(lattice, chi, j)).collect();
        for i in 0..d {
            let mut s = 0.0;
            for p in 0..n {
                for j in 0..d {
                    let e = if j == k { 1.0 } else { 0.0 };
                    s += nodal[p][i][j] * (grads[j][p] + e);
                }
            }
            a_nodal[i][k] = s / n as f64;
        }
    }
    let mut asymmetry: f64 = 0.0;
    for i in 0..d {
        for j in 0..i {
            asymmetry = asymmetry.max((a_hat[i][j] - a_hat[j][i]).abs());
        }
    }
    let sym = DMatrix::from_fn(d, d, |i, j| 0.5 * (a_hat[i][j] + a_hat[j][i]));
    let min_eigenvalue = sym.symmetric_eigenvalues().min();
    Ok(EffectiveTensor {
        dim: d,
        a_hat,
        a_hat_nodal: a_nodal,
        asymmetry,
        min_eigenvalue,
        solves,
        correctors,
        faces: Some(faces),
    })
}

/// Everything the cell stage produces for one periodic piece.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub measure: InvariantMeasure,
    pub centering_defect: Vec<f64>,
    pub div_b_tilde: f64,
    pub mean_b_tilde: Vec<f64>,
    pub flux_corrector: FluxCorrector,
    pub effective: EffectiveTensor,
    #[serde(skip)]
    pub transformed: TransformedCoefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellOptions {
    pub measure: SolveOptions,
    pub corrector: SolveOptions,
    pub poisson_tol: f64,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self {
            measure: SolveOptions::with_tol(1e-13),
            corrector: SolveOptions::with_tol(1e-11),
            poisson_tol: 1e-11,
        }
    }
}

/// Runs the whole cell pipeline `m → (ã, b̃) → φ → Â`.
pub fn solve_cell(coeffs: &dyn Coefficients, grid: &TorusGrid, opts: &CellOptions) -> Result<CellResult, CellError> {
    let measure = invariant_measure(coeffs, grid, &opts.measure)?;
    let centering = centering_defect(coeffs, &measure)?;
    let tc = transformed(coeffs, grid.lattice(), measure.values())?;
    let phi = flux_corrector(&tc, opts.poisson_tol)?;
    let effective = effective_tensor(&tc, &phi, &opts.corrector)?;
    Ok(CellResult {
        measure,
        centering_defect: centering,
        div_b_tilde: tc.div_b_tilde,
        mean_b_tilde: tc.mean_b_tilde.clone(),
        flux_corrector: phi,
        effective,
        transformed: tc,
    })
}
