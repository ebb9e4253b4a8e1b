//! Sparse storage, Krylov solvers, kernel (invariant-measure) solves and
//! periodic Poisson solves.

mod krylov;
mod sparse;

use web_time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Lattice, ScalarField};
pub use sparse::SparseMatrix;

pub(crate) use krylov::norm;
#[cfg(test)]
pub(crate) use krylov::dot;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("entry ({row}, {col}) outside a {nrows}×{ncols} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{method} did not reach tolerance {tol:.1e} after {iterations} iterations (best relative residual {residual:.3e})")]
    NotConverged {
        method: String,
        iterations: usize,
        residual: f64,
        tol: f64,
        best: Vec<f64>,
    },
    #[error("kernel is not one-dimensional (residual {residual:.3e} after the bordered solve); refine the grid")]
    KernelDimension { residual: f64 },
    #[error("measure has nonpositive entry {min:.3e} at node {node}")]
    Positivity { min: f64, node: usize },
    #[error("right-hand side has mean {mean:.3e}, above the compatibility tolerance {tol:.1e}")]
    Incompatible { mean: f64, tol: f64 },
    #[error("grid is not a torus")]
    NotPeriodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 40_000,
            restart: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub method: String,
    pub iterations: usize,
    /// Recomputed from the returned solution.
    pub relative_residual: f64,
    /// Wall time. Kept out of serialized output so summaries are reproducible.
    #[serde(skip)]
    pub seconds: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn jacobi(m: &SparseMatrix, warnings: &mut Vec<String>) -> Vec<f64> {
    let diag = m.diagonal();
    let zeros = diag.iter().filter(|d| **d == 0.0).count();
    if zeros > 0 {
        let msg = format!("{zeros} zero diagonal entries; Jacobi uses 1 on those rows");
        log::debug!("{msg}");
        warnings.push(msg);
    }
    diag.iter().map(|&d| if d == 0.0 { 1.0 } else { 1.0 / d }).collect()
}

/// Solves `M x = rhs` to relative residual `opts.tol` with Jacobi-preconditioned
/// BiCGStab, falling back to restarted GMRES.
pub fn solve_linear(m: &SparseMatrix, rhs: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, SolveReport), SolverError> {
    solve_linear_from(m, rhs, &vec![0.0; rhs.len()], opts)
}

/// As [`solve_linear`], starting from `x0`.
pub fn solve_linear_from(
    m: &SparseMatrix,
    rhs: &[f64],
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    if m.nrows() != m.ncols() || rhs.len() != m.nrows() || x0.len() != m.ncols() {
        return Err(SolverError::Dimension(format!(
            "matrix {}×{}, rhs {}, guess {}",
            m.nrows(),
            m.ncols(),
            rhs.len(),
            x0.len()
        )));
    }
    let start = Instant::now();
    let mut warnings = Vec::new();
    if norm(rhs) == 0.0 {
        return Ok((
            vec![0.0; rhs.len()],
            SolveReport {
                method: "trivial".into(),
                iterations: 0,
                relative_residual: 0.0,
                seconds: start.elapsed().as_secs_f64(),
                warnings,
            },
        ));
    }
    let inv_diag = jacobi(m, &mut warnings);
    let run = krylov::bicgstab(m, rhs, x0, &inv_diag, opts.tol, opts.max_iter);
    let (run, method) = if run.converged {
        (run, "bicgstab+jacobi")
    } else {
        log::debug!(
            "BiCGStab stopped at residual {:.3e} after {} iterations; trying GMRES",
            run.residual,
            run.iterations
        );
        warnings.push(format!(
            "BiCGStab stalled at residual {:.3e}; restarted GMRES fallback",
            run.residual
        ));
        let first = run.iterations;
        let g = krylov::gmres(m, rhs, &run.x, &inv_diag, opts.tol, opts.max_iter, opts.restart);
        let g = krylov::Run {
            iterations: g.iterations + first,
            ..g
        };
        let better = if g.residual <= run.residual { g } else { run };
        (better, "gmres+jacobi")
    };
    if !run.converged {
        return Err(SolverError::NotConverged {
            method: method.into(),
            iterations: run.iterations,
            residual: run.residual,
            tol: opts.tol,
            best: run.x,
        });
    }
    Ok((
        run.x,
        SolveReport {
            method: method.into(),
            iterations: run.iterations,
            relative_residual: run.residual,
            seconds: start.elapsed().as_secs_f64(),
            warnings,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Arithmetic mean of the entries is one (unit mass on a unit-volume grid).
    MeanOne,
    SumOne,
}

/// Kernel vector of `M` (typically `L_hᵀ` on a torus), via the bordered
/// system `[M, 1; 1ᵀ, 0]`.
///
/// The returned report's `relative_residual` is the scale-free quantity
/// `‖M m‖₂ / (‖M‖∞ ‖m‖₂)`, which must not exceed `opts.tol`.
pub fn solve_nullspace(
    m: &SparseMatrix,
    normalization: Normalization,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport), SolverError> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(SolverError::Dimension(format!("{}×{} is not square", n, m.ncols())));
    }
    let start = Instant::now();
    let ones = vec![1.0; n];
    let b = m.bordered(&ones, &ones);
    let target = match normalization {
        Normalization::MeanOne => n as f64,
        Normalization::SumOne => 1.0,
    };
    let mut rhs = vec![0.0; n + 1];
    rhs[n] = target;
    let scale = m.norm_inf().max(f64::MIN_POSITIVE);
    // ‖m‖ ≈ target/√n for a near-uniform density
    let mut inner = SolveOptions {
        tol: (opts.tol * scale / (n as f64).sqrt()).min(1e-3),
        ..*opts
    };
    let mut x = vec![0.0; n + 1];
    x[..n].iter_mut().for_each(|v| *v = target / n as f64);
    let mut report = None;
    let mut achieved = f64::INFINITY;
    let mut iterations = 0;
    for _ in 0..4 {
        let (sol, rep) = match solve_linear_from(&b, &rhs, &x, &inner) {
            Ok(v) => v,
            Err(SolverError::NotConverged { residual, .. }) => {
                return Err(SolverError::KernelDimension { residual });
            }
            Err(e) => return Err(e),
        };
        x = sol;
        iterations += rep.iterations;
        let mv = m.matvec(&x[..n]);
        achieved = norm(&mv) / (scale * norm(&x[..n]));
        report = Some(rep);
        if achieved <= opts.tol {
            break;
        }
        inner.tol *= 0.01;
    }
    let mut rep = report.expect("at least one pass");
    if achieved > opts.tol {
        return Err(SolverError::KernelDimension { residual: achieved });
    }
    let mut mvals = x[..n].to_vec();
    let (node, min) = mvals
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let max = mvals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min <= 0.0 || !max.is_finite() {
        return Err(SolverError::Positivity { min, node });
    }
    // exact normalization
    let total: f64 = mvals.iter().sum();
    let factor = target / total;
    mvals.iter_mut().for_each(|v| *v *= factor);
    rep.iterations = iterations;
    rep.relative_residual = achieved;
    rep.method = format!("bordered {}", rep.method);
    rep.seconds = start.elapsed().as_secs_f64();
    Ok((mvals, rep))
}

/// The negative discrete Laplacian `−Δ_h` (5- or 7-point) on a periodic lattice.
pub fn neg_laplacian(lattice: &Lattice) -> SparseMatrix {
    let n = lattice.len();
    let d = lattice.dim();
    let rows = (0..n)
        .map(|p| {
            let mut row = Vec::with_capacity(2 * d + 1);
            let mut diag = 0.0;
            for k in 0..d {
                let w = 1.0 / (lattice.axes[k].spacing * lattice.axes[k].spacing);
                for off in [-1, 1] {
                    if let Some(q) = lattice.neighbor(p, k, off) {
                        row.push((q, -w));
                    }
                }
                diag += 2.0 * w;
            }
            row.push((p, diag));
            row
        })
        .collect();
    SparseMatrix::from_rows(n, rows).expect("lattice indices are in range")
}

/// Mean-zero periodic solution of `Δ_h u = rhs`.
///
/// A mean defect no larger than `tol · max(1, ‖rhs‖∞)` is removed; a larger
/// one is an incompatibility error.
pub fn solve_poisson_torus(rhs: &ScalarField, tol: f64) -> Result<(ScalarField, SolveReport), SolverError> {
    let lattice = rhs.lattice();
    if !lattice.axes.iter().all(|a| a.periodic) {
        return Err(SolverError::NotPeriodic);
    }
    let start = Instant::now();
    let vals = rhs.values();
    let n = vals.len();
    let mean = vals.iter().sum::<f64>() / n as f64;
    let sup = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let limit = tol * sup.max(1.0);
    if mean.abs() > limit {
        return Err(SolverError::Incompatible { mean, tol: limit });
    }
    // −Δ_h u = −(rhs − mean)
    let b: Vec<f64> = vals.iter().map(|v| -(v - mean)).collect();
    let a = neg_laplacian(lattice);
    let run = krylov::cg(&a, &b, tol, 20 * n + 100, true);
    let field = ScalarField::new(lattice.clone(), run.x.clone()).map_err(|e| SolverError::Dimension(e.to_string()))?;
    if !run.converged {
        return Err(SolverError::NotConverged {
            method: "cg".into(),
            iterations: run.iterations,
            residual: run.residual,
            tol,
            best: run.x,
        });
    }
    let mut warnings = Vec::new();
    if mean != 0.0 {
        warnings.push(format!("removed mean defect {mean:.3e}"));
    }
    Ok((
        field,
        SolveReport {
            method: "cg".into(),
            iterations: run.iterations,
            relative_residual: run.residual,
            seconds: start.elapsed().as_secs_f64(),
            warnings,
        },
    ))
}
