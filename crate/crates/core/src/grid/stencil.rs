//! Second-order stencil for `L = a_ij ∂_ij + s·b_i ∂_i` and its exact adjoint.

use serde::Serialize;

use super::Lattice;
use crate::fields::{CoefSample, Coefficients, FieldError};
use crate::solver::SparseMatrix;

/// How rows of boundary nodes (first and last layer of a bounded axis) are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRows {
    /// Identity rows.
    Identity,
    /// The truncated stencil: entries reaching outside the lattice are
    /// dropped. Needed when the transpose is taken, since column entries of
    /// interior nodes live in boundary rows.
    Stencil,
}

/// Stencil positivity over all nodes: for each axis `i`,
/// `a_ii/h_i² − Σ_{j≠i} |a_ij|/(h_i h_j) ≥ |s·b_i|/(2h_i)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityReport {
    pub passed: bool,
    pub violations: usize,
    /// Smallest margin `lhs − rhs`, scaled by `h_i²`.
    pub worst_margin: f64,
    pub worst_node: usize,
    pub worst_coord: Vec<f64>,
    pub worst_axis: usize,
    /// A spacing at which the worst node would pass, if refinement can help.
    pub suggested_h: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub matrix: SparseMatrix,
    pub positivity: PositivityReport,
}

/// Assembles the non-divergence operator on `lattice` at unit scale. The
/// diagonal is minus the sum of the off-diagonal entries, so constants are
/// in the kernel of every interior row.
pub fn assemble_nondiv(
    field: &dyn Coefficients,
    lattice: &Lattice,
    drift_scale: f64,
    boundary: BoundaryRows,
) -> Result<Assembly, FieldError> {
    let d = lattice.dim();
    let n = lattice.len();
    let h: Vec<f64> = lattice.axes.iter().map(|a| a.spacing).collect();
    let mut rows = Vec::with_capacity(n);
    let mut worst = (f64::INFINITY, 0usize, 0usize, None::<f64>);
    let mut violations = 0;
    for p in 0..n {
        let y = lattice.coord(p);
        let c: CoefSample = field.eval(&y[..d])?;

        for i in 0..d {
            let lhs = c.a[i][i] / (h[i] * h[i])
                - (0..d)
                    .filter(|&j| j != i)
                    .map(|j| c.a[i][j].abs() / (h[i] * h[j]))
                    .sum::<f64>();
            let rhs = (drift_scale * c.b[i]).abs() / (2.0 * h[i]);
            let margin = (lhs - rhs) * h[i] * h[i];
            if margin < 0.0 {
                violations += 1;
            }
            if margin < worst.0 {
                // lhs ∝ 1/h², rhs ∝ 1/h under uniform refinement
                let suggest = if lhs > 0.0 && rhs > 0.0 {
                    Some(0.9 * h[i] * lhs / rhs)
                } else {
                    None
                };
                worst = (margin, p, i, suggest);
            }
        }

        if boundary == BoundaryRows::Identity && lattice.is_boundary(p) {
            rows.push(vec![(p, 1.0)]);
            continue;
        }
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(1 + 2 * d + 2 * d * d);
        let mut off_sum = 0.0;
        let mut push = |q: Option<usize>, v: f64, row: &mut Vec<(usize, f64)>| {
            off_sum += v;
            if let Some(q) = q {
                row.push((q, v));
            }
        };
        for i in 0..d {
            let aii = c.a[i][i] / (h[i] * h[i]);
            let drift = drift_scale * c.b[i] / (2.0 * h[i]);
            push(lattice.neighbor(p, i, 1), aii + drift, &mut row);
            push(lattice.neighbor(p, i, -1), aii - drift, &mut row);
            for j in i + 1..d {
                // 2 a_ij ∂_ij with the four-corner stencil
                let cij = c.a[i][j] / (2.0 * h[i] * h[j]);
                if cij == 0.0 {
                    continue;
                }
                push(lattice.shift(p, &[(i, 1), (j, 1)]), cij, &mut row);
                push(lattice.shift(p, &[(i, -1), (j, -1)]), cij, &mut row);
                push(lattice.shift(p, &[(i, 1), (j, -1)]), -cij, &mut row);
                push(lattice.shift(p, &[(i, -1), (j, 1)]), -cij, &mut row);
            }
        }
        row.push((p, -off_sum));
        rows.push(row);
    }
    let matrix = SparseMatrix::from_rows(n, rows).expect("lattice indices are in range");
    let (worst_margin, worst_node, worst_axis, suggested_h) = worst;
    let positivity = PositivityReport {
        passed: violations == 0,
        violations,
        worst_margin,
        worst_node,
        worst_coord: lattice.coord(worst_node)[..d].to_vec(),
        worst_axis,
        suggested_h: if violations > 0 { suggested_h } else { None },
    };
    if violations > 0 {
        log::warn!(
            "stencil positivity fails at {violations} node/axis pairs; worst at y = {:?} on axis {} (suggested h ≤ {:?})",
            positivity.worst_coord,
            worst_axis + 1,
            positivity.suggested_h
        );
    }
    Ok(Assembly { matrix, positivity })
}

/// The exact transpose, the discrete counterpart of the formal adjoint.
pub fn adjoint(lh: &SparseMatrix) -> SparseMatrix {
    lh.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{PeriodicCoefficients, Preset};
    use crate::grid::{ScalarField, TorusGrid};
    use crate::solver::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn preset(p: Preset) -> PeriodicCoefficients {
        PeriodicCoefficients::preset(p, 2).unwrap()
    }

    #[test]
    fn identity_gives_five_point_laplacian() {
        let g = TorusGrid::new(2, 8).unwrap();
        let a = assemble_nondiv(&preset(Preset::Identity), g.lattice(), 1.0, BoundaryRows::Identity).unwrap();
        let h2 = g.h() * g.h();
        for p in 0..g.len() {
            assert_eq!(a.matrix.get(p, p), -4.0 / h2);
            assert_eq!(a.matrix.row(p).0.len(), 5);
            assert!(a.matrix.row_sum(p).abs() < 1e-13 / h2);
        }
        assert!(a.positivity.passed);
        assert_eq!(adjoint(&a.matrix), a.matrix);
    }

    #[test]
    fn constants_in_kernel_for_every_preset() {
        let g = TorusGrid::new(2, 16).unwrap();
        for p in Preset::ALL {
            let a = assemble_nondiv(&preset(p), g.lattice(), 1.0, BoundaryRows::Identity).unwrap();
            let ones = vec![1.0; g.len()];
            let scale = a.matrix.norm_inf();
            for v in a.matrix.matvec(&ones) {
                assert!(v.abs() <= 1e-13 * scale, "{p:?}: {v}");
            }
        }
    }

    #[test]
    fn sine_mode_second_order() {
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let g = TorusGrid::new(2, n).unwrap();
            let a = assemble_nondiv(&preset(Preset::Identity), g.lattice(), 1.0, BoundaryRows::Identity).unwrap();
            let u = ScalarField::from_fn(g.lattice(), |y| (2.0 * PI * y[0]).sin());
            let lu = a.matrix.matvec(u.values());
            let e = lu
                .iter()
                .zip(u.values())
                .map(|(l, v)| (l + 4.0 * PI * PI * v).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.9..=2.1).contains(&order), "{order}");
        }
    }

    #[test]
    fn discrete_duality() {
        let g = TorusGrid::new(2, 8).unwrap();
        let a = assemble_nondiv(&preset(Preset::Trig), g.lattice(), 1.0, BoundaryRows::Identity).unwrap();
        let at = adjoint(&a.matrix);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let u: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dot(&a.matrix.matvec(&u), &m);
            let rhs = dot(&u, &at.matvec(&m));
            assert!((lhs - rhs).abs() < 1e-12 * a.matrix.norm_inf());
        }
    }

    #[test]
    fn translation_commutes() {
        let n = 8;
        let g = TorusGrid::new(2, n).unwrap();
        let a = assemble_nondiv(&preset(Preset::Layered), g.lattice(), 1.0, BoundaryRows::Identity).unwrap();
        let l = g.lattice();
        let u = ScalarField::from_fn(l, |y| (2.0 * PI * y[1]).cos() + y[0] * (1.0 - y[0]));
        // shifting by n nodes is the identity map, so L_h(u∘shift) = (L_h u)∘shift
        let shifted: Vec<f64> = (0..l.len()).map(|p| u.values()[l.shift(p, &[(1, n as isize)]).unwrap()]).collect();
        assert_eq!(a.matrix.matvec(&shifted), a.matrix.matvec(u.values()));
    }

    #[test]
    fn positivity_violation_is_reported() {
        let strong = PeriodicCoefficients::from_expressions(2, &[vec!["1", "0"], vec!["0", "1"]], &["0", "40*cos(2*pi*y2)"])
            .unwrap();
        let g = TorusGrid::new(2, 8).unwrap();
        let a = assemble_nondiv(&strong, g.lattice(), 1.0, BoundaryRows::Identity).unwrap();
        assert!(!a.positivity.passed);
        assert_eq!(a.positivity.worst_axis, 1);
        let h = a.positivity.suggested_h.unwrap();
        assert!(h < g.h());
        // and at the suggested spacing the check passes
        let n = (1.0 / h).ceil() as usize;
        let fine = TorusGrid::new(2, n).unwrap();
        assert!(assemble_nondiv(&strong, fine.lattice(), 1.0, BoundaryRows::Identity).unwrap().positivity.passed);
    }
}
