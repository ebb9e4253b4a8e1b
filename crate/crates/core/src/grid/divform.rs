//! Face-centered discretization of `div(B ∇u)` for a possibly nonsymmetric `B`.
//!
//! The flux through the face between `p` and `p + e_i` is
//! `F = Σ_j B_ij G_j`, with `G_i` the difference across the face and, for
//! `j ≠ i`, `G_j` the mean of the centered `j`-differences at both ends.
//! For constant antisymmetric `B` the operator vanishes identically.

use crate::fields::{Tensor, MAX_DIM};
use crate::solver::SparseMatrix;

use super::Lattice;

/// Row `i` of `B` on every `i`-face. Face `(p, i)` joins `p` and `p + e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCoefficients {
    lattice: Lattice,
    rows: Vec<Vec<[f64; MAX_DIM]>>,
}

impl FaceCoefficients {
    /// Arithmetic average of nodal tensors on each face.
    pub fn from_nodal(lattice: &Lattice, nodal: &[Tensor]) -> Self {
        assert_eq!(nodal.len(), lattice.len());
        let d = lattice.dim();
        let rows = (0..d)
            .map(|i| {
                (0..lattice.len())
                    .map(|p| {
                        let q = lattice.neighbor(p, i, 1).unwrap_or(p);
                        let mut r = [0.0; MAX_DIM];
                        for j in 0..d {
                            r[j] = 0.5 * (nodal[p][i][j] + nodal[q][i][j]);
                        }
                        r
                    })
                    .collect()
            })
            .collect();
        Self {
            lattice: lattice.clone(),
            rows,
        }
    }

    /// Face tensors from a function of the face midpoint and the face normal axis.
    pub fn from_fn(lattice: &Lattice, f: impl Fn(&[f64], usize) -> Tensor) -> Self {
        let d = lattice.dim();
        let rows = (0..d)
            .map(|i| {
                let half = 0.5 * lattice.axes[i].spacing;
                (0..lattice.len())
                    .map(|p| {
                        let mut y = lattice.coord(p);
                        y[i] += half;
                        let t = f(&y[..d], i);
                        let mut r = [0.0; MAX_DIM];
                        r[..d].copy_from_slice(&t[i][..d]);
                        r
                    })
                    .collect()
            })
            .collect();
        Self {
            lattice: lattice.clone(),
            rows,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// Row `i` of `B` on face `(p, i)`.
    pub fn row(&self, p: usize, i: usize) -> &[f64; MAX_DIM] {
        &self.rows[i][p]
    }

    // The flux through face (p, i) as a list of (node, weight) pairs.
    fn flux_weights(&self, p: usize, i: usize, out: &mut Vec<(usize, f64)>) -> bool {
        out.clear();
        let lat = &self.lattice;
        let Some(q) = lat.neighbor(p, i, 1) else {
            return false;
        };
        let d = lat.dim();
        let b = &self.rows[i][p];
        let hi = lat.axes[i].spacing;
        out.push((q, b[i] / hi));
        out.push((p, -b[i] / hi));
        for j in (0..d).filter(|&j| j != i) {
            if b[j] == 0.0 {
                continue;
            }
            let w = b[j] / (4.0 * lat.axes[j].spacing);
            for (node, sign) in [(p, 1.0), (q, 1.0)] {
                if let (Some(f), Some(bk)) = (lat.neighbor(node, j, 1), lat.neighbor(node, j, -1)) {
                    out.push((f, sign * w));
                    out.push((bk, -sign * w));
                }
            }
        }
        true
    }

    /// Flux through face `(p, i)` for the grid function `u`.
    pub fn flux(&self, u: &[f64], p: usize, i: usize) -> Option<f64> {
        let mut w = Vec::with_capacity(2 + 4 * MAX_DIM);
        if !self.flux_weights(p, i, &mut w) {
            return None;
        }
        Some(w.iter().map(|&(k, c)| c * u[k]).sum())
    }

    /// The operator `u ↦ div_h(B ∇_h u)`. With `dirichlet`, boundary nodes of
    /// bounded axes get identity rows and their columns are dropped, which
    /// imposes `u = 0` there.
    pub fn assemble(&self, dirichlet: bool) -> SparseMatrix {
        let lat = &self.lattice;
        let n = lat.len();
        let d = lat.dim();
        let mask = if dirichlet { lat.boundary_mask() } else { vec![false; n] };
        let mut w = Vec::with_capacity(2 + 4 * MAX_DIM);
        let rows = (0..n)
            .map(|p| {
                if mask[p] {
                    return vec![(p, 1.0)];
                }
                let mut row = Vec::with_capacity(1 + 4 * d * d);
                for i in 0..d {
                    let hi = lat.axes[i].spacing;
                    if self.flux_weights(p, i, &mut w) {
                        row.extend(w.iter().filter(|(k, _)| !mask[*k]).map(|&(k, c)| (k, c / hi)));
                    }
                    if let Some(b) = lat.neighbor(p, i, -1) {
                        if self.flux_weights(b, i, &mut w) {
                            row.extend(w.iter().filter(|(k, _)| !mask[*k]).map(|&(k, c)| (k, -c / hi)));
                        }
                    }
                }
                row
            })
            .collect();
        SparseMatrix::from_rows(n, rows).expect("lattice indices are in range")
    }

    /// `div_h(B e_k)` at every node: the right-hand side of the cell problem.
    pub fn column_divergence(&self, k: usize) -> Vec<f64> {
        let lat = &self.lattice;
        (0..lat.len())
            .map(|p| {
                (0..lat.dim())
                    .map(|i| {
                        let hi = lat.axes[i].spacing;
                        let plus = self.rows[i][p][k];
                        let minus = lat.neighbor(p, i, -1).map_or(plus, |b| self.rows[i][b][k]);
                        (plus - minus) / hi
                    })
                    .sum()
            })
            .collect()
    }

    /// Discrete energy `Σ_faces F_i G_i · vol`. For a solution of
    /// `div_h(B∇_h u) = g` with `u = 0` on the boundary it equals `−Σ g u · vol`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let lat = &self.lattice;
        let vol = lat.cell_volume();
        let mut e = 0.0;
        for i in 0..lat.dim() {
            let hi = lat.axes[i].spacing;
            for p in 0..lat.len() {
                if let (Some(q), Some(f)) = (lat.neighbor(p, i, 1), self.flux(u, p, i)) {
                    e += f * (u[q] - u[p]) / hi;
                }
            }
        }
        e * vol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoxGrid, TorusGrid};
    use std::f64::consts::PI;

    fn constant(lat: &Lattice, t: Tensor) -> FaceCoefficients {
        FaceCoefficients::from_nodal(lat, &vec![t; lat.len()])
    }

    #[test]
    fn identity_is_the_five_point_laplacian() {
        let g = TorusGrid::new(2, 8).unwrap();
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0; 3]];
        let a = constant(g.lattice(), id).assemble(false);
        let lap = crate::solver::neg_laplacian(g.lattice());
        for p in 0..g.len() {
            for q in 0..g.len() {
                assert!((a.get(p, q) + lap.get(p, q)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_antisymmetric_part_vanishes() {
        let g = TorusGrid::new(2, 8).unwrap();
        let skew = [[0.0, 0.7, 0.0], [-0.7, 0.0, 0.0], [0.0; 3]];
        let a = constant(g.lattice(), skew).assemble(false);
        let u: Vec<f64> = (0..g.len()).map(|p| ((p * 37) % 11) as f64).collect();
        for v in a.matvec(&u) {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn energy_identity_holds() {
        let b = BoxGrid::new(2, 12).unwrap();
        let lat = b.lattice();
        let faces = FaceCoefficients::from_fn(lat, |y, _| [[2.0 + y[0], 0.3, 0.0], [-0.1, 1.0 + y[1] * y[1], 0.0], [0.0; 3]]);
        let a = faces.assemble(true);
        let mask = lat.boundary_mask();
        let u: Vec<f64> = (0..lat.len())
            .map(|p| {
                if mask[p] {
                    0.0
                } else {
                    let y = lat.coord(p);
                    (PI * y[0]).cos() * (PI * y[1]).cos() + 0.1 * y[0]
                }
            })
            .collect();
        let g = a.matvec(&u);
        let gu: f64 = g.iter().zip(&u).zip(&mask).filter(|(_, m)| !**m).map(|((g, u), _)| g * u).sum::<f64>()
            * lat.cell_volume();
        assert!((faces.energy(&u) + gu).abs() < 1e-12);
    }

    #[test]
    fn second_order_for_smooth_solution() {
        // div(β∇u) with β = 1 + x²/2 and u = cos(πx)cos(πy)
        let mut errs = Vec::new();
        for n in [16, 32, 64] {
            let b = BoxGrid::new(2, n).unwrap();
            let lat = b.lattice();
            let beta = |y: &[f64]| 1.0 + 0.5 * y[0] * y[0];
            let faces = FaceCoefficients::from_fn(lat, |y, _| {
                let v = beta(y);
                [[v, 0.0, 0.0], [0.0, v, 0.0], [0.0; 3]]
            });
            let a = faces.assemble(true);
            let u: Vec<f64> = (0..lat.len())
                .map(|p| {
                    let y = lat.coord(p);
                    (PI * y[0]).cos() * (PI * y[1]).cos()
                })
                .collect();
            let au = a.matvec(&u);
            let mut e: f64 = 0.0;
            for p in 0..lat.len() {
                if lat.is_boundary(p) {
                    continue;
                }
                let y = lat.coord(p);
                let (cx, sx, cy) = ((PI * y[0]).cos(), (PI * y[0]).sin(), (PI * y[1]).cos());
                let exact = y[0] * (-PI * sx * cy) - 2.0 * PI * PI * beta(&y) * cx * cy;
                e = e.max((au[p] - exact).abs());
            }
            errs.push(e);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((1.8..=2.2).contains(&order), "{order}");
        }
    }
}
