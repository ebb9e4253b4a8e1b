//! Structured grids on the torus, the slab and the box, grid functions with
//! CSV and binary IO, and the finite-difference operators built on them.

pub mod divform;
mod stencil;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::fields::MAX_DIM;
pub use stencil::{adjoint, assemble_nondiv, Assembly, BoundaryRows, PositivityReport};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension {0} is not supported")]
    Dimension(usize),
    #[error("{0} points per axis is too coarse (need at least 4)")]
    TooCoarse(usize),
    #[error("slab half-width {0} must exceed 1")]
    SlabWidth(f64),
    #[error("y₁ = ±1 does not fall on slab nodes (R = {r}, n₁ = {n1})")]
    InterfaceOffNodes { r: f64, n1: usize },
    #[error("slab spacing 1/{n} needs R·n to be an integer, got R = {r}")]
    Unaligned { r: f64, n: usize },
    #[error("index {index} out of range 0..{len}")]
    Index { index: usize, len: usize },
    #[error("field has {got} values but the grid has {expected} nodes")]
    Length { got: usize, expected: usize },
    #[error("non-finite value {value} at node {node}")]
    NonFinite { node: usize, value: f64 },
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Axis {
    pub count: usize,
    pub spacing: f64,
    pub origin: f64,
    pub periodic: bool,
}

impl Axis {
    pub fn coord(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing
    }
}

/// A tensor-product lattice. Axis 0 varies slowest, so fixing the first
/// index selects a contiguous block of nodes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lattice {
    pub axes: Vec<Axis>,
}

impl Lattice {
    pub fn new(axes: Vec<Axis>) -> Self {
        assert!(!axes.is_empty() && axes.len() <= MAX_DIM, "1 to 3 axes");
        Self { axes }
    }

    /// `[0,1)ᵈ` with `n` nodes per axis.
    pub fn torus(d: usize, n: usize) -> Self {
        Self::new(
            (0..d)
                .map(|_| Axis {
                    count: n,
                    spacing: 1.0 / n as f64,
                    origin: 0.0,
                    periodic: true,
                })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.count).collect()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.axes[axis + 1..].iter().map(|a| a.count).product()
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.count + i)
    }

    pub fn multi(&self, mut p: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for k in (0..self.dim()).rev() {
            let c = self.axes[k].count;
            out[k] = p % c;
            p /= c;
        }
        out
    }

    /// Coordinates of node `p`; entries past the dimension are zero.
    pub fn coord(&self, p: usize) -> [f64; MAX_DIM] {
        let m = self.multi(p);
        let mut y = [0.0; MAX_DIM];
        for k in 0..self.dim() {
            y[k] = self.axes[k].coord(m[k]);
        }
        y
    }

    /// Node reached from `p` by the given per-axis offsets, wrapping on
    /// periodic axes. `None` when a non-periodic axis is left.
    pub fn shift(&self, p: usize, offsets: &[(usize, isize)]) -> Option<usize> {
        let mut m = self.multi(p);
        for &(axis, off) in offsets {
            let a = &self.axes[axis];
            let c = a.count as isize;
            let j = m[axis] as isize + off;
            m[axis] = if a.periodic {
                j.rem_euclid(c) as usize
            } else if (0..c).contains(&j) {
                j as usize
            } else {
                return None;
            };
        }
        Some(self.index(&m[..self.dim()]))
    }

    pub fn neighbor(&self, p: usize, axis: usize, off: isize) -> Option<usize> {
        self.shift(p, &[(axis, off)])
    }

    /// True on the first or last layer of any non-periodic axis.
    pub fn is_boundary(&self, p: usize) -> bool {
        let m = self.multi(p);
        self.axes
            .iter()
            .enumerate()
            .any(|(k, a)| !a.periodic && (m[k] == 0 || m[k] + 1 == a.count))
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|p| self.is_boundary(p)).collect()
    }

    /// Product of the spacings: the quadrature weight of one node.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing).product()
    }
}

/// The unit torus `[0,1)ᵈ` with `n` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TorusGrid {
    lattice: Lattice,
}

impl TorusGrid {
    pub fn new(d: usize, n: usize) -> Result<Self, GridError> {
        if !(2..=MAX_DIM).contains(&d) {
            return Err(GridError::Dimension(d));
        }
        if n < 4 {
            return Err(GridError::TooCoarse(n));
        }
        Ok(Self {
            lattice: Lattice::torus(d, n),
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn n(&self) -> usize {
        self.lattice.axes[0].count
    }

    pub fn h(&self) -> f64 {
        self.lattice.axes[0].spacing
    }

    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node index of the point `y` if it lies on the lattice modulo 1.
    pub fn node_of(&self, y: &[f64]) -> Option<usize> {
        let n = self.n();
        let mut m = [0usize; MAX_DIM];
        for k in 0..self.dim() {
            let t = y[k].rem_euclid(1.0) * n as f64;
            let r = t.round();
            if (t - r).abs() > 1e-9 {
                return None;
            }
            m[k] = (r as usize) % n;
        }
        Some(self.lattice.index(&m[..self.dim()]))
    }
}

/// The slab `[−R, R] × 𝕋^{d−1}`: `n₁ + 1` nodes across, `n′` per transverse axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlabGrid {
    lattice: Lattice,
    r: f64,
    n1: usize,
    nt: usize,
}

impl SlabGrid {
    pub fn new(d: usize, r: f64, n1: usize, nt: usize) -> Result<Self, GridError> {
        if !(2..=MAX_DIM).contains(&d) {
            return Err(GridError::Dimension(d));
        }
        if r.is_nan() || r <= 1.0 {
            return Err(GridError::SlabWidth(r));
        }
        if nt < 4 || n1 < 4 {
            return Err(GridError::TooCoarse(nt.min(n1)));
        }
        // ±1 on nodes: (R ∓ 1)·n₁/(2R) must be integers
        let h1 = 2.0 * r / n1 as f64;
        for edge in [-1.0, 1.0] {
            let t = (edge + r) / h1;
            if (t - t.round()).abs() > 1e-9 {
                return Err(GridError::InterfaceOffNodes { r, n1 });
            }
        }
        let mut axes = vec![Axis {
            count: n1 + 1,
            spacing: h1,
            origin: -r,
            periodic: false,
        }];
        for _ in 1..d {
            axes.push(Axis {
                count: nt,
                spacing: 1.0 / nt as f64,
                origin: 0.0,
                periodic: true,
            });
        }
        Ok(Self {
            lattice: Lattice::new(axes),
            r,
            n1,
            nt,
        })
    }

    /// Slab with `h₁ = h′ = 1/n`, so slab nodes coincide with torus nodes.
    pub fn aligned(d: usize, r: f64, n: usize) -> Result<Self, GridError> {
        let rn = r * n as f64;
        if (rn - rn.round()).abs() > 1e-9 {
            return Err(GridError::Unaligned { r, n });
        }
        Self::new(d, r, 2 * rn.round() as usize, n)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn h1(&self) -> f64 {
        self.lattice.axes[0].spacing
    }

    pub fn ht(&self) -> f64 {
        1.0 / self.nt as f64
    }

    pub fn slices(&self) -> usize {
        self.n1 + 1
    }

    pub fn slice_len(&self) -> usize {
        self.lattice.stride(0)
    }

    pub fn y1(&self, i1: usize) -> f64 {
        self.lattice.axes[0].coord(i1)
    }

    /// Node range of the slice `i₁`.
    pub fn slice(&self, i1: usize) -> Range<usize> {
        let s = self.slice_len();
        i1 * s..(i1 + 1) * s
    }

    /// Slice index of the node row at `y₁`, if there is one.
    pub fn slice_at(&self, y1: f64) -> Option<usize> {
        let t = (y1 + self.r) / self.h1();
        let k = t.round();
        if (t - k).abs() > 1e-9 || k < 0.0 || k as usize > self.n1 {
            None
        } else {
            Some(k as usize)
        }
    }

    /// Torus node matching slab node `p` when the slab is aligned with an
    /// `n`-point torus.
    pub fn torus_node(&self, p: usize, torus: &TorusGrid) -> Option<usize> {
        let y = self.lattice.coord(p);
        torus.node_of(&y[..self.dim()])
    }
}

/// The box `[−½, ½]ᵈ` with `n + 1` nodes per axis and Dirichlet boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxGrid {
    lattice: Lattice,
    n: usize,
}

impl BoxGrid {
    pub fn new(d: usize, n: usize) -> Result<Self, GridError> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(GridError::Dimension(d));
        }
        if n < 4 {
            return Err(GridError::TooCoarse(n));
        }
        let axes = (0..d)
            .map(|_| Axis {
                count: n + 1,
                spacing: 1.0 / n as f64,
                origin: -0.5,
                periodic: false,
            })
            .collect();
        Ok(Self {
            lattice: Lattice::new(axes),
            n,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn dim(&self) -> usize {
        self.lattice.dim()
    }
}

/// One finite value per lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    lattice: Lattice,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(lattice: Lattice, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != lattice.len() {
            return Err(GridError::Length {
                got: values.len(),
                expected: lattice.len(),
            });
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { node, value });
        }
        Ok(Self { lattice, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(lattice: &Lattice, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = lattice.dim();
        let values = (0..lattice.len()).map(|p| f(&lattice.coord(p)[..d])).collect();
        Self {
            lattice: lattice.clone(),
            values,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a: f64, v| a.max(v.abs()))
    }

    /// CSV with one row per node: coordinates, then the value.
    pub fn to_csv(&self) -> String {
        let d = self.lattice.dim();
        let mut out = String::new();
        let names: Vec<String> = (1..=d).map(|k| format!("y{k}")).collect();
        out.push_str(&names.join(","));
        out.push_str(",value\n");
        for (p, v) in self.values.iter().enumerate() {
            let y = self.lattice.coord(p);
            for yk in &y[..d] {
                out.push_str(&format!("{yk},"));
            }
            out.push_str(&format!("{v:e}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), GridError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Binary layout: `u64` dimension, `u64` node count per axis, then the
    /// values as `f64`, all little-endian, nodes in index order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.lattice.shape();
        let mut out = Vec::with_capacity(8 * (1 + shape.len() + self.values.len()));
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for s in shape {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write_bin(&self, path: &Path) -> Result<(), GridError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads a binary field and attaches it to `lattice`, whose shape must match.
    pub fn read_bin(path: &Path, lattice: &Lattice) -> Result<Self, GridError> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        let (shape, values) = decode_bin(&bytes)?;
        if shape != lattice.shape() {
            return Err(GridError::Format(format!(
                "shape {:?} does not match grid {:?}",
                shape,
                lattice.shape()
            )));
        }
        Self::new(lattice.clone(), values)
    }
}

/// Decodes the binary layout of [`ScalarField::to_bytes`].
pub fn decode_bin(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>), GridError> {
    let word = |k: usize| -> Result<[u8; 8], GridError> {
        bytes
            .get(8 * k..8 * k + 8)
            .map(|s| s.try_into().expect("eight bytes"))
            .ok_or_else(|| GridError::Format("truncated".into()))
    };
    let d = u64::from_le_bytes(word(0)?) as usize;
    if d == 0 || d > MAX_DIM {
        return Err(GridError::Format(format!("dimension {d}")));
    }
    let shape: Vec<usize> = (0..d)
        .map(|k| word(1 + k).map(|w| u64::from_le_bytes(w) as usize))
        .collect::<Result<_, _>>()?;
    let n: usize = shape.iter().product();
    if bytes.len() != 8 * (1 + d + n) {
        return Err(GridError::Format(format!(
            "expected {} bytes, found {}",
            8 * (1 + d + n),
            bytes.len()
        )));
    }
    let values = (0..n)
        .map(|k| word(1 + d + k).map(f64::from_le_bytes))
        .collect::<Result<_, _>>()?;
    Ok((shape, values))
}

/// Quadrature of `f` over the transverse torus at slice `i1` of a slab.
/// On periodic axes the trapezoidal rule is the rectangle rule.
pub fn slice_integral(f: &ScalarField, i1: usize) -> Result<f64, GridError> {
    let lat = f.lattice();
    let count = lat.axes[0].count;
    if i1 >= count {
        return Err(GridError::Index { index: i1, len: count });
    }
    let s = lat.stride(0);
    let w: f64 = lat.axes[1..].iter().map(|a| a.spacing).product();
    Ok(f.values()[i1 * s..(i1 + 1) * s].iter().sum::<f64>() * w)
}

/// Maximum of `|f|` over slice `i1`.
pub fn slice_sup(values: &[f64], lattice: &Lattice, i1: usize) -> f64 {
    let s = lattice.stride(0);
    values[i1 * s..(i1 + 1) * s]
        .iter()
        .fold(0.0, |a: f64, v| a.max(v.abs()))
}

/// Centered difference of `values` along `axis`: periodic wrap, or
/// second-order one-sided differences on the ends of a bounded axis.
pub fn gradient(lattice: &Lattice, values: &[f64], axis: usize) -> Vec<f64> {
    let h = lattice.axes[axis].spacing;
    (0..lattice.len())
        .map(|p| {
            let fwd = lattice.neighbor(p, axis, 1);
            let bwd = lattice.neighbor(p, axis, -1);
            match (bwd, fwd) {
                (Some(b), Some(f)) => (values[f] - values[b]) / (2.0 * h),
                (None, Some(f)) => {
                    let f2 = lattice.neighbor(f, axis, 1).expect("axis has at least three nodes");
                    (-3.0 * values[p] + 4.0 * values[f] - values[f2]) / (2.0 * h)
                }
                (Some(b), None) => {
                    let b2 = lattice.neighbor(b, axis, -1).expect("axis has at least three nodes");
                    (3.0 * values[p] - 4.0 * values[b] + values[b2]) / (2.0 * h)
                }
                (None, None) => 0.0,
            }
        })
        .collect()
}
