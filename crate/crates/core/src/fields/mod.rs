//! Coefficient pairs `(A, b)`: periodic pieces, the interface blend, and
//! validation of the standing assumptions.

pub mod expr;
pub mod presets;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use expr::{Expr, ParseError};
pub use presets::Preset;

pub const MAX_DIM: usize = 3;

pub type Tensor = [[f64; MAX_DIM]; MAX_DIM];
pub type Vector = [f64; MAX_DIM];

/// Coefficients at one point. Entries beyond the dimension are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefSample {
    pub a: Tensor,
    pub b: Vector,
}

impl CoefSample {
    pub fn zero() -> Self {
        Self {
            a: [[0.0; MAX_DIM]; MAX_DIM],
            b: [0.0; MAX_DIM],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("dimension {0} is not supported (expected 2 or 3)")]
    Dimension(usize),
    #[error("plus piece has dimension {plus}, minus piece has dimension {minus}")]
    DimensionMismatch { plus: usize, minus: usize },
    #[error("{what} has {got} entries, expected {expected}")]
    Shape {
        what: String,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("expression \"{expr}\" evaluates to {value} at y = {point:?}")]
    NonFinite {
        expr: String,
        value: f64,
        point: Vec<f64>,
    },
}

/// Anything that can be sampled pointwise like a coefficient pair.
pub trait Coefficients: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, y: &[f64]) -> Result<CoefSample, FieldError>;
}

#[derive(Debug, Clone, PartialEq)]
enum Source {
    Preset(Preset),
    Expressions { a: Vec<Vec<Expr>>, b: Vec<Expr> },
}

/// One periodic piece `(a, b)` on the unit torus.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCoefficients {
    dim: usize,
    source: Source,
    scale: f64,
}

impl PeriodicCoefficients {
    pub fn preset(preset: Preset, dim: usize) -> Result<Self, FieldError> {
        check_dim(dim)?;
        Ok(Self {
            dim,
            source: Source::Preset(preset),
            scale: 1.0,
        })
    }

    /// Builds a piece from expression strings in `y1..yd`. `a` is given row
    /// by row and must be `d × d`; `b` must have `d` entries.
    pub fn from_expressions<S: AsRef<str>>(
        dim: usize,
        a: &[Vec<S>],
        b: &[S],
    ) -> Result<Self, FieldError> {
        check_dim(dim)?;
        if a.len() != dim {
            return Err(FieldError::Shape {
                what: "a".into(),
                got: a.len(),
                expected: dim,
            });
        }
        let mut rows = Vec::with_capacity(dim);
        for (i, row) in a.iter().enumerate() {
            if row.len() != dim {
                return Err(FieldError::Shape {
                    what: format!("a[{i}]"),
                    got: row.len(),
                    expected: dim,
                });
            }
            rows.push(
                row.iter()
                    .map(|s| Expr::parse(s.as_ref(), dim))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        if b.len() != dim {
            return Err(FieldError::Shape {
                what: "b".into(),
                got: b.len(),
                expected: dim,
            });
        }
        let b = b
            .iter()
            .map(|s| Expr::parse(s.as_ref(), dim))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dim,
            source: Source::Expressions { a: rows, b },
            scale: 1.0,
        })
    }

    /// Multiplies the diffusion matrix by `c`.
    pub fn scaled(mut self, c: f64) -> Self {
        self.scale *= c;
        self
    }

    pub fn preset_kind(&self) -> Option<Preset> {
        match self.source {
            Source::Preset(p) => Some(p),
            Source::Expressions { .. } => None,
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Closed-form invariant density for presets where one is known.
    /// Scaling `a` leaves the density unchanged only when `b = 0`.
    pub fn closed_form_measure(&self, y: &[f64]) -> Option<f64> {
        let p = self.preset_kind()?;
        let drift_free = matches!(p, Preset::Identity | Preset::Layered | Preset::Sheared);
        if self.scale != 1.0 && !drift_free {
            return None;
        }
        p.closed_form_measure(y)
    }

    /// Human-readable description for reports.
    pub fn describe(&self) -> String {
        let base = match &self.source {
            Source::Preset(p) => format!("preset {}", p.name()),
            Source::Expressions { a, b } => {
                let a: Vec<Vec<&str>> = a.iter().map(|r| r.iter().map(|e| e.source()).collect()).collect();
                let b: Vec<&str> = b.iter().map(|e| e.source()).collect();
                format!("a = {a:?}, b = {b:?}")
            }
        };
        if self.scale == 1.0 {
            base
        } else {
            format!("{} × ({base})", self.scale)
        }
    }

    pub fn validate(&self, samples_per_axis: usize) -> ValidationReport {
        let mut rep = ValidationReport::new();
        let s = samples_per_axis.max(4);
        let mut periodicity: f64 = 0.0;
        let mut y = vec![0.0; self.dim];
        for_each_sample(self.dim, s, |idx| {
            for k in 0..self.dim {
                y[k] = idx[k] as f64 / s as f64;
            }
            match self.eval(&y) {
                Ok(c) => {
                    rep.observe(self.dim, &c);
                    for k in 0..self.dim {
                        let mut z = y.clone();
                        z[k] += 1.0;
                        match self.eval_raw(&z) {
                            Ok(cz) => periodicity = periodicity.max(sample_distance(self.dim, &c, &cz)),
                            Err(e) => rep.errors.push(e.to_string()),
                        }
                    }
                }
                Err(e) => rep.errors.push(e.to_string()),
            }
        });
        rep.periodicity_defect = periodicity;
        rep.finish();
        rep
    }

    // Evaluation without wrapping into [0,1)ᵈ, used by the periodicity check.
    fn eval_raw(&self, y: &[f64]) -> Result<CoefSample, FieldError> {
        let mut s = match &self.source {
            Source::Preset(p) => p.sample(self.dim, y),
            Source::Expressions { a, b } => {
                let mut s = CoefSample::zero();
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        s.a[i][j] = finite(&a[i][j], y)?;
                    }
                    s.b[i] = finite(&b[i], y)?;
                }
                s
            }
        };
        if self.scale != 1.0 {
            for row in s.a.iter_mut() {
                for v in row.iter_mut() {
                    *v *= self.scale;
                }
            }
        }
        Ok(s)
    }
}

impl Coefficients for PeriodicCoefficients {
    fn dim(&self) -> usize {
        self.dim
    }

    /// Coordinates are reduced into `[0,1)` first, so lattice points that
    /// differ by whole periods give bit-identical samples.
    fn eval(&self, y: &[f64]) -> Result<CoefSample, FieldError> {
        let mut w = [0.0; MAX_DIM];
        for k in 0..self.dim {
            w[k] = y[k].rem_euclid(1.0);
        }
        self.eval_raw(&w[..self.dim])
    }
}

fn finite(e: &Expr, y: &[f64]) -> Result<f64, FieldError> {
    let v = e.eval(y);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(FieldError::NonFinite {
            expr: e.source().to_string(),
            value: v,
            point: y.to_vec(),
        })
    }
}

fn check_dim(dim: usize) -> Result<(), FieldError> {
    if (2..=MAX_DIM).contains(&dim) {
        Ok(())
    } else {
        Err(FieldError::Dimension(dim))
    }
}

/// Quintic smoothstep `6t⁵ − 15t⁴ + 10t³`, clamped to `[0, 1]`.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}

/// The blend weight of the plus piece at `y₁`.
pub fn blend_weight(y1: f64) -> f64 {
    smoothstep(0.5 * (y1 + 1.0))
}

/// Two periodic pieces joined across the strip `|y₁| ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub plus: PeriodicCoefficients,
    pub minus: PeriodicCoefficients,
}

impl CoefficientField {
    pub fn new(plus: PeriodicCoefficients, minus: PeriodicCoefficients) -> Result<Self, FieldError> {
        if plus.dim != minus.dim {
            return Err(FieldError::DimensionMismatch {
                plus: plus.dim,
                minus: minus.dim,
            });
        }
        Ok(Self { plus, minus })
    }

    /// Both sides equal to `piece`.
    pub fn one_sided(piece: PeriodicCoefficients) -> Self {
        Self {
            plus: piece.clone(),
            minus: piece,
        }
    }

    /// Validates both pieces and the blended strip.
    pub fn validate(&self, samples_per_axis: usize) -> ValidationReport {
        let s = samples_per_axis.max(4);
        let plus = self.plus.validate(s);
        let minus = self.minus.validate(s);
        let d = self.dim();

        let mut strip = ValidationReport::new();
        let mut y = vec![0.0; d];
        for_each_sample(d, s, |idx| {
            // 2s + 1 samples across [-1, 1] on the first axis
            for i1 in 0..=2 * s {
                y[0] = -1.0 + i1 as f64 / s as f64;
                for k in 1..d {
                    y[k] = idx[k] as f64 / s as f64;
                }
                match self.eval(&y) {
                    Ok(c) => strip.observe(d, &c),
                    Err(e) => strip.errors.push(e.to_string()),
                }
            }
        });

        // one-sided difference quotients of A across the seams y₁ = ±1
        let delta = 1e-6;
        let mut seam: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for_each_sample(d, s, |idx| {
            for &edge in &[-1.0, 1.0] {
                y[0] = edge;
                for k in 1..d {
                    y[k] = idx[k] as f64 / s as f64;
                }
                let at = |y1: f64| {
                    let mut z = y.clone();
                    z[0] = y1;
                    self.eval(&z)
                };
                if let (Ok(l), Ok(c), Ok(r)) = (at(edge - delta), at(edge), at(edge + delta)) {
                    for i in 0..d {
                        for j in 0..d {
                            let right = (r.a[i][j] - c.a[i][j]) / delta;
                            let left = (c.a[i][j] - l.a[i][j]) / delta;
                            seam = seam.max((right - left).abs());
                            scale = scale.max(c.a[i][j].abs());
                        }
                    }
                }
            }
        });

        let mut rep = ValidationReport::new();
        rep.mu = plus.mu.min(minus.mu).min(strip.mu);
        rep.mu1 = plus.mu1.max(minus.mu1).max(strip.mu1);
        rep.max_asymmetry = plus.max_asymmetry.max(minus.max_asymmetry).max(strip.max_asymmetry);
        rep.max_b1 = plus.max_b1.max(minus.max_b1).max(strip.max_b1);
        rep.periodicity_defect = plus.periodicity_defect.max(minus.periodicity_defect);
        for (prefix, part) in [("plus", &plus), ("minus", &minus)] {
            for c in &part.checks {
                rep.checks.push(Check {
                    name: format!("{prefix}.{}", c.name),
                    ..c.clone()
                });
            }
            rep.errors.extend(part.errors.iter().map(|e| format!("{prefix}: {e}")));
        }
        rep.errors.extend(strip.errors.iter().map(|e| format!("blend: {e}")));
        let mu_floor = plus.mu.min(minus.mu);
        rep.checks.push(Check::new(
            "blend.ellipticity",
            strip.mu >= mu_floor - 1e-12 && strip.mu > 0.0,
            strip.mu,
            format!("blended lower bound {:.6} vs min of pieces {:.6}", strip.mu, mu_floor),
        ));
        rep.checks.push(Check::new(
            "blend.symmetry",
            strip.max_asymmetry <= SYMMETRY_TOL,
            strip.max_asymmetry,
            "max |a_ij − a_ji| in the strip".into(),
        ));
        rep.checks.push(Check::new(
            "blend.b1_zero",
            strip.max_b1 <= B1_TOL,
            strip.max_b1,
            "max |b₁| in the strip".into(),
        ));
        let seam_tol = 1e-3 * (1.0 + scale);
        rep.checks.push(Check::new(
            "blend.seam_c1",
            seam <= seam_tol,
            seam,
            format!("jump of ∂₁A across y₁ = ±1 (tolerance {seam_tol:.1e})"),
        ));
        rep.seam_jump = Some(seam);
        rep
    }
}

impl Coefficients for CoefficientField {
    fn dim(&self) -> usize {
        self.plus.dim
    }

    fn eval(&self, y: &[f64]) -> Result<CoefSample, FieldError> {
        let y1 = y[0];
        if y1 >= 1.0 {
            return self.plus.eval(y);
        }
        if y1 <= -1.0 {
            return self.minus.eval(y);
        }
        let p = self.plus.eval(y)?;
        let m = self.minus.eval(y)?;
        let s = blend_weight(y1);
        let mut out = CoefSample::zero();
        for i in 0..MAX_DIM {
            for j in 0..MAX_DIM {
                out.a[i][j] = s * p.a[i][j] + (1.0 - s) * m.a[i][j];
            }
            out.b[i] = s * p.b[i] + (1.0 - s) * m.b[i];
        }
        Ok(out)
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const PERIODICITY_TOL: f64 = 1e-10;
const B1_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, value: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            value,
            detail,
        }
    }
}

/// Outcome of [`PeriodicCoefficients::validate`] or
/// [`CoefficientField::validate`]. Failures are listed, never raised.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    /// Smallest eigenvalue of `a` over the samples.
    pub mu: f64,
    /// Largest eigenvalue of `a` over the samples.
    pub mu1: f64,
    pub max_asymmetry: f64,
    pub periodicity_defect: f64,
    pub max_b1: f64,
    pub seam_jump: Option<f64>,
    pub errors: Vec<String>,
}

impl ValidationReport {
    fn new() -> Self {
        Self {
            checks: Vec::new(),
            mu: f64::INFINITY,
            mu1: f64::NEG_INFINITY,
            max_asymmetry: 0.0,
            periodicity_defect: 0.0,
            max_b1: 0.0,
            seam_jump: None,
            errors: Vec::new(),
        }
    }

    fn observe(&mut self, d: usize, c: &CoefSample) {
        let sym = DMatrix::from_fn(d, d, |i, j| 0.5 * (c.a[i][j] + c.a[j][i]));
        let eig = sym.symmetric_eigenvalues();
        self.mu = self.mu.min(eig.min());
        self.mu1 = self.mu1.max(eig.max());
        for i in 0..d {
            for j in 0..i {
                self.max_asymmetry = self.max_asymmetry.max((c.a[i][j] - c.a[j][i]).abs());
            }
        }
        self.max_b1 = self.max_b1.max(c.b[0].abs());
    }

    fn finish(&mut self) {
        self.checks.push(Check::new(
            "symmetry",
            self.max_asymmetry <= SYMMETRY_TOL,
            self.max_asymmetry,
            "max |a_ij − a_ji|".into(),
        ));
        self.checks.push(Check::new(
            "ellipticity",
            self.mu > 0.0 && self.mu1.is_finite(),
            self.mu,
            format!("eigenvalues of a within [{:.6}, {:.6}]", self.mu, self.mu1),
        ));
        self.checks.push(Check::new(
            "periodicity",
            self.periodicity_defect <= PERIODICITY_TOL,
            self.periodicity_defect,
            "max change under y ↦ y + e_k".into(),
        ));
        self.checks.push(Check::new(
            "b1_zero",
            self.max_b1 <= B1_TOL,
            self.max_b1,
            "max |b₁|".into(),
        ));
    }

    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn sample_distance(d: usize, x: &CoefSample, y: &CoefSample) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            m = m.max((x.a[i][j] - y.a[i][j]).abs());
        }
        m = m.max((x.b[i] - y.b[i]).abs());
    }
    m
}

// Calls `f` with every multi-index in {0..s}ᵈ.
fn for_each_sample(d: usize, s: usize, mut f: impl FnMut(&[usize; MAX_DIM])) {
    let total = s.pow(d as u32);
    let mut idx = [0usize; MAX_DIM];
    for mut k in 0..total {
        for slot in idx.iter_mut().take(d).rev() {
            *slot = k % s;
            k /= s;
        }
        f(&idx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(d: usize) -> PeriodicCoefficients {
        PeriodicCoefficients::preset(Preset::Identity, d).unwrap()
    }

    #[test]
    fn identical_pieces_blend_to_themselves() {
        let f = CoefficientField::one_sided(identity(2));
        for y1 in [-3.0, -0.7, 0.0, 0.3, 1.0, 5.5] {
            let c = f.eval(&[y1, 0.4]).unwrap();
            assert_eq!(c.a[0][0], 1.0);
            assert_eq!(c.a[1][1], 1.0);
            assert_eq!(c.a[0][1], 0.0);
            assert_eq!(c.b, [0.0; 3]);
        }
    }

    #[test]
    fn outside_strip_is_the_pure_piece() {
        let layered = PeriodicCoefficients::preset(Preset::Layered, 2).unwrap();
        let f = CoefficientField::new(layered.clone(), identity(2)).unwrap();
        let y = [2.0 + 0.13, 0.71];
        assert_eq!(f.eval(&y).unwrap(), layered.eval(&y).unwrap());
        let y = [-1.5, 0.2];
        assert_eq!(f.eval(&y).unwrap(), identity(2).eval(&y).unwrap());
    }

    #[test]
    fn symmetric_blend_midpoint() {
        let f = CoefficientField::new(identity(2).scaled(2.0), identity(2).scaled(4.0)).unwrap();
        let c = f.eval(&[0.0, 0.3]).unwrap();
        assert_eq!(c.a[0][0], 3.0);
        assert_eq!(c.a[1][1], 3.0);
    }

    #[test]
    fn smoothstep_profile() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(0.5), 0.5);
        // derivative 30t²(1−t)² vanishes at the ends
        let h = 1e-6;
        assert!((smoothstep(h) - smoothstep(0.0)) / h < 1e-9);
        assert!((smoothstep(1.0) - smoothstep(1.0 - h)) / h < 1e-9);
    }

    #[test]
    fn validate_identity() {
        let rep = identity(2).validate(8);
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.mu, 1.0);
        assert_eq!(rep.mu1, 1.0);
    }

    #[test]
    fn validate_layered_extrema() {
        let p = PeriodicCoefficients::from_expressions(2, &[vec!["2 + sin(2*pi*y1)", "0"], vec!["0", "1"]], &["0", "0"])
            .unwrap();
        let rep = p.validate(16);
        assert!(rep.passed());
        assert!(rep.mu <= 1.0 + 1e-12);
        assert!(rep.mu1 >= 3.0 - 1e-12);
    }

    #[test]
    fn validate_reports_b1() {
        let p = PeriodicCoefficients::from_expressions(2, &[vec!["1", "0"], vec!["0", "1"]], &["1", "0"]).unwrap();
        let rep = p.validate(4);
        assert!(!rep.passed());
        assert_eq!(rep.max_b1, 1.0);
        assert!(!rep.check("b1_zero").unwrap().passed);
    }

    #[test]
    fn validate_reports_asymmetry_and_nonperiodic() {
        let p = PeriodicCoefficients::from_expressions(2, &[vec!["1", "0.1"], vec!["0", "1 + y1"]], &["0", "0"]).unwrap();
        let rep = p.validate(4);
        assert!(!rep.check("symmetry").unwrap().passed);
        assert!(!rep.check("periodicity").unwrap().passed);
    }

    #[test]
    fn non_finite_names_expression() {
        let p = PeriodicCoefficients::from_expressions(2, &[vec!["1/y1", "0"], vec!["0", "1"]], &["0", "0"]).unwrap();
        let err = p.eval(&[0.0, 0.5]).unwrap_err();
        match err {
            FieldError::NonFinite { expr, .. } => assert_eq!(expr, "1/y1"),
            other => panic!("{other:?}"),
        }
        assert!(!p.validate(4).passed());
    }

    #[test]
    fn blended_field_validates() {
        let plus = PeriodicCoefficients::preset(Preset::Transverse, 2).unwrap();
        let minus = PeriodicCoefficients::preset(Preset::TransverseMirror, 2).unwrap();
        let rep = CoefficientField::new(plus, minus).unwrap().validate(8);
        assert!(rep.passed(), "{:?}", rep.failures());
        assert!(rep.seam_jump.unwrap() < 1e-3);
    }

    #[test]
    fn dimension_checks() {
        assert!(PeriodicCoefficients::preset(Preset::Identity, 1).is_err());
        assert!(CoefficientField::new(identity(2), identity(3)).is_err());
        assert!(PeriodicCoefficients::from_expressions(2, &[vec!["1"]], &["0", "0"]).is_err());
    }
}
