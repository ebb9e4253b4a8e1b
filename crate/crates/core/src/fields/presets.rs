//! Built-in coefficient presets.
//!
//! Several presets are manufactured: the coefficients are derived from a
//! chosen positive density so that the invariant measure (and, for `Trig`,
//! the flux corrector) is known in closed form. Those closed forms are used
//! as independent oracles in tests.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{CoefSample, MAX_DIM};

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// `a = I`, `b = 0`.
    Identity,
    /// `a = (2 + sin 2πy₁) I`, `b = 0`.
    Layered,
    /// Fully two-dimensional manufactured preset with drift and a nonzero
    /// divergence-free transformed drift.
    Trig,
    /// `a = I`, `b = (0, κ cos 2πy₂)` with `κ = 1`.
    Drift,
    /// Constant diagonal entries with an oscillating off-diagonal entry, `b = 0`.
    Sheared,
    /// Coefficients depending on `y₂` only, with a zero-flux drift.
    Transverse,
    /// Point reflection `y ↦ -y` of [`Preset::Transverse`].
    TransverseMirror,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Identity,
        Preset::Layered,
        Preset::Trig,
        Preset::Drift,
        Preset::Sheared,
        Preset::Transverse,
        Preset::TransverseMirror,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Identity => "identity",
            Preset::Layered => "layered",
            Preset::Trig => "trig",
            Preset::Drift => "drift",
            Preset::Sheared => "sheared",
            Preset::Transverse => "transverse",
            Preset::TransverseMirror => "transverse-mirror",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub(crate) fn sample(self, dim: usize, y: &[f64]) -> CoefSample {
        let mut s = CoefSample::zero();
        // padding for d = 3: a₃₃ = 1, b₃ = 0
        for k in 0..dim.min(MAX_DIM) {
            s.a[k][k] = 1.0;
        }
        match self {
            Preset::Identity => {}
            Preset::Layered => {
                let c = 2.0 + (TAU * y[0]).sin();
                for k in 0..dim {
                    s.a[k][k] = c;
                }
            }
            Preset::Trig => {
                let t = trig_terms(y[0], y[1]);
                s.a[0][0] = t.f / t.m;
                s.a[1][1] = t.g / t.m;
                s.b[1] = (t.g_y2 + t.psi_y1) / t.m;
            }
            Preset::Drift => {
                s.b[1] = (TAU * y[1]).cos();
            }
            Preset::Sheared => {
                let off = 0.3 * (TAU * (y[0] + y[1])).sin();
                s.a[0][0] = 1.5;
                s.a[1][1] = 1.2;
                s.a[0][1] = off;
                s.a[1][0] = off;
            }
            Preset::Transverse => {
                let t = transverse_terms(y[1]);
                s.a[0][0] = t.a11;
                s.a[1][1] = t.a22;
                s.b[1] = t.b2;
            }
            Preset::TransverseMirror => {
                let t = transverse_terms(-y[1]);
                s.a[0][0] = t.a11;
                s.a[1][1] = t.a22;
                s.b[1] = -t.b2;
            }
        }
        s
    }

    /// Closed-form invariant density, when known. Densities are normalized to
    /// unit mean except for `Drift`, whose normalization involves a Bessel
    /// function and is left to the caller.
    pub fn closed_form_measure(self, y: &[f64]) -> Option<f64> {
        match self {
            Preset::Identity => Some(1.0),
            Preset::Layered => Some(3f64.sqrt() / (2.0 + (TAU * y[0]).sin())),
            Preset::Trig => Some(trig_terms(y[0], y[1]).m),
            Preset::Drift => Some(((TAU * y[1]).sin() / TAU).exp()),
            Preset::Transverse => Some(transverse_terms(y[1]).m),
            Preset::TransverseMirror => Some(transverse_terms(-y[1]).m),
            Preset::Sheared => None,
        }
    }

    /// Closed-form entry `φ₂₁` of the flux corrector, up to an additive
    /// constant, when known.
    pub fn closed_form_flux_corrector(self, y: &[f64]) -> Option<f64> {
        match self {
            Preset::Identity | Preset::Layered | Preset::Transverse | Preset::TransverseMirror => {
                Some(0.0)
            }
            Preset::Trig => Some(-trig_terms(y[0], y[1]).psi),
            Preset::Drift | Preset::Sheared => None,
        }
    }
}

struct TrigTerms {
    m: f64,
    f: f64,
    g: f64,
    g_y2: f64,
    psi: f64,
    psi_y1: f64,
}

// Manufactured from a target density m, the products a₁₁m = F and a₂₂m = G,
// and a stream function ψ for the probability flux. The constraint b₁ = 0
// forces ∂₁F = ∂₂ψ, which fixes ψ from F.
fn trig_terms(y1: f64, y2: f64) -> TrigTerms {
    let (s1, c1) = (TAU * y1).sin_cos();
    let (s2, c2) = (TAU * y2).sin_cos();
    let m = 1.0 + 0.3 * s1 * c2 + 0.2 * (TAU * (y1 + 2.0 * y2)).sin();
    let f = 1.5 + 0.4 * s1 * c2;
    let g = 1.0 + 0.25 * (TAU * (y1 - y2)).cos();
    let g_y2 = 0.25 * TAU * (TAU * (y1 - y2)).sin();
    let psi = 0.4 * c1 * s2;
    let psi_y1 = -0.4 * TAU * s1 * s2;
    TrigTerms {
        m,
        f,
        g,
        g_y2,
        psi,
        psi_y1,
    }
}

struct TransverseTerms {
    m: f64,
    a11: f64,
    a22: f64,
    b2: f64,
}

// Everything depends on y₂ only. With a₂₂ = γ and target density m the
// zero-flux drift is b₂ = (γm)'/m, which also makes the centering exact.
fn transverse_terms(t: f64) -> TransverseTerms {
    let (s, c) = (TAU * t).sin_cos();
    let (s2, c2) = (2.0 * TAU * t).sin_cos();
    let m = 1.0 + 0.4 * s + 0.2 * c2;
    let dm = 0.4 * TAU * c - 0.4 * TAU * s2;
    let gamma = 0.5 + 0.1 * s;
    let dgamma = 0.1 * TAU * c;
    TransverseTerms {
        m,
        a11: 4.0 + c,
        a22: gamma,
        b2: dgamma + gamma * dm / m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Central-difference check that the manufactured presets satisfy the
    // doubly-divergence equation ∂ᵢⱼ(aᵢⱼm) − ∂ᵢ(bᵢm) = 0 pointwise.
    fn adjoint_residual(p: Preset, y: [f64; 2]) -> f64 {
        let h = 1e-3;
        let am = |i: usize, j: usize, y: [f64; 2]| {
            p.sample(2, &y).a[i][j] * p.closed_form_measure(&y).unwrap()
        };
        let bm = |i: usize, y: [f64; 2]| p.sample(2, &y).b[i] * p.closed_form_measure(&y).unwrap();
        let sh = |y: [f64; 2], d0: f64, d1: f64| [y[0] + d0, y[1] + d1];
        let d11 = (am(0, 0, sh(y, h, 0.0)) - 2.0 * am(0, 0, y) + am(0, 0, sh(y, -h, 0.0))) / (h * h);
        let d22 = (am(1, 1, sh(y, 0.0, h)) - 2.0 * am(1, 1, y) + am(1, 1, sh(y, 0.0, -h))) / (h * h);
        let d12 = (am(0, 1, sh(y, h, h)) - am(0, 1, sh(y, h, -h)) - am(0, 1, sh(y, -h, h))
            + am(0, 1, sh(y, -h, -h)))
            / (4.0 * h * h);
        let db1 = (bm(0, sh(y, h, 0.0)) - bm(0, sh(y, -h, 0.0))) / (2.0 * h);
        let db2 = (bm(1, sh(y, 0.0, h)) - bm(1, sh(y, 0.0, -h))) / (2.0 * h);
        d11 + d22 + 2.0 * d12 - db1 - db2
    }

    #[test]
    fn manufactured_presets_solve_the_adjoint_equation() {
        for p in [Preset::Layered, Preset::Trig, Preset::Transverse, Preset::TransverseMirror, Preset::Drift] {
            for &y in &[[0.1, 0.2], [0.37, 0.81], [0.9, 0.55]] {
                let r = adjoint_residual(p, y);
                assert!(r.abs() < 1e-3, "{:?} at {:?}: {r}", p, y);
            }
        }
    }

    #[test]
    fn trig_flux_corrector_reproduces_transformed_drift() {
        // b̃ = b m − div(a m) must equal (∂₂φ₂₁, −∂₁φ₂₁).
        let p = Preset::Trig;
        let h = 1e-5;
        let y = [0.31, 0.67];
        let am = |i: usize, y: [f64; 2]| p.sample(2, &y).a[i][i] * p.closed_form_measure(&y).unwrap();
        let m = p.closed_form_measure(&y).unwrap();
        let s = p.sample(2, &y);
        let bt1 = s.b[0] * m - (am(0, [y[0] + h, y[1]]) - am(0, [y[0] - h, y[1]])) / (2.0 * h);
        let bt2 = s.b[1] * m - (am(1, [y[0], y[1] + h]) - am(1, [y[0], y[1] - h])) / (2.0 * h);
        let phi = |y: [f64; 2]| p.closed_form_flux_corrector(&y).unwrap();
        let d2 = (phi([y[0], y[1] + h]) - phi([y[0], y[1] - h])) / (2.0 * h);
        let d1 = (phi([y[0] + h, y[1]]) - phi([y[0] - h, y[1]])) / (2.0 * h);
        assert!((bt1 - d2).abs() < 1e-7);
        assert!((bt2 + d1).abs() < 1e-7);
    }

    #[test]
    fn names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()), Some(p));
        }
        assert_eq!(Preset::from_name("nope"), None);
    }
}
