//! Per-slice norms and exponential decay fits `sup|v| ≈ A e^{−c|y₁|}`.

use serde::Serialize;

use super::{a11_values, slice_fluxes, InterfaceError};
use crate::fields::Coefficients;
use crate::fit::line_fit;
use crate::grid::{gradient, slice_sup, ScalarField, SlabGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

/// One row per slice: `y₁`, `sup|v|`, `sup|∇v|` and `∫ a₁₁ v`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SliceProfile {
    pub y1: Vec<f64>,
    pub sup_v: Vec<f64>,
    pub sup_grad: Vec<f64>,
    pub flux: Vec<f64>,
}

impl SliceProfile {
    pub fn new(v: &ScalarField, field: &dyn Coefficients, grid: &SlabGrid) -> Result<Self, InterfaceError> {
        let lat = grid.lattice();
        let vals = v.values();
        let grads: Vec<Vec<f64>> = (0..lat.dim()).map(|i| gradient(lat, vals, i)).collect();
        let mag: Vec<f64> = (0..lat.len())
            .map(|p| grads.iter().map(|g| g[p] * g[p]).sum::<f64>().sqrt())
            .collect();
        let a11 = a11_values(field, grid)?;
        Ok(Self {
            y1: (0..grid.slices()).map(|k| grid.y1(k)).collect(),
            sup_v: (0..grid.slices()).map(|k| slice_sup(vals, lat, k)).collect(),
            sup_grad: (0..grid.slices()).map(|k| slice_sup(&mag, lat, k)).collect(),
            flux: slice_fluxes(grid, &a11, vals),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("y1,sup_abs_v,sup_abs_grad_v,flux_a11_v\n");
        for k in 0..self.y1.len() {
            s.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                self.y1[k], self.sup_v[k], self.sup_grad[k], self.flux[k]
            ));
        }
        s
    }
}

/// Fit of `log value = log A − c t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpFit {
    pub rate: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub points: usize,
    /// Fewer than three points above the floor.
    pub degenerate: bool,
    /// `rate > 0` and `r_squared` at least the requested threshold.
    pub accepted: bool,
}

pub fn fit_exponential(t: &[f64], values: &[f64], floor: f64, min_r_squared: f64) -> ExpFit {
    let (x, y): (Vec<f64>, Vec<f64>) = t
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > floor && v.is_finite())
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    match line_fit(&x, &y) {
        Some(f) if x.len() >= 3 => ExpFit {
            rate: -f.slope,
            amplitude: f.intercept.exp(),
            r_squared: f.r_squared,
            points: x.len(),
            degenerate: false,
            accepted: -f.slope > 0.0 && f.r_squared >= min_r_squared,
        },
        _ => ExpFit {
            rate: f64::NAN,
            amplitude: f64::NAN,
            r_squared: f64::NAN,
            points: x.len(),
            degenerate: true,
            accepted: false,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub side: Side,
    /// Window in `|y₁|`.
    pub window: (f64, f64),
    pub floor: f64,
    pub value: ExpFit,
    pub gradient: ExpFit,
}

impl DecayFit {
    pub fn accepted(&self) -> bool {
        self.value.accepted && self.gradient.accepted
    }

    pub fn degenerate(&self) -> bool {
        self.value.degenerate && self.gradient.degenerate
    }
}

/// Fits sup-slice `|v|` and `|∇v|` against `|y₁|` on `window` for one side.
pub fn decay_fit(profile: &SliceProfile, side: Side, window: (f64, f64), floor: f64) -> DecayFit {
    let sign = match side {
        Side::Plus => 1.0,
        Side::Minus => -1.0,
    };
    let idx: Vec<usize> = (0..profile.y1.len())
        .filter(|&k| {
            let t = sign * profile.y1[k];
            t >= window.0 - 1e-12 && t <= window.1 + 1e-12
        })
        .collect();
    let t: Vec<f64> = idx.iter().map(|&k| sign * profile.y1[k]).collect();
    let v: Vec<f64> = idx.iter().map(|&k| profile.sup_v[k]).collect();
    let g: Vec<f64> = idx.iter().map(|&k| profile.sup_grad[k]).collect();
    // the gradient floor scales like the value floor over one cell
    let gfloor = floor * 2.0 * std::f64::consts::PI;
    DecayFit {
        side,
        window,
        floor,
        value: fit_exponential(&t, &v, floor, 0.98),
        gradient: fit_exponential(&t, &g, gfloor, 0.98),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{PeriodicCoefficients, Preset};
    use std::f64::consts::PI;

    #[test]
    fn recovers_injected_exponential() {
        let grid = SlabGrid::aligned(2, 8.0, 32).unwrap();
        let v = ScalarField::from_fn(grid.lattice(), |y| (-3.0 * y[0].abs()).exp() * (2.0 * PI * y[1]).cos());
        let id = PeriodicCoefficients::preset(Preset::Identity, 2).unwrap();
        let profile = SliceProfile::new(&v, &id, &grid).unwrap();
        for side in [Side::Plus, Side::Minus] {
            let fit = decay_fit(&profile, side, (2.0, 6.0), 1e-300);
            assert!((fit.value.rate - 3.0).abs() < 0.01, "{fit:?}");
            assert!(fit.value.r_squared > 0.9999);
            assert!((fit.gradient.rate - 3.0).abs() < 0.01);
            assert!(fit.accepted());
        }
    }

    #[test]
    fn floor_values_are_degenerate() {
        let f = fit_exponential(&[2.0, 3.0, 4.0], &[1e-18, 0.0, 1e-17], 1e-14, 0.98);
        assert!(f.degenerate && !f.accepted);
    }
}
