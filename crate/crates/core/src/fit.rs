//! Least-squares line fits, log-log order fits and rate checks.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`. `None` for fewer than
/// two points or a degenerate abscissa.
pub fn line_fit(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LineFit {
        slope,
        intercept,
        r_squared,
        points: n,
    })
}

/// Order of convergence: slope of `log err` against `log h`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub pair_slopes: Vec<f64>,
    pub r_squared: f64,
    /// Set when fewer than two errors lie above the floor.
    pub degenerate: bool,
}

pub fn rate_fit(h: &[f64], err: &[f64], floor: f64) -> RateFit {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(err)
        .filter(|(_, e)| **e > floor)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    let pair_slopes = h
        .windows(2)
        .zip(err.windows(2))
        .map(|(hw, ew)| (ew[1] / ew[0]).ln() / (hw[1] / hw[0]).ln())
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    match line_fit(&x, &y) {
        Some(f) => RateFit {
            slope: f.slope,
            pair_slopes,
            r_squared: f.r_squared,
            degenerate: false,
        },
        None => RateFit {
            slope: f64::NAN,
            pair_slopes,
            r_squared: f64::NAN,
            degenerate: true,
        },
    }
}

/// A rate requirement that also accepts quantities that are exact up to
/// rounding: if every value is at or below its floor the check passes as
/// exact. Values at or below their floor are left out of the fit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCheck {
    pub name: String,
    pub h: Vec<f64>,
    pub values: Vec<f64>,
    pub band: (f64, f64),
    pub floors: Vec<f64>,
    pub fit: RateFit,
    pub exact: bool,
    pub passed: bool,
}

impl RateCheck {
    pub fn new(name: &str, h: &[f64], values: &[f64], band: (f64, f64), floor: f64) -> Self {
        Self::with_floors(name, h, values, band, &vec![floor; values.len()])
    }

    /// One floor per value, for noise that depends on the grid.
    pub fn with_floors(name: &str, h: &[f64], values: &[f64], band: (f64, f64), floors: &[f64]) -> Self {
        let exact = values.iter().zip(floors).all(|(v, f)| v.abs() <= *f);
        let (hf, vf): (Vec<f64>, Vec<f64>) = h
            .iter()
            .zip(values)
            .zip(floors)
            .filter(|((_, v), f)| v.abs() > **f)
            .map(|((h, v), _)| (*h, v.abs()))
            .unzip();
        let fit = rate_fit(&hf, &vf, 0.0);
        let passed = exact || (!fit.degenerate && fit.slope >= band.0 && fit.slope <= band.1);
        Self {
            name: name.to_string(),
            h: h.to_vec(),
            values: values.to_vec(),
            band,
            floors: floors.to_vec(),
            fit,
            exact,
            passed,
        }
    }

    pub fn describe(&self) -> String {
        let floor = self.floors.iter().copied().fold(0.0, f64::max);
        if self.exact {
            format!("{}: exact to {:.1e} (max {:.2e})", self.name, floor, self.values.iter().fold(0.0f64, |a, v| a.max(v.abs())))
        } else {
            format!(
                "{}: slope {:.3} in [{}, {}], values {:?}",
                self.name, self.fit.slope, self.band.0, self.band.1, self.values
            )
        }
    }
}
