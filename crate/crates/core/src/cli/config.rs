//! The run configuration: one strict TOML file holding every numerical choice.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, Command};
use crate::fields::{CoefficientField, Expr, PeriodicCoefficients, Preset};
use crate::homogen::Source;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// When present it must agree with the command given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// Seed for the randomized duality check.
    #[serde(default)]
    pub seed: u64,
    /// Output directory, overridden by `--out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub plus: PieceConfig,
    /// Omitted: the minus side equals the plus side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minus: Option<PieceConfig>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub interface: InterfaceConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub budget: BudgetConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_dimension() -> usize {
    2
}

/// A coefficient entry: an expression in `y1..yd` or a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Text(String),
}

impl Entry {
    fn text(&self) -> String {
        match self {
            Entry::Number(v) => format!("{v:?}"),
            Entry::Text(s) => s.clone(),
        }
    }
}

/// One periodic piece: a preset name, or expressions for `a` (row by row) and `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<Entry>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Entry>>,
    /// Multiplies the diffusion matrix.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl PieceConfig {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: Some(name.to_string()),
            a: None,
            b: None,
            scale: 1.0,
        }
    }

    pub fn build(&self, dim: usize, key: &str) -> Result<PeriodicCoefficients, CliError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(CliError::Config(format!("{key}.scale must be positive, got {}", self.scale)));
        }
        let piece = match (&self.preset, &self.a, &self.b) {
            (Some(name), None, None) => {
                let p = Preset::from_name(name).ok_or_else(|| {
                    let known: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                    CliError::Config(format!("{key}.preset: unknown preset \"{name}\" (known: {})", known.join(", ")))
                })?;
                PeriodicCoefficients::preset(p, dim)?
            }
            (None, Some(a), b) => {
                let rows: Vec<Vec<String>> = a.iter().map(|r| r.iter().map(Entry::text).collect()).collect();
                let b: Vec<String> = match b {
                    Some(b) => b.iter().map(Entry::text).collect(),
                    None => vec!["0".into(); dim],
                };
                PeriodicCoefficients::from_expressions(dim, &rows, &b)
                    .map_err(|e| CliError::Config(format!("{key}: {e}")))?
            }
            (Some(_), _, _) => {
                return Err(CliError::Config(format!("{key}: give either preset or a/b, not both")));
            }
            (None, None, _) => return Err(CliError::Config(format!("{key}: needs preset or a"))),
        };
        Ok(piece.scaled(self.scale))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per axis of the unit cell; the slab uses `h₁ = h′ = 1/cell`.
    pub cell: usize,
    /// Cell sizes for the refinement rate checks; empty skips them.
    pub refine: Vec<usize>,
    /// Samples per axis for coefficient validation.
    pub validation_samples: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            cell: 64,
            refine: vec![32, 64, 128],
            validation_samples: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterfaceConfig {
    pub q_plus: f64,
    pub r: f64,
    /// Second slab half-width for the decay-rate stability check.
    pub r_compare: f64,
    /// Largest accepted relative change of a decay rate between `r` and `r_compare`.
    pub max_rate_change: f64,
    /// Slice-flux tolerance in units of `h²`.
    pub flux_gate: f64,
}

impl Default for InterfaceConfig {
    fn default() -> Self {
        Self {
            q_plus: 1.0,
            r: 8.0,
            r_compare: 12.0,
            max_rate_change: 0.1,
            flux_gate: 10.0,
        }
    }
}

/// `"bump"`, a number, or an expression in `x1..xd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceConfig {
    Number(f64),
    Text(String),
}

impl SourceConfig {
    pub fn build(&self, dim: usize) -> Result<Source, CliError> {
        match self {
            SourceConfig::Number(v) => Ok(Source::Constant(*v)),
            SourceConfig::Text(s) if s == "bump" => Ok(Source::Bump),
            SourceConfig::Text(s) => Expr::parse_in(s, dim, 'x')
                .map(Source::Expression)
                .map_err(|e| CliError::Config(format!("convergence.source: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Strictly descending, at least three values.
    pub eps: Vec<f64>,
    /// Grid points per period of the fast variable; the grid is `h = ε/res`.
    pub res: usize,
    pub source: SourceConfig,
    /// Periodic control preset run through the same sweep, or `"none"`.
    pub control: String,
    /// Accepted band for the interior-L∞ slope.
    pub band: [f64; 2],
    /// Width of the boundary collar excluded from the interior norm.
    pub collar: f64,
    /// Half-width of the band around `x₁ = 0` excluded from the far norm.
    pub far: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.125, 0.0625, 0.03125],
            res: 8,
            source: SourceConfig::Text("bump".into()),
            control: "trig".into(),
            band: [0.7, 1.3],
            collar: 0.125,
            far: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub measure: f64,
    pub corrector: f64,
    pub poisson: f64,
    pub slab: f64,
    pub effective: f64,
    /// `|⟨L_h u, m⟩| ≤ duality·‖u‖‖m‖`.
    pub duality: f64,
    /// `|mean m − 1|`.
    pub mean: f64,
    /// `|Â − I|` on the identity preset.
    pub identity_tensor: f64,
    /// Accepted band for second-order refinement slopes.
    pub order_band: [f64; 2],
    /// Values at or below this count as exact in rate checks.
    pub rate_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            measure: 1e-13,
            corrector: 1e-11,
            poisson: 1e-11,
            slab: 1e-13,
            effective: 1e-11,
            duality: 1e-9,
            mean: 1e-12,
            identity_tensor: 1e-10,
            order_band: [1.7, 2.3],
            rate_floor: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetConfig {
    pub max_seconds: f64,
    pub max_unknowns: usize,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            max_seconds: 600.0,
            max_unknowns: 513 * 513,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    #[default]
    None,
    Csv,
    Bin,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Field dumps under `fields/`.
    pub fields: FieldFormat,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !(2..=3).contains(&self.dimension) {
            return bad(format!("dimension must be 2 or 3, got {}", self.dimension));
        }
        if self.grid.cell < 8 {
            return bad(format!("grid.cell must be at least 8, got {}", self.grid.cell));
        }
        if self.grid.refine.iter().any(|&n| n < 8) || (!self.grid.refine.is_empty() && self.grid.refine.len() < 3) {
            return bad("grid.refine needs three or more sizes, each at least 8".into());
        }
        if self.grid.refine.windows(2).any(|w| w[1] <= w[0]) {
            return bad("grid.refine must be strictly increasing".into());
        }
        let i = &self.interface;
        if !(i.q_plus > 0.0) {
            return bad(format!("interface.q_plus must be positive, got {}", i.q_plus));
        }
        if !(i.r > 2.0) || !(i.r_compare > i.r) {
            return bad(format!("need 2 < interface.r < interface.r_compare, got {} and {}", i.r, i.r_compare));
        }
        let c = &self.convergence;
        if c.eps.len() < 3 || c.eps.windows(2).any(|w| w[1] >= w[0]) || c.eps.iter().any(|e| !(*e > 0.0)) {
            return bad("convergence.eps needs three or more positive values in strictly descending order".into());
        }
        if c.control != "none" && Preset::from_name(&c.control).is_none() {
            return bad(format!("convergence.control: unknown preset \"{}\"", c.control));
        }
        if !(self.budget.max_seconds > 0.0) {
            return bad("budget.max_seconds must be positive".into());
        }
        Ok(())
    }

    pub fn field(&self) -> Result<CoefficientField, CliError> {
        let plus = self.plus.build(self.dimension, "plus")?;
        Ok(match &self.minus {
            Some(m) => CoefficientField::new(plus, m.build(self.dimension, "minus")?)?,
            None => CoefficientField::one_sided(plus),
        })
    }

    pub fn two_sided(&self) -> bool {
        self.minus.as_ref().is_some_and(|m| *m != self.plus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse("[plus]\npreset = \"identity\"\n").unwrap();
        assert_eq!(cfg.grid, GridConfig::default());
        assert_eq!(cfg.dimension, 2);
        assert!(!cfg.two_sided());
        assert!(cfg.field().is_ok());
    }

    #[test]
    fn unknown_keys_name_key_and_line() {
        let err = RunConfig::parse("[plus]\npreset = \"identity\"\n[grid]\ncel = 32\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cel") && msg.contains("line 4"), "{msg}");
        let err = RunConfig::parse("extra = 1\n[plus]\npreset = \"identity\"\n").unwrap_err();
        assert!(err.to_string().contains("extra"));
    }

    #[test]
    fn expression_pieces_accept_numbers() {
        let cfg = RunConfig::parse(
            "[plus]\na = [[\"2 + sin(2*pi*y1)\", 0], [0, 1.5]]\nb = [0, \"cos(2*pi*y1)\"]\n",
        )
        .unwrap();
        let f = cfg.field().unwrap();
        use crate::fields::Coefficients;
        let s = f.plus.eval(&[0.25, 0.0]).unwrap();
        assert!((s.a[0][0] - 3.0).abs() < 1e-14 && s.a[1][1] == 1.5);
    }

    #[test]
    fn inconsistent_settings_are_rejected() {
        for text in [
            "[plus]\npreset = \"nope\"\n",
            "[plus]\npreset = \"identity\"\na = [[1, 0], [0, 1]]\n",
            "[plus]\npreset = \"identity\"\n[convergence]\neps = [0.1, 0.2, 0.05]\n",
            "[plus]\npreset = \"identity\"\n[interface]\nr = 12.0\nr_compare = 8.0\n",
            "dimension = 4\n[plus]\npreset = \"identity\"\n",
        ] {
            let cfg = RunConfig::parse(text).and_then(|c| c.field().map(|_| c));
            assert!(matches!(cfg, Err(CliError::Config(_))), "{text}");
        }
    }
}
