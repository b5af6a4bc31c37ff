//! TOML run configuration.

use std::path::{Path, PathBuf};

use gapmodes::medium::{CellGeometry, DefectGeometry};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Defect strength: one value or a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Strength {
    One(f64),
    Sweep(Vec<f64>),
}

impl Strength {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Strength::One(t) => vec![*t],
            Strength::Sweep(ts) => ts.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectSection {
    pub regions: Vec<gapmodes::medium::DefectRect>,
    pub t: Strength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Discretization {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_y")]
    pub n_y: usize,
    /// Defaults to `n_y`.
    #[serde(default)]
    pub n_k: Option<usize>,
    #[serde(default = "default_n_bands")]
    pub n_bands: usize,
}

fn default_n() -> usize {
    32
}

fn default_n_y() -> usize {
    33
}

fn default_n_bands() -> usize {
    8
}

impl Default for Discretization {
    fn default() -> Self {
        Self {
            n: default_n(),
            n_y: default_n_y(),
            n_k: None,
            n_bands: default_n_bands(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GapSection {
    /// Search window `[lo, hi]`; the widest gap inside is studied.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
    /// Study this gap instead of searching.
    #[serde(default)]
    pub edges: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default)]
    pub tau_lambda: Option<f64>,
    #[serde(default)]
    pub tau_k: Option<f64>,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
}

fn default_rank_tol() -> f64 {
    gapmodes::bs::RANK_TOL
}

fn default_alpha_min() -> f64 {
    1e-3
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tau_lambda: None,
            tau_k: None,
            rank_tol: default_rank_tol(),
            alpha_min: default_alpha_min(),
        }
    }
}

/// Test hooks that replace computed data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Replace the band attaining the upper gap edge by a quartic `Lambda_1 + c (k - k*)^4`.
    #[serde(default)]
    pub quartic_edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("gapmodes-out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for Output {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

/// The file as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    medium: CellGeometry,
    defect: DefectSection,
    k_x: f64,
    #[serde(default)]
    discretization: Discretization,
    #[serde(default)]
    gap: GapSection,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default)]
    output: Output,
    #[serde(default, rename = "override")]
    overrides: Overrides,
}

/// Validated configuration with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub medium: CellGeometry,
    pub defect: DefectGeometry,
    pub strengths: Vec<f64>,
    pub k_x: f64,
    pub n: usize,
    pub n_y: usize,
    pub n_k: usize,
    pub n_bands: usize,
    pub window: Option<(f64, f64)>,
    pub gap: Option<(f64, f64)>,
    pub tolerances: Tolerances,
    pub output: Output,
    pub overrides: Overrides,
    /// Defaults that were adjusted while validating.
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// More than one strength requested.
    pub fn is_sweep(&self) -> bool {
        self.strengths.len() > 1
    }

    /// The counting pipeline needs the band grid to be the strip's fiber grid.
    pub fn require_exact(&self) -> CliResult<()> {
        if self.n_k != self.n_y {
            return Err(CliError::Config(format!(
                "n_k = {} must equal n_y = {} for the counting pipeline",
                self.n_k, self.n_y
            )));
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> CliResult<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
    let mut warnings = Vec::new();
    let d = raw.discretization;
    let n_k = match d.n_k {
        Some(k) => k,
        None => {
            warnings.push(format!("n_k not given: set to n_y = {}", d.n_y));
            d.n_y
        }
    };
    if d.n < 2 || d.n_bands == 0 || n_k < 3 {
        return Err(CliError::Config("need n >= 2, n_bands >= 1 and n_k >= 3".into()));
    }
    if d.n_y % 2 == 0 || d.n_y < 3 {
        return Err(CliError::Config(format!("n_y = {} must be odd and at least 3", d.n_y)));
    }
    let t = raw.tolerances;
    let positive = [t.tau_lambda.unwrap_or(1.0), t.tau_k.unwrap_or(1.0), t.rank_tol, t.alpha_min];
    if positive.iter().any(|v| !(*v > 0.0)) {
        return Err(CliError::Config("tolerances must be positive".into()));
    }
    let strengths = raw.defect.t.values();
    if strengths.is_empty() || strengths.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(CliError::Config("defect strengths must be finite and nonnegative".into()));
    }
    let pair = |p: Option<[f64; 2]>, what: &str| -> CliResult<Option<(f64, f64)>> {
        match p {
            Some([a, b]) if a < b => Ok(Some((a, b))),
            Some(_) => Err(CliError::Config(format!("{what} must be increasing"))),
            None => Ok(None),
        }
    };
    Ok(RunConfig {
        medium: raw.medium,
        defect: DefectGeometry { regions: raw.defect.regions },
        strengths,
        k_x: raw.k_x,
        n: d.n,
        n_y: d.n_y,
        n_k,
        n_bands: d.n_bands,
        window: pair(raw.gap.window, "gap window")?,
        gap: pair(raw.gap.edges, "gap edges")?,
        tolerances: t,
        output: raw.output,
        overrides: raw.overrides,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
k_x = 0.0
[medium]
background = 1.0
inclusions = [{ x0 = 0.25, x1 = 0.75, y0 = 0.25, y1 = 0.75, eps = 12.0 }]
[defect]
regions = [{ x0 = 0.25, x1 = 0.75, y0 = 0.8125, y1 = 0.9375, delta_eps = 1.0 }]
t = 0.05
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!((c.n, c.n_y, c.n_k, c.n_bands), (32, 33, 33, 8));
        assert_eq!(c.warnings.len(), 1);
        assert!(c.warnings[0].contains("n_k"));
        assert!(!c.is_sweep());
        assert!(c.require_exact().is_ok());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("background = 1.0", "background = 1.0\nepsilonn = 3.0");
        let e = parse_config_str(&text).unwrap_err().to_string();
        assert!(e.contains("epsilonn"), "{e}");
    }

    #[test]
    fn strength_list_enables_sweep() {
        let c = parse_config_str(&MINIMAL.replace("t = 0.05", "t = [0.05, 0.1, 0.2]")).unwrap();
        assert!(c.is_sweep());
        assert_eq!(c.strengths, vec![0.05, 0.1, 0.2]);
    }

    #[test]
    fn missing_key_and_bad_tolerance_fail() {
        assert!(parse_config_str(&MINIMAL.replace("k_x = 0.0", "")).unwrap_err().to_string().contains("k_x"));
        let bad = format!("{MINIMAL}[tolerances]\nrank_tol = 0.0\n");
        assert!(parse_config_str(&bad).is_err());
    }

    #[test]
    fn mismatched_grid_rejected_for_counting() {
        let c = parse_config_str(&format!("{MINIMAL}[discretization]\nn_k = 20\n")).unwrap();
        assert!(c.require_exact().is_err());
    }
}
