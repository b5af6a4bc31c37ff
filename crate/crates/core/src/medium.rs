//! Element-wise permittivity maps for the periodic background and the line
//! defect, and the standing assumptions on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned inclusion `[x0, x1) x [y0, y1)` of permittivity `eps` in the unit cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub eps: f64,
}

/// Background value plus inclusions; later inclusions override earlier ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellGeometry {
    pub background: f64,
    #[serde(default)]
    pub inclusions: Vec<Rect>,
}

/// Defect region in strip coordinates: the central cell is `y in [0, 1]`,
/// its neighbours `[-1, 0]` and `[1, 2]`, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectRect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub delta_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefectGeometry {
    pub regions: Vec<DefectRect>,
}

/// Permittivity sampled at element midpoints.
///
/// Element `(i, r)` (column `i < n`, row `r < n * n_y`) is stored at `i + n * r`.
#[derive(Debug, Clone, PartialEq)]
pub struct DielectricMap {
    n: usize,
    n_y: usize,
    values: Vec<f64>,
    defect_support: Vec<usize>,
}

impl DielectricMap {
    /// Wrap raw element values. No positivity checks: see [`validate_assumptions`].
    pub fn from_values(n: usize, n_y: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n * n_y {
            return Err(Error::Geometry(format!(
                "{} values for a {n}x{} element grid",
                values.len(),
                n * n_y
            )));
        }
        Ok(Self {
            n,
            n_y,
            values,
            defect_support: Vec::new(),
        })
    }

    /// Elements per cell side.
    pub fn resolution(&self) -> usize {
        self.n
    }

    /// Cells in the y direction (1 for a unit cell).
    pub fn strip_extent(&self) -> usize {
        self.n_y
    }

    /// Element rows, `n * n_y`.
    pub fn rows(&self) -> usize {
        self.n * self.n_y
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, row: usize) -> f64 {
        self.values[i + self.n * row]
    }

    /// Sorted element indices where the defect changed the background.
    pub fn defect_support(&self) -> &[usize] {
        &self.defect_support
    }

    /// Index of the central cell of a strip.
    pub fn central_cell(&self) -> usize {
        (self.n_y - 1) / 2
    }

    /// The y-periodic extension of a unit-cell map to `n_y` cells.
    pub fn tile(&self, n_y: usize) -> Result<Self> {
        if self.n_y != 1 {
            return Err(Error::Geometry("only unit-cell maps can be tiled".into()));
        }
        if n_y == 0 {
            return Err(Error::InvalidInput("n_y must be positive".into()));
        }
        let values = self.values.iter().copied().cycle().take(self.values.len() * n_y).collect();
        Ok(Self {
            n: self.n,
            n_y,
            values,
            defect_support: Vec::new(),
        })
    }

    /// Restriction of a strip map to cell `c` as a unit-cell map.
    pub fn cell(&self, c: usize) -> Result<Self> {
        if c >= self.n_y {
            return Err(Error::Geometry(format!("cell {c} outside a strip of {} cells", self.n_y)));
        }
        let len = self.n * self.n;
        Self::from_values(self.n, 1, self.values[c * len..(c + 1) * len].to_vec())
    }

    fn same_geometry(&self, other: &Self) -> Result<()> {
        if self.n != other.n || self.n_y != other.n_y {
            return Err(Error::Geometry(format!(
                "maps differ in geometry: N={} N_y={} vs N={} N_y={}",
                self.n, self.n_y, other.n, other.n_y
            )));
        }
        Ok(())
    }
}

fn check_permittivity(v: f64, what: &str) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Assumption(format!("{what}: permittivity {v} is not finite (bounded)")));
    }
    if v <= 0.0 {
        return Err(Error::Assumption(format!(
            "{what}: permittivity {v} <= 0 (uniformly_positive)"
        )));
    }
    Ok(())
}

/// Sample the cell geometry at element midpoints on an `n x n` grid.
pub fn build_periodic_medium(geometry: &CellGeometry, n: usize) -> Result<DielectricMap> {
    if n < 4 {
        return Err(Error::InvalidInput(format!("N = {n} < 4")));
    }
    check_permittivity(geometry.background, "background")?;
    for (k, r) in geometry.inclusions.iter().enumerate() {
        check_permittivity(r.eps, &format!("inclusion {k}"))?;
        let inside = |a: f64, b: f64| (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b) && a < b;
        if !inside(r.x0, r.x1) || !inside(r.y0, r.y1) {
            return Err(Error::Geometry(format!(
                "inclusion {k} [{}, {}) x [{}, {}) is not a rectangle inside [0,1]^2",
                r.x0, r.x1, r.y0, r.y1
            )));
        }
    }
    let h = 1.0 / n as f64;
    let values = (0..n * n)
        .map(|e| {
            let (i, j) = (e % n, e / n);
            let (xm, ym) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
            geometry.inclusions
                .iter()
                .rev()
                .find(|r| xm >= r.x0 && xm < r.x1 && ym >= r.y0 && ym < r.y1)
                .map_or(geometry.background, |r| r.eps)
        })
        .collect();
    DielectricMap::from_values(n, 1, values)
}

/// Build the strip map `eps0 + t * delta_eps` on the defect regions, periodic elsewhere.
pub fn apply_line_defect(
    eps0: &DielectricMap,
    defect: &DefectGeometry,
    t: f64,
    n_y: usize,
) -> Result<DielectricMap> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidInput(format!("defect strength t = {t} must be finite and >= 0")));
    }
    if n_y % 2 == 0 {
        return Err(Error::InvalidInput(format!("N_y = {n_y} must be odd so the defect cell is central")));
    }
    let mut map = eps0.tile(n_y)?;
    let c0 = map.central_cell() as f64;
    // Defect regions must stay clear of the first and last cell of the torus.
    let (ylo, yhi) = (1.0 - c0, c0);
    for (k, r) in defect.regions.iter().enumerate() {
        if !r.delta_eps.is_finite() {
            return Err(Error::InvalidInput(format!("defect region {k}: delta_eps not finite")));
        }
        if !(r.x0 >= 0.0 && r.x1 <= 1.0 && r.x0 < r.x1) {
            return Err(Error::Geometry(format!("defect region {k}: x-range [{}, {}) outside [0,1]", r.x0, r.x1)));
        }
        if !(r.y0 < r.y1 && r.y0 >= ylo && r.y1 <= yhi) {
            return Err(Error::Geometry(format!(
                "defect region {k}: y-range [{}, {}) reaches the truncation boundary; \
                 a line defect must be localised within [{ylo}, {yhi}] for N_y = {n_y}",
                r.y0, r.y1
            )));
        }
    }
    let n = map.n;
    let h = 1.0 / n as f64;
    let mut support = Vec::new();
    for row in 0..map.rows() {
        let ym = (row as f64 + 0.5) * h - c0;
        for i in 0..n {
            let xm = (i as f64 + 0.5) * h;
            let hit = defect
                .regions
                .iter()
                .rev()
                .find(|r| xm >= r.x0 && xm < r.x1 && ym >= r.y0 && ym < r.y1);
            if let Some(r) = hit {
                let dv = t * r.delta_eps;
                if dv != 0.0 {
                    let e = i + n * row;
                    map.values[e] += dv;
                    check_permittivity(map.values[e], "defect element")?;
                    support.push(e);
                }
            }
        }
    }
    map.defect_support = support;
    Ok(map)
}

/// Evaluation of the standing assumptions on a background/perturbed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub bounded: bool,
    pub uniformly_positive: bool,
    /// Smallest permittivity over both maps.
    pub min_permittivity: f64,
    pub perturbation_nonneg: bool,
    pub strict_on_region: bool,
    /// Elements with `eps1 > eps0`.
    pub strict_elements: Vec<usize>,
    /// `max |1/eps0 - 1/eps1|`.
    pub perturbation_size: f64,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.bounded && self.uniformly_positive && self.perturbation_nonneg && self.strict_on_region
    }
}

/// [`validate_assumptions_with`] requiring at least one strict element.
pub fn validate_assumptions(eps0: &DielectricMap, eps1: &DielectricMap) -> Result<AssumptionReport> {
    validate_assumptions_with(eps0, eps1, 1)
}

/// `min_strict` is the discrete stand-in for the size of the region where the
/// perturbation is strictly positive.
pub fn validate_assumptions_with(
    eps0: &DielectricMap,
    eps1: &DielectricMap,
    min_strict: usize,
) -> Result<AssumptionReport> {
    eps0.same_geometry(eps1)?;
    let all = || eps0.values.iter().chain(&eps1.values);
    let bounded = all().all(|v| v.is_finite());
    let min_permittivity = all().copied().fold(f64::INFINITY, f64::min);
    let strict_elements: Vec<usize> = eps0
        .values
        .iter()
        .zip(&eps1.values)
        .enumerate()
        .filter(|(_, (a, b))| *b > *a)
        .map(|(e, _)| e)
        .collect();
    Ok(AssumptionReport {
        bounded,
        uniformly_positive: min_permittivity > 0.0,
        min_permittivity,
        perturbation_nonneg: eps0.values.iter().zip(&eps1.values).all(|(a, b)| b >= a),
        strict_on_region: strict_elements.len() >= min_strict.max(1),
        strict_elements,
        perturbation_size: perturbation_size(eps0, eps1)?,
    })
}

/// `max over elements of |1/eps0 - 1/eps1|`.
pub fn perturbation_size(eps0: &DielectricMap, eps1: &DielectricMap) -> Result<f64> {
    eps0.same_geometry(eps1)?;
    Ok(eps0
        .values
        .iter()
        .zip(&eps1.values)
        .map(|(a, b)| (1.0 / a - 1.0 / b).abs())
        .fold(0.0, f64::max))
}
