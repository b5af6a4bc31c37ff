use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use serde::{Deserialize, Serialize};

use super::BandStructure;
use crate::error::{Error, Result};

/// Open spectral gap `(lower, upper)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub lower: f64,
    pub upper: f64,
}

impl Gap {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }
}

/// Maximal open intervals of `window` missing every band range.
///
/// The window is clipped at `min_k max_s lambda_s(k)`, above which uncomputed
/// bands could lie.
pub fn detect_gaps(bands: &BandStructure, window: (f64, f64)) -> Vec<Gap> {
    let top = (0..bands.n_k())
        .map(|p| bands.row(p).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .fold(f64::INFINITY, f64::min);
    let (lo, hi) = (window.0, window.1.min(top));
    let mut ranges: Vec<(f64, f64)> = (0..bands.n_bands())
        .map(|s| {
            let b = bands.band(s);
            (b.iter().copied().fold(f64::INFINITY, f64::min), b.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect();
    ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut gaps = Vec::new();
    let mut cursor = lo;
    for (a, b) in ranges {
        if a > cursor && cursor < hi {
            let upper = a.min(hi);
            if upper > cursor {
                gaps.push(Gap { lower: cursor, upper });
            }
        }
        cursor = cursor.max(b);
    }
    gaps
}

/// One element `(s_j, k_j)` of the edge set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPoint {
    /// Band label.
    pub band: usize,
    /// Grid index of the sampled minimizer.
    pub p: usize,
    /// Grid momentum `k_p`.
    pub k: f64,
    /// Momentum refined by a three-point parabola.
    pub k_star: f64,
    /// Sampled band value at `k_p`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSet {
    /// First band label above the gap.
    pub s0: usize,
    /// Minimum over `s >= s0` and the grid of `lambda_s(k)`.
    pub lambda1: f64,
    pub points: Vec<SigmaPoint>,
}

impl SigmaSet {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Band labels appearing in the edge set.
    pub fn bands(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.points.iter().map(|p| p.band).collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

fn fold(x: f64) -> f64 {
    use std::f64::consts::PI;
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Extract `Sigma = {(s, k*): lambda_s(k*) = Lambda_1}` up to the tolerances.
pub fn extract_sigma(bands: &BandStructure, gap: Gap, tau_lambda: f64, tau_k: f64) -> Result<SigmaSet> {
    if !(tau_lambda > 0.0 && tau_k > 0.0) {
        return Err(Error::InvalidInput("tolerances must be positive".into()));
    }
    let nb = bands.n_bands();
    let mins: Vec<f64> = (0..nb).map(|s| bands.band(s).iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let s0 = (0..nb)
        .find(|&s| mins[s] >= gap.upper - tau_lambda)
        .ok_or_else(|| Error::InvalidInput(format!("no computed band above the gap edge {}", gap.upper)))?;
    let lambda1 = mins[s0..].iter().copied().fold(f64::INFINITY, f64::min);
    let dk = bands.kgrid().spacing();
    let mut points = Vec::new();
    for s in s0..nb {
        let near = (0..bands.n_k()).filter(|&p| bands.value(s, p) <= lambda1 + tau_lambda).count();
        if near > 10 {
            return Err(Error::FlatBandEdge { band: s, samples: near });
        }
        let mut found: Vec<SigmaPoint> = Vec::new();
        for p in 0..bands.n_k() {
            let y0 = bands.value(s, p);
            if y0 > lambda1 + tau_lambda {
                continue;
            }
            let (sl, pl) = bands.neighbour(s, p, -1);
            let (sr, pr) = bands.neighbour(s, p, 1);
            let (ym, yp) = (bands.value(sl, pl), bands.value(sr, pr));
            if y0 > ym || y0 > yp {
                continue;
            }
            let denom = ym - 2.0 * y0 + yp;
            let shift = if denom > 0.0 { (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5) * dk } else { 0.0 };
            let k = bands.kgrid().get(p);
            let cand = SigmaPoint { band: s, p, k, k_star: fold(k + shift), value: y0 };
            match found.iter_mut().find(|q| fold(q.k_star - cand.k_star).abs() <= tau_k) {
                Some(q) if cand.value < q.value => *q = cand,
                Some(_) => {}
                None => found.push(cand),
            }
        }
        points.extend(found);
    }
    Ok(SigmaSet { s0, lambda1, points })
}

/// Quadratic non-degeneracy fit at one edge point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFit {
    pub band: usize,
    pub k_star: f64,
    /// Fitted curvature coefficient: `lambda - Lambda_1 ~ alpha |k - k*|^2`.
    pub alpha: f64,
    /// Half-width of the fitting window.
    pub delta: f64,
    /// RMS residual of the fit.
    pub residual: f64,
    pub holds: bool,
}

/// Fit `lambda_s(k) - Lambda_1` on `window` samples either side of each edge point.
///
/// The model is a quartic in `x = k - k*`; `alpha` is its quadratic coefficient.
/// The flag also requires every sample to satisfy `lambda - Lambda_1 >= alpha_min x^2`.
pub fn fit_edge_nondegeneracy(
    bands: &BandStructure,
    sigma: &SigmaSet,
    window: usize,
    alpha_min: f64,
) -> Result<(Vec<EdgeFit>, bool)> {
    if window < 2 || 2 * window + 1 > bands.n_k() {
        return Err(Error::InvalidInput(format!("fit window {window} incompatible with N_k = {}", bands.n_k())));
    }
    let dk = bands.kgrid().spacing();
    let delta = window as f64 * dk;
    let mut fits = Vec::new();
    for pt in &sigma.points {
        let offset = fold(pt.k_star - pt.k);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for j in -(window as isize)..=(window as isize) {
            let (s, q) = bands.neighbour(pt.band, pt.p, j);
            xs.push(j as f64 * dk - offset);
            ys.push(bands.value(s, q) - sigma.lambda1);
        }
        let m = xs.len();
        let basis = Mat::from_fn(m, 5, |i, c| (xs[i] / delta).powi(c as i32));
        let rhs = Mat::from_fn(m, 1, |i, _| ys[i]);
        let coef = basis.qr().solve_lstsq(&rhs);
        let alpha = coef[(2, 0)] / (delta * delta);
        let fitted = &basis * &coef;
        let residual = ((0..m).map(|i| (fitted[(i, 0)] - ys[i]).powi(2)).sum::<f64>() / m as f64).sqrt();
        let scale = ys.iter().fold(0.0f64, |a, y| a.max(y.abs())).max(1e-300);
        let bound_ok = xs
            .iter()
            .zip(&ys)
            .all(|(x, y)| *y >= alpha_min * x * x - 1e-12 * scale);
        fits.push(EdgeFit {
            band: pt.band,
            k_star: pt.k_star,
            alpha,
            delta,
            residual,
            holds: alpha >= alpha_min && bound_ok,
        });
    }
    let all = fits.iter().all(|f| f.holds);
    Ok((fits, all))
}

/// `true` for bands that vary with `k`; `false` flags a constant band.
pub fn check_nonconstant_bands(bands: &BandStructure) -> Vec<bool> {
    (0..bands.n_bands())
        .map(|s| {
            let b = bands.band(s);
            let lo = b.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = b.iter().sum::<f64>() / b.len() as f64;
            hi - lo >= 1e-8 * (1.0 + mean.abs())
        })
        .collect()
}

/// `eta = min over bands outside S and all k of |lambda_s(k) - Lambda_1|`.
pub fn isolation_margin(bands: &BandStructure, sigma: &SigmaSet, lambda1: f64) -> f64 {
    let in_s = sigma.bands();
    (0..bands.n_bands())
        .filter(|s| !in_s.contains(s))
        .flat_map(|s| bands.band(s))
        .map(|v| (v - lambda1).abs())
        .fold(f64::INFINITY, f64::min)
}

/// Tolerances for [`analyze_gap`]; `None` picks the defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapOptions {
    /// Default `1e-6 (Lambda_1 - Lambda_0)`.
    pub tau_lambda: Option<f64>,
    /// Default `2 dk`.
    pub tau_k: Option<f64>,
    /// Fit window half-width in grid samples.
    pub fit_window: usize,
    pub alpha_min: f64,
}

impl Default for GapOptions {
    fn default() -> Self {
        Self {
            tau_lambda: None,
            tau_k: None,
            fit_window: 4,
            alpha_min: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub lambda0: f64,
    pub lambda1: f64,
    pub sigma: Vec<SigmaPoint>,
    pub n: usize,
    pub s0: usize,
    pub edge_fits: Vec<EdgeFit>,
    /// Isolation margin of the bands outside `S`.
    pub isolation_margin: f64,
    pub tau_lambda: f64,
    pub tau_k: f64,
    /// No constant band touches a gap edge.
    pub nonconstant_ok: bool,
    /// Quadratic lower bound verified at every edge point.
    pub nondegenerate_ok: bool,
    /// Bands below `s0` stay below `Lambda_0`, bands from `s0` on stay above `Lambda_1`.
    pub ordering_ok: bool,
    pub warnings: Vec<String>,
}

impl GapReport {
    pub fn gap(&self) -> Gap {
        Gap { lower: self.lambda0, upper: self.lambda1 }
    }

    pub fn width(&self) -> f64 {
        self.lambda1 - self.lambda0
    }
}

/// Full edge analysis of one gap.
pub fn analyze_gap(bands: &BandStructure, gap: Gap, opts: &GapOptions) -> Result<GapReport> {
    let tau_lambda = opts.tau_lambda.unwrap_or(1e-6 * gap.width());
    let tau_k = opts.tau_k.unwrap_or(2.0 * bands.kgrid().spacing());
    let sigma = extract_sigma(bands, gap, tau_lambda, tau_k)?;
    let lambda1 = sigma.lambda1;
    let (edge_fits, nondegenerate_ok) = fit_edge_nondegeneracy(bands, &sigma, opts.fit_window, opts.alpha_min)?;
    let eta = isolation_margin(bands, &sigma, lambda1);
    let mut warnings: Vec<String> = bands.warnings().to_vec();
    if eta <= tau_lambda {
        warnings.push(format!(
            "isolation margin {eta:.3e} <= tau_lambda {tau_lambda:.3e}: edge-set tolerance inconsistent"
        ));
    }
    let flags = check_nonconstant_bands(bands);
    let touches = |s: usize| {
        let b = bands.band(s);
        let tol = tau_lambda.max(1e-12);
        b.iter().any(|v| (v - gap.lower).abs() <= tol || (v - lambda1).abs() <= tol)
    };
    let nonconstant_ok = (0..bands.n_bands()).all(|s| flags[s] || !touches(s));
    let ordering_ok = (0..bands.n_bands()).all(|s| {
        let b = bands.band(s);
        if s < sigma.s0 {
            b.iter().all(|&v| v <= gap.lower + tau_lambda)
        } else {
            b.iter().all(|&v| v >= lambda1 - tau_lambda)
        }
    });
    if sigma.points.is_empty() {
        return Err(Error::Internal("edge set is empty".into()));
    }
    Ok(GapReport {
        lambda0: gap.lower,
        lambda1,
        n: sigma.n(),
        s0: sigma.s0,
        sigma: sigma.points,
        edge_fits,
        isolation_margin: eta,
        tau_lambda,
        tau_k,
        nonconstant_ok,
        nondegenerate_ok,
        ordering_ok,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::Kgrid;

    fn table(n_k: usize, f: impl Fn(usize, f64) -> Vec<f64>) -> BandStructure {
        let g = Kgrid::uniform(n_k).unwrap();
        let rows = g.points().iter().enumerate().map(|(p, &k)| f(p, k)).collect();
        BandStructure::from_table(g, rows).unwrap()
    }

    #[test]
    fn two_band_gap() {
        let b = table(8, |_, k| vec![0.5 + 0.5 * k.cos(), 2.5 - 0.5 * k.cos()]);
        let g = detect_gaps(&b, (0.0, 10.0));
        // the window is clipped at the top band's minimum
        assert_eq!(g.len(), 1);
        assert!((g[0].lower - 1.0).abs() < 1e-12);
        let top_min = b.band(1).iter().copied().fold(f64::INFINITY, f64::min);
        assert!((g[0].upper - top_min).abs() < 1e-12);
    }

    #[test]
    fn overlapping_bands_have_no_gap() {
        let b = table(9, |_, k| vec![k * k, 1.0 + k * k]);
        assert!(detect_gaps(&b, (1.0, 60.0)).is_empty());
    }

    #[test]
    fn constructed_gap_one_two() {
        // lambda_1 in [0, 1], lambda_2 in [2, 3] with k = 0 sampled
        let b = table(8, |_, k| {
            let c = (1.0 + k.cos()) / 2.0;
            vec![c, 3.0 - c]
        });
        let g = detect_gaps(&b, (0.0, 5.0));
        assert_eq!(g, vec![Gap { lower: 1.0, upper: 2.0 }]);
    }

    #[test]
    fn single_parabolic_minimum() {
        let b = table(16, |_, k| vec![-1.0 - k.cos(), 5.0 + 2.0 * k * k]);
        let gap = Gap { lower: 0.0, upper: 5.0 };
        let s = extract_sigma(&b, gap, 1e-9, 2.0 * b.kgrid().spacing()).unwrap();
        assert_eq!(s.s0, 1);
        assert_eq!(s.n(), 1);
        assert_eq!(s.points[0].band, 1);
        assert!(s.points[0].k_star.abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_of_minima() {
        let k0 = 2.0 * std::f64::consts::PI / 16.0 * 4.0;
        let b = table(16, |_, k| vec![-1.0, 5.0 + (k * k - k0 * k0).powi(2)]);
        let s = extract_sigma(&b, Gap { lower: 0.0, upper: 5.0 }, 1e-9, 2.0 * b.kgrid().spacing()).unwrap();
        assert_eq!(s.n(), 2);
        let mut ks: Vec<f64> = s.points.iter().map(|p| p.k).collect();
        ks.sort_by(f64::total_cmp);
        assert!((ks[0] + k0).abs() < 1e-12 && (ks[1] - k0).abs() < 1e-12);
        let dk = b.kgrid().spacing();
        assert!(s.points.iter().all(|p| (p.k_star.abs() - k0).abs() <= 0.5 * dk));
    }

    #[test]
    fn two_bands_touching_at_the_same_momentum() {
        let b = table(16, |_, k| vec![-1.0, 5.0 + k * k, 5.0 + 3.0 * k * k]);
        let s = extract_sigma(&b, Gap { lower: 0.0, upper: 5.0 }, 1e-9, 2.0 * b.kgrid().spacing()).unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.bands(), vec![1, 2]);
    }

    #[test]
    fn flat_edge_is_rejected() {
        let b = table(32, |_, k| vec![-1.0, 5.0 + if k.abs() < 1.5 { 0.0 } else { k.abs() - 1.5 }]);
        let err = extract_sigma(&b, Gap { lower: 0.0, upper: 5.0 }, 1e-9, 0.4).unwrap_err();
        assert!(matches!(err, Error::FlatBandEdge { band: 1, .. }));
    }

    #[test]
    fn exact_quadratic_fit() {
        let b = table(32, |_, k| vec![-1.0, 5.0 + 2.0 * k * k]);
        let s = extract_sigma(&b, Gap { lower: 0.0, upper: 5.0 }, 1e-9, 0.4).unwrap();
        let (fits, ok) = fit_edge_nondegeneracy(&b, &s, 4, 1e-3).unwrap();
        assert!(ok);
        assert!((fits[0].alpha - 2.0).abs() < 1e-6, "{}", fits[0].alpha);
    }

    #[test]
    fn quartic_edge_is_degenerate() {
        let b = table(32, |_, k| vec![-1.0, 5.0 + k.powi(4)]);
        let s = extract_sigma(&b, Gap { lower: 0.0, upper: 5.0 }, 1e-9, 0.4).unwrap();
        let (fits, ok) = fit_edge_nondegeneracy(&b, &s, 4, 1e-3).unwrap();
        assert!(!ok);
        assert!(fits[0].alpha.abs() < 1e-6);
    }

    #[test]
    fn fit_window_folds_across_the_zone_boundary() {
        use std::f64::consts::PI;
        // minimum at k = -pi
        let b = table(32, |_, k| vec![-1.0, 5.0 + 3.0 * (k.abs() - PI).powi(2)]);
        let s = extract_sigma(&b, Gap { lower: 0.0, upper: 5.0 }, 1e-9, 0.4).unwrap();
        assert_eq!(s.points[0].p, 0);
        let (fits, ok) = fit_edge_nondegeneracy(&b, &s, 4, 1e-3).unwrap();
        assert!(ok && (fits[0].alpha - 3.0).abs() < 1e-6);
    }

    #[test]
    fn constant_band_is_flagged() {
        let b = table(8, |_, k| vec![k.cos(), 4.0]);
        assert_eq!(check_nonconstant_bands(&b), vec![true, false]);
    }

    #[test]
    fn constant_band_at_the_edge_propagates() {
        let b = table(16, |_, k| vec![k.cos(), 4.0, 6.0 + k.cos()]);
        let gap = Gap { lower: 1.0, upper: 4.0 };
        let err = analyze_gap(&b, gap, &GapOptions::default()).unwrap_err();
        // a constant band at the edge is flat on every sample
        assert!(matches!(err, Error::FlatBandEdge { band: 1, .. }));
        let b = table(16, |_, k| vec![1.0, 4.0 - k.cos(), 9.0]);
        let r = analyze_gap(&b, Gap { lower: 1.0, upper: 3.0 }, &GapOptions::default()).unwrap();
        assert!(!r.nonconstant_ok);
    }

    #[test]
    fn isolation_margin_of_a_far_band() {
        let b = table(8, |_, k| vec![5.0 + k * k, 8.0]);
        let s = extract_sigma(&b, Gap { lower: 0.0, upper: 5.0 }, 1e-9, 2.0 * b.kgrid().spacing()).unwrap();
        assert_eq!(isolation_margin(&b, &s, s.lambda1), 3.0);
    }
}
