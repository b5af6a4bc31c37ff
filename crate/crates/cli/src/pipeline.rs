//! medium, bands, gap and edge set, then both counts for every strength.

use std::path::Path;

use gapmodes::bloch::{analyze_gap, compute_bands, sort_analytic, BandStructure, GapOptions, GapReport, Kgrid};
use gapmodes::bs::{assemble_amu, check_lemma_estimates, kappa_spectrum, t_threshold, LemmaOptions};
use gapmodes::medium::build_periodic_medium;
use gapmodes::study::{choose_gap, fiber_bands, Background, DefectRun, StudyOptions};
use gapmodes::supercell::decay_profile;
use gapmodes::{FloquetContext, C64};
use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Format, RunConfig};
use crate::error::CliResult;
use crate::report::{emit_bands, IdentityCheck, IdentitySuite, ModeReport, ReportBundle, RunReport, Verdict, SCHEMA_VERSION};

/// Relative tolerance of the identity suite in the report.
const IDENTITY_TOL: f64 = 1e-9;

pub fn study_options(cfg: &RunConfig) -> StudyOptions {
    let t = cfg.tolerances;
    StudyOptions {
        n_bands: cfg.n_bands,
        window: cfg.window.unwrap_or((0.0, f64::INFINITY)),
        gap: cfg.gap,
        gap_options: GapOptions {
            tau_lambda: t.tau_lambda,
            tau_k: t.tau_k,
            alpha_min: t.alpha_min,
            ..GapOptions::default()
        },
        rank_tol: t.rank_tol,
        ..StudyOptions::default()
    }
}

pub struct BandsOutcome {
    pub bands: BandStructure,
    pub gap: Option<GapReport>,
    pub warnings: Vec<String>,
}

/// Band structure on the `n_k` grid and, if one exists, the gap report.
pub fn run_bands(cfg: &RunConfig) -> CliResult<BandsOutcome> {
    let opts = study_options(cfg);
    let cell = build_periodic_medium(&cfg.medium, cfg.n)?;
    let kgrid = Kgrid::uniform(cfg.n_k)?;
    let bands = sort_analytic(compute_bands(&cell, cfg.k_x, &kgrid, cfg.n_bands)?)?;
    let mut warnings = cfg.warnings.clone();
    let gap = match choose_gap(&bands, &opts) {
        Ok(g) => Some(analyze_gap(&bands, g, &opts.gap_options)?),
        Err(e) => {
            warnings.push(e.to_string());
            None
        }
    };
    if cfg.overrides.quartic_edge {
        if let Some(g) = gap {
            let g = quartic_override(&bands, &g, &opts)?;
            return Ok(BandsOutcome { bands, gap: Some(g), warnings });
        }
    }
    Ok(BandsOutcome { bands, gap, warnings })
}

/// Re-analyze the gap with every edge band replaced by `Lambda_1 + c (k - k*)^4`.
fn quartic_override(bands: &BandStructure, gap: &GapReport, opts: &StudyOptions) -> CliResult<GapReport> {
    let mut rows: Vec<Vec<f64>> = (0..bands.n_k()).map(|p| bands.row(p).to_vec()).collect();
    let pi = std::f64::consts::PI;
    for pt in &gap.sigma {
        let top = bands.band(pt.band).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let c = ((top - gap.lambda1) / pi.powi(4)).max(1.0);
        for (p, row) in rows.iter_mut().enumerate() {
            let d = (bands.kgrid().get(p) - pt.k_star + pi).rem_euclid(2.0 * pi) - pi;
            row[pt.band] = gap.lambda1 + c * d.powi(4);
        }
    }
    let synthetic = BandStructure::from_table(bands.kgrid().clone(), rows)?;
    let mut report = analyze_gap(&synthetic, gap.gap(), &opts.gap_options)?;
    report.warnings.push("edge bands replaced by a synthetic quartic".into());
    Ok(report)
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Three random inputs per fiber identity.
pub fn identity_suite(ctx: &FloquetContext, gap: &GapReport, n_bands: usize) -> CliResult<IdentitySuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (l0, l1) = (gap.lambda0, gap.lambda1);
    let shifts: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.5..l1)).collect();
    let modes: Vec<(usize, usize)> = (0..3).map(|_| (rng.gen_range(0..n_bands), rng.gen_range(0..ctx.n_y()))).collect();
    let coin = ctx.spectral_coincidence(&shifts, &modes, IDENTITY_TOL)?;
    let (mut e3, mut e4, mut e5) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..3 {
        let g = random(&mut rng, ctx.strip_dim());
        let lambda = rng.gen_range(l0..l1);
        let a = ctx.resolvent_via_bloch(&g, lambda)?;
        let b = ctx.strip().apply_resolvent(lambda, &g)?;
        let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        e3 = e3.max(num / b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt());
        let mu = 1.0 / (rng.gen_range(l0..l1) + 1.0);
        e4 = e4.max(rel(ctx.rayleigh_via_bloch(&g, mu)?, ctx.rayleigh_direct(&g, mu)?));
        e5 = e5.max(rel(ctx.hminus_norm_via_bloch(&g)?, ctx.hminus_norm_direct(&g)?));
    }
    let check = |e: f64| IdentityCheck { max_error: e, pass: e <= IDENTITY_TOL };
    let spectral = coin.max_residual.max(coin.max_rayleigh_error);
    Ok(IdentitySuite {
        tolerance: IDENTITY_TOL,
        spectral_coincidence: IdentityCheck {
            max_error: spectral,
            pass: coin.holds(IDENTITY_TOL),
        },
        resolvent: check(e3),
        rayleigh: check(e4),
        hminus_norm: check(e5),
    })
}

fn mass_within(profile: &[f64], r: usize) -> f64 {
    let n = profile.len();
    profile.iter().enumerate().filter(|(i, _)| (*i).min(n - i) <= r).map(|(_, m)| m).sum()
}

fn run_report(bg: &Background, run: DefectRun, gap: &GapReport) -> CliResult<RunReport> {
    let n = gap.n;
    let c0 = (bg.ctx().n_y() - 1) / 2;
    let lemmas = check_lemma_estimates(
        &run.state,
        bg.strip0(),
        bg.kernel(),
        bg.window(),
        run.assumptions.perturbation_size,
        &LemmaOptions::default(),
    )?;
    let kappa1_mid = if run.state.rank() > 0 {
        kappa_spectrum(&assemble_amu(&run.state, bg.kernel(), bg.window().mid())?, 1)?.first().copied()
    } else {
        None
    };
    let upper_bound_check = gap
        .nondegenerate_ok
        .then(|| run.trace.kappa.iter().all(|row| row.get(n).map_or(true, |&k| k > -1.0)));
    let modes = run
        .spectrum
        .modes
        .iter()
        .map(|m| {
            let profile = decay_profile(&run.strip1, &m.vector, c0);
            ModeReport {
                lambda: m.lambda,
                residual: m.residual,
                mass_within_3: mass_within(&profile, 3),
                profile,
            }
        })
        .collect();
    let a = &run.assumptions;
    let vacuous = a.perturbation_size == 0.0;
    let flags = a.all_hold() && gap.nonconstant_ok && gap.nondegenerate_ok && gap.ordering_ok;
    let (bs, sc) = (run.trace.count, run.spectrum.count);
    let matched = bs == n && sc == n;
    let verdict = if vacuous {
        Verdict::Vacuous
    } else if !flags {
        Verdict::AssumptionsUnverified
    } else if matched {
        Verdict::True
    } else {
        Verdict::False
    };
    Ok(RunReport {
        t: run.t,
        assumptions: run.assumptions.clone(),
        rank: run.state.rank(),
        bs_count: bs,
        supercell_count: sc,
        bs_lambdas: run.trace.lambdas(),
        supercell_lambdas: run.spectrum.lambdas(),
        max_mismatch: run.eigenvalue_mismatch(),
        kappa1_mid,
        upper_bound_check,
        lemmas,
        modes,
        trace: run.trace,
        theorem_count_match: flags && matched,
        verdict,
    })
}

fn overall(runs: &[RunReport]) -> Verdict {
    let live: Vec<Verdict> = runs.iter().map(|r| r.verdict).filter(|v| *v != Verdict::Vacuous).collect();
    if live.is_empty() {
        Verdict::Vacuous
    } else if live.contains(&Verdict::AssumptionsUnverified) {
        Verdict::AssumptionsUnverified
    } else if live.contains(&Verdict::False) {
        Verdict::False
    } else {
        Verdict::True
    }
}

/// Run everything. Band artifacts are written to `out` before counting starts.
pub fn run_pipeline(cfg: &RunConfig, out: Option<(&Path, &[Format])>) -> CliResult<ReportBundle> {
    cfg.require_exact()?;
    let opts = study_options(cfg);
    let cell = build_periodic_medium(&cfg.medium, cfg.n)?;
    info!("diagonalizing {} fibers at N = {}", cfg.n_y, cfg.n);
    let (ctx, bands, computed) = fiber_bands(&cell, cfg.k_x, cfg.n_y, &opts)?;
    // the quartic override only affects the reported edge analysis
    let gap = if cfg.overrides.quartic_edge {
        quartic_override(&bands, &computed, &opts)?
    } else {
        computed.clone()
    };
    if let Some((dir, formats)) = out {
        emit_bands(dir, &bands, Some(&gap), formats)?;
    }
    let mut warnings = cfg.warnings.clone();
    warnings.extend(gap.warnings.iter().cloned());
    let identities = identity_suite(&ctx, &gap, cfg.n_bands)?;
    let bg = Background::assemble(&cell, &cfg.defect, ctx, bands, computed)?;
    if bg.kernel_agreement() > 1e-8 {
        warn!("direct and Bloch kernels differ by {:.3e}", bg.kernel_agreement());
        warnings.push(format!("direct and Bloch kernels differ by {:.3e}", bg.kernel_agreement()));
    }
    let mut runs = Vec::with_capacity(cfg.strengths.len());
    for &t in &cfg.strengths {
        info!("strength t = {t}");
        let run = bg.run(t, &opts)?;
        runs.push(run_report(&bg, run, &gap)?);
    }
    let threshold = t_threshold(&runs.iter().filter_map(|r| r.kappa1_mid.map(|k| (r.t, k))).collect::<Vec<_>>());
    let verdict = overall(&runs);
    Ok(ReportBundle {
        schema: SCHEMA_VERSION.to_string(),
        config: cfg.clone(),
        warnings,
        kernel_agreement: bg.kernel_agreement(),
        gap,
        identities,
        threshold,
        theorem_count_match: runs.iter().any(|r| r.verdict != Verdict::Vacuous)
            && runs.iter().filter(|r| r.verdict != Verdict::Vacuous).all(|r| r.theorem_count_match),
        runs,
        verdict,
        verdict_label: verdict.label().to_string(),
    })
}
