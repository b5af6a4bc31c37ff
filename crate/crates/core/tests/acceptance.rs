//! Acceptance gate: every criterion at its stated tolerance, one line each.
//!
//! Run with `cargo test -p gapmodes-core --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use gapmodes::bloch::solve_fiber;
use gapmodes::bs::{
    assemble_amu, build_k, build_l_subspaces, check_lemma_estimates, check_subspace_estimates, g0_norm, DirectKernel,
    FEvaluator, LemmaOptions, SigmaMode, SupportSolves, RANK_TOL,
};
use gapmodes::discretize::{assemble_forms, defect_coupling};
use gapmodes::fixtures::*;
use gapmodes::medium::{apply_line_defect, perturbation_size};
use gapmodes::study::{Background, DefectRun, StudyOptions};
use gapmodes::supercell::eigenvalue_monotonicity;
use gapmodes::{FloquetContext, Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn rel_vec(a: &[C64], b: &[C64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    d / b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt()
}

/// Fiber-expansion versus strip-side evaluations on the 16 x 17 fixture.
fn floquet_identities() -> Result<Outcome> {
    let start = Instant::now();
    let cell = high_contrast_map(16)?;
    let ctx = FloquetContext::new(&cell, 0.0, 17)?;
    let spectrum = ctx.fiber_spectrum();
    let gap_err = rel(spectrum[2 * 17], GAP_16_17.1).max(rel(spectrum[2 * 17 - 1], GAP_16_17.0));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = ctx.strip_dim();
    let (l0, l1) = GAP_16_17;
    let top = spectrum[spectrum.len() / 4];
    let shifts: Vec<f64> = (0..20).map(|_| rng.gen_range(-0.5..top)).collect();
    let modes: Vec<(usize, usize)> = (0..20).map(|_| (rng.gen_range(0..12), rng.gen_range(0..17))).collect();
    let coin = ctx.spectral_coincidence(&shifts, &modes, 1e-9)?;
    let (mut e3, mut e4, mut e5) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let g = random(&mut rng, n);
        let lambda = rng.gen_range(l0..l1);
        let a = ctx.resolvent_via_bloch(&g, lambda)?;
        let b = ctx.strip().apply_resolvent(lambda, &g)?;
        e3 = e3.max(rel_vec(&a, &b));
        let mu = 1.0 / (rng.gen_range(l0..l1) + 1.0);
        e4 = e4.max(rel(ctx.rayleigh_via_bloch(&g, mu)?, ctx.rayleigh_direct(&g, mu)?));
        e5 = e5.max(rel(ctx.hminus_norm_via_bloch(&g)?, ctx.hminus_norm_direct(&g)?));
    }
    let elapsed = start.elapsed();
    let pass = coin.holds(1e-9) && e3 <= 1e-9 && e4 <= 1e-9 && e5 <= 1e-9 && gap_err <= 1e-9 && elapsed <= Duration::from_secs(60);
    Ok(Outcome {
        pass,
        detail: format!(
            "(1) counts {}/{} brackets {}/{} residual {:.1e}; (3) {e3:.1e}; (4) {e4:.1e}; (5) {e5:.1e}; oracle gap {gap_err:.1e}; {:.1}s",
            coin.counts_checked - coin.count_mismatches,
            coin.counts_checked,
            coin.brackets_checked - coin.bracket_mismatches,
            coin.brackets_checked,
            coin.max_residual.max(coin.max_rayleigh_error),
            elapsed.as_secs_f64()
        ),
    })
}

/// Homogeneous medium against the free Laplacian.
fn free_medium() -> Result<Outcome> {
    let start = Instant::now();
    let cell = gapmodes::medium::DielectricMap::from_values(32, 1, vec![1.0; 32 * 32])?;
    let at0 = solve_fiber(&cell, 0.0, 0.0, Some(6))?;
    let lowest = at0.lambdas[0].abs();
    let four = 4.0 * std::f64::consts::PI.powi(2);
    let cluster = at0.lambdas[1..5].iter().map(|l| rel(*l, four)).fold(0.0, f64::max);
    let mut worst = 0.0f64;
    for i in 1..=6 {
        let k = std::f64::consts::FRAC_PI_2 * i as f64 / 6.0;
        for k in [k, -k] {
            let l = solve_fiber(&cell, 0.0, k, Some(1))?.lambdas[0];
            worst = worst.max(rel(l, k * k));
        }
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: lowest <= 1e-10 && worst <= 0.01 && cluster <= 0.01 && elapsed <= Duration::from_secs(120),
        detail: format!(
            "lambda_1(0) = {lowest:.1e}; max |lambda_1(k)/k^2 - 1| = {worst:.2e}; 4 pi^2 cluster {cluster:.2e}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    })
}

struct FullScale {
    bg: Background,
    runs: Vec<DefectRun>,
    elapsed: Duration,
}

const STRENGTHS: &[f64] = &[0.0, 0.05, 0.2, 0.5, 1.0, 2.0, 4.0];

fn full_scale() -> Result<FullScale> {
    let start = Instant::now();
    let opts = StudyOptions::default();
    let bg = Background::build(&high_contrast_map(32)?, &air_slab_defect(), 0.0, 33, &opts)?;
    let runs = STRENGTHS.iter().map(|&t| bg.run(t, &opts)).collect::<Result<Vec<_>>>()?;
    Ok(FullScale {
        bg,
        runs,
        elapsed: start.elapsed(),
    })
}

fn oracle_values(t: f64) -> &'static [f64] {
    SUPERCELL_32_33.iter().find(|(s, _)| *s == t).map(|(_, v)| *v).unwrap_or(&[])
}

/// Crossings of `kappa_m = -1` against the supercell eigenvalues.
fn equivalence(fs: &FullScale) -> Outcome {
    let width = fs.bg.gap().width();
    let mut worst = 0.0f64;
    let mut oracle = 0.0f64;
    let mut pass = true;
    for r in &fs.runs {
        match r.eigenvalue_mismatch() {
            Some(d) => worst = worst.max(d),
            None => pass = false,
        }
        let o = oracle_values(r.t);
        if r.t > 0.0 {
            pass &= o.len() == r.spectrum.modes.len();
            for (a, b) in r.spectrum.lambdas().iter().zip(o) {
                oracle = oracle.max((a - b).abs());
            }
        }
    }
    pass &= worst <= 1e-8 * width && oracle <= SUPERCELL_DIGITS_TOL;
    Outcome {
        pass,
        detail: format!(
            "{} strengths; max |lambda_BS - lambda_SC| = {worst:.2e} (tol {:.2e}); supercell vs frozen oracle {oracle:.1e}",
            fs.runs.len(),
            1e-8 * width
        ),
    }
}

/// Both counts equal `n` below threshold and vanish without a defect.
fn main_theorem(fs: &FullScale) -> Outcome {
    let g = fs.bg.gap();
    let gap_ok = rel(g.lambda0, GAP_32_33.0) <= 1e-9 && rel(g.lambda1, GAP_32_33.1) <= 1e-9 && g.n == SIGMA_COUNT_32_33;
    let assumptions = g.nonconstant_ok && g.nondegenerate_ok && g.ordering_ok;
    let mut ok_ts = Vec::new();
    let mut zero_ok = false;
    for r in &fs.runs {
        let (bs, sc) = (r.trace.count, r.spectrum.count);
        if r.t == 0.0 {
            zero_ok = bs == 0 && sc == 0;
        } else if SUB_THRESHOLD_T.contains(&r.t) && bs == g.n && sc == g.n && r.assumptions.all_hold() {
            ok_ts.push(r.t);
        }
    }
    let counts: Vec<String> = fs.runs.iter().map(|r| format!("t={}:{}/{}", r.t, r.trace.count, r.spectrum.count)).collect();
    Outcome {
        pass: gap_ok && assumptions && zero_ok && ok_ts.len() >= 3 && fs.elapsed <= Duration::from_secs(600),
        detail: format!(
            "n = {} at k = {:.6}; counts (BS/SC) {}; {} sub-threshold strengths exact; {:.0}s",
            g.n,
            g.sigma[0].k,
            counts.join(" "),
            ok_ts.len(),
            fs.elapsed.as_secs_f64()
        ),
    }
}

/// `kappa_m` nondecreasing in `mu`, eigenvalues nonincreasing in `t`, `K >= 0`.
fn monotonicity(fs: &FullScale) -> Result<Outcome> {
    let mut kappa_ok = true;
    let mut worst_drop = 0.0f64;
    let mut k_min = 0.0f64;
    for r in &fs.runs {
        let tr = &r.trace;
        for w in tr.kappa.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                let drop = a - b;
                worst_drop = worst_drop.max(drop);
                kappa_ok &= drop <= 1e-8 * a.abs().max(1.0);
            }
        }
        k_min = k_min.min(r.state.min_eigenvalue() / r.state.norm().max(f64::MIN_POSITIVE));
    }
    let psd = k_min >= -RANK_TOL;
    let g = fs.bg.gap();
    let width = g.lambda1 - g.lambda0;
    let mut sigmas: Vec<f64> = (0..=10).map(|i| g.lambda0 + width * (0.02 + 0.0978 * i as f64)).collect();
    // probe tightly around every computed in-gap eigenvalue
    for r in &fs.runs {
        for l in r.spectrum.lambdas() {
            sigmas.extend([l - 1e-6 * width, l + 1e-6 * width]);
        }
    }
    sigmas.sort_by(f64::total_cmp);
    let mono = eigenvalue_monotonicity(fs.bg.cell(), &air_slab_defect(), 0.0, 33, STRENGTHS, &sigmas)?;
    Ok(Outcome {
        pass: kappa_ok && psd && mono.holds,
        detail: format!(
            "largest kappa drop {worst_drop:.1e}; N(sigma, t) nondecreasing in t on {} shifts: {}; min K eigenvalue / ||K|| = {k_min:.1e}",
            sigmas.len(),
            mono.holds
        ),
    })
}

fn edge_modes(fs: &FullScale) -> Result<Vec<SigmaMode>> {
    let bg = &fs.bg;
    bg.gap().sigma.iter().map(|pt| SigmaMode::resolve(bg.bands(), bg.ctx(), pt, 0)).collect()
}

fn weak(fs: &FullScale) -> &DefectRun {
    fs.runs.iter().find(|r| r.t == 0.05).expect("t = 0.05 is in the strength list")
}

/// `L_perp` dimension, `f` on `L` and `L_perp`, and the slope of `f` in `k~`.
fn subspaces(fs: &FullScale) -> Result<Outcome> {
    let bg = &fs.bg;
    let run = weak(fs);
    let c0 = bg.eps1(run.t)?.central_cell();
    let subs = build_l_subspaces(&run.state, bg.strip0(), bg.ctx(), &edge_modes(fs)?, c0)?;
    let eval = FEvaluator {
        state: &run.state,
        strip0: bg.strip0(),
        ctx: bg.ctx(),
        bands: bg.bands(),
        sigma: &bg.gap().sigma,
    };
    let rep = check_subspace_estimates(&eval, &subs, bg.gap().lambda1, 20, 2, 3)?;
    // for n = 1 the bound is attained exactly, so compare up to roundoff
    let floor = rep.perp_bound * (1.0 - 1e-12);
    let slope = rep.slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = rep.dim_perp == bg.gap().n
        && rep.f0_on_l <= 1e-9
        && rep.perp_bound > 0.0
        && rep.perp_min_ratio >= floor
        && rep.perp_sampled_ratio >= floor
        && slope >= 1.85;
    Ok(Outcome {
        pass,
        detail: format!(
            "dim L_perp = {}; max f(0,u)/|u|^2 on L = {:.1e}; min on L_perp {:.6e} >= bound {:.6e} (sampled {:.6e}, relative excess {:.1e}); slopes {:?}",
            rep.dim_perp,
            rep.f0_on_l,
            rep.perp_min_ratio,
            rep.perp_bound,
            rep.perp_sampled_ratio,
            rep.perp_min_ratio / rep.perp_bound - 1.0,
            rep.slopes.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()
        ),
    })
}

/// `||G0|| = 1` and the norm estimates on random strengths of the 16 x 17 fixture.
fn norm_estimates() -> Result<Outcome> {
    let cell = high_contrast_map(16)?;
    let n_y = 17;
    let eps0 = cell.tile(n_y)?;
    let mesh = gapmodes::discretize::build_mesh(16, n_y, 0.0, None)?;
    let strip0 = assemble_forms(&mesh, &eps0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g0 = g0_norm(&strip0, 8, &mut rng)?;
    let window = gapmodes::bs::MuWindow::from_gap(GAP_16_17.0, GAP_16_17.1)?;
    let probe = apply_line_defect(&cell, &air_slab_defect(), 1.0, n_y)?;
    let support = defect_coupling(&mesh, &eps0, &probe)?.support;
    let solves = SupportSolves::direct(&strip0, &support)?;
    let (mut all, mut worst_ii, mut worst_edge) = (true, 0.0f64, f64::INFINITY);
    for i in 0..10 {
        let t = 10f64.powf(rng.gen_range(-2.0..1.0));
        let eps1 = apply_line_defect(&cell, &air_slab_defect(), t, n_y)?;
        let strip1 = assemble_forms(&mesh, &eps1)?;
        let state = build_k(&strip1, defect_coupling(&mesh, &eps0, &eps1)?, solves.clone())?;
        let kernel = DirectKernel::new(&strip0, &solves);
        let opts = LemmaOptions { samples: 20, seed: 100 + i, slack: 1e-8 };
        let rep = check_lemma_estimates(&state, &strip0, &kernel, &window, perturbation_size(&eps0, &eps1)?, &opts)?;
        all &= rep.k_norm_bound && rep.k_square_bound && rep.g1_norm_bound && rep.edge_form_bound;
        worst_ii = worst_ii.max(rep.k_square_ratio);
        worst_edge = worst_edge.min(rep.edge_form_margin);
    }
    Ok(Outcome {
        pass: (g0 - 1.0).abs() <= 1e-10 && all,
        detail: format!(
            "||G0|| - 1 = {:.1e}; 10 strengths: (i)-(iii) hold {all}; worst ||KF||^2 / (||K|| <F,F>_K) = {worst_ii:.4}; edge-form margin {worst_edge:.2e}",
            g0 - 1.0
        ),
    })
}

/// `kappa_{n+1} > -1` below threshold and the `L_perp` maximum below `-1` near the edge.
fn bound_mechanisms(fs: &FullScale) -> Result<Outcome> {
    let bg = &fs.bg;
    let n = bg.gap().n;
    let mut upper_ok = true;
    let mut closest = f64::INFINITY;
    for r in fs.runs.iter().filter(|r| SUB_THRESHOLD_T.contains(&r.t)) {
        for row in &r.trace.kappa {
            if let Some(&k) = row.get(n) {
                closest = closest.min(k + 1.0);
                upper_ok &= k > -1.0;
            }
        }
    }
    let run = weak(fs);
    let c0 = bg.eps1(run.t)?.central_cell();
    let subs = build_l_subspaces(&run.state, bg.strip0(), bg.ctx(), &edge_modes(fs)?, c0)?;
    let w = bg.window();
    let mut trail = Vec::new();
    for e in 1..=9 {
        let s = 10f64.powi(-e);
        let amu = assemble_amu(&run.state, bg.kernel(), w.at(s))?;
        trail.push((s, subs.max_on_perp(&amu)?));
    }
    let amu = assemble_amu(&run.state, bg.kernel(), w.mu_min)?;
    trail.push((0.0, subs.max_on_perp(&amu)?));
    let first_below = trail.iter().find(|(_, v)| *v < -1.0).map(|(s, _)| *s);
    let lower_ok = trail.last().is_some_and(|(_, v)| *v < -1.0);
    Ok(Outcome {
        pass: upper_ok && lower_ok,
        detail: format!(
            "min kappa_(n+1) + 1 = {closest:.3e}; L_perp maximum at the edge {:.4e}, below -1 from s = {:?}",
            trail.last().map(|x| x.1).unwrap_or(f64::NAN),
            first_below
        ),
    })
}

fn report(id: usize, name: &str, out: Result<Outcome>) -> bool {
    match out {
        Ok(o) => {
            println!("[{}] criterion {id} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            o.pass
        }
        Err(e) => {
            println!("[FAIL] criterion {id} {name}: error: {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, "Floquet identities", floquet_identities());
    ok &= report(2, "free-medium bands", free_medium());
    match full_scale() {
        Ok(fs) => {
            ok &= report(3, "Birman-Schwinger equivalence", Ok(equivalence(&fs)));
            ok &= report(4, "count equals n", Ok(main_theorem(&fs)));
            ok &= report(5, "monotonicity", monotonicity(&fs));
            ok &= report(6, "edge subspaces", subspaces(&fs));
            ok &= report(7, "norm estimates", norm_estimates());
            ok &= report(8, "bound mechanisms", bound_mechanisms(&fs));
        }
        Err(e) => {
            for (id, name) in [(3, "Birman-Schwinger equivalence"), (4, "count equals n"), (5, "monotonicity"), (6, "edge subspaces"), (8, "bound mechanisms")] {
                println!("[FAIL] criterion {id} {name}: full-scale fixture failed: {e}");
            }
            report(7, "norm estimates", norm_estimates());
            ok = false;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
