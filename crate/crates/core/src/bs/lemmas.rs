use faer::Mat;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_amu, DefectSubspaces, FEvaluator, KOperatorState, MuWindow, ShiftedKernel};
use crate::discretize::AssembledForms;
use crate::error::Result;
use crate::linalg::dense;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaOptions {
    pub samples: usize,
    pub seed: u64,
    /// Relative slack on every inequality.
    pub slack: f64,
}

impl Default for LemmaOptions {
    fn default() -> Self {
        Self {
            samples: 20,
            seed: 7,
            slack: 1e-8,
        }
    }
}

/// Numerical evaluation of the operator-norm estimates.
///
/// Constants carry the unitary Floquet convention: every `sqrt(2 pi)` is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// `||G0||` from a random block; 1 up to roundoff.
    pub g0_norm: f64,
    /// `||K|| = nu_max`.
    pub k_norm: f64,
    /// `||G1|| = 1 + nu_max`.
    pub g1_norm: f64,
    /// `||G1||` restricted to the support functionals, from `(G1 + G1 D G1, G0)`.
    pub g1_norm_support: f64,
    /// `max |1/eps0 - 1/eps1|`.
    pub perturbation_size: f64,
    /// `||K|| <= ||G1|| eta`.
    pub k_norm_bound: bool,
    /// `||K F||^2 <= ||K|| <F, F>_K` on random `F`; worst ratio of the two sides.
    pub k_square_ratio: f64,
    pub k_square_bound: bool,
    /// `||G1|| <= 1 / (1 - eta)` (vacuous when `eta >= 1`).
    pub g1_norm_bound: bool,
    /// `<A_mu u, u>_K - ||Ku||^2 / (1 - mu (Lambda_1 + 1))` minimised over random `u`, relative.
    pub edge_form_margin: f64,
    pub edge_form_bound: bool,
}

impl LemmaReport {
    pub fn all_hold(&self) -> bool {
        (self.g0_norm - 1.0).abs() <= 1e-10
            && self.k_norm_bound
            && self.k_square_bound
            && self.g1_norm_bound
            && self.edge_form_bound
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

/// `||G0||` over a random block of functionals: the top of the pencil
/// `(U* A0 U, F* U)` with `U = A0^{-1} F`, square-rooted.
pub fn g0_norm(strip0: &AssembledForms, block: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let n = strip0.dim();
    let f = Mat::from_fn(n, block, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let u = strip0.phi_factor()?.solve_many(f.as_ref());
    let mut au = Mat::<C64>::zeros(n, block);
    for j in 0..block {
        for (i, v) in strip0.phi().matvec(&dense::col_to_vec(u.as_ref(), j)).into_iter().enumerate() {
            au[(i, j)] = v;
        }
    }
    let num = u.adjoint() * au;
    let den = f.adjoint() * &u;
    let w = dense::pencil_eigenvalues(num.as_ref(), den.as_ref())?;
    Ok(w.last().copied().unwrap_or(1.0).sqrt())
}

/// Evaluate the norm estimates and the edge-form bound for one defect.
pub fn check_lemma_estimates(
    state: &KOperatorState,
    strip0: &AssembledForms,
    kernel: &dyn ShiftedKernel,
    window: &MuWindow,
    perturbation_size: f64,
    opts: &LemmaOptions,
) -> Result<LemmaReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let g0n = g0_norm(strip0, 4, &mut rng)?;
    let k_norm = state.norm();
    let g1_norm = 1.0 + k_norm;
    let g1_norm_support = if state.support().is_empty() {
        1.0
    } else {
        let g1 = state.g1();
        let top = g1 + g1 * (&state.coupling().d * g1);
        let w = dense::pencil_eigenvalues(top.as_ref(), state.g0().as_ref())?;
        w.last().copied().unwrap_or(1.0).max(1.0).sqrt()
    };
    let eta = perturbation_size;
    let s = opts.slack;
    let k_norm_bound = k_norm <= g1_norm * eta * (1.0 + s) + s * f64::EPSILON;
    let g1_norm_bound = eta >= 1.0 || g1_norm <= (1.0 + s) / (1.0 - eta);

    let r = state.rank();
    let mut worst_ii = 0.0f64;
    let mut worst_edge = f64::INFINITY;
    for _ in 0..opts.samples.max(1) {
        if r == 0 {
            break;
        }
        let x = random_vec(&mut rng, r);
        let kx = state.kq() * dense::vec_to_col(&x);
        let kf = (kx.adjoint() * (state.g0() * &kx))[(0, 0)].re;
        let kin = state.k_inner(&x, &x).re;
        worst_ii = worst_ii.max(kf / (k_norm * kin));
        let mu = window.at(rng.gen_range(0.0..1.0));
        let amu = assemble_amu(state, kernel, mu)?;
        let lhs = amu.form(&x);
        let rhs = kf / (1.0 - mu * (window.lambda1 + 1.0));
        worst_edge = worst_edge.min((lhs - rhs) / rhs.abs().max(lhs.abs()));
    }
    Ok(LemmaReport {
        g0_norm: g0n,
        k_norm,
        g1_norm,
        g1_norm_support,
        perturbation_size,
        k_norm_bound,
        k_square_ratio: worst_ii,
        k_square_bound: worst_ii <= 1.0 + s,
        g1_norm_bound,
        edge_form_margin: if worst_edge.is_finite() { worst_edge } else { 0.0 },
        edge_form_bound: !(worst_edge < -s),
    })
}

/// Evaluation of the edge-subspace estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceReport {
    pub dim_perp: usize,
    /// Largest `|<u, b_j>_K| / ||u||_K` and `|Ku[psi_j]| / ||u||_K` over random `u` in `L`.
    pub membership: f64,
    pub membership_direct: f64,
    /// Largest `f(0, u) / ||u||^2_K` over random `u` in `L`.
    pub f0_on_l: f64,
    /// Largest disagreement between the `f` representations.
    pub f_spread: f64,
    /// Exact `min over L_perp` of `f(0, u) / ||u||^2_K`.
    pub perp_min_ratio: f64,
    /// `lambda_min(G) / (lambda_max(G~) N_y (Lambda_1 + 1))`.
    pub perp_bound: f64,
    /// Smallest ratio seen on random `u` in `L_perp`.
    pub perp_sampled_ratio: f64,
    /// Log-log slopes of `f(k~, u)` between `dk` and `2 dk` for random `u` in `L`.
    pub slopes: Vec<f64>,
}

/// Evaluate membership, `f(0, .)` on `L`, the positivity on `L_perp` and the
/// small-`k~` slope of `f` on `L`.
pub fn check_subspace_estimates(
    eval: &FEvaluator<'_>,
    subs: &DefectSubspaces,
    lambda1: f64,
    samples: usize,
    slope_samples: usize,
    seed: u64,
) -> Result<SubspaceReport> {
    let state = eval.state;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut membership, mut membership_direct, mut f0_on_l, mut f_spread) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut slopes = Vec::new();
    for i in 0..samples {
        if subs.dim_l() == 0 {
            break;
        }
        let x = subs.in_l(state, &random_vec(&mut rng, subs.dim_l()));
        let norm = state.k_inner(&x, &x).re;
        let c = subs.constraints(state, &x);
        membership = membership.max(c.iter().map(|v| v.norm()).fold(0.0, f64::max) / norm.sqrt());
        let d = subs.ku_pairings(state, &x);
        membership_direct = membership_direct.max(d.iter().map(|v| v.norm()).fold(0.0, f64::max) / norm.sqrt());
        let f0 = eval.eval(&x, 0)?;
        f0_on_l = f0_on_l.max(f0.value() / norm);
        f_spread = f_spread.max(f0.spread(1e-12));
        if i < slope_samples {
            let f1 = eval.eval(&x, 1)?;
            let f2 = eval.eval(&x, 2)?;
            f_spread = f_spread.max(f1.spread(1e-12)).max(f2.spread(1e-12));
            slopes.push((f2.value() / f1.value()).ln() / 2f64.ln());
        }
    }
    let fmat = eval.form_at_zero()?;
    let bb = &subs.b;
    let fp = bb.adjoint() * (&fmat * bb);
    let exact = dense::pencil_eigenvalues(fp.as_ref(), subs.gram_tilde.as_ref())?;
    let perp_min_ratio = exact[0];
    let g_eigs = dense::hermitian_eigenvalues(subs.gram.as_ref())?;
    let gt_max = *subs.gram_eigenvalues.last().unwrap();
    let perp_bound = g_eigs[0] / (gt_max * eval.ctx.n_y() as f64 * (lambda1 + 1.0));
    let mut perp_sampled_ratio = f64::INFINITY;
    for _ in 0..samples {
        let x = subs.in_perp(state, &random_vec(&mut rng, subs.n()));
        let f = eval.eval(&x, 0)?;
        f_spread = f_spread.max(f.spread(1e-12));
        perp_sampled_ratio = perp_sampled_ratio.min(f.value() / state.k_inner(&x, &x).re);
    }
    Ok(SubspaceReport {
        dim_perp: subs.n(),
        membership,
        membership_direct,
        f0_on_l,
        f_spread,
        perp_min_ratio,
        perp_bound,
        perp_sampled_ratio,
        slopes,
    })
}

/// Largest sampled strength whose `kappa_1` at mid-gap stays above `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Largest `t` with `kappa_1(mu_mid) > -1` such that all smaller samples agree.
    pub below: Option<f64>,
    /// Smallest `t` with `kappa_1(mu_mid) <= -1`.
    pub above: Option<f64>,
}

/// Bracket the strength at which `kappa_1(mu_mid)` first reaches `-1` from `(t, kappa_1)` samples.
pub fn t_threshold(samples: &[(f64, f64)]) -> ThresholdReport {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    let first = s.iter().position(|&(_, k)| k <= -1.0);
    let below = match first {
        Some(0) => None,
        Some(i) => Some(s[i - 1].0),
        None => s.last().map(|x| x.0),
    };
    ThresholdReport {
        below,
        above: first.map(|i| s[i].0),
    }
}
