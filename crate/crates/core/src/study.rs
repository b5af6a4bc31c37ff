//! A background crystal with a fixed defect shape, evaluated for a family of
//! strengths `t` by both counting routes.
//!
//! Everything independent of `t` (fiber eigensystems, bands, the gap, the
//! support solves and the Bloch kernel cache) is built once.

use serde::{Deserialize, Serialize};

use crate::bloch::{analyze_gap, detect_gaps, sort_analytic, BandStructure, Gap, GapOptions, GapReport, Kgrid};
use crate::bs::{
    build_k_with, sweep_and_count, BlochKernel, CachedKernel, DirectKernel, KOperatorState, KappaTrace, MuWindow,
    ShiftedKernel, SupportSolves, SweepOptions, RANK_TOL,
};
use crate::discretize::{assemble_forms, defect_coupling, AssembledForms};
use crate::error::{Error, Result};
use crate::floquet::FloquetContext;
use crate::medium::{apply_line_defect, validate_assumptions, AssumptionReport, DefectGeometry, DielectricMap};
use crate::supercell::{defect_spectrum_from_forms, DefectSpectrum, SliceOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub n_bands: usize,
    /// Gap search window; the widest gap inside it is used.
    pub window: (f64, f64),
    /// Use this gap instead of searching.
    pub gap: Option<(f64, f64)>,
    pub gap_options: GapOptions,
    pub sweep: SweepOptions,
    pub slice: SliceOptions,
    pub rank_tol: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            n_bands: 8,
            window: (0.0, f64::INFINITY),
            gap: None,
            gap_options: GapOptions::default(),
            sweep: SweepOptions::default(),
            slice: SliceOptions::default(),
            rank_tol: RANK_TOL,
        }
    }
}

/// The `t`-independent half of a defect study.
pub struct Background {
    cell: DielectricMap,
    defect: DefectGeometry,
    eps0: DielectricMap,
    bands: BandStructure,
    gap: GapReport,
    window: MuWindow,
    ctx: FloquetContext,
    solves: SupportSolves,
    kernel: CachedKernel<BlochKernel>,
    /// `max |R_direct - R_bloch| / max |R_bloch|` at mid-gap.
    kernel_agreement: f64,
}

/// Pick the gap of `bands` to study.
pub fn choose_gap(bands: &BandStructure, opts: &StudyOptions) -> Result<Gap> {
    if let Some((lower, upper)) = opts.gap {
        return Ok(Gap { lower, upper });
    }
    detect_gaps(bands, opts.window)
        .into_iter()
        .filter(|g| g.lower > bands.band(0).iter().copied().fold(f64::INFINITY, f64::min))
        .max_by(|a, b| a.width().total_cmp(&b.width()))
        .ok_or_else(|| Error::Assumption(format!("no spectral gap in {:?}", opts.window)))
}

/// Complete fiber eigensystems on the `n_y`-point grid, the sorted bands and the gap report.
pub fn fiber_bands(
    cell: &DielectricMap,
    k_x: f64,
    n_y: usize,
    opts: &StudyOptions,
) -> Result<(FloquetContext, BandStructure, GapReport)> {
    let ctx = FloquetContext::new(cell, k_x, n_y).map_err(|e| e.at("fibers"))?;
    let bands = BandStructure::from_fibers(cell, k_x, Kgrid::uniform(n_y)?, ctx.eigens(), opts.n_bands)
        .and_then(sort_analytic)
        .map_err(|e| e.at("bands"))?;
    let gap = choose_gap(&bands, opts).map_err(|e| e.at("gap"))?;
    let report = analyze_gap(&bands, gap, &opts.gap_options).map_err(|e| e.at("gap"))?;
    Ok((ctx, bands, report))
}

impl Background {
    /// Diagonalize every fiber on the `n_y`-point grid and prepare both kernels.
    pub fn build(cell: &DielectricMap, defect: &DefectGeometry, k_x: f64, n_y: usize, opts: &StudyOptions) -> Result<Self> {
        let (ctx, bands, report) = fiber_bands(cell, k_x, n_y, opts)?;
        Self::assemble(cell, defect, ctx, bands, report)
    }

    /// Finish a background from fibers, bands and a gap report computed elsewhere.
    pub fn assemble(
        cell: &DielectricMap,
        defect: &DefectGeometry,
        ctx: FloquetContext,
        bands: BandStructure,
        report: GapReport,
    ) -> Result<Self> {
        let n_y = ctx.n_y();
        let window = MuWindow::from_gap(report.lambda0, report.lambda1)?;
        let eps0 = cell.tile(n_y)?;
        let probe = apply_line_defect(cell, defect, 1.0, n_y)?;
        let support = defect_coupling(ctx.strip().mesh(), &eps0, &probe)?.support;
        let solves = SupportSolves::direct(ctx.strip(), &support).map_err(|e| e.at("support solves"))?;
        let bloch = BlochKernel::new(&ctx, &support)?;
        let kernel_agreement = if support.is_empty() {
            0.0
        } else {
            let mid = window.mid();
            let b = bloch.kernel(mid)?;
            let d = DirectKernel::new(ctx.strip(), &solves).kernel(mid)?;
            (&d - &b).norm_max() / b.norm_max()
        };
        Ok(Self {
            cell: cell.clone(),
            defect: defect.clone(),
            eps0,
            bands,
            gap: report,
            window,
            ctx,
            solves,
            kernel: CachedKernel::new(bloch),
            kernel_agreement,
        })
    }

    pub fn cell(&self) -> &DielectricMap {
        &self.cell
    }

    pub fn eps0(&self) -> &DielectricMap {
        &self.eps0
    }

    pub fn bands(&self) -> &BandStructure {
        &self.bands
    }

    pub fn gap(&self) -> &GapReport {
        &self.gap
    }

    pub fn window(&self) -> &MuWindow {
        &self.window
    }

    pub fn ctx(&self) -> &FloquetContext {
        &self.ctx
    }

    pub fn strip0(&self) -> &AssembledForms {
        self.ctx.strip()
    }

    pub fn solves(&self) -> &SupportSolves {
        &self.solves
    }

    pub fn kernel(&self) -> &CachedKernel<BlochKernel> {
        &self.kernel
    }

    pub fn kernel_agreement(&self) -> f64 {
        self.kernel_agreement
    }

    /// Perturbed map at strength `t`.
    pub fn eps1(&self, t: f64) -> Result<DielectricMap> {
        apply_line_defect(&self.cell, &self.defect, t, self.ctx.n_y())
    }

    /// Both counts at strength `t`.
    pub fn run(&self, t: f64, opts: &StudyOptions) -> Result<DefectRun> {
        let eps1 = self.eps1(t)?;
        let assumptions = validate_assumptions(&self.eps0, &eps1)?;
        let strip1 = assemble_forms(self.strip0().mesh(), &eps1)?;
        let coupling = defect_coupling(strip1.mesh(), &self.eps0, &eps1)?;
        let shared = coupling.support == self.solves.support();
        let solves = if shared {
            self.solves.clone()
        } else {
            SupportSolves::direct(self.strip0(), &coupling.support)?
        };
        let state = build_k_with(&strip1, coupling, solves, opts.rank_tol).map_err(|e| e.at("K operator"))?;
        let trace = if shared {
            sweep_and_count(&state, &self.kernel, &self.window, &opts.sweep)
        } else {
            let direct = DirectKernel::new(self.strip0(), state.solves());
            sweep_and_count(&state, &direct, &self.window, &opts.sweep)
        }
        .map_err(|e| e.at("kappa sweep"))?;
        let spectrum = defect_spectrum_from_forms(&strip1, (self.gap.lambda0, self.gap.lambda1), &opts.slice)
            .map_err(|e| e.at("supercell"))?;
        Ok(DefectRun {
            t,
            assumptions,
            strip1,
            state,
            trace,
            spectrum,
        })
    }
}

/// One defect strength evaluated by both routes.
pub struct DefectRun {
    pub t: f64,
    pub assumptions: AssumptionReport,
    pub strip1: AssembledForms,
    pub state: KOperatorState,
    pub trace: KappaTrace,
    pub spectrum: DefectSpectrum,
}

impl DefectRun {
    /// Largest distance between matched eigenvalues of the two routes,
    /// or `None` when the counts differ.
    pub fn eigenvalue_mismatch(&self) -> Option<f64> {
        let a = self.trace.lambdas();
        let b = self.spectrum.lambdas();
        (a.len() == b.len()).then(|| a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
    }
}
