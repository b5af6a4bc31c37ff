//! Report bundle, artifact files and the report schema check.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use gapmodes::bloch::{BandStructure, GapReport};
use gapmodes::bs::{KappaTrace, LemmaReport, ThresholdReport};
use gapmodes::medium::AssumptionReport;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use crate::config::{Format, RunConfig};
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: &str = "1";

/// Headline outcome of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Both counts equal the number of edge points.
    True,
    /// Assumptions hold but a count differs.
    False,
    /// An assumption flag failed, so the count statement does not apply.
    AssumptionsUnverified,
    /// No perturbation at all.
    Vacuous,
}

impl Verdict {
    pub fn exit_code(self) -> u8 {
        match self {
            Verdict::True => 0,
            Verdict::False => 2,
            Verdict::AssumptionsUnverified | Verdict::Vacuous => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Verdict::True => "true",
            Verdict::False => "false",
            Verdict::AssumptionsUnverified => "not applicable (assumptions unverified)",
            Verdict::Vacuous => "vacuous (no perturbation)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub max_error: f64,
    pub pass: bool,
}

/// Fiber expansion against direct strip evaluation on random inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentitySuite {
    pub tolerance: f64,
    pub spectral_coincidence: IdentityCheck,
    pub resolvent: IdentityCheck,
    pub rayleigh: IdentityCheck,
    pub hminus_norm: IdentityCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub lambda: f64,
    pub residual: f64,
    /// Mass fractions per cell, starting at the defect cell.
    pub profile: Vec<f64>,
    /// Mass within three cells of the defect cell.
    pub mass_within_3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub t: f64,
    pub assumptions: AssumptionReport,
    pub rank: usize,
    pub bs_count: usize,
    pub supercell_count: usize,
    pub bs_lambdas: Vec<f64>,
    pub supercell_lambdas: Vec<f64>,
    /// Largest distance between the two eigenvalue lists when the counts agree.
    pub max_mismatch: Option<f64>,
    /// `kappa_1` at mid-gap.
    pub kappa1_mid: Option<f64>,
    /// `kappa_{n+1} > -1` on every sampled shift; skipped without edge non-degeneracy.
    pub upper_bound_check: Option<bool>,
    pub lemmas: LemmaReport,
    pub modes: Vec<ModeReport>,
    pub trace: KappaTrace,
    pub theorem_count_match: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub schema: String,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    pub gap: GapReport,
    /// Relative difference of the direct and Bloch support kernels at mid-gap.
    pub kernel_agreement: f64,
    pub identities: IdentitySuite,
    pub runs: Vec<RunReport>,
    pub threshold: ThresholdReport,
    pub theorem_count_match: bool,
    pub verdict: Verdict,
    pub verdict_label: String,
}

/// Pretty JSON with every float at 17 significant digits.
struct Sig17<'a>(PrettyFormatter<'a>);

impl Formatter for Sig17<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17(PrettyFormatter::new()));
    value.serialize(&mut ser).map_err(|e| CliError::Report(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| CliError::Report(e.to_string()))
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io(path, e))
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    w.write_record(&header).map_err(|e| CliError::Report(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Report(e.to_string()))?;
    }
    w.into_inner().map_err(|e| CliError::Report(e.to_string()))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// `bands.csv`: one row per momentum, `k` then every band.
pub fn bands_csv(bands: &BandStructure) -> CliResult<Vec<u8>> {
    let header = std::iter::once("k".to_string())
        .chain((1..=bands.n_bands()).map(|s| format!("lambda_{s}")))
        .collect();
    let rows = (0..bands.n_k())
        .map(|p| std::iter::once(num(bands.kgrid().get(p))).chain(bands.row(p).iter().map(|&v| num(v))).collect())
        .collect();
    csv_bytes(header, rows)
}

/// `kappa.csv`: `t`, `mu` and the lowest `kappa_m` for every sampled shift.
pub fn kappa_csv(runs: &[RunReport]) -> CliResult<Vec<u8>> {
    let m = runs.iter().flat_map(|r| r.trace.kappa.iter().map(Vec::len)).max().unwrap_or(0);
    let header = ["t".to_string(), "mu".to_string()]
        .into_iter()
        .chain((1..=m).map(|j| format!("kappa_{j}")))
        .collect();
    let mut rows = Vec::new();
    for r in runs {
        let mut order: Vec<usize> = (0..r.trace.mu.len()).collect();
        order.sort_by(|&a, &b| r.trace.mu[a].total_cmp(&r.trace.mu[b]));
        for i in order {
            let mut row = vec![num(r.t), num(r.trace.mu[i])];
            row.extend(r.trace.kappa[i].iter().map(|&k| num(k)));
            rows.push(row);
        }
    }
    csv_bytes(header, rows)
}

/// Human-readable gap summary.
pub fn gap_text(gap: &GapReport, bundle: Option<&ReportBundle>) -> String {
    let mut s = String::new();
    s.push_str(&format!("gap            ({:.12}, {:.12})\n", gap.lambda0, gap.lambda1));
    s.push_str(&format!("width          {:.6e}\n", gap.width()));
    s.push_str(&format!("edge points n  {}\n", gap.n));
    for p in &gap.sigma {
        s.push_str(&format!("  band {} at k = {:.12} (grid index {})\n", p.band + 1, p.k_star, p.p));
    }
    for f in &gap.edge_fits {
        s.push_str(&format!(
            "  curvature fit band {}: alpha = {:.6e}, holds = {}\n",
            f.band + 1,
            f.alpha,
            f.holds
        ));
    }
    s.push_str(&format!(
        "flags          nonconstant {}, quadratic edge {}, band ordering {}\n",
        gap.nonconstant_ok, gap.nondegenerate_ok, gap.ordering_ok
    ));
    s.push_str(&format!("isolation      {:.6e}\n", gap.isolation_margin));
    for w in &gap.warnings {
        s.push_str(&format!("warning        {w}\n"));
    }
    if let Some(b) = bundle {
        for r in &b.runs {
            s.push_str(&format!(
                "t = {:<10} counts BS {} / supercell {}  eigenvalues {:?}  [{}]\n",
                r.t,
                r.bs_count,
                r.supercell_count,
                r.supercell_lambdas,
                r.verdict.label()
            ));
        }
        s.push_str(&format!("verdict        {}\n", b.verdict_label));
    }
    s
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

/// Band artifacts, written before any counting starts.
pub fn emit_bands(dir: &Path, bands: &BandStructure, gap: Option<&GapReport>, formats: &[Format]) -> CliResult<()> {
    ensure_dir(dir)?;
    if formats.contains(&Format::Csv) {
        write_file(dir, "bands.csv", &bands_csv(bands)?)?;
    }
    if let Some(g) = gap {
        write_file(dir, "gap.txt", gap_text(g, None).as_bytes())?;
        if formats.contains(&Format::Json) {
            write_file(dir, "gap.json", to_json(g)?.as_bytes())?;
        }
    }
    Ok(())
}

/// `report.json`, `kappa.csv` and the final `gap.txt`.
pub fn emit_reports(bundle: &ReportBundle, formats: &[Format], dir: &Path) -> CliResult<()> {
    ensure_dir(dir)?;
    if formats.contains(&Format::Json) {
        let text = to_json(bundle)?;
        validate_report(&serde_json::from_str(&text).map_err(|e| CliError::Report(e.to_string()))?)?;
        write_file(dir, "report.json", text.as_bytes())?;
    }
    if formats.contains(&Format::Csv) {
        write_file(dir, "kappa.csv", &kappa_csv(&bundle.runs)?)?;
    }
    write_file(dir, "gap.txt", gap_text(&bundle.gap, Some(bundle)).as_bytes())
}

fn expect<'a>(v: &'a Value, key: &str, ok: fn(&Value) -> bool) -> CliResult<&'a Value> {
    let x = v.get(key).ok_or_else(|| CliError::Report(format!("missing key {key}")))?;
    if ok(x) {
        Ok(x)
    } else {
        Err(CliError::Report(format!("key {key} has the wrong type")))
    }
}

/// Structural check of a parsed `report.json` against schema version 1.
pub fn validate_report(v: &Value) -> CliResult<()> {
    let schema = expect(v, "schema", Value::is_string)?;
    if schema != SCHEMA_VERSION {
        return Err(CliError::Report(format!("unsupported schema {schema}")));
    }
    expect(v, "config", Value::is_object)?;
    expect(v, "warnings", Value::is_array)?;
    let gap = expect(v, "gap", Value::is_object)?;
    for k in ["lambda0", "lambda1"] {
        expect(gap, k, Value::is_f64)?;
    }
    expect(gap, "n", Value::is_u64)?;
    expect(gap, "sigma", Value::is_array)?;
    let ids = expect(v, "identities", Value::is_object)?;
    for k in ["spectral_coincidence", "resolvent", "rayleigh", "hminus_norm"] {
        expect(expect(ids, k, Value::is_object)?, "pass", Value::is_boolean)?;
    }
    for r in expect(v, "runs", Value::is_array)?.as_array().into_iter().flatten() {
        expect(r, "t", Value::is_f64)?;
        expect(r, "bs_count", Value::is_u64)?;
        expect(r, "supercell_count", Value::is_u64)?;
        expect(r, "theorem_count_match", Value::is_boolean)?;
        expect(r, "verdict", Value::is_string)?;
        let trace = expect(r, "trace", Value::is_object)?;
        let mu = expect(trace, "mu", Value::is_array)?.as_array().map_or(0, Vec::len);
        let kappa = expect(trace, "kappa", Value::is_array)?.as_array().map_or(0, Vec::len);
        if mu != kappa {
            return Err(CliError::Report("trace mu and kappa lengths differ".into()));
        }
    }
    expect(v, "theorem_count_match", Value::is_boolean)?;
    let verdict: Verdict = serde_json::from_value(expect(v, "verdict", Value::is_string)?.clone())
        .map_err(|e| CliError::Report(e.to_string()))?;
    if expect(v, "verdict_label", Value::is_string)? != verdict.label() {
        return Err(CliError::Report("verdict label does not match the verdict".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_carry_seventeen_digits() {
        let s = to_json(&vec![0.1f64, 13.383346902350063, -2.0]).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("1.3383346902350063e1"));
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 13.383346902350063, -2.0]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Verdict::True.exit_code(), 0);
        assert_eq!(Verdict::False.exit_code(), 2);
        assert_eq!(Verdict::AssumptionsUnverified.exit_code(), 3);
        assert_eq!(Verdict::Vacuous.label(), "vacuous (no perturbation)");
    }

    #[test]
    fn validator_rejects_wrong_schema() {
        let v: Value = serde_json::json!({ "schema": "2" });
        assert!(validate_report(&v).is_err());
        assert!(validate_report(&serde_json::json!({})).is_err());
    }
}
