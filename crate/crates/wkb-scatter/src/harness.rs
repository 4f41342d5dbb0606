//! Experiment harness: declarative flat key-value configs, canonical preset
//! devices, sweep drivers (solve / converge / condition) and deterministic
//! CSV emission.
//!
//! Config schema (one `key = value` per line, `#` starts a comment):
//!
//! ```text
//! energy  = 1.5
//! segment = 0.0 0.5 linear 0.0 0.2        # x_left x_right kind c0 [c1 [c2]]
//! segment = 0.5 1.0 constant 0.2
//! eps     = 1e-1 1e-2 1e-3
//! h       = 2^-4 2^-5 2^-6                # strictly decreasing; 2^-k or floats
//! n_ref   = 262144                        # reference resolution (power of two)
//! neumann = 1.0                           # auxiliary Neumann scale (testing)
//! preset  = example1                      # fig1 | example1 | example2
//! out     = results                       # output directory
//! ```
//!
//! A `preset` supplies the device (and protocol defaults) by itself;
//! otherwise `energy` and `segment` lines define the potential. Explicit
//! `eps`/`h`/`n_ref` keys override preset defaults. Every output file echoes
//! the fully resolved configuration (and the admissibility threshold eps1)
//! as `#` comment lines, and all floats carry 17 significant digits so the
//! files parse back bit-exactly.

use crate::coefficient::{
    CoefficientField, LayoutKind, PotentialSegment, Regime, Side, ZoneLayout,
};
use crate::decomposition::{current, solve_uniform, SolveError, ZoneSolution};
use crate::evanescent::{
    assemble, build_basis, condition_number, EvanescentMesh, RobinCoefficient,
};
use crate::marching::{from_u, march, to_u, MarchError, OscGrid, OscVector, TransformMatrix};
use crate::oracle::{compare, fine_grid_reference, slope_fit, ErrorReport, OracleError, EV_SAMPLES};
use num_complex::Complex64;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub mod presets {
    use crate::coefficient::{CoefficientField, PotentialSegment};

    pub const X_C: f64 = 0.5;
    pub const X_D: f64 = 0.53125; // 0.5 + 2^-5

    /// Tunnelling device with a piecewise linear potential: V(0) = 0,
    /// V(1) = 0.2 (applied bias), barrier on (0.5, 0.53125), E = 1.5.
    /// The lead and barrier slopes are part of this preset's definition:
    /// V = 0.2 x | 4.5 - 3.2 x | 0.15 + (1.6/15)(x - 17/32).
    pub fn example1_field() -> CoefficientField {
        let s3 = 1.6 / 15.0;
        CoefficientField::new(
            1.5,
            vec![
                PotentialSegment::linear(0.0, X_C, 0.0, 0.2),
                PotentialSegment::linear(X_C, X_D, 4.5, -3.2),
                PotentialSegment::linear(X_D, 1.0, 0.15 - s3 * X_D, s3),
            ],
        )
        .expect("preset field is valid")
    }

    /// Tunnelling device with a piecewise quadratic coefficient
    /// a(x) = c1 (x + c2)^2 in the leads and -c1 (x + c2)^2 in the barrier,
    /// E = 1.5, V(1) = 0.2, interfaces at 0.5 and 0.53125.
    pub fn example2_field() -> CoefficientField {
        let e = 1.5_f64;
        let v1 = 0.2;
        let c2 = -(e + (e * e - v1 * e).sqrt()) / v1;
        let c1 = e / (c2 * c2);
        let seg = |xl: f64, xr: f64, sign: f64| {
            PotentialSegment::quadratic(
                xl,
                xr,
                e - sign * c1 * c2 * c2,
                -sign * 2.0 * c1 * c2,
                -sign * c1,
            )
        };
        CoefficientField::new(
            e,
            vec![seg(0.0, X_C, 1.0), seg(X_C, X_D, -1.0), seg(X_D, 1.0, 1.0)],
        )
        .expect("preset field is valid")
    }

    /// Pure oscillatory device a(x) = (x + 1/2)^2 on [0, 1].
    pub fn fig1_field() -> CoefficientField {
        CoefficientField::new(
            1.0,
            vec![PotentialSegment::quadratic(0.0, 1.0, 0.75, -1.0, -1.0)],
        )
        .expect("preset field is valid")
    }

    /// Two-zone barrier with linear pieces: evanescent on [0, 0.5),
    /// oscillatory on [0.5, 1], E = 1.5.
    pub fn two_zone_linear_field() -> CoefficientField {
        CoefficientField::new(
            1.5,
            vec![
                PotentialSegment::linear(0.0, 0.5, 2.9, -0.2),
                PotentialSegment::linear(0.5, 1.0, 0.0, 0.2),
            ],
        )
        .expect("preset field is valid")
    }

    /// Two-zone piecewise-constant barrier (exactly representable by the
    /// transfer-matrix oracle).
    pub fn two_zone_constant_field() -> CoefficientField {
        CoefficientField::new(
            1.0,
            vec![
                PotentialSegment::constant(0.0, 0.5, 1.5),
                PotentialSegment::constant(0.5, 1.0, 0.5),
            ],
        )
        .expect("preset field is valid")
    }

    /// Three-zone piecewise-constant tunnelling barrier.
    pub fn three_zone_constant_field() -> CoefficientField {
        CoefficientField::new(
            1.0,
            vec![
                PotentialSegment::constant(0.0, 0.4375, 0.2),
                PotentialSegment::constant(0.4375, 0.5625, 1.4),
                PotentialSegment::constant(0.5625, 1.0, 0.1),
            ],
        )
        .expect("preset field is valid")
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("hypothesis violation: {0:?}")]
    Hypothesis(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    March(#[from] MarchError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl HarnessError {
    /// CLI exit code: 2 config, 3 hypothesis violation, 4 numerical/I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::Hypothesis(_) => 3,
            HarnessError::Solve(SolveError::HypothesisViolation(_)) => 3,
            _ => 4,
        }
    }
}

fn config_err(line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line,
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Converge,
    Condition,
    Preset,
}

impl std::str::FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "solve" => Ok(Command::Solve),
            "converge" => Ok(Command::Converge),
            "condition" => Ok(Command::Condition),
            "preset" => Ok(Command::Preset),
            other => Err(format!(
                "unknown command '{other}' (expected solve|converge|condition|preset)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetName {
    Fig1,
    Example1,
    Example2,
}

/// Parsed experiment description.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub energy: Option<f64>,
    pub segments: Vec<PotentialSegment>,
    pub eps_list: Option<Vec<f64>>,
    pub h_list: Option<Vec<f64>>,
    pub n_ref: Option<usize>,
    pub neumann: f64,
    pub preset: Option<PresetName>,
    pub out: Option<PathBuf>,
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig {
        energy: None,
        segments: Vec::new(),
        eps_list: None,
        h_list: None,
        n_ref: None,
        neumann: 1.0,
        preset: None,
        out: None,
    };
    let mut seen: Vec<&str> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(line_no, format!("expected 'key = value', got '{line}'")))?;
        let key = key.trim();
        let value = value.trim();
        if key != "segment" && seen.contains(&key) {
            return Err(config_err(line_no, format!("duplicate key '{key}'")));
        }
        match key {
            "energy" => {
                cfg.energy = Some(parse_float(value, line_no)?);
                seen.push("energy");
            }
            "segment" => {
                cfg.segments.push(parse_segment(value, line_no)?);
            }
            "eps" => {
                let list = parse_float_list(value, line_no)?;
                if list.is_empty() {
                    return Err(config_err(line_no, "eps list is empty"));
                }
                if list.iter().any(|&e| !(e > 0.0)) {
                    return Err(config_err(line_no, "eps values must be positive"));
                }
                cfg.eps_list = Some(list);
                seen.push("eps");
            }
            "h" => {
                let list = parse_float_list(value, line_no)?;
                if list.is_empty() {
                    return Err(config_err(line_no, "h list is empty"));
                }
                if !list.windows(2).all(|w| w[0] > w[1]) {
                    return Err(config_err(line_no, "h list must be strictly decreasing"));
                }
                if list.iter().any(|&h| !(h > 0.0)) {
                    return Err(config_err(line_no, "h values must be positive"));
                }
                cfg.h_list = Some(list);
                seen.push("h");
            }
            "n_ref" => {
                let n: usize = value
                    .parse()
                    .map_err(|_| config_err(line_no, format!("bad integer '{value}'")))?;
                if !n.is_power_of_two() {
                    return Err(config_err(line_no, "n_ref must be a power of two"));
                }
                cfg.n_ref = Some(n);
                seen.push("n_ref");
            }
            "neumann" => {
                let v = parse_float(value, line_no)?;
                if v == 0.0 {
                    return Err(config_err(line_no, "neumann scale must be nonzero"));
                }
                cfg.neumann = v;
                seen.push("neumann");
            }
            "preset" => {
                cfg.preset = Some(match value {
                    "fig1" => PresetName::Fig1,
                    "example1" => PresetName::Example1,
                    "example2" => PresetName::Example2,
                    other => {
                        return Err(config_err(
                            line_no,
                            format!("unknown preset '{other}' (fig1|example1|example2)"),
                        ))
                    }
                });
                seen.push("preset");
            }
            "out" => {
                cfg.out = Some(PathBuf::from(value));
                seen.push("out");
            }
            other => {
                return Err(config_err(line_no, format!("unknown key '{other}'")));
            }
        }
    }
    Ok(cfg)
}

fn parse_float(token: &str, line: usize) -> Result<f64, HarnessError> {
    if let Some(rest) = token.strip_prefix("2^") {
        let k: i32 = rest
            .parse()
            .map_err(|_| config_err(line, format!("bad exponent in '{token}'")))?;
        return Ok(2f64.powi(k));
    }
    token
        .parse()
        .map_err(|_| config_err(line, format!("bad number '{token}'")))
}

fn parse_float_list(value: &str, line: usize) -> Result<Vec<f64>, HarnessError> {
    value
        .split_whitespace()
        .map(|t| parse_float(t, line))
        .collect()
}

fn parse_segment(value: &str, line: usize) -> Result<PotentialSegment, HarnessError> {
    let toks: Vec<&str> = value.split_whitespace().collect();
    if toks.len() < 4 {
        return Err(config_err(
            line,
            "segment needs 'x_left x_right kind c0 [c1 [c2]]'",
        ));
    }
    let xl = parse_float(toks[0], line)?;
    let xr = parse_float(toks[1], line)?;
    if !(xl < xr) {
        return Err(config_err(line, format!("empty segment [{xl}, {xr})")));
    }
    let coeffs: Vec<f64> = toks[3..]
        .iter()
        .map(|t| parse_float(t, line))
        .collect::<Result<_, _>>()?;
    match (toks[2], coeffs.len()) {
        ("constant", 1) => Ok(PotentialSegment::constant(xl, xr, coeffs[0])),
        ("linear", 2) => Ok(PotentialSegment::linear(xl, xr, coeffs[0], coeffs[1])),
        ("quadratic", 3) => Ok(PotentialSegment::quadratic(
            xl, xr, coeffs[0], coeffs[1], coeffs[2],
        )),
        (kind, n) => Err(config_err(
            line,
            format!("segment kind '{kind}' with {n} coefficients is not supported"),
        )),
    }
}

/// Fully resolved experiment: device, layout, sweep lists.
#[derive(Debug)]
pub struct ResolvedExperiment {
    pub field: CoefficientField,
    pub layout: ZoneLayout,
    pub eps_list: Vec<f64>,
    pub h_list: Vec<f64>,
    pub n_ref: usize,
    pub neumann: f64,
    pub preset: Option<PresetName>,
    pub eps1: f64,
}

fn default_h_list() -> Vec<f64> {
    (4..=12).map(|k| 2f64.powi(-k)).collect()
}

pub fn resolve(cfg: &ExperimentConfig) -> Result<ResolvedExperiment, HarnessError> {
    let field = match cfg.preset {
        Some(PresetName::Fig1) => presets::fig1_field(),
        Some(PresetName::Example1) => presets::example1_field(),
        Some(PresetName::Example2) => presets::example2_field(),
        None => {
            let energy = cfg
                .energy
                .ok_or_else(|| config_err(0, "missing 'energy' (and no preset given)"))?;
            if cfg.segments.is_empty() {
                return Err(config_err(0, "no 'segment' lines (and no preset given)"));
            }
            CoefficientField::new(energy, cfg.segments.clone())
                .map_err(|e| config_err(0, format!("invalid field: {e}")))?
        }
    };
    let layout = ZoneLayout::from_field(&field);
    let eps_list = cfg.eps_list.clone().unwrap_or_else(|| match cfg.preset {
        Some(PresetName::Fig1) => vec![1e-2],
        Some(PresetName::Example2) => vec![1e-1, 1e-2, 1e-3, 1e-4],
        _ => vec![1e-1, 1e-2, 1e-3],
    });
    let h_list = cfg.h_list.clone().unwrap_or_else(|| match cfg.preset {
        Some(PresetName::Fig1) => vec![0.125],
        _ => default_h_list(),
    });
    let n_ref = cfg.n_ref.unwrap_or(match cfg.preset {
        Some(PresetName::Example2) => 1 << 19,
        _ => 1 << 18,
    });
    // The admissibility threshold gates every requested eps.
    let eps1 = field.validate(&layout, eps_list[0].min(0.5)).eps1;
    if let Some(&bad) = eps_list.iter().find(|&&e| e >= eps1) {
        return Err(HarnessError::Hypothesis(vec![format!(
            "eps = {bad} is not admissible: eps1 = {eps1}"
        )]));
    }
    Ok(ResolvedExperiment {
        field,
        layout,
        eps_list,
        h_list,
        n_ref,
        neumann: cfg.neumann,
        preset: cfg.preset,
        eps1,
    })
}

/// 17-significant-digit float formatting ('.' decimal separator); parses
/// back bit-exactly.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_segment(seg: &PotentialSegment) -> String {
    let kind = match seg.kind {
        crate::coefficient::SegmentKind::Constant => "constant",
        crate::coefficient::SegmentKind::Linear => "linear",
        crate::coefficient::SegmentKind::Quadratic => "quadratic",
    };
    let coeffs: Vec<String> = seg.coeffs().iter().map(|&c| fmt_float(c)).collect();
    format!(
        "{} {} {kind} {}",
        fmt_float(seg.x_left),
        fmt_float(seg.x_right),
        coeffs.join(" ")
    )
}

fn config_echo(exp: &ResolvedExperiment, command: Command) -> Vec<String> {
    let mut lines = Vec::new();
    let cmd = match command {
        Command::Solve => "solve",
        Command::Converge => "converge",
        Command::Condition => "condition",
        Command::Preset => "preset",
    };
    lines.push(format!("command = {cmd}"));
    if let Some(p) = exp.preset {
        lines.push(format!(
            "preset = {}",
            match p {
                PresetName::Fig1 => "fig1",
                PresetName::Example1 => "example1",
                PresetName::Example2 => "example2",
            }
        ));
    }
    lines.push(format!("energy = {}", fmt_float(exp.field.energy())));
    for seg in exp.field.segments() {
        lines.push(format!("segment = {}", fmt_segment(seg)));
    }
    let zones: Vec<String> = exp
        .layout
        .zones
        .iter()
        .map(|z| {
            format!(
                "[{}, {}] {}",
                fmt_float(z.x_left),
                fmt_float(z.x_right),
                match z.regime {
                    Regime::Oscillatory => "oscillatory",
                    Regime::Evanescent => "evanescent",
                }
            )
        })
        .collect();
    lines.push(format!("layout = {}", zones.join(" | ")));
    lines.push(format!(
        "eps = {}",
        exp.eps_list
            .iter()
            .map(|&e| fmt_float(e))
            .collect::<Vec<_>>()
            .join(" ")
    ));
    lines.push(format!(
        "h = {}",
        exp.h_list
            .iter()
            .map(|&h| fmt_float(h))
            .collect::<Vec<_>>()
            .join(" ")
    ));
    lines.push(format!("n_ref = {}", exp.n_ref));
    lines.push(format!("neumann = {}", fmt_float(exp.neumann)));
    lines.push(format!("eps1 = {}", fmt_float(exp.eps1)));
    lines.push(format!("version = wkb-scatter {}", env!("CARGO_PKG_VERSION")));
    lines
}

/// One emitted CSV table: comment header, column names, rows of
/// pre-formatted cells.
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

/// Writes `# comment` lines, the header row, then the data rows.
pub fn emit_csv(path: &Path, table: &CsvTable) -> Result<(), HarnessError> {
    let mut text = String::new();
    for c in &table.comments {
        let _ = writeln!(text, "# {c}");
    }
    let _ = writeln!(text, "{}", table.header.join(","));
    for row in &table.rows {
        let _ = writeln!(text, "{}", row.join(","));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Wavefunction dump rows: x, Re psi, Im psi, Re eps psi', Im eps psi', j.
const DUMP_HEADER: [&str; 6] = [
    "x",
    "re_psi",
    "im_psi",
    "re_eps_dpsi",
    "im_eps_dpsi",
    "current",
];

fn dump_row(x: f64, p: Complex64, dp: Complex64) -> Vec<String> {
    vec![
        fmt_float(x),
        fmt_float(p.re),
        fmt_float(p.im),
        fmt_float(dp.re),
        fmt_float(dp.im),
        fmt_float(current(p, dp)),
    ]
}

/// Number of uniform dump points per evanescent zone for `solve`.
const DUMP_EV_SAMPLES: usize = 1000;

fn solution_dump(sol: &crate::decomposition::ScatteringSolution) -> Vec<Vec<String>> {
    let mut pts: Vec<(f64, Complex64, Complex64)> = Vec::new();
    for (zone, zs) in sol.layout.zones.iter().zip(&sol.zones) {
        match zs {
            ZoneSolution::Oscillatory(z) => {
                for (j, &x) in z.grid.nodes().iter().enumerate() {
                    pts.push((x, z.psi[j], z.eps_dpsi[j]));
                }
            }
            ZoneSolution::Evanescent(z) => {
                for k in 0..DUMP_EV_SAMPLES {
                    let t = k as f64 / (DUMP_EV_SAMPLES - 1) as f64;
                    let x = zone.x_left + t * (zone.x_right - zone.x_left);
                    if let Ok((p, dp)) = z.eval(x, sol.eps) {
                        pts.push((x, p, dp));
                    }
                }
            }
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.into_iter().map(|(x, p, dp)| dump_row(x, p, dp)).collect()
}

fn run_solve(exp: &ResolvedExperiment, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut files = Vec::new();
    for (i, &eps) in exp.eps_list.iter().enumerate() {
        for (j, &h) in exp.h_list.iter().enumerate() {
            let sol = solve_uniform(&exp.field, &exp.layout, eps, h, exp.neumann)?;
            let mut comments = config_echo(exp, Command::Solve);
            comments.push(format!("this_eps = {}", fmt_float(eps)));
            comments.push(format!("this_h = {}", fmt_float(h)));
            comments.push(format!(
                "reflection = {} {}",
                fmt_float(sol.psi_at_one().re - 1.0),
                fmt_float(sol.psi_at_one().im)
            ));
            comments.push(format!(
                "right_bc_residual = {}",
                fmt_float(sol.right_bc_residual)
            ));
            let table = CsvTable {
                comments,
                header: DUMP_HEADER.to_vec(),
                rows: solution_dump(&sol),
            };
            let path = out.join(format!("solve_e{i}_h{j}.csv"));
            emit_csv(&path, &table)?;
            files.push(path);
        }
    }
    Ok(files)
}

/// One converge row per (eps, h): error report fields plus per-eps slopes.
pub struct ConvergeRow {
    pub report: ErrorReport,
    pub slope_psi: Option<f64>,
    pub slope_eps_dpsi: Option<f64>,
}

/// Runs the convergence sweep for one eps: reference solve, per-h errors and
/// incremental errors against the next-coarser solve (where grids nest).
pub fn converge_sweep(
    field: &CoefficientField,
    layout: &ZoneLayout,
    eps: f64,
    h_list: &[f64],
    n_ref: usize,
    neumann: f64,
) -> Result<Vec<ConvergeRow>, HarnessError> {
    let reference = fine_grid_reference(field, layout, eps, n_ref)?;
    let sols: Vec<_> = h_list
        .par_iter()
        .map(|&h| solve_uniform(field, layout, eps, h, neumann))
        .collect::<Result<_, _>>()?;
    let mut reports: Vec<ErrorReport> = Vec::new();
    for (j, sol) in sols.iter().enumerate() {
        let mut rep = compare(sol, &reference, EV_SAMPLES)?;
        rep.h = h_list[j];
        if j > 0 {
            // || psi_{h_j} - psi_{h_{j-1}} ||_inf on the coarser node set;
            // undefined when the oscillatory grids do not nest.
            rep.incremental_err = compare(&sols[j - 1], sol, EV_SAMPLES)
                .ok()
                .map(|r| r.err_psi_inf);
        }
        reports.push(rep);
    }
    let psi_fit = slope_fit(
        &reports
            .iter()
            .map(|r| (r.h, r.err_psi_inf))
            .collect::<Vec<_>>(),
    )
    .ok();
    let dpsi_fit = slope_fit(
        &reports
            .iter()
            .map(|r| (r.h, r.err_eps_dpsi_inf))
            .collect::<Vec<_>>(),
    )
    .ok();
    Ok(reports
        .into_iter()
        .map(|report| ConvergeRow {
            report,
            slope_psi: psi_fit.map(|f| f.slope),
            slope_eps_dpsi: dpsi_fit.map(|f| f.slope),
        })
        .collect())
}

const CONVERGE_HEADER: [&str; 8] = [
    "eps",
    "h",
    "err_psi_inf",
    "err_eps_dpsi_inf",
    "err_psi_l2",
    "incremental_err",
    "slope_psi",
    "slope_eps_dpsi",
];

fn converge_table(
    exp: &ResolvedExperiment,
    command: Command,
) -> Result<CsvTable, HarnessError> {
    let sweeps: Vec<_> = exp
        .eps_list
        .par_iter()
        .map(|&eps| {
            converge_sweep(
                &exp.field,
                &exp.layout,
                eps,
                &exp.h_list,
                exp.n_ref,
                exp.neumann,
            )
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, sweep) in sweeps.iter().enumerate() {
        for row in sweep {
            rows.push(vec![
                fmt_float(exp.eps_list[i]),
                fmt_float(row.report.h),
                fmt_float(row.report.err_psi_inf),
                fmt_float(row.report.err_eps_dpsi_inf),
                fmt_float(row.report.err_psi_l2),
                row.report
                    .incremental_err
                    .map(fmt_float)
                    .unwrap_or_default(),
                row.slope_psi.map(fmt_float).unwrap_or_default(),
                row.slope_eps_dpsi.map(fmt_float).unwrap_or_default(),
            ]);
        }
    }
    Ok(CsvTable {
        comments: config_echo(exp, command),
        header: CONVERGE_HEADER.to_vec(),
        rows,
    })
}

/// Condition number of the assembled evanescent system at (eps, h). For
/// three-zone layouts the Robin datum comes from the step-1 march at the
/// same resolution.
pub fn evanescent_condition(
    field: &CoefficientField,
    layout: &ZoneLayout,
    eps: f64,
    h: f64,
) -> Result<f64, HarnessError> {
    let cells = |lo: f64, hi: f64| (((hi - lo) / h).ceil() as usize).max(1);
    let (zl, zr, rho) = match layout.kind() {
        LayoutKind::TwoZone { x_d } => {
            let rho = RobinCoefficient::two_zone(field, eps).map_err(SolveError::from)?;
            (0.0, x_d, rho)
        }
        LayoutKind::ThreeZone { x_c, x_d } => {
            let grid = OscGrid::uniform(field, 0.0, x_c, cells(0.0, x_c), eps)?;
            let a0 = field.eval_a_side(0.0, Side::Right).map_err(SolveError::from)?;
            let u0 = to_u(
                field,
                0.0,
                Side::Right,
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, -a0.sqrt()),
                eps,
            )?;
            let res = march(&grid, u0)?;
            let (zeta, dzeta) = from_u(field, x_c, Side::Left, res.final_u(), eps)?;
            (x_c, x_d, RobinCoefficient::new(dzeta / (eps * zeta)))
        }
        LayoutKind::Other => {
            return Err(HarnessError::Solve(SolveError::LayoutMismatch {
                expected: "two-zone or three-zone",
            }))
        }
    };
    let mesh = EvanescentMesh::uniform(zl, zr, cells(zl, zr)).map_err(SolveError::from)?;
    let basis = build_basis(field, &mesh, eps).map_err(SolveError::from)?;
    let system =
        assemble(field, &basis, eps, rho, 1.0, 10).map_err(SolveError::from)?;
    Ok(condition_number(&system))
}

fn condition_table(exp: &ResolvedExperiment) -> Result<CsvTable, HarnessError> {
    let mut rows = Vec::new();
    for &eps in &exp.eps_list {
        let conds: Vec<f64> = exp
            .h_list
            .par_iter()
            .map(|&h| evanescent_condition(&exp.field, &exp.layout, eps, h))
            .collect::<Result<_, _>>()?;
        for (&h, &c) in exp.h_list.iter().zip(&conds) {
            rows.push(vec![fmt_float(eps), fmt_float(h), fmt_float(c)]);
        }
    }
    Ok(CsvTable {
        comments: config_echo(exp, Command::Condition),
        header: vec!["eps", "h", "cond"],
        rows,
    })
}

/// Scattering state of the single-zone oscillatory device: march from the
/// outgoing left boundary state and enforce the injection BC by scaling.
fn fig1_rows(
    field: &CoefficientField,
    eps: f64,
    h: f64,
) -> Result<Vec<Vec<String>>, HarnessError> {
    let cells = ((1.0 / h).ceil() as usize).max(1);
    let grid = OscGrid::uniform(field, 0.0, 1.0, cells, eps)?;
    let a0 = field.eval_a_side(0.0, Side::Right).map_err(SolveError::from)?;
    let u0 = to_u(
        field,
        0.0,
        Side::Right,
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, -a0.sqrt()),
        eps,
    )?;
    let res = march(&grid, u0)?;
    let alpha = crate::decomposition::scaling_alpha(&res.final_u(), field, eps)?;
    let mut rows = Vec::new();
    for (n, u) in res.vectors.iter().enumerate() {
        let a = grid.a_at(n);
        let da = grid.da_at(n);
        let t = TransformMatrix {
            a11: a.powf(0.25),
            a21: 0.25 * eps * da / (a * a.powf(0.25)),
            a22: a.powf(-0.25),
        };
        let (p, dp) = t.inverse(OscVector::new(u.u1, u.u2));
        rows.push(dump_row(grid.nodes()[n], alpha * p, alpha * dp));
    }
    Ok(rows)
}

fn run_preset(exp: &ResolvedExperiment, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    match exp.preset {
        Some(PresetName::Fig1) => {
            let eps = exp.eps_list[0];
            let h = exp.h_list[0];
            let mut comments = config_echo(exp, Command::Preset);
            comments.push(format!("this_eps = {}", fmt_float(eps)));
            comments.push(format!("this_h = {}", fmt_float(h)));
            let table = CsvTable {
                comments,
                header: DUMP_HEADER.to_vec(),
                rows: fig1_rows(&exp.field, eps, h)?,
            };
            let path = out.join("fig1_solution.csv");
            emit_csv(&path, &table)?;
            Ok(vec![path])
        }
        Some(PresetName::Example1) => {
            let table = converge_table(exp, Command::Preset)?;
            let path = out.join("example1_converge.csv");
            emit_csv(&path, &table)?;
            Ok(vec![path])
        }
        Some(PresetName::Example2) => {
            let conv = converge_table(exp, Command::Preset)?;
            let conv_path = out.join("example2_converge.csv");
            emit_csv(&conv_path, &conv)?;
            // The condition study uses the paper's three plotted eps values.
            let cond_exp = ResolvedExperiment {
                field: exp.field.clone(),
                layout: exp.layout.clone(),
                eps_list: exp
                    .eps_list
                    .iter()
                    .cloned()
                    .filter(|&e| e >= 1e-3)
                    .collect(),
                h_list: exp.h_list.clone(),
                n_ref: exp.n_ref,
                neumann: exp.neumann,
                preset: exp.preset,
                eps1: exp.eps1,
            };
            let cond = condition_table(&cond_exp)?;
            let cond_path = out.join("example2_condition.csv");
            emit_csv(&cond_path, &cond)?;
            Ok(vec![conv_path, cond_path])
        }
        None => Err(config_err(0, "command 'preset' requires a 'preset' key")),
    }
}

/// Executes a command against a parsed config; returns the written files.
pub fn run(
    command: Command,
    cfg: &ExperimentConfig,
    out_override: Option<&Path>,
) -> Result<Vec<PathBuf>, HarnessError> {
    let exp = resolve(cfg)?;
    let out: PathBuf = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match command {
        Command::Solve => run_solve(&exp, &out),
        Command::Converge => {
            let table = converge_table(&exp, Command::Converge)?;
            let path = out.join("converge.csv");
            emit_csv(&path, &table)?;
            Ok(vec![path])
        }
        Command::Condition => {
            let table = condition_table(&exp)?;
            let path = out.join("condition.csv");
            emit_csv(&path, &table)?;
            Ok(vec![path])
        }
        Command::Preset => run_preset(&exp, &out),
    }
}
