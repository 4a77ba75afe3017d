use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hybridcorr::completion::complete_panel;
use hybridcorr::estimator::{
    estimate_all, g2_single_state_system, g2g2_system, loading_c, normalizer_d, required_series,
    CoefficientSystem, TenorMap,
};
use hybridcorr::io::{read_matrix_csv, read_panel_csv, write_matrix_csv, write_panel_csv};
use hybridcorr::psd::{eigenvalues, is_psd, repair, DEFAULT_PSD_TOL};
use hybridcorr::simulator::{simulate_system, SimulationConfig};
use hybridcorr::study::{emit_table, run_study, StudyConfig, TableFormat, DAILY_DT};
use hybridcorr::types::{
    BlockCorrelationMatrix, ComponentSpec, HybridSystemSpec, ObservationPanel, SeriesKey,
    SYMMETRY_TOL,
};
use hybridcorr::Error;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const DEFAULT_SIM_SEED: u64 = 1;

pub struct EstimateArgs {
    pub config: PathBuf,
    pub panel: PathBuf,
    pub out: Option<PathBuf>,
    pub bound: Option<f64>,
    pub tol: Option<f64>,
    pub no_repair: bool,
    pub no_complete: bool,
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
}

pub struct StudyArgs {
    pub preset: Option<String>,
    pub config: Option<PathBuf>,
    pub n: Vec<usize>,
    pub dt: Option<f64>,
    pub trials: Option<usize>,
    pub factor: Option<f64>,
    pub seed: Option<u64>,
    pub format: TableFormat,
    pub out: Option<PathBuf>,
}

pub struct RepairArgs {
    pub matrix: PathBuf,
    pub blocks: Option<Vec<usize>>,
    pub bound: Option<f64>,
    pub tol: Option<f64>,
    pub out: Option<PathBuf>,
}

fn open(path: &Path, what: &str) -> CliResult<fs::File> {
    fs::File::open(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))
}

fn matrix_csv(m: &BlockCorrelationMatrix) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write_matrix_csv(m, &mut buf).map_err(CliError::output)?;
    Ok(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(CliError::output)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(CliError::output),
    }
}

fn check_repair_options(bound: f64, tol: f64) -> CliResult<()> {
    if !(bound > 0.0 && bound <= 1.0) {
        return Err(CliError::Input(format!("bound {bound} outside (0, 1]")));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(CliError::Input(format!("tol {tol} outside (0, 1)")));
    }
    Ok(())
}

fn psd_status(m: &BlockCorrelationMatrix) -> Value {
    if m.entries().iter().any(|v| !v.is_finite()) {
        return json!({ "psd": Value::Null, "eigenvalues": Value::Null });
    }
    json!({
        "psd": is_psd(m.entries(), DEFAULT_PSD_TOL),
        "eigenvalues": eigenvalues(m.entries()),
    })
}

fn without_keys(panel: &ObservationPanel, drop: &[SeriesKey]) -> CliResult<ObservationPanel> {
    let mut out = ObservationPanel::new(panel.times().to_vec()).map_err(CliError::input)?;
    for (k, v) in panel.series() {
        if !drop.contains(k) {
            out.insert(*k, v.clone()).map_err(CliError::input)?;
        }
    }
    Ok(out)
}

/// Reads the panel and checks every required observable is present.
fn load_panel(
    cfg: &RunConfig,
    path: &Path,
    system: &HybridSystemSpec,
    tenors: &TenorMap,
) -> CliResult<ObservationPanel> {
    let bindings = cfg.column_bindings()?;
    let panel = read_panel_csv(open(path, "panel")?, &bindings).map_err(CliError::input)?;
    for (column, key) in &bindings {
        if panel.get(key).is_none() {
            return Err(CliError::Input(format!(
                "panel has no column `{column}` (bound to {key})"
            )));
        }
    }
    let column_of = |key: &SeriesKey| {
        bindings
            .iter()
            .find(|(_, k)| *k == key)
            .map_or_else(|| key.to_string(), |(c, _)| c.clone())
    };
    for key in required_series(system, tenors).map_err(CliError::input)? {
        if panel.get(&key).is_none() {
            return Err(CliError::Input(format!(
                "panel has no column `{}` for series {key}",
                column_of(&key)
            )));
        }
    }

    let unobserved = &cfg.pipeline.unobserved_variance;
    let mut drop = Vec::new();
    for (i, spec) in system.components.iter().enumerate() {
        if spec.heston().is_none() {
            continue;
        }
        let keys = [SeriesKey::variance(i), SeriesKey::implied_vol(i)];
        if unobserved.contains(&i) {
            drop.extend(keys);
        } else if keys.iter().all(|k| panel.get(k).is_none()) {
            return Err(CliError::Input(format!(
                "panel has no column `{}` or `{}`; bind one or list component {i} in pipeline.unobserved_variance",
                column_of(&keys[0]),
                column_of(&keys[1])
            )));
        }
    }
    without_keys(&panel, &drop)
}

/// Runs estimation, completion and repair; returns the text summary.
pub fn estimate(args: &EstimateArgs) -> CliResult<String> {
    let cfg = RunConfig::load(&args.config)?;
    let bound = args.bound.unwrap_or(cfg.pipeline.bound);
    let tol = args.tol.unwrap_or(cfg.pipeline.tol);
    check_repair_options(bound, tol)?;
    let do_complete = cfg.pipeline.complete && !args.no_complete;
    let do_repair = cfg.pipeline.repair && !args.no_repair;
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.outputs.dir.as_ref().map(|d| cfg.base_dir.join(d)))
        .ok_or_else(|| {
            CliError::Input("no output directory: pass --out or set outputs.dir".into())
        })?;

    let system = HybridSystemSpec::new(cfg.specs());
    let tenors = cfg.tenor_map(TenorMap::default());
    let panel = load_panel(&cfg, &args.panel, &system, &tenors)?;

    let draft = estimate_all(&panel, &system, &tenors).map_err(CliError::estimation)?;
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Output(format!("{}: {e}", out_dir.display())))?;
    write_file(&out_dir.join("draft.csv"), &matrix_csv(&draft.matrix)?)?;

    let mut current = draft.matrix.clone();
    let mut completed = false;
    if do_complete && !draft.is_complete() {
        current =
            complete_panel(&draft.matrix, &draft.missing, &system).map_err(CliError::estimation)?;
        write_file(&out_dir.join("completed.csv"), &matrix_csv(&current)?)?;
        completed = true;
    }

    let mut flags = Vec::new();
    let repair_report = if do_repair {
        let res = repair(&current, bound, tol).map_err(CliError::repair)?;
        current = res.matrix.clone();
        write_file(&out_dir.join("repaired.csv"), &matrix_csv(&current)?)?;
        serde_json::to_value(res.summary()).map_err(CliError::output)?
    } else {
        let finite = current.entries().iter().all(|v| v.is_finite());
        if !finite {
            flags.push("incomplete".to_string());
        } else if !is_psd(current.entries(), DEFAULT_PSD_TOL) {
            flags.push("not PSD".to_string());
        }
        Value::Null
    };

    let labels = draft.matrix.labels();
    let mut missing = Vec::new();
    for r in 0..labels.len() {
        for c in r + 1..labels.len() {
            if draft.missing[(r, c)] {
                missing.push([labels[r].clone(), labels[c].clone()]);
            }
        }
    }
    let report = json!({
        "labels": labels,
        "block_sizes": draft.matrix.block_sizes(),
        "tenors": {
            "g2": [tenors.default_g2.0, tenors.default_g2.1],
            "g1": tenors.default_g1,
            "overrides": tenors.overrides.iter().map(|(k, v)| (k.to_string(), v.clone())).collect::<BTreeMap<_, _>>(),
        },
        "pairs": draft.diagnostics.pairs,
        "warnings": draft.diagnostics.warnings,
        "missing": missing,
        "completion": { "enabled": do_complete, "applied": completed },
        "draft": psd_status(&draft.matrix),
        "repair": repair_report,
        "bound": bound,
        "tol": tol,
        "flags": flags,
    });
    write_json(&out_dir.join("report.json"), &report)?;

    let mut text = String::new();
    let _ = writeln!(
        text,
        "draft matrix: {}",
        out_dir.join("draft.csv").display()
    );
    if completed {
        let _ = writeln!(
            text,
            "completed matrix: {}",
            out_dir.join("completed.csv").display()
        );
    }
    if do_repair {
        let _ = writeln!(
            text,
            "repaired matrix: {} (alpha_star = {})",
            out_dir.join("repaired.csv").display(),
            report["repair"]["alpha_star"]
        );
    }
    for f in &flags {
        let _ = writeln!(text, "flag: {f}");
    }
    for w in &draft.diagnostics.warnings {
        let _ = writeln!(text, "warning: {w}");
    }
    let _ = writeln!(text, "report: {}", out_dir.join("report.json").display());
    Ok(text)
}

/// Simulates one path of the configured system and writes its panel.
pub fn simulate(args: &SimulateArgs) -> CliResult<Vec<String>> {
    let cfg = RunConfig::load(&args.config)?;
    let system = cfg.system()?;
    if system.full_matrix.is_none() {
        return Err(CliError::Input(
            "simulate needs cross_blocks or matrix in the config".into(),
        ));
    }
    let sim = &cfg.simulation;
    let n = args.n.or(sim.n).ok_or_else(|| {
        CliError::Input("number of steps missing: pass --n or set simulation.n".into())
    })?;
    let mut sc = SimulationConfig::new(
        n,
        args.dt.or(sim.dt).unwrap_or(DAILY_DT),
        args.seed.or(sim.seed).unwrap_or(DEFAULT_SIM_SEED),
    );
    sc.tenors = cfg.tenor_map(TenorMap::default());
    sc.couple_short_rate = sim.couple_short_rate;
    if let Some(r) = sim.rate_observable {
        sc.rate_observable = r;
    }
    if let Some(v) = sim.variance_observable {
        sc.variance_observable = v;
    }
    if let Some(s) = sim.variance_scheme {
        sc.scheme.variance = s;
    }
    let paths = simulate_system(&system, &sc).map_err(|e| match e {
        Error::NotPositiveSemidefinite(_) => CliError::repair(e),
        Error::InvalidParameter(_) | Error::DimensionMismatch(_) => CliError::input(e),
        other => CliError::estimation(other),
    })?;
    let mut buf = Vec::new();
    write_panel_csv(&paths.panel, &mut buf).map_err(CliError::output)?;
    emit(args.out.as_deref(), &buf)?;
    Ok(paths.diagnostics)
}

/// Runs one study per path length and renders the table.
pub fn study(args: &StudyArgs) -> CliResult<(String, Vec<String>)> {
    let base = match (&args.preset, &args.config) {
        (Some(p), None) => StudyConfig::preset(p, 1, DAILY_DT).map_err(CliError::input)?,
        (None, Some(path)) => {
            let cfg = RunConfig::load(path)?;
            let system = cfg.system()?;
            if system.full_matrix.is_none() {
                return Err(CliError::Input(
                    "study needs cross_blocks or matrix in the config".into(),
                ));
            }
            let mut sc = StudyConfig::new(system, 1, DAILY_DT);
            sc.tenors = cfg.tenor_map(sc.tenors.clone());
            if let Some(seed) = cfg.simulation.seed {
                sc.seed = seed;
            }
            if let Some(dt) = cfg.simulation.dt {
                sc.dt = dt;
            }
            if let Some(r) = cfg.simulation.rate_observable {
                sc.rate_observable = r;
            }
            if let Some(v) = cfg.simulation.variance_observable {
                sc.variance_observable = v;
            }
            if let Some(s) = cfg.simulation.variance_scheme {
                sc.scheme.variance = s;
            }
            sc
        }
        _ => {
            return Err(CliError::Input(
                "give exactly one of --preset and --config".into(),
            ))
        }
    };
    let mut base = base;
    if let Some(dt) = args.dt {
        base.dt = dt;
    }
    if let Some(t) = args.trials {
        base.n_trials = t;
    }
    if let Some(f) = args.factor {
        base.factor = f;
    }
    if let Some(s) = args.seed {
        base.seed = s;
    }
    let lengths = if args.n.is_empty() {
        vec![10_000]
    } else {
        args.n.clone()
    };

    let mut reports = Vec::new();
    let mut notes = Vec::new();
    for n in lengths {
        let cfg = StudyConfig {
            n_steps: n,
            ..base.clone()
        };
        let report = run_study(&cfg).map_err(|e| match e {
            Error::InvalidParameter(_) | Error::UnknownPreset(_) => CliError::input(e),
            other => CliError::estimation(other),
        })?;
        notes.push(format!(
            "n={n}: {} trials, {} failures, {:.2}s",
            report.n_trials, report.failures, report.elapsed_secs
        ));
        notes.extend(report.notes.iter().cloned());
        reports.push(report);
    }
    notes.dedup();
    let table = emit_table(&reports, args.format).map_err(CliError::output)?;
    emit(args.out.as_deref(), table.as_bytes())?;
    Ok((table, notes))
}

/// Repairs a stored matrix; returns the report.
pub fn repair_matrix(args: &RepairArgs) -> CliResult<Value> {
    let bound = args.bound.unwrap_or(hybridcorr::psd::DEFAULT_CLAMP_BOUND);
    let tol = args.tol.unwrap_or(hybridcorr::psd::DEFAULT_SHRINK_TOL);
    check_repair_options(bound, tol)?;
    let m = read_matrix_csv(open(&args.matrix, "matrix")?, args.blocks.clone())
        .map_err(CliError::input)?;
    if !m.is_symmetric(SYMMETRY_TOL) {
        return Err(CliError::Input("matrix is not symmetric".into()));
    }
    let res = repair(&m, bound, tol).map_err(CliError::repair)?;
    let report = json!({
        "labels": m.labels(),
        "block_sizes": m.block_sizes(),
        "input": psd_status(&m),
        "bound": bound,
        "tol": tol,
        "result": res.summary(),
    });
    let csv = matrix_csv(&res.matrix)?;
    match &args.out {
        Some(dir) => {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
            write_file(&dir.join("repaired.csv"), &csv)?;
            write_json(&dir.join("report.json"), &report)?;
        }
        None => emit(None, &csv)?,
    }
    Ok(report)
}

fn print_system(text: &mut String, title: &str, sys: &CoefficientSystem) {
    let _ = writeln!(
        text,
        "{title} (condition number {:.6e})",
        sys.condition_number
    );
    let _ = writeln!(
        text,
        "  {:<20}{}",
        "",
        sys.unknown_labels
            .iter()
            .map(|l| format!("{l:>16}"))
            .collect::<String>()
    );
    for (r, label) in sys.rhs_labels.iter().enumerate() {
        let row: String = sys
            .matrix
            .row(r)
            .iter()
            .map(|v| format!("{v:>16.10}"))
            .collect();
        let _ = writeln!(text, "  {label:<20}{row}");
    }
}

/// Loadings, normalizers and coefficient systems for the configured components.
pub fn coeffs(config: &Path) -> CliResult<String> {
    let cfg = RunConfig::load(config)?;
    let tenors = cfg.tenor_map(TenorMap::default());
    let specs = cfg.specs();
    let mut text = String::new();
    for (i, spec) in specs.iter().enumerate() {
        let ComponentSpec::G2(p) = spec else { continue };
        let (t1, t2) = tenors.g2(i).map_err(CliError::input)?;
        let _ = writeln!(text, "component {i} (g2)");
        for tau in [t1, t2] {
            let cx = loading_c(p.a, p.sigma, tau);
            let cy = loading_c(p.b, p.eta, tau);
            let d = normalizer_d(p.a, p.b, p.sigma, p.eta, tau, p.rho_xy);
            let d_text = match d {
                Ok(d) => format!("{d:.10e}  normalized = ({:.10}, {:.10})", cx / d, cy / d),
                Err(e) => e.to_string(),
            };
            let _ = writeln!(
                text,
                "  tau = {tau}: c_x = {cx:.10e}  c_y = {cy:.10e}  d = {d_text}"
            );
        }
    }
    for i in 0..specs.len() {
        for j in i + 1..specs.len() {
            let title = format!("pair ({i}, {j})");
            let sys = match (&specs[i], &specs[j]) {
                (ComponentSpec::G2(a), ComponentSpec::G2(b)) => g2g2_system(
                    a,
                    b,
                    tenors.g2(i).map_err(CliError::input)?,
                    tenors.g2(j).map_err(CliError::input)?,
                ),
                (ComponentSpec::G2(a), _) => {
                    g2_single_state_system(a, tenors.g2(i).map_err(CliError::input)?)
                }
                (_, ComponentSpec::G2(b)) => {
                    g2_single_state_system(b, tenors.g2(j).map_err(CliError::input)?)
                }
                _ => continue,
            };
            match sys {
                Ok(sys) => print_system(&mut text, &title, &sys),
                Err(e) => {
                    let _ = writeln!(text, "{title}: {e}");
                }
            }
        }
    }
    if text.is_empty() {
        text.push_str("no two-factor rate components; every pair is a direct correlation\n");
    }
    Ok(text)
}
