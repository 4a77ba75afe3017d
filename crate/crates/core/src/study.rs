//! Monte Carlo accuracy study: simulate many independent paths of a hybrid
//! system with known correlations, estimate every cross entry per path and
//! report bias and standard error per entry.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{estimate_all, TenorMap};
use crate::simulator::{
    derive_seed, simulate_system, RateObservable, SchemeOptions, SimulationConfig,
    VarianceObservable,
};
use crate::types::{ComponentSpec, G2Params, HestonParams, HybridSystemSpec};

/// Tenors used by the study for every two-factor rate component.
pub const STUDY_G2_TENORS: (f64, f64) = (10.0, 30.0);
/// Maximum share of failed trials before a run is rejected.
pub const MAX_FAILURE_SHARE: f64 = 0.1;
pub const INTRADAY_DT: f64 = 0.01 / 250.0;
pub const DAILY_DT: f64 = 1.0 / 250.0;

pub const PRESET_NAMES: [&str; 3] = ["g2g2", "g2heston", "hestonheston"];

fn heston(kappa: f64, theta: f64, xi: f64, v0: f64, rho_sv: f64) -> ComponentSpec {
    ComponentSpec::Heston(HestonParams {
        kappa,
        theta,
        xi,
        v0,
        rho_sv,
        r_tilde: 0.0,
        q_tilde: 0.0,
    })
}

/// The reference two-component systems with their full correlation matrices.
pub fn table_presets(name: &str) -> Result<HybridSystemSpec> {
    let g2_first = ComponentSpec::G2(G2Params {
        a: 0.1,
        b: 0.2,
        sigma: 0.01,
        eta: 0.02,
        rho_xy: 0.5,
    });
    let (components, cross) = match name {
        "g2g2" => (
            vec![
                g2_first,
                ComponentSpec::G2(G2Params {
                    a: 0.15,
                    b: 0.25,
                    sigma: 0.015,
                    eta: 0.025,
                    rho_xy: 0.55,
                }),
            ],
            [0.1, 0.2, 0.3, 0.4],
        ),
        "g2heston" => (
            vec![g2_first, heston(1.0, 0.2, 0.3, 0.1, -0.8)],
            [0.1, -0.2, 0.3, -0.4],
        ),
        "hestonheston" => (
            vec![
                heston(1.0, 0.2, 0.3, 0.1, -0.8),
                heston(1.1, 0.22, 0.33, 0.11, -0.88),
            ],
            [0.1, -0.2, -0.3, 0.4],
        ),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    let blocks = BTreeMap::from([((0, 1), DMatrix::from_row_slice(2, 2, &cross))]);
    HybridSystemSpec::new(components).with_cross_blocks(&blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// Simulation truth; must carry the full correlation matrix.
    pub system: HybridSystemSpec,
    pub n_steps: usize,
    pub dt: f64,
    pub n_trials: usize,
    /// Rate-model parameters used for estimation are the true ones times this factor.
    pub factor: f64,
    pub seed: u64,
    pub tenors: TenorMap,
    pub rate_observable: RateObservable,
    pub variance_observable: VarianceObservable,
    pub scheme: SchemeOptions,
}

impl StudyConfig {
    pub fn new(system: HybridSystemSpec, n_steps: usize, dt: f64) -> Self {
        Self {
            system,
            n_steps,
            dt,
            n_trials: 1000,
            factor: 1.0,
            seed: 20_240_601,
            tenors: TenorMap::with_g2_default(STUDY_G2_TENORS),
            rate_observable: RateObservable::MartingaleLoading,
            variance_observable: VarianceObservable::True,
            scheme: SchemeOptions::default(),
        }
    }

    pub fn preset(name: &str, n_steps: usize, dt: f64) -> Result<Self> {
        Ok(Self::new(table_presets(name)?, n_steps, dt))
    }

    pub fn with_trials(mut self, n_trials: usize) -> Self {
        self.n_trials = n_trials;
        self
    }

    pub fn with_factor(mut self, factor: f64) -> Self {
        self.factor = factor;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_trials < 2 {
            return Err(Error::InvalidParameter("n_trials must be >= 2".into()));
        }
        if !(self.factor > 0.0) || !self.factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "factor must be > 0, got {}",
                self.factor
            )));
        }
        if self.system.full_matrix.is_none() {
            return Err(Error::InvalidParameter(
                "study requires the full correlation matrix".into(),
            ));
        }
        Ok(())
    }

    fn simulation(&self, trial: usize) -> SimulationConfig {
        SimulationConfig {
            n_steps: self.n_steps,
            dt: self.dt,
            seed: derive_seed(self.seed, trial as u64),
            scheme: self.scheme,
            couple_short_rate: false,
            rate_observable: self.rate_observable,
            variance_observable: self.variance_observable,
            tenors: self.tenors.clone(),
        }
    }
}

/// Statistics of one cross entry across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEntry {
    pub row: String,
    pub col: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub n_steps: usize,
    pub dt: f64,
    pub n_trials: usize,
    pub factor: f64,
    pub seed: u64,
    pub entries: Vec<StudyEntry>,
    pub failures: usize,
    pub elapsed_secs: f64,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn entry(&self, row: &str, col: &str) -> Option<&StudyEntry> {
        self.entries.iter().find(|e| e.row == row && e.col == col)
    }

    /// Everything except the wall-clock time, for reproducibility comparisons.
    pub fn same_statistics(&self, other: &StudyReport) -> bool {
        self.entries == other.entries && self.failures == other.failures
    }
}

fn counts_as_trial_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::SingularSystem(_) | Error::ZeroVariance(_) | Error::DegenerateNormalizer
    )
}

/// Runs the study; trials run in parallel and are reduced in trial order.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let start = Instant::now();
    let truth = config.system.full_matrix.as_ref().expect("validated");
    let estimation_system = HybridSystemSpec::new(
        config
            .system
            .components
            .iter()
            .map(|c| c.with_rate_params_scaled(config.factor))
            .collect(),
    );

    // Cross entries in row-major order over pairs i < j.
    let offsets = truth.block_offsets();
    let sizes = truth.block_sizes().to_vec();
    let mut cells = Vec::new();
    for i in 0..sizes.len() {
        for j in i + 1..sizes.len() {
            for r in 0..sizes[i] {
                for c in 0..sizes[j] {
                    cells.push((offsets[i] + r, offsets[j] + c));
                }
            }
        }
    }

    let outcomes: Vec<Result<Vec<f64>>> = (0..config.n_trials)
        .into_par_iter()
        .map(|t| {
            let paths = simulate_system(&config.system, &config.simulation(t))?;
            let draft = estimate_all(&paths.panel, &estimation_system, &config.tenors)?;
            Ok(cells.iter().map(|&(r, c)| draft.matrix.get(r, c)).collect())
        })
        .collect();

    let mut samples = Vec::with_capacity(outcomes.len());
    let mut failures = 0;
    for outcome in outcomes {
        match outcome {
            Ok(v) => samples.push(v),
            Err(e) if counts_as_trial_failure(&e) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    if failures as f64 > MAX_FAILURE_SHARE * config.n_trials as f64 || samples.len() < 2 {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: config.n_trials,
        });
    }

    let m = samples.len() as f64;
    let labels = truth.labels();
    let entries = cells
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| {
            let mean = samples.iter().map(|s| s[k]).sum::<f64>() / m;
            let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let truth = truth.get(r, c);
            StudyEntry {
                row: labels[r].clone(),
                col: labels[c].clone(),
                truth,
                mean,
                bias: mean - truth,
                stderr: var.sqrt(),
            }
        })
        .collect();

    let mut notes = Vec::new();
    if config
        .system
        .components
        .iter()
        .any(|c| c.heston().is_some())
    {
        notes.push(match config.variance_observable {
            VarianceObservable::True => "variance series: simulated variance path".to_string(),
            VarianceObservable::ImpliedVolAtm => {
                "variance series: squared ATM implied vol proxy".to_string()
            }
            VarianceObservable::Unobserved => "variance series: unobserved".to_string(),
        });
    }
    if config.factor != 1.0 {
        notes.push(format!(
            "rate parameters scaled by {} for estimation",
            config.factor
        ));
    }

    Ok(StudyReport {
        n_steps: config.n_steps,
        dt: config.dt,
        n_trials: config.n_trials,
        factor: config.factor,
        seed: config.seed,
        entries,
        failures,
        elapsed_secs: start.elapsed().as_secs_f64(),
        notes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    #[default]
    Text,
    Csv,
}

/// One line of the machine-readable table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRecord {
    pub n_steps: usize,
    pub dt: f64,
    pub factor: f64,
    pub n_trials: usize,
    pub failures: usize,
    pub row: String,
    pub col: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub stderr: f64,
}

const CSV_HEADER: [&str; 11] = [
    "n_steps", "dt", "factor", "n_trials", "failures", "row", "col", "truth", "mean", "bias",
    "stderr",
];

pub fn table_records(reports: &[StudyReport]) -> Vec<TableRecord> {
    reports
        .iter()
        .flat_map(|r| {
            r.entries.iter().map(move |e| TableRecord {
                n_steps: r.n_steps,
                dt: r.dt,
                factor: r.factor,
                n_trials: r.n_trials,
                failures: r.failures,
                row: e.row.clone(),
                col: e.col.clone(),
                truth: e.truth,
                mean: e.mean,
                bias: e.bias,
                stderr: e.stderr,
            })
        })
        .collect()
}

/// Renders reports as one table row per report: bias on top, standard error
/// below in parentheses, both in percent.
pub fn emit_table(reports: &[StudyReport], format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for rec in table_records(reports) {
                w.serialize(rec)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
        }
        TableFormat::Text => {
            let columns: Vec<(String, String, f64)> = reports
                .first()
                .map(|r| {
                    r.entries
                        .iter()
                        .map(|e| (e.row.clone(), e.col.clone(), e.truth))
                        .collect()
                })
                .unwrap_or_default();
            let width = 18;
            let mut out = String::new();
            let _ = write!(out, "{:>12}", "n");
            for (r, c, _) in &columns {
                let _ = write!(out, "{:>width$}", format!("{r},{c}"));
            }
            out.push('\n');
            let _ = write!(out, "{:>12}", "");
            for (_, _, t) in &columns {
                let _ = write!(out, "{:>width$}", format!("{:.2}%", 100.0 * t));
            }
            out.push('\n');
            for rep in reports {
                let _ = write!(out, "{:>12}", rep.n_steps);
                for e in &rep.entries {
                    let _ = write!(out, "{:>width$}", format!("{:.2}%", 100.0 * e.bias));
                }
                out.push('\n');
                let _ = write!(out, "{:>12}", "");
                for e in &rep.entries {
                    let _ = write!(out, "{:>width$}", format!("({:.2}%)", 100.0 * e.stderr));
                }
                out.push('\n');
            }
            Ok(out)
        }
    }
}

/// Parses the CSV variant of `emit_table`.
pub fn read_table_csv(text: &str) -> Result<Vec<TableRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Csv(format!("unexpected table header {header:?}")));
    }
    r.deserialize()
        .map(|rec| rec.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_reference_parameters() {
        let s = table_presets("g2heston").unwrap();
        assert_eq!(
            s.components[0],
            ComponentSpec::G2(G2Params {
                a: 0.1,
                b: 0.2,
                sigma: 0.01,
                eta: 0.02,
                rho_xy: 0.5
            })
        );
        let h = s.components[1].heston().unwrap();
        assert_eq!(
            (h.kappa, h.theta, h.xi, h.v0, h.rho_sv),
            (1.0, 0.2, 0.3, 0.1, -0.8)
        );
        let m = s.full_matrix.unwrap();
        assert_eq!(
            m.block(0, 1),
            DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.3, -0.4])
        );

        let s = table_presets("g2g2").unwrap();
        assert_eq!(
            s.components[1],
            ComponentSpec::G2(G2Params {
                a: 0.15,
                b: 0.25,
                sigma: 0.015,
                eta: 0.025,
                rho_xy: 0.55
            })
        );
        let s = table_presets("hestonheston").unwrap();
        assert_eq!(
            s.full_matrix.unwrap().block(0, 1),
            DMatrix::from_row_slice(2, 2, &[0.1, -0.2, -0.3, 0.4])
        );
        assert_eq!(
            table_presets("nope").unwrap_err(),
            Error::UnknownPreset("nope".into())
        );
    }

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            assert!(crate::types::validate_system(&table_presets(name).unwrap()).is_empty());
        }
    }

    #[test]
    fn empty_report_gives_header_only() {
        let text = emit_table(&[], TableFormat::Text).unwrap();
        assert_eq!(text.lines().count(), 2);
        let csv = emit_table(&[], TableFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(read_table_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn small_study_is_reproducible_and_round_trips() {
        let cfg = StudyConfig::preset("g2heston", 200, DAILY_DT)
            .unwrap()
            .with_trials(16);
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert!(a.same_statistics(&b));
        assert_eq!(a.entries.len(), 4);
        let csv = emit_table(std::slice::from_ref(&a), TableFormat::Csv).unwrap();
        assert_eq!(read_table_csv(&csv).unwrap(), table_records(&[a]));
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = StudyConfig::preset("g2g2", 100, DAILY_DT).unwrap();
        assert!(run_study(&cfg.clone().with_trials(1)).is_err());
        assert!(run_study(&cfg.with_factor(0.0)).is_err());
    }
}
