//! The TOML run configuration shared by `estimate`, `simulate`, `study` and `coeffs`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hybridcorr::estimator::TenorMap;
use hybridcorr::io::read_matrix_csv;
use hybridcorr::psd::{DEFAULT_CLAMP_BOUND, DEFAULT_SHRINK_TOL};
use hybridcorr::simulator::{RateObservable, VarianceObservable, VarianceScheme};
use hybridcorr::types::{ComponentSpec, HybridSystemSpec, SeriesKey};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
pub struct ComponentEntry {
    #[serde(flatten)]
    pub spec: ComponentSpec,
    /// Tenor override: two values for G2, one for G1.
    #[serde(default)]
    pub tenors: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenorSection {
    pub g2: Option<[f64; 2]>,
    pub g1: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossBlockEntry {
    pub i: usize,
    pub j: usize,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub complete: bool,
    pub repair: bool,
    pub bound: f64,
    pub tol: f64,
    /// Equity components whose variance is deliberately not observed.
    pub unobserved_variance: Vec<usize>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            complete: true,
            repair: true,
            bound: DEFAULT_CLAMP_BOUND,
            tol: DEFAULT_SHRINK_TOL,
            unobserved_variance: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub rate_observable: Option<RateObservable>,
    pub variance_observable: Option<VarianceObservable>,
    pub variance_scheme: Option<VarianceScheme>,
    #[serde(default)]
    pub couple_short_rate: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub components: Vec<ComponentEntry>,
    #[serde(default)]
    pub tenors: Option<TenorSection>,
    /// Series key to panel column name.
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    #[serde(default)]
    pub cross_blocks: Vec<CrossBlockEntry>,
    /// Full correlation matrix CSV, relative to the config file.
    #[serde(default)]
    pub matrix: Option<PathBuf>,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub outputs: OutputSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> CliResult<()> {
        if self.components.is_empty() {
            return Err(CliError::Input("config lists no components".into()));
        }
        if !self.cross_blocks.is_empty() && self.matrix.is_some() {
            return Err(CliError::Input(
                "give either cross_blocks or matrix, not both".into(),
            ));
        }
        for &c in &self.pipeline.unobserved_variance {
            match self.components.get(c) {
                Some(e) if e.spec.heston().is_some() => {}
                _ => {
                    return Err(CliError::Input(format!(
                        "unobserved_variance lists component {c}, which has no variance state"
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<ComponentSpec> {
        self.components.iter().map(|c| c.spec).collect()
    }

    /// The system with its full matrix when cross blocks or a matrix file are given.
    pub fn system(&self) -> CliResult<HybridSystemSpec> {
        let sys = HybridSystemSpec::new(self.specs());
        if let Some(path) = &self.matrix {
            let path = self.base_dir.join(path);
            let file = fs::File::open(&path).map_err(|e| {
                CliError::Input(format!("cannot read matrix {}: {e}", path.display()))
            })?;
            let m = read_matrix_csv(file, Some(sys.block_sizes())).map_err(CliError::input)?;
            if m.labels() != sys.labels().as_slice() {
                return Err(CliError::Input(format!(
                    "matrix labels {:?} do not match the components' states {:?}",
                    m.labels(),
                    sys.labels()
                )));
            }
            return Ok(HybridSystemSpec {
                full_matrix: Some(m),
                ..sys
            });
        }
        if self.cross_blocks.is_empty() {
            return Ok(sys);
        }
        let mut blocks = BTreeMap::new();
        for b in &self.cross_blocks {
            let rows = b.values.len();
            let cols = b.values.first().map_or(0, Vec::len);
            if b.values.iter().any(|r| r.len() != cols) {
                return Err(CliError::Input(format!(
                    "cross block ({}, {}) is ragged",
                    b.i, b.j
                )));
            }
            let flat: Vec<f64> = b.values.iter().flatten().copied().collect();
            blocks.insert((b.i, b.j), DMatrix::from_row_slice(rows, cols, &flat));
        }
        sys.with_cross_blocks(&blocks).map_err(CliError::input)
    }

    /// Tenors from `[tenors]` and per-component overrides, falling back to `default`.
    pub fn tenor_map(&self, default: TenorMap) -> TenorMap {
        let mut map = default;
        if let Some(t) = &self.tenors {
            if let Some([a, b]) = t.g2 {
                map.default_g2 = (a, b);
            }
            if let Some(g1) = t.g1 {
                map.default_g1 = g1;
            }
        }
        for (i, c) in self.components.iter().enumerate() {
            if let Some(t) = &c.tenors {
                map.set(i, t.clone());
            }
        }
        map
    }

    /// Panel column name to series key.
    pub fn column_bindings(&self) -> CliResult<BTreeMap<String, SeriesKey>> {
        let mut out = BTreeMap::new();
        for (key, column) in &self.bindings {
            let k: SeriesKey = key.parse().map_err(CliError::input)?;
            if out.insert(column.clone(), k).is_some() {
                return Err(CliError::Input(format!("column `{column}` is bound twice")));
            }
        }
        Ok(out)
    }
}
