//! Component parameterizations, the labeled block correlation matrix and the
//! observation panel shared by every other module.
//!
//! A hybrid system is an ordered list of components. Each component owns one
//! or two Brownian states:
//!
//! ```text
//! G1      -> [x]
//! G2      -> [x, y]
//! Heston  -> [s, v]
//! Bates   -> [s, v]
//! Single  -> [s]
//! ```
//!
//! The full instantaneous correlation matrix stacks the states of all
//! components in order. Diagonal blocks come from the calibrated component
//! parameters; cross blocks come from time-series estimation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetry tolerance applied to assembled matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Two-factor additive Gaussian short-rate parameters (shift fixed to zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub eta: f64,
    pub rho_xy: f64,
}

/// One-factor Gaussian short-rate parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G1Params {
    pub a: f64,
    pub sigma: f64,
}

/// Heston stochastic-volatility parameters on the log price `s = log S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub xi: f64,
    pub v0: f64,
    pub rho_sv: f64,
    #[serde(default)]
    pub r_tilde: f64,
    #[serde(default)]
    pub q_tilde: f64,
}

/// Lognormal jump overlay of the Bates model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatesJumpParams {
    pub lambda: f64,
    pub mu_j: f64,
    pub sigma_j: f64,
}

impl G2Params {
    /// Scales every parameter (rates, vols and the inner correlation) by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            a: self.a * factor,
            b: self.b * factor,
            sigma: self.sigma * factor,
            eta: self.eta * factor,
            rho_xy: (self.rho_xy * factor).clamp(-1.0, 1.0),
        }
    }

    fn violations(&self, ctx: &str, out: &mut Vec<String>) {
        positive(ctx, "a", self.a, out);
        positive(ctx, "b", self.b, out);
        positive(ctx, "sigma", self.sigma, out);
        positive(ctx, "eta", self.eta, out);
        correlation(ctx, "rho_xy", self.rho_xy, out);
    }
}

impl G1Params {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            a: self.a * factor,
            sigma: self.sigma * factor,
        }
    }

    fn violations(&self, ctx: &str, out: &mut Vec<String>) {
        positive(ctx, "a", self.a, out);
        positive(ctx, "sigma", self.sigma, out);
    }
}

impl HestonParams {
    /// Feller condition `2κθ > ξ²`. Reported, never enforced.
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.kappa * self.theta > self.xi * self.xi
    }

    fn violations(&self, ctx: &str, out: &mut Vec<String>) {
        positive(ctx, "kappa", self.kappa, out);
        positive(ctx, "theta", self.theta, out);
        positive(ctx, "xi", self.xi, out);
        positive(ctx, "v0", self.v0, out);
        correlation(ctx, "rho_sv", self.rho_sv, out);
        finite(ctx, "r_tilde", self.r_tilde, out);
        finite(ctx, "q_tilde", self.q_tilde, out);
    }
}

impl BatesJumpParams {
    fn violations(&self, ctx: &str, out: &mut Vec<String>) {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            out.push(format!("{ctx}: lambda must be >= 0"));
        }
        finite(ctx, "mu_j", self.mu_j, out);
        if !(self.sigma_j >= 0.0) || !self.sigma_j.is_finite() {
            out.push(format!("{ctx}: sigma_j must be >= 0"));
        }
    }
}

fn positive(ctx: &str, name: &str, v: f64, out: &mut Vec<String>) {
    if !(v > 0.0) || !v.is_finite() {
        out.push(format!("{ctx}: {name} must be > 0"));
    }
}

fn correlation(ctx: &str, name: &str, v: f64, out: &mut Vec<String>) {
    if !(-1.0..=1.0).contains(&v) {
        out.push(format!("{ctx}: {name} must lie in [-1, 1]"));
    }
}

fn finite(ctx: &str, name: &str, v: f64, out: &mut Vec<String>) {
    if !v.is_finite() {
        out.push(format!("{ctx}: {name} must be finite"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    G1,
    G2,
    Heston,
    Bates,
    SingleStateEquity,
}

/// One Brownian state of a component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateKind {
    X,
    Y,
    S,
    V,
}

impl StateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StateKind::X => "x",
            StateKind::Y => "y",
            StateKind::S => "s",
            StateKind::V => "v",
        }
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tagged description of one component model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentSpec {
    G1(G1Params),
    G2(G2Params),
    Heston(HestonParams),
    Bates {
        #[serde(flatten)]
        heston: HestonParams,
        jumps: BatesJumpParams,
    },
    SingleStateEquity,
}

impl ComponentSpec {
    pub fn kind(&self) -> ComponentKind {
        match self {
            ComponentSpec::G1(_) => ComponentKind::G1,
            ComponentSpec::G2(_) => ComponentKind::G2,
            ComponentSpec::Heston(_) => ComponentKind::Heston,
            ComponentSpec::Bates { .. } => ComponentKind::Bates,
            ComponentSpec::SingleStateEquity => ComponentKind::SingleStateEquity,
        }
    }

    pub fn states(&self) -> &'static [StateKind] {
        match self.kind() {
            ComponentKind::G1 => &[StateKind::X],
            ComponentKind::G2 => &[StateKind::X, StateKind::Y],
            ComponentKind::Heston | ComponentKind::Bates => &[StateKind::S, StateKind::V],
            ComponentKind::SingleStateEquity => &[StateKind::S],
        }
    }

    pub fn state_labels(&self) -> Vec<&'static str> {
        self.states().iter().map(StateKind::as_str).collect()
    }

    pub fn size(&self) -> usize {
        self.states().len()
    }

    /// Correlation between the two states of a two-state component.
    pub fn inner_rho(&self) -> Option<f64> {
        match self {
            ComponentSpec::G2(p) => Some(p.rho_xy),
            ComponentSpec::Heston(p) | ComponentSpec::Bates { heston: p, .. } => Some(p.rho_sv),
            _ => None,
        }
    }

    pub fn heston(&self) -> Option<&HestonParams> {
        match self {
            ComponentSpec::Heston(p) | ComponentSpec::Bates { heston: p, .. } => Some(p),
            _ => None,
        }
    }

    /// The calibrated within-component correlation block.
    pub fn diagonal_block(&self) -> DMatrix<f64> {
        match self.inner_rho() {
            Some(rho) => DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            None => DMatrix::identity(1, 1),
        }
    }

    /// Rate-model parameters scaled by `factor`; equity components are returned unchanged.
    pub fn with_rate_params_scaled(&self, factor: f64) -> Self {
        match self {
            ComponentSpec::G1(p) => ComponentSpec::G1(p.scaled(factor)),
            ComponentSpec::G2(p) => ComponentSpec::G2(p.scaled(factor)),
            other => *other,
        }
    }

    pub fn violations(&self, index: usize) -> Vec<String> {
        let ctx = format!("component {index}");
        let mut out = Vec::new();
        match self {
            ComponentSpec::G1(p) => p.violations(&ctx, &mut out),
            ComponentSpec::G2(p) => p.violations(&ctx, &mut out),
            ComponentSpec::Heston(p) => p.violations(&ctx, &mut out),
            ComponentSpec::Bates { heston, jumps } => {
                heston.violations(&ctx, &mut out);
                jumps.violations(&ctx, &mut out);
            }
            ComponentSpec::SingleStateEquity => {}
        }
        out
    }
}

/// Square correlation matrix with recorded block boundaries and state labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCorrelationMatrix {
    entries: DMatrix<f64>,
    block_sizes: Vec<usize>,
    labels: Vec<String>,
}

impl BlockCorrelationMatrix {
    pub fn new(
        entries: DMatrix<f64>,
        block_sizes: Vec<usize>,
        labels: Vec<String>,
    ) -> Result<Self> {
        let n: usize = block_sizes.iter().sum();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but blocks sum to {n}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {n} states",
                labels.len()
            )));
        }
        if block_sizes.contains(&0) {
            return Err(Error::DimensionMismatch("empty block".into()));
        }
        Ok(Self {
            entries,
            block_sizes,
            labels,
        })
    }

    /// Builds a matrix with generic labels `c{i}.{k}`.
    pub fn with_generic_labels(entries: DMatrix<f64>, block_sizes: Vec<usize>) -> Result<Self> {
        let labels = generic_labels(&block_sizes);
        Self::new(entries, block_sizes, labels)
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[(r, c)]
    }

    pub fn block_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.block_sizes
            .iter()
            .map(|s| {
                let o = acc;
                acc += s;
                o
            })
            .collect()
    }

    /// Index of the block that owns state `k`.
    pub fn block_of(&self, k: usize) -> usize {
        let mut acc = 0;
        for (b, s) in self.block_sizes.iter().enumerate() {
            acc += s;
            if k < acc {
                return b;
            }
        }
        panic!("state index {k} out of range");
    }

    pub fn same_block(&self, r: usize, c: usize) -> bool {
        self.block_of(r) == self.block_of(c)
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let off = self.block_offsets();
        self.entries
            .view((off[i], off[j]), (self.block_sizes[i], self.block_sizes[j]))
            .into_owned()
    }

    /// Overwrites block (i, j) and its mirror (j, i).
    pub fn set_cross_block(&mut self, i: usize, j: usize, block: &DMatrix<f64>) -> Result<()> {
        if block.nrows() != self.block_sizes[i] || block.ncols() != self.block_sizes[j] {
            return Err(Error::DimensionMismatch(format!(
                "cross block ({i},{j}) must be {}x{}, got {}x{}",
                self.block_sizes[i],
                self.block_sizes[j],
                block.nrows(),
                block.ncols()
            )));
        }
        let off = self.block_offsets();
        for r in 0..block.nrows() {
            for c in 0..block.ncols() {
                self.entries[(off[i] + r, off[j] + c)] = block[(r, c)];
                self.entries[(off[j] + c, off[i] + r)] = block[(r, c)];
            }
        }
        Ok(())
    }

    /// Same structure with all cross blocks set to zero.
    pub fn block_diagonal(&self) -> Self {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        let off = self.block_offsets();
        for (b, &s) in self.block_sizes.iter().enumerate() {
            let o = off[b];
            m.view_mut((o, o), (s, s))
                .copy_from(&self.entries.view((o, o), (s, s)));
        }
        Self {
            entries: m,
            block_sizes: self.block_sizes.clone(),
            labels: self.labels.clone(),
        }
    }

    pub fn with_entries(&self, entries: DMatrix<f64>) -> Result<Self> {
        Self::new(entries, self.block_sizes.clone(), self.labels.clone())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n)
            .all(|r| (r + 1..n).all(|c| (self.entries[(r, c)] - self.entries[(c, r)]).abs() <= tol))
    }

    /// Violations of the finalized-matrix contract: symmetry, unit diagonal,
    /// entries in [-1, 1] and finiteness.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.dim();
        for r in 0..n {
            let d = self.entries[(r, r)];
            if (d - 1.0).abs() > SYMMETRY_TOL {
                out.push(format!(
                    "diagonal entry {} is {d}, expected 1",
                    self.labels[r]
                ));
            }
            for c in 0..n {
                let v = self.entries[(r, c)];
                if !v.is_finite() {
                    out.push(format!(
                        "entry ({}, {}) is not finite",
                        self.labels[r], self.labels[c]
                    ));
                } else if r < c && !(-1.0..=1.0).contains(&v) {
                    out.push(format!(
                        "entry ({}, {}) = {v} outside [-1,1]",
                        self.labels[r], self.labels[c]
                    ));
                }
                if r < c && (v - self.entries[(c, r)]).abs() > SYMMETRY_TOL {
                    out.push(format!(
                        "entry ({}, {}) not symmetric",
                        self.labels[r], self.labels[c]
                    ));
                }
            }
        }
        out
    }

    /// Off-diagonal-block entries outside [-1, 1], listed once per pair.
    pub fn out_of_range_cross_entries(&self) -> Vec<(String, String, f64)> {
        let n = self.dim();
        let mut out = Vec::new();
        for r in 0..n {
            for c in r + 1..n {
                let v = self.entries[(r, c)];
                if !self.same_block(r, c) && !(-1.0..=1.0).contains(&v) {
                    out.push((self.labels[r].clone(), self.labels[c].clone(), v));
                }
            }
        }
        out
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

pub fn generic_labels(block_sizes: &[usize]) -> Vec<String> {
    block_sizes
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| (0..s).map(move |k| format!("c{i}.{k}")))
        .collect()
}

pub fn state_label(component: usize, state: StateKind) -> String {
    format!("c{component}.{state}")
}

/// Assembles a symmetric block matrix from square diagonal blocks and upper
/// cross blocks keyed by `(i, j)`. A key with `i > j` is accepted and
/// transposed into place. Missing cross blocks are zero.
pub fn assemble_block_matrix(
    diagonal_blocks: &[DMatrix<f64>],
    cross_blocks: &BTreeMap<(usize, usize), DMatrix<f64>>,
) -> Result<BlockCorrelationMatrix> {
    let mut sizes = Vec::with_capacity(diagonal_blocks.len());
    for (b, blk) in diagonal_blocks.iter().enumerate() {
        if blk.nrows() != blk.ncols() || blk.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "diagonal block {b} is {}x{}",
                blk.nrows(),
                blk.ncols()
            )));
        }
        let s = blk.nrows();
        for r in 0..s {
            if (blk[(r, r)] - 1.0).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidParameter(format!(
                    "diagonal block {b} has non-unit diagonal"
                )));
            }
            for c in r + 1..s {
                if (blk[(r, c)] - blk[(c, r)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "diagonal block {b} is not symmetric"
                    )));
                }
            }
        }
        sizes.push(s);
    }
    let n: usize = sizes.iter().sum();
    let mut m = BlockCorrelationMatrix::with_generic_labels(DMatrix::zeros(n, n), sizes)?;
    let off = m.block_offsets();
    for (b, blk) in diagonal_blocks.iter().enumerate() {
        let s = blk.nrows();
        m.entries.view_mut((off[b], off[b]), (s, s)).copy_from(blk);
    }
    let nb = diagonal_blocks.len();
    for (&(i, j), blk) in cross_blocks {
        if i == j || i >= nb || j >= nb {
            return Err(Error::DimensionMismatch(format!(
                "invalid cross block key ({i},{j})"
            )));
        }
        if i > j && cross_blocks.contains_key(&(j, i)) {
            return Err(Error::DimensionMismatch(format!(
                "cross block given as both ({j},{i}) and ({i},{j})"
            )));
        }
        if i < j {
            m.set_cross_block(i, j, blk)?;
        } else {
            m.set_cross_block(j, i, &blk.transpose())?;
        }
    }
    Ok(m)
}

/// Ordered components plus either the full correlation matrix (simulation
/// input) or only the diagonal blocks implied by the parameters (estimation input).
#[derive(Debug, Clone, PartialEq)]
pub struct HybridSystemSpec {
    pub components: Vec<ComponentSpec>,
    pub full_matrix: Option<BlockCorrelationMatrix>,
}

impl HybridSystemSpec {
    pub fn new(components: Vec<ComponentSpec>) -> Self {
        Self {
            components,
            full_matrix: None,
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.components.iter().map(ComponentSpec::size).collect()
    }

    pub fn labels(&self) -> Vec<String> {
        self.components
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.states().iter().map(move |s| state_label(i, *s)))
            .collect()
    }

    pub fn diagonal_blocks(&self) -> Vec<DMatrix<f64>> {
        self.components
            .iter()
            .map(ComponentSpec::diagonal_block)
            .collect()
    }

    /// Assembles the full matrix from the parameter-implied diagonal blocks
    /// and the given cross blocks, labeled by component states.
    pub fn assemble(
        &self,
        cross_blocks: &BTreeMap<(usize, usize), DMatrix<f64>>,
    ) -> Result<BlockCorrelationMatrix> {
        let m = assemble_block_matrix(&self.diagonal_blocks(), cross_blocks)?;
        BlockCorrelationMatrix::new(m.entries, m.block_sizes, self.labels())
    }

    pub fn with_cross_blocks(
        mut self,
        cross_blocks: &BTreeMap<(usize, usize), DMatrix<f64>>,
    ) -> Result<Self> {
        self.full_matrix = Some(self.assemble(cross_blocks)?);
        Ok(self)
    }
}

/// Lists every violated parameter or matrix invariant; empty when valid.
pub fn validate_system(spec: &HybridSystemSpec) -> Vec<String> {
    let mut out: Vec<String> = spec
        .components
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.violations(i))
        .collect();
    if let Some(m) = &spec.full_matrix {
        if m.block_sizes() != spec.block_sizes().as_slice() {
            out.push(format!(
                "full matrix block sizes {:?} do not match components {:?}",
                m.block_sizes(),
                spec.block_sizes()
            ));
            return out;
        }
        out.extend(m.violations());
        let off = m.block_offsets();
        for (b, c) in spec.components.iter().enumerate() {
            if let Some(rho) = c.inner_rho() {
                let got = m.get(off[b], off[b] + 1);
                if (got - rho).abs() > SYMMETRY_TOL {
                    out.push(format!(
                        "component {b}: matrix inner correlation {got} differs from parameter {rho}"
                    ));
                }
            }
        }
    }
    out
}

/// Observable carried by one panel series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// Continuously compounded spot rate of tenor `tau` years.
    SpotRate(f64),
    LogPrice,
    VarianceProxy,
    ImpliedVolAtm,
}

/// Structured series key `c{i}.{kind}`, e.g. `c0.R[1.0]`, `c1.s`, `c1.v`, `c1.iv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesKey {
    pub component: usize,
    pub observable: Observable,
}

impl SeriesKey {
    pub fn spot_rate(component: usize, tau: f64) -> Self {
        Self {
            component,
            observable: Observable::SpotRate(tau),
        }
    }

    pub fn log_price(component: usize) -> Self {
        Self {
            component,
            observable: Observable::LogPrice,
        }
    }

    pub fn variance(component: usize) -> Self {
        Self {
            component,
            observable: Observable::VarianceProxy,
        }
    }

    pub fn implied_vol(component: usize) -> Self {
        Self {
            component,
            observable: Observable::ImpliedVolAtm,
        }
    }

    fn rank(&self) -> (usize, u8, f64) {
        let (k, tau) = match self.observable {
            Observable::SpotRate(t) => (0, t),
            Observable::LogPrice => (1, 0.0),
            Observable::VarianceProxy => (2, 0.0),
            Observable::ImpliedVolAtm => (3, 0.0),
        };
        (self.component, k, tau)
    }
}

impl Eq for SeriesKey {}

impl Ord for SeriesKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let (a0, a1, a2) = self.rank();
        let (b0, b1, b2) = other.rank();
        a0.cmp(&b0).then(a1.cmp(&b1)).then(a2.total_cmp(&b2))
    }
}

impl PartialOrd for SeriesKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SeriesKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.observable {
            Observable::SpotRate(t) => write!(f, "c{}.R[{:?}]", self.component, t),
            Observable::LogPrice => write!(f, "c{}.s", self.component),
            Observable::VarianceProxy => write!(f, "c{}.v", self.component),
            Observable::ImpliedVolAtm => write!(f, "c{}.iv", self.component),
        }
    }
}

impl FromStr for SeriesKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSeriesKey(s.to_string());
        let rest = s.trim().strip_prefix('c').ok_or_else(bad)?;
        let (idx, kind) = rest.split_once('.').ok_or_else(bad)?;
        let component: usize = idx.parse().map_err(|_| bad())?;
        let observable = match kind {
            "s" => Observable::LogPrice,
            "v" => Observable::VarianceProxy,
            "iv" => Observable::ImpliedVolAtm,
            k => {
                let tau = k
                    .strip_prefix("R[")
                    .and_then(|t| t.strip_suffix(']'))
                    .ok_or_else(bad)?;
                let tau: f64 = tau.parse().map_err(|_| bad())?;
                if !(tau > 0.0) || !tau.is_finite() {
                    return Err(bad());
                }
                Observable::SpotRate(tau)
            }
        };
        Ok(Self {
            component,
            observable,
        })
    }
}

/// Time grid plus named observable series of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationPanel {
    times: Vec<f64>,
    series: BTreeMap<SeriesKey, Vec<f64>>,
}

impl ObservationPanel {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidPanel(
                "at least two observation times required".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPanel("non-finite observation time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPanel(
                "observation times must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            times,
            series: BTreeMap::new(),
        })
    }

    pub fn uniform(n_steps: usize, dt: f64) -> Result<Self> {
        Self::new((0..=n_steps).map(|k| k as f64 * dt).collect())
    }

    pub fn insert(&mut self, key: SeriesKey, values: Vec<f64>) -> Result<()> {
        if values.len() != self.times.len() {
            return Err(Error::InvalidPanel(format!(
                "series {key} has {} values, expected {}",
                values.len(),
                self.times.len()
            )));
        }
        self.series.insert(key, values);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, key: &SeriesKey) -> Option<&[f64]> {
        self.series.get(key).map(Vec::as_slice)
    }

    pub fn require(&self, key: &SeriesKey) -> Result<&[f64]> {
        self.get(key)
            .ok_or_else(|| Error::MissingObservable(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &SeriesKey> {
        self.series.keys()
    }

    pub fn series(&self) -> &BTreeMap<SeriesKey, Vec<f64>> {
        &self.series
    }

    /// Ratio of the largest to the smallest grid spacing.
    pub fn spacing_ratio(&self) -> f64 {
        let (lo, hi) = self
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
        hi / lo
    }
}
