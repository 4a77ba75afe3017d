//! Instantaneous correlation estimation from differenced observables.
//!
//! Spot rates of a Gaussian short-rate component are affine in its states, so
//! increments of `R^τ` are fixed linear combinations of the driving Brownian
//! increments with loadings
//!
//! ```text
//! c(λ, γ, τ) = γ (1 − e^{−λτ}) / (λτ)
//! d(λ1, λ2, γ1, γ2, τ, ρ) = sqrt(c1² + c2² + 2 c1 c2 ρ)
//! ```
//!
//! The sample correlation of two differenced spot rates converges to a
//! linear combination of the unknown cross correlations with weights
//! `c·c / (d·d)`. Observing two tenors per two-factor component gives a
//! square system (4×4, or 2×2 against a one-state side) that is inverted for
//! the cross block. Log prices and variances enter with unit weight, so
//! equity/equity pairs need no inversion at all.
//!
//! Nothing here clamps: system-solving kinds can return values outside
//! [-1, 1], which are flagged in the diagnostics and left to `psd::repair`.

use std::borrow::Cow;
use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{
    BlockCorrelationMatrix, ComponentKind, ComponentSpec, G2Params, HybridSystemSpec,
    ObservationPanel, SeriesKey,
};

pub const DEFAULT_G2_TENORS: (f64, f64) = (1.0, 10.0);
pub const DEFAULT_G1_TENOR: f64 = 1.0;
/// Systems with a larger 1-norm condition number raise a warning.
pub const CONDITION_WARNING: f64 = 1e6;
/// Irregular grids with a larger max/min spacing ratio raise a warning.
pub const SPACING_RATIO_WARNING: f64 = 10.0;

const EXPANSION_CUTOFF: f64 = 1e-8;
const DEGENERATE_NORMALIZER: f64 = 1e-300;

/// Spot-rate loading `γ(1 − e^{−λτ})/(λτ)` of one Gaussian factor.
///
/// Below `λτ = 1e-8` the second-order expansion `γ(1 − λτ/2 + (λτ)²/6)` is used.
pub fn loading_c(lambda: f64, gamma: f64, tau: f64) -> f64 {
    let x = lambda * tau;
    if x.abs() < EXPANSION_CUTOFF {
        gamma * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        gamma * (-(-x).exp_m1()) / x
    }
}

/// Standard deviation scale of a two-factor spot rate, `sqrt(c1² + c2² + 2c1c2ρ)`.
pub fn normalizer_d(
    lambda1: f64,
    lambda2: f64,
    gamma1: f64,
    gamma2: f64,
    tau: f64,
    rho: f64,
) -> Result<f64> {
    let c1 = loading_c(lambda1, gamma1, tau);
    let c2 = loading_c(lambda2, gamma2, tau);
    let d2 = c1 * c1 + c2 * c2 + 2.0 * c1 * c2 * rho;
    let d = d2.max(0.0).sqrt();
    if !(d >= DEGENERATE_NORMALIZER) {
        return Err(Error::DegenerateNormalizer);
    }
    Ok(d)
}

/// Normalized loadings `(c1(τ), c2(τ)) = (c(a,σ,τ), c(b,η,τ)) / d(τ)` of a G2 component.
pub fn normalized_loadings(p: &G2Params, tau: f64) -> Result<(f64, f64)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tenor {tau} must be > 0")));
    }
    let d = normalizer_d(p.a, p.b, p.sigma, p.eta, tau, p.rho_xy)?;
    Ok((
        loading_c(p.a, p.sigma, tau) / d,
        loading_c(p.b, p.eta, tau) / d,
    ))
}

/// Square linear system mapping instantaneous correlations to the limits of
/// empirical correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSystem {
    pub matrix: DMatrix<f64>,
    pub rhs_labels: Vec<String>,
    pub unknown_labels: Vec<String>,
    pub condition_number: f64,
}

impl CoefficientSystem {
    fn new(
        matrix: DMatrix<f64>,
        rhs_labels: Vec<String>,
        unknown_labels: Vec<String>,
    ) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        let condition_number = linalg::condition_number(&matrix);
        Ok(Self {
            matrix,
            rhs_labels,
            unknown_labels,
            condition_number,
        })
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        linalg::solve(&self.matrix, rhs)
    }
}

fn distinct_tenors(t: (f64, f64), side: &str) -> Result<()> {
    if !(t.0 > 0.0 && t.1 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "{side} tenors {t:?} must be > 0"
        )));
    }
    if t.0 == t.1 {
        return Err(Error::SingularSystem(format!(
            "{side} tenors are equal ({}); two distinct tenors are required",
            t.0
        )));
    }
    Ok(())
}

/// 4×4 system for a G2/G2 pair.
///
/// Rows are ordered (p1,q1), (p1,q2), (p2,q1), (p2,q2); unknowns are
/// (ρ_{x_i,x_j}, ρ_{x_i,y_j}, ρ_{y_i,x_j}, ρ_{y_i,y_j}).
pub fn g2g2_system(
    params_i: &G2Params,
    params_j: &G2Params,
    taus_i: (f64, f64),
    taus_j: (f64, f64),
) -> Result<CoefficientSystem> {
    distinct_tenors(taus_i, "first component")?;
    distinct_tenors(taus_j, "second component")?;
    let mut a = DMatrix::zeros(4, 4);
    let mut rhs = Vec::with_capacity(4);
    let mut row = 0;
    for tp in [taus_i.0, taus_i.1] {
        let (xi, yi) = normalized_loadings(params_i, tp)?;
        for tq in [taus_j.0, taus_j.1] {
            let (xj, yj) = normalized_loadings(params_j, tq)?;
            a[(row, 0)] = xi * xj;
            a[(row, 1)] = xi * yj;
            a[(row, 2)] = yi * xj;
            a[(row, 3)] = yi * yj;
            rhs.push(format!("R[{tp:?}],R[{tq:?}]"));
            row += 1;
        }
    }
    CoefficientSystem::new(
        a,
        rhs,
        ["x,x", "x,y", "y,x", "y,y"].map(String::from).to_vec(),
    )
}

/// 2×2 system of a G2 component against a one-state counterpart (a G1 spot
/// rate, a log price or a variance). Rows are the two tenors; unknowns are
/// (ρ_{x,·}, ρ_{y,·}).
pub fn g2_single_state_system(params: &G2Params, taus: (f64, f64)) -> Result<CoefficientSystem> {
    distinct_tenors(taus, "G2")?;
    let (x1, y1) = normalized_loadings(params, taus.0)?;
    let (x2, y2) = normalized_loadings(params, taus.1)?;
    CoefficientSystem::new(
        DMatrix::from_row_slice(2, 2, &[x1, y1, x2, y2]),
        vec![format!("R[{:?}]", taus.0), format!("R[{:?}]", taus.1)],
        vec!["x,·".into(), "y,·".into()],
    )
}

/// Sample correlation of first differences of two level series.
///
/// Input is levels; differencing happens here. The result is bounded to
/// [-1, 1] against rounding.
pub fn empirical_correlation(series_a: &[f64], series_b: &[f64]) -> Result<f64> {
    if series_a.len() != series_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "series lengths {} and {} differ",
            series_a.len(),
            series_b.len()
        )));
    }
    if series_a.len() < 3 {
        return Err(Error::InvalidPanel(
            "at least three observations required".into(),
        ));
    }
    let n = (series_a.len() - 1) as f64;
    let diffs = |s: &[f64]| s.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>();
    let da = diffs(series_a);
    let db = diffs(series_b);
    let ma = da.iter().sum::<f64>() / n;
    let mb = db.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in da.iter().zip(&db) {
        let (a, b) = (a - ma, b - mb);
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if saa == 0.0 || sbb == 0.0 || !(saa * sbb).is_finite() {
        return Err(Error::ZeroVariance("constant series".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn correlation_of(a: &Observed, b: &Observed) -> Result<f64> {
    empirical_correlation(a.values(), b.values()).map_err(|e| match e {
        Error::ZeroVariance(_) => Error::ZeroVariance(format!("{} vs {}", a.key, b.key)),
        other => other,
    })
}

/// Squares short-expiry ATM implied vols into a variance proxy.
pub fn proxy_variance(iv_atm: &[f64]) -> Result<Vec<f64>> {
    iv_atm
        .iter()
        .map(|&v| {
            if v >= 0.0 {
                Ok(v * v)
            } else {
                Err(Error::InvalidParameter(format!("negative implied vol {v}")))
            }
        })
        .collect()
}

/// Pair classification in canonical orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum PairKind {
    G2G2,
    G2Heston,
    HestonHeston,
    G1G1,
    G1G2,
    G1Heston,
    G2Single,
    G1Single,
    HestonSingle,
    SingleSingle,
}

impl PairKind {
    /// Classifies two component kinds. The flag is true when the canonical
    /// orientation (G1, then G2, then Heston, then single-state) is the
    /// reverse of the given order.
    pub fn classify(first: ComponentKind, second: ComponentKind) -> (PairKind, bool) {
        fn rank(k: ComponentKind) -> u8 {
            match k {
                ComponentKind::G1 => 0,
                ComponentKind::G2 => 1,
                ComponentKind::Heston | ComponentKind::Bates => 2,
                ComponentKind::SingleStateEquity => 3,
            }
        }
        let swapped = rank(first) > rank(second);
        let (p, q) = if swapped {
            (second, first)
        } else {
            (first, second)
        };
        let kind = match (rank(p), rank(q)) {
            (0, 0) => PairKind::G1G1,
            (0, 1) => PairKind::G1G2,
            (0, 2) => PairKind::G1Heston,
            (0, 3) => PairKind::G1Single,
            (1, 1) => PairKind::G2G2,
            (1, 2) => PairKind::G2Heston,
            (1, 3) => PairKind::G2Single,
            (2, 2) => PairKind::HestonHeston,
            (2, 3) => PairKind::HestonSingle,
            _ => PairKind::SingleSingle,
        };
        (kind, swapped)
    }

    /// Kinds whose estimates are raw empirical correlations.
    pub fn is_pass_through(&self) -> bool {
        matches!(
            self,
            PairKind::HestonHeston
                | PairKind::G1G1
                | PairKind::G1Heston
                | PairKind::G1Single
                | PairKind::HestonSingle
                | PairKind::SingleSingle
        )
    }
}

/// Tenors used for each rate component: two per G2, one per G1.
#[derive(Debug, Clone, PartialEq)]
pub struct TenorMap {
    pub default_g2: (f64, f64),
    pub default_g1: f64,
    pub overrides: BTreeMap<usize, Vec<f64>>,
}

impl Default for TenorMap {
    fn default() -> Self {
        Self {
            default_g2: DEFAULT_G2_TENORS,
            default_g1: DEFAULT_G1_TENOR,
            overrides: BTreeMap::new(),
        }
    }
}

impl TenorMap {
    pub fn with_g2_default(taus: (f64, f64)) -> Self {
        Self {
            default_g2: taus,
            ..Self::default()
        }
    }

    pub fn set(&mut self, component: usize, taus: Vec<f64>) {
        self.overrides.insert(component, taus);
    }

    pub fn g2(&self, component: usize) -> Result<(f64, f64)> {
        match self.overrides.get(&component) {
            None => Ok(self.default_g2),
            Some(t) if t.len() == 2 => Ok((t[0], t[1])),
            Some(t) => Err(Error::InvalidParameter(format!(
                "component {component} is G2 and needs two tenors, got {t:?}"
            ))),
        }
    }

    pub fn g1(&self, component: usize) -> Result<f64> {
        match self.overrides.get(&component) {
            None => Ok(self.default_g1),
            Some(t) if t.len() == 1 => Ok(t[0]),
            Some(t) => Err(Error::InvalidParameter(format!(
                "component {component} is G1 and needs one tenor, got {t:?}"
            ))),
        }
    }

    /// Every tenor a component's estimation reads.
    pub fn tenors_for(&self, component: usize, spec: &ComponentSpec) -> Result<Vec<f64>> {
        match spec.kind() {
            ComponentKind::G2 => self.g2(component).map(|(a, b)| vec![a, b]),
            ComponentKind::G1 => self.g1(component).map(|t| vec![t]),
            _ => Ok(Vec::new()),
        }
    }
}

struct Observed<'a> {
    key: SeriesKey,
    data: Cow<'a, [f64]>,
}

impl Observed<'_> {
    fn values(&self) -> &[f64] {
        &self.data
    }
}

fn observe(panel: &ObservationPanel, key: SeriesKey) -> Result<Observed<'_>> {
    Ok(Observed {
        key,
        data: Cow::Borrowed(panel.require(&key)?),
    })
}

/// The variance series of an equity component: the stored variance if present,
/// else the squared ATM implied vol, else `None`.
fn observe_variance(panel: &ObservationPanel, component: usize) -> Result<Option<Observed<'_>>> {
    let key = SeriesKey::variance(component);
    if let Some(v) = panel.get(&key) {
        return Ok(Some(Observed {
            key,
            data: Cow::Borrowed(v),
        }));
    }
    match panel.get(&SeriesKey::implied_vol(component)) {
        Some(iv) => Ok(Some(Observed {
            key,
            data: Cow::Owned(proxy_variance(iv)?),
        })),
        None => Ok(None),
    }
}

/// Cross-block estimate for one component pair, oriented as requested.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossEstimate {
    pub i: usize,
    pub j: usize,
    pub kind: PairKind,
    /// `size_i × size_j`; NaN where an unobserved variance blocks estimation.
    pub block: DMatrix<f64>,
    pub missing: DMatrix<bool>,
    pub condition_numbers: Vec<f64>,
}

impl CrossEstimate {
    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }
}

/// Per-side view used while estimating in canonical orientation.
struct Side<'a> {
    index: usize,
    spec: &'a ComponentSpec,
}

fn rate_series<'p>(
    panel: &'p ObservationPanel,
    component: usize,
    taus: &[f64],
) -> Result<Vec<Observed<'p>>> {
    taus.iter()
        .map(|&t| observe(panel, SeriesKey::spot_rate(component, t)))
        .collect()
}

/// Column estimate of G2 loadings against one counterpart series.
fn solve_g2_column(
    system: &CoefficientSystem,
    rates: &[Observed<'_>],
    other: &Observed<'_>,
) -> Result<(f64, f64)> {
    let rhs = DVector::from_vec(vec![
        correlation_of(&rates[0], other)?,
        correlation_of(&rates[1], other)?,
    ]);
    let x = system.solve(&rhs)?;
    Ok((x[0], x[1]))
}

/// Estimates the cross block between components `i` and `j`.
///
/// An unobserved variance (neither `v` nor `iv` series present) leaves the
/// affected entries NaN and marked missing for completion; any other absent
/// observable is an error.
pub fn estimate_pair(
    panel: &ObservationPanel,
    i: usize,
    spec_i: &ComponentSpec,
    j: usize,
    spec_j: &ComponentSpec,
    tenors: &TenorMap,
) -> Result<CrossEstimate> {
    let (kind, swapped) = PairKind::classify(spec_i.kind(), spec_j.kind());
    let (p, q) = if swapped {
        (
            Side {
                index: j,
                spec: spec_j,
            },
            Side {
                index: i,
                spec: spec_i,
            },
        )
    } else {
        (
            Side {
                index: i,
                spec: spec_i,
            },
            Side {
                index: j,
                spec: spec_j,
            },
        )
    };
    let (np, nq) = (p.spec.size(), q.spec.size());
    let mut block = DMatrix::from_element(np, nq, f64::NAN);
    let mut missing = DMatrix::from_element(np, nq, false);
    let mut conds = Vec::new();

    match kind {
        PairKind::G2G2 => {
            let (ComponentSpec::G2(pp), ComponentSpec::G2(pq)) = (p.spec, q.spec) else {
                unreachable!()
            };
            let tp = tenors.g2(p.index)?;
            let tq = tenors.g2(q.index)?;
            let system = g2g2_system(pp, pq, tp, tq)?;
            conds.push(system.condition_number);
            let rp = rate_series(panel, p.index, &[tp.0, tp.1])?;
            let rq = rate_series(panel, q.index, &[tq.0, tq.1])?;
            let mut rhs = DVector::zeros(4);
            for a in 0..2 {
                for b in 0..2 {
                    rhs[2 * a + b] = correlation_of(&rp[a], &rq[b])?;
                }
            }
            let x = system.solve(&rhs)?;
            block.copy_from_slice(&[x[0], x[2], x[1], x[3]]);
        }
        PairKind::G1G2 => {
            let ComponentSpec::G2(pq) = q.spec else {
                unreachable!()
            };
            let tp = tenors.g1(p.index)?;
            let tq = tenors.g2(q.index)?;
            let system = g2_single_state_system(pq, tq)?;
            conds.push(system.condition_number);
            let rp = observe(panel, SeriesKey::spot_rate(p.index, tp))?;
            let rq = rate_series(panel, q.index, &[tq.0, tq.1])?;
            let (xx, xy) = solve_g2_column(&system, &rq, &rp)?;
            block[(0, 0)] = xx;
            block[(0, 1)] = xy;
        }
        PairKind::G2Heston | PairKind::G2Single => {
            let ComponentSpec::G2(pp) = p.spec else {
                unreachable!()
            };
            let tp = tenors.g2(p.index)?;
            let system = g2_single_state_system(pp, tp)?;
            conds.push(system.condition_number);
            let rp = rate_series(panel, p.index, &[tp.0, tp.1])?;
            let s = observe(panel, SeriesKey::log_price(q.index))?;
            let (xs, ys) = solve_g2_column(&system, &rp, &s)?;
            block[(0, 0)] = xs;
            block[(1, 0)] = ys;
            if kind == PairKind::G2Heston {
                match observe_variance(panel, q.index)? {
                    Some(v) => {
                        let (xv, yv) = solve_g2_column(&system, &rp, &v)?;
                        block[(0, 1)] = xv;
                        block[(1, 1)] = yv;
                    }
                    None => {
                        missing[(0, 1)] = true;
                        missing[(1, 1)] = true;
                    }
                }
            }
        }
        PairKind::G1G1 => {
            let rp = observe(panel, SeriesKey::spot_rate(p.index, tenors.g1(p.index)?))?;
            let rq = observe(panel, SeriesKey::spot_rate(q.index, tenors.g1(q.index)?))?;
            block[(0, 0)] = correlation_of(&rp, &rq)?;
        }
        PairKind::G1Heston | PairKind::G1Single => {
            let r = observe(panel, SeriesKey::spot_rate(p.index, tenors.g1(p.index)?))?;
            for (c, other) in equity_series(panel, q.index, q.spec)?.iter().enumerate() {
                match other {
                    Some(o) => block[(0, c)] = correlation_of(&r, o)?,
                    None => missing[(0, c)] = true,
                }
            }
        }
        PairKind::HestonHeston | PairKind::HestonSingle | PairKind::SingleSingle => {
            let a = equity_series(panel, p.index, p.spec)?;
            let b = equity_series(panel, q.index, q.spec)?;
            for (r, sa) in a.iter().enumerate() {
                for (c, sb) in b.iter().enumerate() {
                    match (sa, sb) {
                        (Some(x), Some(y)) => block[(r, c)] = correlation_of(x, y)?,
                        _ => missing[(r, c)] = true,
                    }
                }
            }
        }
    }

    let (block, missing) = if swapped {
        (block.transpose(), missing.transpose())
    } else {
        (block, missing)
    };
    Ok(CrossEstimate {
        i,
        j,
        kind,
        block,
        missing,
        condition_numbers: conds,
    })
}

/// Series for an equity component in state order: log price (required),
/// then the variance when the component has one (may be unobserved).
fn equity_series<'p>(
    panel: &'p ObservationPanel,
    component: usize,
    spec: &ComponentSpec,
) -> Result<Vec<Option<Observed<'p>>>> {
    match spec.kind() {
        ComponentKind::Heston | ComponentKind::Bates => Ok(vec![
            Some(observe(panel, SeriesKey::log_price(component))?),
            observe_variance(panel, component)?,
        ]),
        ComponentKind::SingleStateEquity => {
            Ok(vec![Some(observe(panel, SeriesKey::log_price(component))?)])
        }
        ComponentKind::G1 | ComponentKind::G2 => {
            unreachable!("rate components have no equity series")
        }
    }
}

/// Series the estimation of `system` cannot do without. Variance series are
/// optional and never listed.
pub fn required_series(system: &HybridSystemSpec, tenors: &TenorMap) -> Result<Vec<SeriesKey>> {
    let mut out = Vec::new();
    if system.components.len() < 2 {
        return Ok(out);
    }
    for (i, spec) in system.components.iter().enumerate() {
        match spec.kind() {
            ComponentKind::G1 | ComponentKind::G2 => out.extend(
                tenors
                    .tenors_for(i, spec)?
                    .into_iter()
                    .map(|t| SeriesKey::spot_rate(i, t)),
            ),
            _ => out.push(SeriesKey::log_price(i)),
        }
    }
    Ok(out)
}

/// Per-pair diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairDiagnostics {
    pub i: usize,
    pub j: usize,
    pub kind: PairKind,
    pub condition_numbers: Vec<f64>,
    pub incomplete: bool,
    pub out_of_range: Vec<(String, String, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EstimationDiagnostics {
    pub pairs: Vec<PairDiagnostics>,
    pub warnings: Vec<String>,
}

/// Draft matrix: calibrated diagonal blocks plus estimated cross blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationDraft {
    pub matrix: BlockCorrelationMatrix,
    /// Symmetric mask of entries left for completion.
    pub missing: DMatrix<bool>,
    pub diagnostics: EstimationDiagnostics,
}

impl EstimationDraft {
    pub fn is_complete(&self) -> bool {
        !self.missing.iter().any(|&m| m)
    }
}

/// Estimates every cross block of the system and assembles the draft.
pub fn estimate_all(
    panel: &ObservationPanel,
    system: &HybridSystemSpec,
    tenors: &TenorMap,
) -> Result<EstimationDraft> {
    let mut diagnostics = EstimationDiagnostics::default();
    let ratio = panel.spacing_ratio();
    if ratio > SPACING_RATIO_WARNING {
        diagnostics.warnings.push(format!(
            "irregular time grid: max/min spacing ratio {ratio:.3} exceeds {SPACING_RATIO_WARNING}"
        ));
    }
    let mut matrix = system.assemble(&BTreeMap::new())?;
    let n = matrix.dim();
    let mut missing = DMatrix::from_element(n, n, false);
    let off = matrix.block_offsets();
    let labels = matrix.labels().to_vec();
    let comps = &system.components;
    for i in 0..comps.len() {
        for j in i + 1..comps.len() {
            let est = estimate_pair(panel, i, &comps[i], j, &comps[j], tenors)?;
            matrix.set_cross_block(i, j, &est.block)?;
            let mut out_of_range = Vec::new();
            for r in 0..est.block.nrows() {
                for c in 0..est.block.ncols() {
                    let (gr, gc) = (off[i] + r, off[j] + c);
                    if est.missing[(r, c)] {
                        missing[(gr, gc)] = true;
                        missing[(gc, gr)] = true;
                    } else if !(-1.0..=1.0).contains(&est.block[(r, c)]) {
                        out_of_range.push((
                            labels[gr].clone(),
                            labels[gc].clone(),
                            est.block[(r, c)],
                        ));
                    }
                }
            }
            for &k in &est.condition_numbers {
                if k > CONDITION_WARNING {
                    diagnostics.warnings.push(format!(
                        "pair ({i},{j}): condition number {k:.3e} exceeds {CONDITION_WARNING:e}"
                    ));
                }
            }
            diagnostics.pairs.push(PairDiagnostics {
                i,
                j,
                kind: est.kind,
                condition_numbers: est.condition_numbers.clone(),
                incomplete: !est.is_complete(),
                out_of_range,
            });
        }
    }
    Ok(EstimationDraft {
        matrix,
        missing,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn g2a() -> G2Params {
        G2Params {
            a: 0.1,
            b: 0.2,
            sigma: 0.01,
            eta: 0.02,
            rho_xy: 0.5,
        }
    }

    fn g2b() -> G2Params {
        G2Params {
            a: 0.15,
            b: 0.25,
            sigma: 0.015,
            eta: 0.025,
            rho_xy: 0.55,
        }
    }

    // Independent evaluation: 0.01 * (1 - e^{-0.1}) / 0.1 with e^{-0.1} = 0.904837418035959...
    #[test]
    fn loading_c_reference_value() {
        assert_relative_eq!(
            loading_c(0.1, 0.01, 1.0),
            0.0095162581964040,
            max_relative = 1e-12
        );
        assert_eq!(loading_c(0.0, 0.03, 2.0), 0.03);
        assert_eq!(loading_c(0.3, 0.0, 2.0), 0.0);
    }

    #[test]
    fn loading_c_branches_agree_at_cutoff() {
        let gamma = 0.02;
        let below = loading_c(1e-8 * (1.0 - 1e-12), gamma, 1.0);
        let above = loading_c(1e-8, gamma, 1.0);
        assert!(((below - above) / above).abs() <= 1e-12);
    }

    #[test]
    fn normalizer_examples() {
        let c1 = loading_c(0.1, 0.01, 1.0);
        let c2 = loading_c(0.2, 0.02, 1.0);
        assert_relative_eq!(
            normalizer_d(0.1, 0.2, 0.01, 0.02, 1.0, 1.0).unwrap(),
            c1 + c2,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            normalizer_d(0.1, 0.2, 0.01, 0.02, 1.0, -1.0).unwrap(),
            (c1 - c2).abs(),
            max_relative = 1e-14
        );
        // sqrt(c1² + c2² + c1·c2) with c1 = 0.0095162582, c2 = 0.0181269247.
        assert_relative_eq!(
            normalizer_d(0.1, 0.2, 0.01, 0.02, 1.0, 0.5).unwrap(),
            0.0243237,
            max_relative = 1e-5
        );
        assert_eq!(
            normalizer_d(0.1, 0.2, 0.0, 0.0, 1.0, 0.5).unwrap_err(),
            Error::DegenerateNormalizer
        );
    }

    #[test]
    fn g2g2_rows_sum_to_one_under_perfect_inner_correlation() {
        let mut pi = g2a();
        let mut pj = g2b();
        pi.rho_xy = 1.0;
        pj.rho_xy = 1.0;
        let sys = g2g2_system(&pi, &pj, (1.0, 10.0), (1.0, 10.0)).unwrap();
        for r in 0..4 {
            assert!((sys.matrix.row(r).sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn g2g2_rejects_equal_tenors() {
        assert!(matches!(
            g2g2_system(&g2a(), &g2b(), (2.0, 2.0), (1.0, 10.0)),
            Err(Error::SingularSystem(_))
        ));
        assert!(g2g2_system(&g2a(), &g2b(), (1.0, 10.0), (5.0, 5.0)).is_err());
    }

    #[test]
    fn empirical_correlation_examples() {
        let a = [0.3, 1.7, -0.2, 2.5, 0.9, 1.1];
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 5.0).collect();
        assert_relative_eq!(empirical_correlation(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
        // Δa = (1,−1,1,−1), Δb = (0,1,−1,1): sample correlation −3/sqrt(11).
        let r =
            empirical_correlation(&[0.0, 1.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(r, -3.0 / 11f64.sqrt(), max_relative = 1e-14);
        assert!(matches!(
            empirical_correlation(&[1.0; 5], &a[..5]),
            Err(Error::ZeroVariance(_))
        ));
        assert!(empirical_correlation(&[1.0, 2.0], &[1.0, 3.0]).is_err());
    }

    #[test]
    fn proxy_variance_examples() {
        assert_relative_eq!(
            proxy_variance(&[0.3]).unwrap()[0],
            0.09,
            max_relative = 1e-15
        );
        assert_eq!(proxy_variance(&[0.0]).unwrap(), vec![0.0]);
        assert!(proxy_variance(&[0.2, -0.1]).is_err());
        // Leading-order ATM short-expiry vol is sqrt(v0); its square returns v0.
        let v0 = 0.1f64;
        assert_relative_eq!(
            proxy_variance(&[v0.sqrt()]).unwrap()[0],
            v0,
            max_relative = 1e-15
        );
    }

    #[test]
    fn classification_orients_pairs() {
        use ComponentKind::*;
        assert_eq!(PairKind::classify(G2, Heston), (PairKind::G2Heston, false));
        assert_eq!(PairKind::classify(Bates, G2), (PairKind::G2Heston, true));
        assert_eq!(PairKind::classify(G2, G1), (PairKind::G1G2, true));
        assert_eq!(
            PairKind::classify(SingleStateEquity, G2),
            (PairKind::G2Single, true)
        );
        assert_eq!(
            PairKind::classify(Heston, Bates),
            (PairKind::HestonHeston, false)
        );
        assert_eq!(
            PairKind::classify(G1, SingleStateEquity),
            (PairKind::G1Single, false)
        );
    }
}
