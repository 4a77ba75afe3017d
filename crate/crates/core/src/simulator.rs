//! Correlated path generation for hybrid systems and derivation of the
//! observable panel.
//!
//! Rate factors use the exact Ornstein-Uhlenbeck transition; equity
//! components use an Euler scheme on `(log S, v)` with a configurable floor
//! treatment of the variance. All randomness for one run comes from a single
//! ChaCha stream seeded by `SimulationConfig::seed`; jump draws use
//! separate streams of the same key so that switching jumps off leaves the
//! diffusion draws untouched.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{loading_c, TenorMap};
use crate::linalg;
use crate::psd::{is_psd, DEFAULT_PSD_TOL};
use crate::types::{
    state_label, validate_system, BatesJumpParams, BlockCorrelationMatrix, ComponentSpec, G1Params,
    G2Params, HestonParams, HybridSystemSpec, ObservationPanel, SeriesKey, StateKind,
};

/// Floor treatment of the variance in the Euler step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceScheme {
    /// Drift and diffusion see `max(v, 0)`; the raw state may go negative.
    #[default]
    FullTruncation,
    /// The state is floored at zero after each step.
    Absorption,
    /// The state is reflected at zero after each step.
    Reflection,
}

/// How spot-rate observables are built from the rate factors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateObservable {
    /// `R^τ = (1 − e^{−aτ})/(aτ)·x + (1 − e^{−bτ})/(bτ)·y` from the simulated factors.
    #[default]
    FactorLevels,
    /// Martingale part only, `c(a,σ,τ)·B^x + c(b,η,τ)·B^y`, with `B` the
    /// running sum of the unit-variance step draws. Independent of `dt`.
    MartingaleLoading,
}

/// Which variance series an equity component contributes to the panel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceObservable {
    /// The simulated variance itself.
    #[default]
    True,
    /// `sqrt(v)` stored as an ATM implied vol series, the leading-order short-expiry level.
    ImpliedVolAtm,
    /// No variance series at all.
    Unobserved,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    pub variance: VarianceScheme,
    /// Volatilities at or below this level are treated as exactly zero.
    pub negligible_vol: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            variance: VarianceScheme::FullTruncation,
            negligible_vol: 1e-150,
        }
    }
}

impl SchemeOptions {
    fn vol(&self, v: f64) -> f64 {
        if v.abs() <= self.negligible_vol {
            0.0
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub scheme: SchemeOptions,
    /// Equity drift uses the short rate of the first rate component instead of `r_tilde`.
    pub couple_short_rate: bool,
    pub rate_observable: RateObservable,
    pub variance_observable: VarianceObservable,
    pub tenors: TenorMap,
}

impl SimulationConfig {
    pub fn new(n_steps: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_steps,
            dt,
            seed,
            scheme: SchemeOptions::default(),
            couple_short_rate: false,
            rate_observable: RateObservable::default(),
            variance_observable: VarianceObservable::default(),
            tenors: TenorMap::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::InvalidParameter("n_steps must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `trial` under base seed `seed`.
pub fn derive_seed(seed: u64, trial: u64) -> u64 {
    splitmix64(seed ^ splitmix64(trial))
}

/// `n_steps` rows of standard normals with correlation `matrix`, one column per state.
fn correlated_normal_columns(
    matrix: &DMatrix<f64>,
    n_steps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    if !is_psd(matrix, DEFAULT_PSD_TOL) {
        return Err(Error::NotPositiveSemidefinite(
            "correlation matrix for path generation".into(),
        ));
    }
    let n = matrix.nrows();
    let l = linalg::semidefinite_cholesky(matrix, DEFAULT_PSD_TOL)?;
    let mut cols = vec![Vec::with_capacity(n_steps); n];
    let mut xi = DVector::<f64>::zeros(n);
    for _ in 0..n_steps {
        for k in 0..n {
            xi[k] = rng.sample(StandardNormal);
        }
        for (r, col) in cols.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..=r {
                acc += l[(r, c)] * xi[c];
            }
            col.push(acc);
        }
    }
    Ok(cols)
}

/// Brownian increments with covariance `dt · full_matrix` per step (rows are steps).
pub fn correlated_increments(
    full_matrix: &BlockCorrelationMatrix,
    n_steps: usize,
    dt: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = correlated_normal_columns(full_matrix.entries(), n_steps, &mut rng)?;
    let sq = dt.sqrt();
    Ok(DMatrix::from_fn(n_steps, cols.len(), |r, c| {
        cols[c][r] * sq
    }))
}

fn ou_path(rate: f64, vol: f64, z: &[f64], dt: f64) -> Vec<f64> {
    let decay = (-rate * dt).exp();
    let step_sd = ou_step_stdev(rate, vol, dt);
    let mut path = Vec::with_capacity(z.len() + 1);
    let mut x = 0.0;
    path.push(x);
    for &zk in z {
        x = x * decay + step_sd * zk;
        path.push(x);
    }
    path
}

/// Conditional standard deviation of one exact OU step.
pub fn ou_step_stdev(rate: f64, vol: f64, dt: f64) -> f64 {
    vol * (-(-2.0 * rate * dt).exp_m1() / (2.0 * rate)).sqrt()
}

/// Exact OU paths of both factors from zero, driven by unit-variance draws.
pub fn simulate_g2(
    params: &G2Params,
    zx: &[f64],
    zy: &[f64],
    dt: f64,
    opts: &SchemeOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if zx.len() != zy.len() {
        return Err(Error::DimensionMismatch(
            "x and y draws differ in length".into(),
        ));
    }
    Ok((
        ou_path(params.a, opts.vol(params.sigma), zx, dt),
        ou_path(params.b, opts.vol(params.eta), zy, dt),
    ))
}

pub fn simulate_g1(params: &G1Params, z: &[f64], dt: f64, opts: &SchemeOptions) -> Vec<f64> {
    ou_path(params.a, opts.vol(params.sigma), z, dt)
}

/// Spot rate of tenor `tau` implied by factor paths, with zero shift.
pub fn spot_rate_path(x: &[f64], y: &[f64], params: &G2Params, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tenor {tau} must be > 0")));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(
            "x and y paths differ in length".into(),
        ));
    }
    let bx = loading_c(params.a, 1.0, tau);
    let by = loading_c(params.b, 1.0, tau);
    Ok(x.iter().zip(y).map(|(x, y)| bx * x + by * y).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HestonPath {
    pub log_price: Vec<f64>,
    /// Stored variance, never negative.
    pub variance: Vec<f64>,
}

/// Euler paths of `(log S, v)` from `(0, v0)`.
///
/// `short_rate`, when given, replaces `r_tilde` in the drift step by step.
/// Jumps add `N(kμ, kσ²)` for `k ~ Poisson(λ dt)` draws from `jump_rng`, and
/// the drift carries the compensator `−λ(e^{μ+σ²/2} − 1)`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_heston(
    params: &HestonParams,
    jumps: Option<&BatesJumpParams>,
    zs: &[f64],
    zv: &[f64],
    dt: f64,
    opts: &SchemeOptions,
    short_rate: Option<&[f64]>,
    jump_rng: &mut impl Rng,
) -> Result<HestonPath> {
    let n = zs.len();
    if zv.len() != n {
        return Err(Error::DimensionMismatch(
            "s and v draws differ in length".into(),
        ));
    }
    if let Some(r) = short_rate {
        if r.len() < n {
            return Err(Error::DimensionMismatch("short-rate path too short".into()));
        }
    }
    let jumps = jumps.filter(|j| j.lambda > 0.0);
    let (compensator, poisson) = match jumps {
        Some(j) => (
            j.lambda * ((j.mu_j + 0.5 * j.sigma_j * j.sigma_j).exp() - 1.0),
            Some(
                Poisson::new(j.lambda * dt)
                    .map_err(|e| Error::InvalidParameter(format!("jump intensity: {e}")))?,
            ),
        ),
        None => (0.0, None),
    };
    let xi = opts.vol(params.xi);
    let sq = dt.sqrt();
    let mut s = 0.0;
    let mut v = params.v0;
    let mut log_price = Vec::with_capacity(n + 1);
    let mut variance = Vec::with_capacity(n + 1);
    log_price.push(s);
    variance.push(v.max(0.0));
    for k in 0..n {
        let vp = v.max(0.0);
        let root = vp.sqrt();
        let r = short_rate.map_or(params.r_tilde, |r| r[k]);
        let mut ds = (r - params.q_tilde - 0.5 * vp) * dt + root * sq * zs[k];
        if let (Some(j), Some(p)) = (jumps, &poisson) {
            ds -= compensator * dt;
            let count: f64 = p.sample(jump_rng);
            if count > 0.0 {
                let z: f64 = jump_rng.sample(StandardNormal);
                ds += count * j.mu_j + count.sqrt() * j.sigma_j * z;
            }
        }
        s += ds;
        v += params.kappa * (params.theta - vp) * dt + xi * root * sq * zv[k];
        v = match opts.variance {
            VarianceScheme::FullTruncation => v,
            VarianceScheme::Absorption => v.max(0.0),
            VarianceScheme::Reflection => v.abs(),
        };
        log_price.push(s);
        variance.push(v.max(0.0));
    }
    Ok(HestonPath {
        log_price,
        variance,
    })
}

/// Simulated states keyed by label (`"c0.x"`, `"c1.v"`, ...) and the derived panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub states: BTreeMap<String, Vec<f64>>,
    pub panel: ObservationPanel,
    pub diagnostics: Vec<String>,
}

fn cumulative(z: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for &v in z {
        acc += v;
        out.push(acc);
    }
    out
}

/// Simulates every component of `system` under its full correlation matrix.
pub fn simulate_system(system: &HybridSystemSpec, config: &SimulationConfig) -> Result<PathSet> {
    config.validate()?;
    let problems = validate_system(system);
    if !problems.is_empty() {
        return Err(Error::InvalidParameter(problems.join("; ")));
    }
    let full = system.full_matrix.as_ref().ok_or_else(|| {
        Error::InvalidParameter("simulation requires the full correlation matrix".into())
    })?;
    if system
        .components
        .iter()
        .any(|c| matches!(c, ComponentSpec::SingleStateEquity))
    {
        return Err(Error::InvalidParameter(
            "single-state equity components cannot be simulated".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let z = correlated_normal_columns(full.entries(), config.n_steps, &mut rng)?;
    let offsets = full.block_offsets();
    let dt = config.dt;
    let opts = &config.scheme;
    let mut panel = ObservationPanel::uniform(config.n_steps, dt)?;
    let mut states = BTreeMap::new();
    let mut diagnostics = Vec::new();
    let mut short_rate: Option<Vec<f64>> = None;

    // Rate components first so the coupled drift can see the short rate.
    for (i, spec) in system.components.iter().enumerate() {
        let o = offsets[i];
        match spec {
            ComponentSpec::G2(p) => {
                let (x, y) = simulate_g2(p, &z[o], &z[o + 1], dt, opts)?;
                for tau in config.tenors.tenors_for(i, spec)? {
                    let r = match config.rate_observable {
                        RateObservable::FactorLevels => spot_rate_path(&x, &y, p, tau)?,
                        RateObservable::MartingaleLoading => {
                            let cx = loading_c(p.a, opts.vol(p.sigma), tau);
                            let cy = loading_c(p.b, opts.vol(p.eta), tau);
                            cumulative(&z[o])
                                .iter()
                                .zip(cumulative(&z[o + 1]))
                                .map(|(bx, by)| cx * bx + cy * by)
                                .collect()
                        }
                    };
                    panel.insert(SeriesKey::spot_rate(i, tau), r)?;
                }
                if short_rate.is_none() {
                    short_rate = Some(x.iter().zip(&y).map(|(x, y)| x + y).collect());
                }
                states.insert(state_label(i, StateKind::X), x);
                states.insert(state_label(i, StateKind::Y), y);
            }
            ComponentSpec::G1(p) => {
                let x = simulate_g1(p, &z[o], dt, opts);
                let tau = config.tenors.g1(i)?;
                let r = match config.rate_observable {
                    RateObservable::FactorLevels => {
                        let b = loading_c(p.a, 1.0, tau);
                        x.iter().map(|x| b * x).collect()
                    }
                    RateObservable::MartingaleLoading => {
                        let c = loading_c(p.a, opts.vol(p.sigma), tau);
                        cumulative(&z[o]).iter().map(|b| c * b).collect()
                    }
                };
                panel.insert(SeriesKey::spot_rate(i, tau), r)?;
                if short_rate.is_none() {
                    short_rate = Some(x.clone());
                }
                states.insert(state_label(i, StateKind::X), x);
            }
            _ => {}
        }
    }
    if config.couple_short_rate && short_rate.is_none() {
        return Err(Error::InvalidParameter(
            "short-rate coupling requires a rate component".into(),
        ));
    }

    for (i, spec) in system.components.iter().enumerate() {
        let (params, jumps) = match spec {
            ComponentSpec::Heston(p) => (p, None),
            ComponentSpec::Bates { heston, jumps } => (heston, Some(jumps)),
            _ => continue,
        };
        if !params.feller_satisfied() {
            diagnostics.push(format!("component {i}: Feller condition 2κθ > ξ² violated"));
        }
        let o = offsets[i];
        let mut jump_rng = ChaCha8Rng::seed_from_u64(config.seed);
        jump_rng.set_stream(1 + i as u64);
        let rate = if config.couple_short_rate {
            short_rate.as_deref()
        } else {
            None
        };
        let path = simulate_heston(
            params,
            jumps,
            &z[o],
            &z[o + 1],
            dt,
            opts,
            rate,
            &mut jump_rng,
        )?;
        panel.insert(SeriesKey::log_price(i), path.log_price.clone())?;
        match config.variance_observable {
            VarianceObservable::True => {
                panel.insert(SeriesKey::variance(i), path.variance.clone())?;
            }
            VarianceObservable::ImpliedVolAtm => {
                panel.insert(
                    SeriesKey::implied_vol(i),
                    path.variance.iter().map(|v| v.sqrt()).collect(),
                )?;
            }
            VarianceObservable::Unobserved => {}
        }
        states.insert(state_label(i, StateKind::S), path.log_price);
        states.insert(state_label(i, StateKind::V), path.variance);
    }

    Ok(PathSet {
        states,
        panel,
        diagnostics,
    })
}
