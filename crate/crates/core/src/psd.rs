//! Positive semidefiniteness test and repair by clamping plus shrinking.
//!
//! A draft matrix `M0` whose diagonal blocks are calibrated and whose cross
//! blocks are estimated is blended with the block-diagonal target `M1`:
//!
//! ```text
//! S(α) = (1 − α)·M0 + α·M1,   α* = min { α ∈ [0, 1] : S(α) ⪰ 0 }
//! ```
//!
//! Both matrices share their diagonal blocks, so every `S(α)` keeps them.
//! Those blocks are copied from `M1` verbatim to make the preservation exact
//! in floating point rather than merely up to rounding.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::BlockCorrelationMatrix;

/// Pivot tolerance of the PSD test, relative to the largest diagonal entry.
pub const DEFAULT_PSD_TOL: f64 = 1e-10;
/// Default bisection tolerance on α.
pub const DEFAULT_SHRINK_TOL: f64 = 1e-6;
/// Default bound for cross-entry clamping.
pub const DEFAULT_CLAMP_BOUND: f64 = 0.999;

/// Outcome of [`shrink`] and [`repair`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkResult {
    pub matrix: BlockCorrelationMatrix,
    pub alpha_star: f64,
    pub clamp_count: usize,
    pub min_eigenvalue: f64,
    pub iterations: usize,
}

/// Serializable summary of a [`ShrinkResult`].
#[derive(Debug, Clone, Serialize)]
pub struct ShrinkSummary {
    pub alpha_star: f64,
    pub clamp_count: usize,
    pub min_eigenvalue: f64,
    pub iterations: usize,
    pub eigenvalues: Vec<f64>,
}

impl ShrinkResult {
    pub fn summary(&self) -> ShrinkSummary {
        ShrinkSummary {
            alpha_star: self.alpha_star,
            clamp_count: self.clamp_count,
            min_eigenvalue: self.min_eigenvalue,
            iterations: self.iterations,
            eigenvalues: eigenvalues(self.matrix.entries()),
        }
    }
}

/// Ascending eigenvalues of the symmetric part of `m`.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// PSD test by symmetric-pivoted LDLᵀ elimination.
///
/// The matrix is symmetrized first. At each step the largest remaining
/// diagonal is eliminated; a negative pivot below `-tol·max|diag|` fails.
/// Once every remaining diagonal is within the tolerance of zero the
/// leftover Schur complement is tiny and is checked by its spectrum.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    if m.ncols() != n {
        return false;
    }
    if m.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut s = (m + m.transpose()) * 0.5;
    let scale = (0..n).map(|i| s[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return s.iter().all(|&v| v == 0.0);
    }
    let t = tol * scale;
    let mut active: Vec<usize> = (0..n).collect();
    while !active.is_empty() {
        let (pos, &p) = active
            .iter()
            .enumerate()
            .max_by(|a, b| s[(*a.1, *a.1)].total_cmp(&s[(*b.1, *b.1)]))
            .expect("non-empty");
        let pivot = s[(p, p)];
        if pivot <= t {
            if active.iter().any(|&i| s[(i, i)] < -t) {
                return false;
            }
            let k = active.len();
            let rest = DMatrix::from_fn(k, k, |r, c| s[(active[r], active[c])]);
            return SymmetricEigen::new(rest).eigenvalues.min() >= -t;
        }
        active.swap_remove(pos);
        for &i in &active {
            let f = s[(i, p)] / pivot;
            if f == 0.0 {
                continue;
            }
            for &j in &active {
                s[(i, j)] -= f * s[(p, j)];
            }
        }
    }
    true
}

/// Clamps off-diagonal-block entries into `[-bound, bound]`.
///
/// Diagonal blocks are never touched; an out-of-range value there is a
/// validation error for the caller. The count is per symmetric pair.
pub fn clamp_cross_entries(
    matrix: &BlockCorrelationMatrix,
    bound: f64,
) -> Result<(BlockCorrelationMatrix, usize)> {
    if !(bound > 0.0 && bound <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "clamp bound {bound} outside (0, 1]"
        )));
    }
    let mut e = matrix.entries().clone();
    let n = matrix.dim();
    let mut count = 0;
    for r in 0..n {
        for c in r + 1..n {
            if matrix.same_block(r, c) {
                continue;
            }
            let v = e[(r, c)];
            let clamped = v.clamp(-bound, bound);
            if clamped != v {
                count += 1;
                e[(r, c)] = clamped;
                e[(c, r)] = clamped;
            }
        }
    }
    Ok((matrix.with_entries(e)?, count))
}

fn blend(m0: &BlockCorrelationMatrix, m1: &BlockCorrelationMatrix, alpha: f64) -> DMatrix<f64> {
    let n = m0.dim();
    DMatrix::from_fn(n, n, |r, c| {
        if m0.same_block(r, c) {
            m1.get(r, c)
        } else {
            (1.0 - alpha) * m0.get(r, c) + alpha * m1.get(r, c)
        }
    })
}

/// Smallest shrinking parameter making `S(α)` PSD, by bisection.
///
/// Returns `S(xr)` for the right endpoint `xr` so the result is PSD by
/// construction. `α* = 0` when `M0` is already PSD.
pub fn shrink(
    m0: &BlockCorrelationMatrix,
    m1: &BlockCorrelationMatrix,
    tol: f64,
) -> Result<ShrinkResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bisection tolerance {tol} must be > 0"
        )));
    }
    if m0.block_sizes() != m1.block_sizes() {
        return Err(Error::DimensionMismatch(format!(
            "block sizes differ: {:?} vs {:?}",
            m0.block_sizes(),
            m1.block_sizes()
        )));
    }
    let n = m0.dim();
    for r in 0..n {
        for c in 0..n {
            if m0.same_block(r, c) && m0.get(r, c) != m1.get(r, c) {
                return Err(Error::InvalidParameter(format!(
                    "diagonal-block entry ({}, {}) differs between M0 and M1",
                    m0.labels()[r],
                    m0.labels()[c]
                )));
            }
        }
    }
    if !is_psd(m1.entries(), DEFAULT_PSD_TOL) {
        return Err(Error::DiagonalBlocksNotPsd);
    }
    if m0.entries().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "draft contains non-finite entries".into(),
        ));
    }

    let exact_m0 = blend(m0, m1, 0.0);
    if is_psd(&exact_m0, DEFAULT_PSD_TOL) {
        return Ok(ShrinkResult {
            min_eigenvalue: min_eigenvalue(&exact_m0),
            matrix: m0.with_entries(exact_m0)?,
            alpha_star: 0.0,
            clamp_count: 0,
            iterations: 0,
        });
    }

    let (mut xl, mut xr) = (0.0f64, 1.0f64);
    let mut iterations = 0;
    while xr - xl > tol {
        let xm = (xl + xr) * 0.5;
        if is_psd(&blend(m0, m1, xm), DEFAULT_PSD_TOL) {
            xr = xm;
        } else {
            xl = xm;
        }
        iterations += 1;
    }
    let out = blend(m0, m1, xr);
    Ok(ShrinkResult {
        min_eigenvalue: min_eigenvalue(&out),
        matrix: m0.with_entries(out)?,
        alpha_star: xr,
        clamp_count: 0,
        iterations,
    })
}

/// Clamps cross entries to `bound`, then shrinks toward the draft's own
/// block-diagonal part.
pub fn repair(draft: &BlockCorrelationMatrix, bound: f64, tol: f64) -> Result<ShrinkResult> {
    if draft.entries().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "draft has missing or non-finite entries; complete it first".into(),
        ));
    }
    let target = draft.block_diagonal();
    if !is_psd(target.entries(), DEFAULT_PSD_TOL) {
        return Err(Error::DiagonalBlocksNotPsd);
    }
    let (clamped, clamp_count) = clamp_cross_entries(draft, bound)?;
    let mut result = shrink(&clamped, &target, tol)?;
    result.clamp_count = clamp_count;
    Ok(result)
}
