//! Completion of variance correlations when no variance series is observed.
//!
//! Write the variance driver of a two-state equity component as
//! `W^v = ρ W^s + sqrt(1 − ρ²) Z` with `Z` independent of every other
//! component. Any correlation with `v` then factors through the stock:
//! `ρ(u, v) = ρ · ρ(u, s)`. Completed blocks are rank one by construction.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::types::{BlockCorrelationMatrix, HybridSystemSpec, StateKind};

/// Lower Cholesky factor `[[1, 0], [ρ, sqrt(1 − ρ²)]]` of a 2×2 correlation block.
///
/// At `ρ = ±1` the second column vanishes; nothing divides by it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerCholesky {
    pub rho: f64,
    pub lower: Matrix2<f64>,
}

impl InnerCholesky {
    pub fn new(rho: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "inner correlation {rho} outside [-1,1]"
            )));
        }
        let lower = Matrix2::new(1.0, 0.0, rho, (1.0 - rho * rho).max(0.0).sqrt());
        Ok(Self { rho, lower })
    }

    pub fn block(&self) -> Matrix2<f64> {
        self.lower * self.lower.transpose()
    }

    /// Cross block `L_i Ω L_jᵀ` for the correlations `Ω` of the de-correlated drivers.
    pub fn cross_block(&self, other: &InnerCholesky, omega: &Matrix2<f64>) -> Matrix2<f64> {
        self.lower * omega * other.lower.transpose()
    }
}

/// `(ρ_{x,v}, ρ_{y,v})` of a two-factor rate component against an equity
/// whose variance is unobserved.
pub fn complete_g2_heston(rho_x_s: f64, rho_y_s: f64, rho_j: f64) -> (f64, f64) {
    (rho_x_s * rho_j, rho_y_s * rho_j)
}

/// `(ρ_{s_i,v_j}, ρ_{v_i,s_j}, ρ_{v_i,v_j})` of two equities with both variances unobserved.
pub fn complete_heston_heston(rho_s_s: f64, rho_i: f64, rho_j: f64) -> (f64, f64, f64) {
    (rho_s_s * rho_j, rho_s_s * rho_i, rho_s_s * rho_i * rho_j)
}

/// Fills every masked entry of `draft`.
///
/// Masked entries must sit in a variance row or column of a Heston or Bates
/// component, and the matching stock entries must be observed. A
/// Heston/Heston pair with one observed variance is filled column by column
/// like a rate/equity pair.
pub fn complete_panel(
    draft: &BlockCorrelationMatrix,
    missing: &DMatrix<bool>,
    system: &HybridSystemSpec,
) -> Result<BlockCorrelationMatrix> {
    let n = draft.dim();
    if missing.nrows() != n || missing.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "mask is {}x{}, matrix is {n}x{n}",
            missing.nrows(),
            missing.ncols()
        )));
    }
    if draft.block_sizes() != system.block_sizes().as_slice() {
        return Err(Error::DimensionMismatch(
            "matrix block sizes do not match the system".into(),
        ));
    }
    if !missing.iter().any(|&m| m) {
        return Ok(draft.clone());
    }

    // Per global index: the stock index and inner correlation when the state is a variance.
    let offsets = draft.block_offsets();
    let mut variance_anchor: Vec<Option<(usize, f64)>> = vec![None; n];
    for (c, spec) in system.components.iter().enumerate() {
        if let Some(h) = spec.heston() {
            let states = spec.states();
            let s = states.iter().position(|k| *k == StateKind::S).unwrap();
            let v = states.iter().position(|k| *k == StateKind::V).unwrap();
            variance_anchor[offsets[c] + v] = Some((offsets[c] + s, h.rho_sv));
        }
    }

    let src = draft.entries();
    let observed = |r: usize, c: usize| !missing[(r, c)];
    let labels = draft.labels();
    let mut out = src.clone();
    for r in 0..n {
        for c in r + 1..n {
            if !missing[(r, c)] {
                continue;
            }
            if draft.same_block(r, c) {
                return Err(Error::NotCompletable {
                    row: labels[r].clone(),
                    col: labels[c].clone(),
                });
            }
            let value = match (variance_anchor[r], variance_anchor[c]) {
                (_, Some((sc, rho_c))) if observed(r, sc) => Some(src[(r, sc)] * rho_c),
                (Some((sr, rho_r)), _) if observed(sr, c) => Some(src[(sr, c)] * rho_r),
                (Some((sr, rho_r)), Some((sc, rho_c))) if observed(sr, sc) => {
                    Some(src[(sr, sc)] * rho_r * rho_c)
                }
                _ => None,
            };
            let Some(value) = value else {
                return Err(Error::NotCompletable {
                    row: labels[r].clone(),
                    col: labels[c].clone(),
                });
            };
            out[(r, c)] = value;
            out[(c, r)] = value;
        }
    }
    draft.with_entries(out)
}
