//! Axis-aligned boxes and exact box-halfspace volume fractions.

use crate::error::{AuditError, Result};
use crate::numeric::KahanSum;
use serde::{Deserialize, Serialize};

/// Axis-aligned box with closed bounds on every dimension.
///
/// Used for zero-probability regions, probability queries, and piecewise
/// score cells (the cell dispatch applies its own half-open convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(AuditError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !a.is_finite() || !b.is_finite() || a > b {
                return Err(AuditError::InvalidDomain(format!(
                    "box bounds must be finite with lo <= hi, got [{a}, {b}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| v >= a && v <= b)
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn intersect(&self, other: &BoxRegion) -> Option<BoxRegion> {
        if self.dim() != other.dim() {
            return None;
        }
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let a = self.lo[j].max(other.lo[j]);
            let b = self.hi[j].min(other.hi[j]);
            if a > b {
                return None;
            }
            lo.push(a);
            hi.push(b);
        }
        Some(BoxRegion { lo, hi })
    }

    /// Restrict the box to a contiguous dimension range.
    pub fn project(&self, range: std::ops::Range<usize>) -> BoxRegion {
        BoxRegion {
            lo: self.lo[range.clone()].to_vec(),
            hi: self.hi[range].to_vec(),
        }
    }
}

/// Subtract `cut` from `base`, returning disjoint remainder boxes.
///
/// `lattice` flags dimensions holding integer lattice points: their split
/// boundaries step by one unit so boundary points land in exactly one piece.
/// Continuous splits share boundaries, which carry zero measure.
pub fn subtract_box(base: &BoxRegion, cut: &BoxRegion, lattice: &[bool]) -> Vec<BoxRegion> {
    let inter = match base.intersect(cut) {
        Some(b) => b,
        None => return vec![base.clone()],
    };
    const EPS: f64 = 1e-9;
    let mut pieces = Vec::new();
    let mut core = base.clone();
    for j in 0..base.dim() {
        if inter.lo[j] > core.lo[j] {
            let mut piece = core.clone();
            piece.hi[j] = if lattice[j] {
                // largest lattice point strictly below the cut
                (inter.lo[j] - EPS).ceil() - 1.0
            } else {
                inter.lo[j]
            };
            if piece.lo[j] <= piece.hi[j] {
                pieces.push(piece);
            }
        }
        if inter.hi[j] < core.hi[j] {
            let mut piece = core.clone();
            piece.lo[j] = if lattice[j] {
                (inter.hi[j] + EPS).floor() + 1.0
            } else {
                inter.hi[j]
            };
            if piece.lo[j] <= piece.hi[j] {
                pieces.push(piece);
            }
        }
        core.lo[j] = inter.lo[j];
        core.hi[j] = inter.hi[j];
    }
    pieces
}

/// Clip `boxes` to `bounds` and decompose their union into disjoint boxes.
pub fn disjoint_union(
    bounds: &BoxRegion,
    boxes: &[BoxRegion],
    lattice: &[bool],
) -> Result<Vec<BoxRegion>> {
    let mut acc: Vec<BoxRegion> = Vec::new();
    for b in boxes {
        if b.dim() != bounds.dim() {
            return Err(AuditError::DimensionMismatch {
                expected: bounds.dim(),
                got: b.dim(),
            });
        }
        let clipped = match bounds.intersect(b) {
            Some(c) => c,
            None => continue,
        };
        let mut pieces = vec![clipped];
        for existing in &acc {
            pieces = pieces
                .iter()
                .flat_map(|p| subtract_box(p, existing, lattice))
                .collect();
        }
        acc.extend(pieces);
    }
    Ok(acc)
}

/// Exact volume fraction of `{a in box : w . a >= t}` for a closed box.
///
/// Affine map onto the unit cube followed by the inclusion-exclusion simplex
/// formula for the volume under a linear constraint. Degenerate dimensions
/// fold into the constant term.
pub fn halfspace_fraction_geq(region: &BoxRegion, w: &[f64], t: f64) -> Result<f64> {
    if w.len() != region.dim() {
        return Err(AuditError::DimensionMismatch {
            expected: region.dim(),
            got: w.len(),
        });
    }
    let mut c0 = 0.0;
    let mut coeffs: Vec<f64> = Vec::new();
    for j in 0..region.dim() {
        let width = region.hi[j] - region.lo[j];
        c0 += w[j] * region.lo[j];
        let v = w[j] * width;
        if v != 0.0 {
            coeffs.push(v);
        }
    }
    // want frac{ sum v_j u_j >= t - c0 } over the unit cube
    let mut s = t - c0;
    // flip negative coefficients via u -> 1 - u
    for v in coeffs.iter_mut() {
        if *v < 0.0 {
            s -= *v;
            *v = -*v;
        }
    }
    if coeffs.is_empty() {
        return Ok(if 0.0 >= s { 1.0 } else { 0.0 });
    }
    let total: f64 = coeffs.iter().sum();
    if s <= 0.0 {
        return Ok(1.0);
    }
    if s >= total {
        // boundary corner still satisfies the closed comparison, measure zero
        return Ok(0.0);
    }
    Ok((1.0 - simplex_cdf(&coeffs, s)).clamp(0.0, 1.0))
}

// Normalized volume of { u in [0,1]^d : sum a_j u_j <= s } with a_j > 0.
fn simplex_cdf(a: &[f64], s: f64) -> f64 {
    let d = a.len();
    let ln_norm: f64 = crate::numeric::ln_factorial(d as u64) + a.iter().map(|v| v.ln()).sum::<f64>();
    let mut sum = KahanSum::new();
    // iterate subsets of dimensions
    for mask in 0u64..(1u64 << d) {
        let mut shifted = s;
        let mut sign = 1.0;
        for (j, aj) in a.iter().enumerate() {
            if mask >> j & 1 == 1 {
                shifted -= aj;
                sign = -sign;
            }
        }
        if shifted > 0.0 {
            sum.add(sign * (d as f64 * shifted.ln() - ln_norm).exp());
        }
    }
    sum.value().clamp(0.0, 1.0)
}
