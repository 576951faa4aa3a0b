//! Score functions over reported types.
//!
//! Four scorer shapes: linear, piecewise-linear over rectangular cells,
//! logistic, and an explicit table over lattice types. The logistic form is
//! 1/(e^{w·a + bias} + 1), which is decreasing in the linear index, so the
//! threshold reduction flips the comparison direction and extreme selection
//! is inverted relative to the linear case.

use crate::error::{AuditError, Result};
use crate::geometry::BoxRegion;
use crate::types::{lattice_key, AgentType, TypeSpace};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Which side of a threshold counts as allocated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Geq,
    Leq,
}

impl Direction {
    pub fn allocates(self, score: f64, theta: f64) -> bool {
        match self {
            Direction::Geq => score >= theta,
            Direction::Leq => score <= theta,
        }
    }
}

/// Affine score piece w_known·x + w_self·z + bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParts {
    pub w_known: Vec<f64>,
    pub w_self: Vec<f64>,
    pub bias: f64,
}

impl LinearParts {
    pub fn new(w_known: Vec<f64>, w_self: Vec<f64>, bias: f64) -> Self {
        Self {
            w_known,
            w_self,
            bias,
        }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let dx: f64 = self.w_known.iter().zip(x).map(|(w, v)| w * v).sum();
        let dz: f64 = self.w_self.iter().zip(z).map(|(w, v)| w * v).sum();
        dx + dz + self.bias
    }

    /// Weights over the joint (x, z) coordinate order.
    pub fn joint_weights(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.w_known.len() + self.w_self.len());
        w.extend_from_slice(&self.w_known);
        w.extend_from_slice(&self.w_self);
        w
    }

    fn dims_match(&self, space: &TypeSpace) -> bool {
        self.w_known.len() == space.d() && self.w_self.len() == space.s()
    }
}

/// Score function published by the principal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScoreFunction {
    Linear(LinearParts),
    /// Disjoint rectangular cells over the joint space, each with its own
    /// affine part. Dispatch is half-open (lo inclusive, hi exclusive) per
    /// dimension, closed at the global upper face; first matching cell wins.
    PiecewiseLinear {
        cells: Vec<(BoxRegion, LinearParts)>,
        upper: Vec<f64>,
    },
    Logistic(LinearParts),
    Table {
        entries: BTreeMap<Vec<i64>, f64>,
    },
}

pub fn logistic_value(index: f64) -> f64 {
    1.0 / (index.exp() + 1.0)
}

impl ScoreFunction {
    pub fn linear(w_known: Vec<f64>, w_self: Vec<f64>, bias: f64) -> Self {
        ScoreFunction::Linear(LinearParts::new(w_known, w_self, bias))
    }

    pub fn logistic(w_known: Vec<f64>, w_self: Vec<f64>, bias: f64) -> Self {
        ScoreFunction::Logistic(LinearParts::new(w_known, w_self, bias))
    }

    pub fn piecewise_linear(cells: Vec<(BoxRegion, LinearParts)>) -> Result<Self> {
        if cells.is_empty() {
            return Err(AuditError::InvalidScore(
                "piecewise scorer needs at least one cell".into(),
            ));
        }
        let dim = cells[0].0.dim();
        for (region, _) in &cells {
            if region.dim() != dim {
                return Err(AuditError::DimensionMismatch {
                    expected: dim,
                    got: region.dim(),
                });
            }
        }
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                if let Some(overlap) = cells[i].0.intersect(&cells[j].0) {
                    let open = (0..dim).all(|d| overlap.lo()[d] < overlap.hi()[d]);
                    if open {
                        return Err(AuditError::InvalidScore(format!(
                            "piecewise cells {i} and {j} overlap with positive measure"
                        )));
                    }
                }
            }
        }
        let upper = (0..dim)
            .map(|d| {
                cells
                    .iter()
                    .map(|(r, _)| r.hi()[d])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        Ok(ScoreFunction::PiecewiseLinear { cells, upper })
    }

    pub fn table(entries: BTreeMap<Vec<i64>, f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(AuditError::InvalidScore("empty score table".into()));
        }
        let dim = entries.keys().next().expect("nonempty").len();
        if entries.keys().any(|k| k.len() != dim) {
            return Err(AuditError::InvalidScore(
                "score table keys have mixed dimensions".into(),
            ));
        }
        Ok(ScoreFunction::Table { entries })
    }

    /// The score of a reported type.
    pub fn score(&self, a: &AgentType) -> Result<f64> {
        match self {
            ScoreFunction::Linear(p) => Ok(p.eval(&a.x, &a.z)),
            ScoreFunction::Logistic(p) => Ok(logistic_value(p.eval(&a.x, &a.z))),
            ScoreFunction::PiecewiseLinear { cells, upper } => {
                let joint = a.joint();
                for (region, parts) in cells {
                    if cell_contains(region, upper, &joint) {
                        return Ok(parts.eval(&a.x, &a.z));
                    }
                }
                Err(AuditError::ScoreUndefined(format!(
                    "no piecewise cell covers {joint:?}"
                )))
            }
            ScoreFunction::Table { entries } => {
                let key = lattice_key(&a.joint()).ok_or_else(|| {
                    AuditError::ScoreUndefined(format!(
                        "table scorer needs lattice points, got {:?}",
                        a.joint()
                    ))
                })?;
                entries.get(&key).copied().ok_or_else(|| {
                    AuditError::ScoreUndefined(format!("no table entry for {key:?}"))
                })
            }
        }
    }

    pub fn validate_dims(&self, space: &TypeSpace) -> Result<()> {
        let ok = match self {
            ScoreFunction::Linear(p) | ScoreFunction::Logistic(p) => p.dims_match(space),
            ScoreFunction::PiecewiseLinear { cells, .. } => {
                cells.iter().all(|(r, p)| r.dim() == space.dim() && p.dims_match(space))
            }
            ScoreFunction::Table { entries } => {
                entries.keys().all(|k| k.len() == space.dim())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(AuditError::InvalidScore(
                "score function dimensions do not match the type space".into(),
            ))
        }
    }

    pub fn linear_parts(&self) -> Option<&LinearParts> {
        match self {
            ScoreFunction::Linear(p) | ScoreFunction::Logistic(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_logistic(&self) -> bool {
        matches!(self, ScoreFunction::Logistic(_))
    }
}

fn cell_contains(region: &BoxRegion, upper: &[f64], point: &[f64]) -> bool {
    (0..region.dim()).all(|j| {
        let v = point[j];
        v >= region.lo()[j]
            && (v < region.hi()[j] || (region.hi()[j] == upper[j] && v <= region.hi()[j]))
    })
}

/// How `score_extremes` searches for the extrema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremeMode {
    /// Componentwise endpoint selection; linear and logistic scorers only.
    Monotone,
    /// Per-cell corner search (piecewise) or full table scan.
    Exhaustive,
}

/// Extremal known parts, self parts, and score values over the space box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreExtremes {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub z_min: Vec<f64>,
    pub z_max: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
}

/// Componentwise extremes of an affine index over the space box.
/// Returns (argmin x, argmin z, argmax x, argmax z) of w·a + bias.
fn affine_extremes(parts: &LinearParts, space: &TypeSpace) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let pick = |w: f64, lo: f64, hi: f64, max: bool| -> f64 {
        if (w > 0.0) == max || w == 0.0 {
            if w == 0.0 {
                lo
            } else {
                hi
            }
        } else {
            lo
        }
    };
    let x_lo: Vec<f64> = space
        .known()
        .iter()
        .zip(&parts.w_known)
        .map(|(d, w)| pick(*w, d.lo(), d.hi(), false))
        .collect();
    let x_hi: Vec<f64> = space
        .known()
        .iter()
        .zip(&parts.w_known)
        .map(|(d, w)| pick(*w, d.lo(), d.hi(), true))
        .collect();
    let z_lo: Vec<f64> = space
        .self_reported()
        .iter()
        .zip(&parts.w_self)
        .map(|(d, w)| pick(*w, d.lo(), d.hi(), false))
        .collect();
    let z_hi: Vec<f64> = space
        .self_reported()
        .iter()
        .zip(&parts.w_self)
        .map(|(d, w)| pick(*w, d.lo(), d.hi(), true))
        .collect();
    (x_lo, z_lo, x_hi, z_hi)
}

/// Extremal score witnesses over the whole space box (support ignored).
pub fn score_extremes(f: &ScoreFunction, space: &TypeSpace, mode: ExtremeMode) -> Result<ScoreExtremes> {
    f.validate_dims(space)?;
    match (f, mode) {
        (ScoreFunction::Linear(p), ExtremeMode::Monotone) => {
            let (x_lo, z_lo, x_hi, z_hi) = affine_extremes(p, space);
            let f_min = p.eval(&x_lo, &z_lo);
            let f_max = p.eval(&x_hi, &z_hi);
            Ok(ScoreExtremes {
                x_min: x_lo,
                x_max: x_hi,
                z_min: z_lo,
                z_max: z_hi,
                f_min,
                f_max,
            })
        }
        (ScoreFunction::Logistic(p), ExtremeMode::Monotone) => {
            // decreasing in the index: the score max sits at the index min
            let (x_lo, z_lo, x_hi, z_hi) = affine_extremes(p, space);
            let f_max = logistic_value(p.eval(&x_lo, &z_lo));
            let f_min = logistic_value(p.eval(&x_hi, &z_hi));
            Ok(ScoreExtremes {
                x_min: x_hi,
                x_max: x_lo,
                z_min: z_hi,
                z_max: z_lo,
                f_min,
                f_max,
            })
        }
        (ScoreFunction::Linear(_) | ScoreFunction::Logistic(_), ExtremeMode::Exhaustive) => {
            score_extremes(f, space, ExtremeMode::Monotone)
        }
        (ScoreFunction::PiecewiseLinear { cells, .. }, ExtremeMode::Exhaustive) => {
            let mut best: Option<ScoreExtremes> = None;
            for (region, parts) in cells {
                let corner = |max: bool| -> (Vec<f64>, f64) {
                    let joint: Vec<f64> = (0..region.dim())
                        .map(|j| {
                            let w = parts.joint_weights()[j];
                            if (w > 0.0) == max && w != 0.0 {
                                region.hi()[j]
                            } else {
                                region.lo()[j]
                            }
                        })
                        .collect();
                    let a = space.split_joint(&joint).expect("cell dims validated");
                    let v = parts.eval(&a.x, &a.z);
                    (joint, v)
                };
                let (lo_pt, lo_v) = corner(false);
                let (hi_pt, hi_v) = corner(true);
                let lo_t = space.split_joint(&lo_pt)?;
                let hi_t = space.split_joint(&hi_pt)?;
                match &mut best {
                    None => {
                        best = Some(ScoreExtremes {
                            x_min: lo_t.x,
                            z_min: lo_t.z,
                            x_max: hi_t.x,
                            z_max: hi_t.z,
                            f_min: lo_v,
                            f_max: hi_v,
                        })
                    }
                    Some(b) => {
                        if lo_v < b.f_min {
                            b.f_min = lo_v;
                            b.x_min = lo_t.x;
                            b.z_min = lo_t.z;
                        }
                        if hi_v > b.f_max {
                            b.f_max = hi_v;
                            b.x_max = hi_t.x;
                            b.z_max = hi_t.z;
                        }
                    }
                }
            }
            best.ok_or_else(|| AuditError::InvalidScore("piecewise scorer has no cells".into()))
        }
        (ScoreFunction::Table { entries }, ExtremeMode::Exhaustive) => {
            let mut best: Option<ScoreExtremes> = None;
            for (key, v) in entries {
                let joint: Vec<f64> = key.iter().map(|i| *i as f64).collect();
                let a = space.split_joint(&joint)?;
                match &mut best {
                    None => {
                        best = Some(ScoreExtremes {
                            x_min: a.x.clone(),
                            z_min: a.z.clone(),
                            x_max: a.x,
                            z_max: a.z,
                            f_min: *v,
                            f_max: *v,
                        })
                    }
                    Some(b) => {
                        if *v < b.f_min {
                            b.f_min = *v;
                            b.x_min = a.x.clone();
                            b.z_min = a.z.clone();
                        }
                        if *v > b.f_max {
                            b.f_max = *v;
                            b.x_max = a.x;
                            b.z_max = a.z;
                        }
                    }
                }
            }
            best.ok_or_else(|| AuditError::InvalidScore("empty score table".into()))
        }
        (ScoreFunction::PiecewiseLinear { .. } | ScoreFunction::Table { .. }, ExtremeMode::Monotone) => {
            Err(AuditError::Unsupported(
                "monotone extreme selection needs a linear or logistic scorer; \
                 use exhaustive mode"
                    .into(),
            ))
        }
    }
}

/// Rewrite a logistic threshold test as a linear one.
///
/// f(a) >= theta holds iff w·a + bias <= ln(1/theta - 1), so the returned
/// scorer pairs with a flipped comparison direction.
pub fn logistic_to_linear(f: &ScoreFunction, theta: f64) -> Result<(ScoreFunction, f64, Direction)> {
    let parts = match f {
        ScoreFunction::Logistic(p) => p.clone(),
        _ => {
            return Err(AuditError::InvalidScore(
                "the threshold reduction applies to logistic scorers".into(),
            ))
        }
    };
    if !(theta > 0.0 && theta < 1.0) {
        return Err(AuditError::InvalidParameter(format!(
            "logistic threshold must lie strictly inside (0, 1), got {theta}"
        )));
    }
    let theta_lin = (1.0 / theta - 1.0).ln();
    Ok((ScoreFunction::Linear(parts), theta_lin, Direction::Leq))
}
