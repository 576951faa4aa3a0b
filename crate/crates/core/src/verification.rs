//! Minimum incentive-to-lie computation and its error bounds.
//!
//! The threshold route computes the suspicious-set probability p_U by exact
//! box-halfspace geometry (or enumeration), feeds it through the closed-form
//! binomial sum, and propagates any quadrature uncertainty through a beta
//! integral. A Monte Carlo estimator with a Hoeffding bound covers instances
//! out of geometric reach, and closed forms cover the top-k policy and the
//! dominant-strategy variant.

use crate::allocation::{prob_in_top_k, TieRule};
use crate::audit::{classify_report, ReportClass};
use crate::error::{AuditError, Result};
use crate::geometry::{halfspace_fraction_geq, BoxRegion};
use crate::instance::InstanceSpec;
use crate::numeric::{adaptive_simpson, derive_seed, ln_beta_inc_reg, ln_choose, KahanSum};
use crate::scoring::{
    logistic_to_linear, score_extremes, Direction, ExtremeMode, ScoreFunction,
};
use crate::types::{
    density, enumerate_types, lattice_key, AgentType, FeatureDomain, Marginal, Prior, TypeSpace,
};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

const ENUM_CAP: u64 = 1_000_000;
const LATTICE_HALF_CAP: u64 = 100_000;
const X_CELL_CAP: u64 = 50_000;
const QUAD_TOL: f64 = 1e-10;
const QUAD_DEPTH: u32 = 24;
const LATTICE_EPS: f64 = 1e-9;
const MC_CHUNKS: u64 = 128;

/// Confidence parameter used when the caller does not supply one.
pub const DEFAULT_MC_DELTA: f64 = 0.01;

/// Which computation produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactClosedForm,
    MonteCarlo,
    Oracle,
    TopkClosedForm,
    Dsic,
}

/// A computed incentive bound with its provenance and uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub raw_max_gain: f64,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "p_U", skip_serializing_if = "Option::is_none")]
    pub p_suspicious: Option<f64>,
}

impl EpsilonEstimate {
    fn plain(epsilon: f64, raw_max_gain: f64, method: Method) -> Self {
        Self {
            epsilon,
            raw_max_gain,
            method,
            error_bound: None,
            confidence: None,
            samples: None,
            seed: None,
            p_suspicious: None,
        }
    }
}

fn for_each_product<T>(
    lists: &[Vec<T>],
    mut f: impl FnMut(&[&T]) -> Result<()>,
) -> Result<()> {
    if lists.iter().any(|l| l.is_empty()) {
        return Ok(());
    }
    let mut idx = vec![0usize; lists.len()];
    loop {
        let current: Vec<&T> = idx.iter().zip(lists).map(|(i, l)| &l[*i]).collect();
        f(&current)?;
        let mut d = lists.len();
        loop {
            if d == 0 {
                return Ok(());
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < lists[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Tail mass over continuous dimensions by nested adaptive quadrature with
/// an exact innermost interval. Returns (mass, error estimate).
fn tail_mass_quadrature(
    domains: &[&FeatureDomain],
    marginals: &[Marginal],
    dims: &[usize],
    bounds: &[(f64, f64)],
    w: &[f64],
    t: f64,
) -> Result<(f64, f64)> {
    if dims.is_empty() {
        return Ok((if 0.0 >= t { 1.0 } else { 0.0 }, 0.0));
    }
    if dims.len() == 1 {
        let j = dims[0];
        let (lo, hi) = bounds[0];
        let m = &marginals[j];
        let err = m.interval_abs_error(domains[j]);
        if w[j] == 0.0 {
            let mass = if 0.0 >= t {
                m.interval_mass(domains[j], lo, hi)
            } else {
                0.0
            };
            return Ok((mass, err));
        }
        let cut = t / w[j];
        let (a, b) = if w[j] > 0.0 {
            (cut.max(lo), hi)
        } else {
            (lo, cut.min(hi))
        };
        if a > b {
            return Ok((0.0, err));
        }
        return Ok((m.interval_mass(domains[j], a, b), err));
    }
    // weightless dimensions factor out exactly
    if let Some(pos) = (0..dims.len()).position(|i| w[dims[i]] == 0.0) {
        let j = dims[pos];
        let (lo, hi) = bounds[pos];
        let factor = marginals[j].interval_mass(domains[j], lo, hi);
        let mut rd = dims.to_vec();
        rd.remove(pos);
        let mut rb = bounds.to_vec();
        rb.remove(pos);
        let (inner, e) = tail_mass_quadrature(domains, marginals, &rd, &rb, w, t)?;
        return Ok((
            factor * inner,
            e + marginals[j].interval_abs_error(domains[j]),
        ));
    }
    let j = dims[0];
    let (lo, hi) = bounds[0];
    let rd = &dims[1..];
    let rb = &bounds[1..];
    let mut inner_err: f64 = 0.0;
    let mut failure: Option<AuditError> = None;
    let (val, est) = adaptive_simpson(
        |x| {
            if failure.is_some() {
                return 0.0;
            }
            match tail_mass_quadrature(domains, marginals, rd, rb, w, t - w[j] * x) {
                Ok((v, e)) => {
                    inner_err = inner_err.max(e);
                    marginals[j].point_density(domains[j], x) * v
                }
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        },
        lo,
        hi,
        QUAD_TOL,
        QUAD_DEPTH,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((
        val.clamp(0.0, 1.0),
        est + inner_err + marginals[j].interval_abs_error(domains[j]),
    ))
}

/// Unnormalized P(a in region and w.a >= t) under the product base measure.
///
/// Lattice dimensions are enumerated exactly; all-uniform continuous blocks
/// use the exact box-halfspace volume; other continuous blocks fall back to
/// quadrature. Returns (mass, error estimate).
pub(crate) fn halfspace_base_mass(
    space: &TypeSpace,
    marginals: &[Marginal],
    region: &BoxRegion,
    w: &[f64],
    t: f64,
) -> Result<(f64, f64)> {
    let domains = space.joint_domains();
    let dim = domains.len();
    if region.dim() != dim || w.len() != dim {
        return Err(AuditError::DimensionMismatch {
            expected: dim,
            got: region.dim(),
        });
    }
    let mut lattice_dims: Vec<usize> = Vec::new();
    let mut cont_dims: Vec<usize> = Vec::new();
    for j in 0..dim {
        if domains[j].is_lattice() {
            lattice_dims.push(j);
        } else {
            cont_dims.push(j);
        }
    }
    let mut value_lists: Vec<Vec<f64>> = Vec::with_capacity(lattice_dims.len());
    let mut combos: u64 = 1;
    for &j in &lattice_dims {
        let lo = (region.lo()[j] - LATTICE_EPS).ceil();
        let hi = (region.hi()[j] + LATTICE_EPS).floor();
        if lo > hi {
            return Ok((0.0, 0.0));
        }
        let count = (hi - lo) as u64 + 1;
        combos = combos.saturating_mul(count);
        if combos > LATTICE_HALF_CAP {
            return Err(AuditError::CapExceeded {
                cap: LATTICE_HALF_CAP,
                needed: combos,
            });
        }
        value_lists.push(((lo as i64)..=(hi as i64)).map(|v| v as f64).collect());
    }
    let cont_bounds: Vec<(f64, f64)> = cont_dims
        .iter()
        .map(|&j| (region.lo()[j], region.hi()[j]))
        .collect();
    let all_uniform = cont_dims
        .iter()
        .all(|&j| matches!(marginals[j], Marginal::Uniform));
    let cont_base: f64 = cont_dims
        .iter()
        .map(|&j| marginals[j].interval_mass(domains[j], region.lo()[j], region.hi()[j]))
        .product();
    let sub_box = if cont_dims.is_empty() {
        None
    } else {
        Some(BoxRegion::new(
            cont_dims.iter().map(|&j| region.lo()[j]).collect(),
            cont_dims.iter().map(|&j| region.hi()[j]).collect(),
        )?)
    };
    let wc: Vec<f64> = cont_dims.iter().map(|&j| w[j]).collect();
    let mut total = KahanSum::new();
    let mut err_total = 0.0;
    for_each_product(&value_lists, |vals| {
        let mut point_mass = 1.0;
        let mut resid = t;
        for (pos, &j) in lattice_dims.iter().enumerate() {
            let v = *vals[pos];
            point_mass *= marginals[j].interval_mass(domains[j], v, v);
            resid -= w[j] * v;
        }
        if point_mass <= 0.0 {
            return Ok(());
        }
        if cont_dims.is_empty() {
            if 0.0 >= resid {
                total.add(point_mass);
            }
            return Ok(());
        }
        if all_uniform {
            if cont_base > 0.0 {
                let frac = halfspace_fraction_geq(sub_box.as_ref().unwrap(), &wc, resid)?;
                total.add(point_mass * cont_base * frac);
            }
            return Ok(());
        }
        let (m, e) = tail_mass_quadrature(&domains, marginals, &cont_dims, &cont_bounds, w, resid)?;
        total.add(point_mass * m);
        err_total += point_mass * e;
        Ok(())
    })?;
    Ok((total.value().max(0.0), err_total))
}

/// P(w.a >= t) (or <=) under a box or product prior, with error estimate.
pub fn halfspace_box_probability_with_error(
    prior: &Prior,
    w: &[f64],
    t: f64,
    direction: Direction,
) -> Result<(f64, f64)> {
    let space = prior.space();
    if w.len() != space.dim() {
        return Err(AuditError::DimensionMismatch {
            expected: space.dim(),
            got: w.len(),
        });
    }
    let product = prior.as_product().ok_or_else(|| {
        AuditError::InvalidPrior(
            "halfspace probabilities need a box or product prior; enumerate table priors".into(),
        )
    })?;
    let (wn, tn): (Vec<f64>, f64) = match direction {
        Direction::Geq => (w.to_vec(), t),
        Direction::Leq => (w.iter().map(|v| -v).collect(), -t),
    };
    let mut total = KahanSum::new();
    let mut err = 0.0;
    for frag in product.support_fragments() {
        let (m, e) = halfspace_base_mass(space, product.marginals(), &frag, &wn, tn)?;
        total.add(m);
        err += e;
    }
    let norm = product.support_norm();
    Ok(((total.value() / norm).clamp(0.0, 1.0), err / norm))
}

/// P(w.a >= t) (or <=) under a box or product prior.
pub fn halfspace_box_probability(
    prior: &Prior,
    w: &[f64],
    t: f64,
    direction: Direction,
) -> Result<f64> {
    Ok(halfspace_box_probability_with_error(prior, w, t, direction)?.0)
}

/// A scorer cell in direction-normalized affine form: allocation holds iff
/// w.a + bias >= theta for the normalized theta returned alongside.
struct AffineCell {
    lo: Vec<f64>,
    hi: Vec<f64>,
    w: Vec<f64>,
    bias: f64,
}

fn normalized_cells(instance: &InstanceSpec) -> Result<(Vec<AffineCell>, f64)> {
    let (theta, direction) = instance.threshold_params()?;
    let space = instance.space();
    let full = space.full_box();
    let (raw_cells, theta0, dir0) = match instance.score_fn() {
        ScoreFunction::Linear(p) => (vec![(full, p.clone())], theta, direction),
        ScoreFunction::Logistic(_) => {
            let (lin, th, leq_dir) = logistic_to_linear(instance.score_fn(), theta)?;
            let parts = lin
                .linear_parts()
                .expect("the reduction yields a linear scorer")
                .clone();
            // the logistic form is decreasing, so f <= theta flips to >=
            let d0 = match direction {
                Direction::Geq => leq_dir,
                Direction::Leq => Direction::Geq,
            };
            (vec![(full, parts)], th, d0)
        }
        ScoreFunction::PiecewiseLinear { cells, .. } => {
            let zb = space.z_box();
            let d = space.d();
            for (region, _) in cells {
                for j in 0..space.s() {
                    if (region.lo()[d + j] - zb.lo()[j]).abs() > 1e-9
                        || (region.hi()[d + j] - zb.hi()[j]).abs() > 1e-9
                    {
                        return Err(AuditError::Unsupported(
                            "piecewise scorer cells must span the self-reported box under \
                             continuous priors"
                                .into(),
                        ));
                    }
                }
            }
            (
                cells.iter().map(|(r, p)| (r.clone(), p.clone())).collect(),
                theta,
                direction,
            )
        }
        ScoreFunction::Table { .. } => {
            return Err(AuditError::Unsupported(
                "table scorers need an enumerable prior".into(),
            ))
        }
    };
    let sign = if dir0 == Direction::Geq { 1.0 } else { -1.0 };
    let cells = raw_cells
        .into_iter()
        .map(|(r, p)| AffineCell {
            lo: r.lo().to_vec(),
            hi: r.hi().to_vec(),
            w: p.joint_weights().iter().map(|v| sign * v).collect(),
            bias: sign * p.bias,
        })
        .collect();
    Ok((cells, sign * theta0))
}

/// Per-dimension known-part cells from the union of fragment and scorer
/// faces; lattice dimensions become singleton cells.
fn x_cell_lists(
    space: &TypeSpace,
    frags: &[BoxRegion],
    cells: &[AffineCell],
) -> Result<Vec<Vec<(f64, f64)>>> {
    let d = space.d();
    let mut lists = Vec::with_capacity(d);
    let mut count: u64 = 1;
    for j in 0..d {
        let dom = &space.known()[j];
        let mut cuts: Vec<(f64, f64)> = Vec::new();
        if dom.is_lattice() {
            for v in dom.lattice_values() {
                cuts.push((v, v));
            }
        } else {
            let mut bps = vec![dom.lo(), dom.hi()];
            for f in frags {
                bps.push(f.lo()[j]);
                bps.push(f.hi()[j]);
            }
            for c in cells {
                bps.push(c.lo[j]);
                bps.push(c.hi[j]);
            }
            for b in bps.iter_mut() {
                *b = b.clamp(dom.lo(), dom.hi());
            }
            bps.sort_by(f64::total_cmp);
            bps.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
            for pair in bps.windows(2) {
                if pair[1] - pair[0] > 1e-12 {
                    cuts.push((pair[0], pair[1]));
                }
            }
            if cuts.is_empty() {
                cuts.push((dom.lo(), dom.hi()));
            }
        }
        count = count.saturating_mul(cuts.len().max(1) as u64);
        if count > X_CELL_CAP {
            return Err(AuditError::CapExceeded {
                cap: X_CELL_CAP,
                needed: count,
            });
        }
        lists.push(cuts);
    }
    Ok(lists)
}

fn cell_x_contains(cell: &AffineCell, space: &TypeSpace, mid: &[f64]) -> bool {
    (0..space.d()).all(|j| {
        let top = space.known()[j].hi();
        mid[j] >= cell.lo[j] - 1e-12
            && (mid[j] < cell.hi[j]
                || ((cell.hi[j] - top).abs() <= 1e-12 && mid[j] <= cell.hi[j] + 1e-12))
    })
}

fn frag_x_contains(frag: &BoxRegion, d: usize, mid: &[f64]) -> bool {
    (0..d).all(|j| frag.lo()[j] - 1e-12 <= mid[j] && mid[j] <= frag.hi()[j] + 1e-12)
}

/// Minimum of w_z . z over a fragment's self-reported block, snapping
/// lattice dimensions; None when a lattice range holds no point.
fn fragment_z_minimum(
    frag: &BoxRegion,
    d: usize,
    z_doms: &[FeatureDomain],
    wz: &[f64],
) -> Option<f64> {
    let mut total = 0.0;
    for (j, dom) in z_doms.iter().enumerate() {
        let (mut lo, mut hi) = (frag.lo()[d + j], frag.hi()[d + j]);
        if dom.is_lattice() {
            lo = (lo - LATTICE_EPS).ceil();
            hi = (hi + LATTICE_EPS).floor();
            if lo > hi {
                return None;
            }
        }
        total += if wz[j] >= 0.0 { wz[j] * lo } else { wz[j] * hi };
    }
    Some(total)
}

/// Probability that a random type is a suspicious report of itself, with an
/// error estimate from any quadrature involved.
pub fn suspicious_probability_with_error(instance: &InstanceSpec) -> Result<(f64, f64)> {
    instance.threshold_params()?;
    let prior = instance.prior();
    if prior.is_enumerable() {
        let types = enumerate_types(instance.space(), prior, ENUM_CAP)?;
        let mut p = KahanSum::new();
        for a in &types {
            if classify_report(instance, a)? == ReportClass::Suspicious {
                p.add(density(prior, a));
            }
        }
        return Ok((p.value().clamp(0.0, 1.0), 0.0));
    }
    let product = prior.as_product().ok_or_else(|| {
        AuditError::Unsupported("suspicious probability needs a product or enumerable prior".into())
    })?;
    let space = instance.space();
    let d = space.d();
    let (cells, theta_n) = normalized_cells(instance)?;
    let frags = product.support_fragments();
    let lists = x_cell_lists(space, &frags, &cells)?;
    let z_doms = space.self_reported();
    let mut alloc_mass = KahanSum::new();
    let mut sure_truth_mass = KahanSum::new();
    let mut err = 0.0;
    for_each_product(&lists, |xc| {
        let clo: Vec<f64> = xc.iter().map(|c| c.0).collect();
        let chi: Vec<f64> = xc.iter().map(|c| c.1).collect();
        let mid: Vec<f64> = xc.iter().map(|c| 0.5 * (c.0 + c.1)).collect();
        let applicable: Vec<&BoxRegion> =
            frags.iter().filter(|f| frag_x_contains(f, d, &mid)).collect();
        if applicable.is_empty() {
            return Ok(());
        }
        let cell = cells
            .iter()
            .find(|c| cell_x_contains(c, space, &mid))
            .ok_or_else(|| {
                AuditError::ScoreUndefined(format!(
                    "the scorer leaves the supported known-part region near {mid:?} unscored"
                ))
            })?;
        let mut m_c = f64::INFINITY;
        for f in &applicable {
            if let Some(v) = fragment_z_minimum(f, d, z_doms, &cell.w[d..]) {
                m_c = m_c.min(v);
            }
        }
        if !m_c.is_finite() {
            return Ok(());
        }
        let wx: Vec<f64> = cell
            .w
            .iter()
            .enumerate()
            .map(|(j, v)| if j < d { *v } else { 0.0 })
            .collect();
        for f in &applicable {
            let mut lo = clo.clone();
            let mut hi = chi.clone();
            lo.extend_from_slice(&f.lo()[d..]);
            hi.extend_from_slice(&f.hi()[d..]);
            let region = BoxRegion::new(lo, hi)?;
            let (m1, e1) =
                halfspace_base_mass(space, product.marginals(), &region, &cell.w, theta_n - cell.bias)?;
            let (m2, e2) = halfspace_base_mass(
                space,
                product.marginals(),
                &region,
                &wx,
                theta_n - cell.bias - m_c,
            )?;
            alloc_mass.add(m1);
            sure_truth_mass.add(m2);
            err += e1 + e2;
        }
        Ok(())
    })?;
    let norm = product.support_norm();
    let p = ((alloc_mass.value() - sure_truth_mass.value()) / norm).clamp(0.0, 1.0);
    Ok((p, err / norm))
}

/// Probability that a random type is a suspicious report of itself.
pub fn suspicious_probability(instance: &InstanceSpec) -> Result<f64> {
    Ok(suspicious_probability_with_error(instance)?.0)
}

/// E[min(1, B/(L+1))] for L ~ Binomial(n-1, p), in log space.
fn expected_audit_share(n: usize, budget: f64, p: f64) -> f64 {
    let m = (n - 1) as u64;
    // saturated budget: every term is exactly 1, so skip the summation and
    // keep the full-coverage case free of roundoff
    if budget >= n as f64 {
        return 1.0;
    }
    if p <= 0.0 {
        return budget.min(1.0);
    }
    if p >= 1.0 {
        return (budget / n as f64).min(1.0);
    }
    let ln_p = p.ln();
    let ln_q = (-p).ln_1p();
    let mut sum = KahanSum::new();
    for l in 0..=m {
        let ln_term = ln_choose(m, l) + l as f64 * ln_p + (m - l) as f64 * ln_q;
        sum.add(ln_term.exp() * (budget / (l as f64 + 1.0)).min(1.0));
    }
    sum.value().min(1.0)
}

/// Exact threshold incentive from the suspicious-set probability.
pub fn epsilon_exact_threshold(instance: &InstanceSpec, p_u: f64) -> Result<EpsilonEstimate> {
    instance.threshold_params()?;
    if !p_u.is_finite() || !(0.0..=1.0).contains(&p_u) {
        return Err(AuditError::InvalidParameter(format!(
            "p_U must lie in [0, 1], got {p_u}"
        )));
    }
    let share = expected_audit_share(instance.n(), instance.budget(), p_u);
    let raw = 1.0 - (1.0 + instance.fine()) * share;
    // an empty suspicious set means no report can look like a lie, so no
    // deviation gains regardless of the raw formula value
    let epsilon = if p_u == 0.0 { 0.0 } else { raw.max(0.0) };
    let mut est = EpsilonEstimate::plain(epsilon, raw, Method::ExactClosedForm);
    est.p_suspicious = Some(p_u);
    Ok(est)
}

/// Exact threshold incentive with p_U computed from the instance; any
/// quadrature uncertainty is propagated into an error bound.
pub fn epsilon_exact_threshold_auto(instance: &InstanceSpec) -> Result<EpsilonEstimate> {
    let (p, gamma) = suspicious_probability_with_error(instance)?;
    let mut est = epsilon_exact_threshold(instance, p)?;
    if gamma > 0.0 {
        est.error_bound = Some(propagated_epsilon_bound(instance, p, gamma)?);
    }
    Ok(est)
}

/// |epsilon(p) - epsilon(p')| bound for |p - p'| <= gamma.
fn propagated_epsilon_bound(instance: &InstanceSpec, p: f64, gamma: f64) -> Result<f64> {
    let n = instance.n() as u64;
    let budget = instance.budget();
    let c = instance.fine();
    let rounded = budget.round();
    if (budget - rounded).abs() <= 1e-9 && rounded >= 1.0 && (rounded as u64) < n {
        let lo = (p - gamma).max(0.0);
        let hi = (p + gamma).min(1.0);
        return epsilon_error_bound(n, rounded as u64, lo, hi - lo);
    }
    // fallback: the binomial expectation is (n-1)-Lipschitz in p
    Ok((1.0 + c) * (n.saturating_sub(1)) as f64 * gamma)
}

/// Worst-case shift of the exact threshold incentive when p_U is known only
/// to within gamma: (n-B) C(n-1, B-1) times the beta-kernel integral over
/// [p_U, p_U + gamma], evaluated as a log-space difference of regularized
/// incomplete beta values.
pub fn epsilon_error_bound(n: u64, b: u64, p_u: f64, gamma: f64) -> Result<f64> {
    if b < 1 || b >= n {
        return Err(AuditError::InvalidParameter(format!(
            "the bound needs 1 <= B < n, got B={b}, n={n}"
        )));
    }
    if !p_u.is_finite() || !gamma.is_finite() || p_u < 0.0 || gamma < 0.0 {
        return Err(AuditError::InvalidParameter(
            "p_U and gamma must be finite and nonnegative".into(),
        ));
    }
    if p_u + gamma > 1.0 + 1e-12 {
        return Err(AuditError::InvalidParameter(format!(
            "p_U + gamma must not exceed 1, got {}",
            p_u + gamma
        )));
    }
    if gamma == 0.0 {
        return Ok(0.0);
    }
    // (n-B) C(n-1, B-1) Beta(B, n-B+1) = (n-B)/n exactly, and the kernel
    // integral maps to I_{1-p}(n-B+1, B) - I_{1-p-gamma}(n-B+1, B)
    let a = (n - b + 1) as f64;
    let bb = b as f64;
    let l1 = ln_beta_inc_reg(a, bb, 1.0 - p_u)?;
    let l2 = ln_beta_inc_reg(a, bb, (1.0 - p_u - gamma).max(0.0))?;
    if l1 == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let frac = (n - b) as f64 / n as f64;
    Ok((frac * l1.exp() * -(l2 - l1).exp_m1()).max(0.0))
}

/// Worker count from AUDITGAMES_THREADS, else the machine's parallelism.
pub fn default_workers() -> usize {
    if let Ok(v) = std::env::var("AUDITGAMES_THREADS") {
        if let Ok(k) = v.trim().parse::<usize>() {
            if k >= 1 {
                return k;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn mc_chunk(instance: &InstanceSpec, count: u64, seed: u64) -> Result<(f64, u64)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = instance.n();
    let budget = instance.budget();
    let mut phi_sum = KahanSum::new();
    let mut suspicious = 0u64;
    for _ in 0..count {
        let mut l = 0u64;
        for _ in 0..n.saturating_sub(1) {
            let a = instance.prior().sample_with_rng(&mut rng)?;
            if classify_report(instance, &a)? == ReportClass::Suspicious {
                l += 1;
            }
        }
        suspicious += l;
        phi_sum.add((budget / (l + 1) as f64).min(1.0));
    }
    Ok((phi_sum.value(), suspicious))
}

/// Monte Carlo threshold incentive with a Hoeffding bound at the default
/// confidence.
pub fn epsilon_mc_threshold(
    instance: &InstanceSpec,
    samples: u64,
    seed: u64,
) -> Result<EpsilonEstimate> {
    epsilon_mc_threshold_with(instance, samples, seed, DEFAULT_MC_DELTA, default_workers())
}

/// Monte Carlo threshold incentive: averages min(1, B/(L+1)) over sampled
/// truthful opponent draws. Deterministic for a given seed regardless of the
/// worker count (fixed chunking, fixed merge order).
pub fn epsilon_mc_threshold_with(
    instance: &InstanceSpec,
    samples: u64,
    seed: u64,
    delta: f64,
    workers: usize,
) -> Result<EpsilonEstimate> {
    instance.threshold_params()?;
    if samples == 0 {
        return Err(AuditError::InvalidParameter(
            "the sample count must be positive".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AuditError::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let chunks = MC_CHUNKS.min(samples);
    let counts: Vec<u64> = (0..chunks)
        .map(|i| samples / chunks + u64::from(i < samples % chunks))
        .collect();
    let results: Mutex<Vec<Option<(f64, u64)>>> = Mutex::new(vec![None; chunks as usize]);
    let failure: Mutex<Option<AuditError>> = Mutex::new(None);
    let cursor = AtomicU64::new(0);
    let workers = workers.clamp(1, chunks as usize);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= chunks {
                    break;
                }
                match mc_chunk(instance, counts[i as usize], derive_seed(seed, i)) {
                    Ok(r) => results.lock().unwrap()[i as usize] = Some(r),
                    Err(e) => {
                        *failure.lock().unwrap() = Some(e);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let mut phi = KahanSum::new();
    let mut suspicious_total: u64 = 0;
    for slot in results.into_inner().unwrap() {
        let (phi_sum, count_sum) = slot.ok_or_else(|| {
            AuditError::Sampling("a sampling chunk never completed".into())
        })?;
        phi.add(phi_sum);
        suspicious_total += count_sum;
    }
    let n = instance.n();
    let phi_bar = phi.value() / samples as f64;
    let raw = 1.0 - (1.0 + instance.fine()) * phi_bar;
    let mut est = EpsilonEstimate::plain(raw.max(0.0), raw, Method::MonteCarlo);
    est.error_bound =
        Some((1.0 + instance.fine()) * ((2.0 / delta).ln() / (2.0 * samples as f64)).sqrt());
    est.confidence = Some(1.0 - delta);
    est.samples = Some(samples);
    est.seed = Some(seed);
    if n > 1 {
        est.p_suspicious = Some(suspicious_total as f64 / (samples as f64 * (n - 1) as f64));
    }
    Ok(est)
}

fn is_plain_uniform(prior: &Prior) -> bool {
    prior.as_product().is_some_and(|p| {
        p.zero_boxes().is_empty()
            && p.marginals().iter().all(|m| matches!(m, Marginal::Uniform))
    })
}

/// Gap bound for the top-k policy: max(0, 1 - (1+c)B/k).
pub fn uniform_k_gap_bound(instance: &InstanceSpec) -> Result<f64> {
    let (k, _) = instance.topk_params()?;
    Ok((1.0 - (1.0 + instance.fine()) * instance.budget() / k as f64).max(0.0))
}

/// Closed-form top-k incentive under the rank-based audit policy for a
/// uniform box prior, a linear or logistic scorer, and worst-case ties.
pub fn epsilon_uniform_k(instance: &InstanceSpec) -> Result<EpsilonEstimate> {
    let (k, tie_rule) = instance.topk_params()?;
    if tie_rule != TieRule::WorstCaseForAgent {
        return Err(AuditError::Unsupported(
            "the top-k closed form assumes worst-case tie handling".into(),
        ));
    }
    if !is_plain_uniform(instance.prior()) {
        return Err(AuditError::InvalidPrior(
            "the top-k closed form needs a uniform box prior without zero boxes".into(),
        ));
    }
    if !matches!(
        instance.score_fn(),
        ScoreFunction::Linear(_) | ScoreFunction::Logistic(_)
    ) {
        return Err(AuditError::Unsupported(
            "the top-k closed form covers linear and logistic scorers".into(),
        ));
    }
    let ratio = (1.0 + instance.fine()) * instance.budget() / k as f64;
    if ratio >= 1.0 {
        return Ok(EpsilonEstimate::plain(0.0, 1.0 - ratio, Method::TopkClosedForm));
    }
    let ext = score_extremes(instance.score_fn(), instance.space(), ExtremeMode::Monotone)?;
    let mut best = f64::NEG_INFINITY;
    for x_e in [&ext.x_min, &ext.x_max] {
        let hi = instance.score_of(&AgentType::new(x_e.clone(), ext.z_max.clone()))?;
        let lo = instance.score_of(&AgentType::new(x_e.clone(), ext.z_min.clone()))?;
        let v1 = prob_in_top_k(instance, hi)?;
        let v2 = prob_in_top_k(instance, lo)?;
        best = best.max(v1 * (1.0 - ratio) - v2);
    }
    Ok(EpsilonEstimate::plain(best.max(0.0), best, Method::TopkClosedForm))
}

/// Dominant-strategy top-k incentive under the rank-based audit policy:
/// max(0, 1 - (1+c) min(1, B/k)) whenever some agent can flip its rank by
/// misreporting, 0 otherwise. When no flip is possible the reported raw gain
/// is capped at 0 because the do-nothing deviation always attains 0.
pub fn epsilon_dsic_topk(instance: &InstanceSpec) -> Result<EpsilonEstimate> {
    let (k, _) = instance.topk_params()?;
    let raw = 1.0
        - (1.0 + instance.fine()) * (instance.budget() / k as f64).min(1.0);
    let flip = k < instance.n()
        && needs_audit(instance.score_fn(), instance.space(), instance.prior())?;
    let (epsilon, raw_gain) = if flip {
        (raw.max(0.0), raw)
    } else {
        (0.0, raw.min(0.0))
    };
    Ok(EpsilonEstimate::plain(epsilon, raw_gain, Method::Dsic))
}

fn nondegenerate(dom: &FeatureDomain) -> bool {
    if dom.is_lattice() {
        dom.lattice_len().map_or(true, |n| n > 1)
    } else {
        dom.width() > 0.0
    }
}

/// Whether the scorer depends on the self-reported part over the support.
/// False means truthful reporting is already an equilibrium with no audits.
pub fn needs_audit(f: &ScoreFunction, space: &TypeSpace, prior: &Prior) -> Result<bool> {
    match f {
        ScoreFunction::Linear(p) | ScoreFunction::Logistic(p) => Ok(p
            .w_self
            .iter()
            .zip(space.self_reported())
            .any(|(w, dom)| *w != 0.0 && nondegenerate(dom))),
        _ => {
            if !prior.is_enumerable() {
                return Err(AuditError::Unsupported(
                    "the z-dependence scan needs an enumerable prior for this scorer".into(),
                ));
            }
            let types = enumerate_types(space, prior, ENUM_CAP)?;
            let mut by_x: BTreeMap<Vec<i64>, (f64, f64)> = BTreeMap::new();
            for t in &types {
                let v = f.score(t)?;
                let key = lattice_key(&t.x).ok_or_else(|| {
                    AuditError::Unsupported("enumerable scans need lattice known parts".into())
                })?;
                let entry = by_x.entry(key).or_insert((v, v));
                entry.0 = entry.0.min(v);
                entry.1 = entry.1.max(v);
            }
            Ok(by_x.values().any(|(lo, hi)| hi - lo > 1e-12))
        }
    }
}

/// q = P(f(a) >= v) under the instance prior.
pub fn score_tail_probability(instance: &InstanceSpec, v: f64) -> Result<f64> {
    let prior = instance.prior();
    if prior.is_enumerable() {
        let types = enumerate_types(instance.space(), prior, ENUM_CAP)?;
        let mut q = KahanSum::new();
        for t in &types {
            if instance.score_of(t)? >= v {
                q.add(density(prior, t));
            }
        }
        return Ok(q.value().clamp(0.0, 1.0));
    }
    match instance.score_fn() {
        ScoreFunction::Linear(p) => {
            halfspace_box_probability(prior, &p.joint_weights(), v - p.bias, Direction::Geq)
        }
        ScoreFunction::Logistic(p) => {
            if v <= 0.0 {
                Ok(1.0)
            } else if v >= 1.0 {
                Ok(0.0)
            } else {
                let t = (1.0 / v - 1.0).ln() - p.bias;
                halfspace_box_probability(prior, &p.joint_weights(), t, Direction::Leq)
            }
        }
        ScoreFunction::PiecewiseLinear { cells, upper } => {
            let product = prior.as_product().ok_or_else(|| {
                AuditError::Unsupported("tail probabilities need a product prior here".into())
            })?;
            let space = instance.space();
            let lattice = space.lattice_mask();
            let mut total = KahanSum::new();
            let mut err = 0.0;
            for (region, parts) in cells {
                let w = parts.joint_weights();
                for frag in product.support_fragments() {
                    let Some(mut joint) = region.intersect(&frag) else {
                        continue;
                    };
                    // half-open dispatch: a lattice point on a shared cell
                    // face belongs to the next cell unless this is the top
                    let mut empty = false;
                    let lo = joint.lo().to_vec();
                    let mut hi = joint.hi().to_vec();
                    for j in 0..space.dim() {
                        if lattice[j]
                            && (region.hi()[j] - upper[j]).abs() > 1e-12
                            && (hi[j] - region.hi()[j]).abs() <= 1e-12
                        {
                            hi[j] = (hi[j] - LATTICE_EPS).ceil() - 1.0;
                            if hi[j] < lo[j] - LATTICE_EPS {
                                empty = true;
                            }
                        }
                    }
                    if empty {
                        continue;
                    }
                    joint = BoxRegion::new(lo, hi)?;
                    let (m, e) = halfspace_base_mass(
                        space,
                        product.marginals(),
                        &joint,
                        &w,
                        v - parts.bias,
                    )?;
                    total.add(m);
                    err += e;
                }
            }
            let _ = err;
            Ok((total.value() / product.support_norm()).clamp(0.0, 1.0))
        }
        ScoreFunction::Table { .. } => Err(AuditError::Unsupported(
            "table scorers need an enumerable prior".into(),
        )),
    }
}
