//! Report classification, the minimum-type computation, the two audit
//! policies, and end-to-end round simulation.
//!
//! A report is a sure-lie when its prior density is zero, suspicious when it
//! is allocated but the least favorable supported self-report at the same
//! known part is not, and a sure-truth otherwise. Audit draws use systematic
//! sampling so the realized audit count respects the budget while preserving
//! each agent's marginal audit probability.

use crate::allocation::{allocate_topk, AllocationRule};
use crate::error::{AuditError, Result};
use crate::instance::InstanceSpec;
use crate::numeric::derive_seed;
use crate::scoring::{logistic_value, Direction, ScoreFunction};
use crate::types::{density, enumerate_types, AgentType, Prior};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};

const Z_SCAN_CAP: u64 = 1_000_000;
const ATOM_CHECK_CAP: u64 = 4_096;
const LATTICE_EPS: f64 = 1e-9;

/// Classification of a report given the prior and the allocation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportClass {
    SureTruth,
    SureLie,
    Suspicious,
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (u, v) in a.iter().zip(b) {
        if u < v {
            return true;
        }
        if u > v {
            return false;
        }
    }
    false
}

/// Supported self-report at `x` with the extreme score (min or max).
///
/// Ties break lexicographically on z. Under zero boxes the witness is the
/// infimum over the support closure, which may sit on a removed boundary;
/// the score value is exact either way.
pub(crate) fn extreme_supported_score(
    prior: &Prior,
    f: &ScoreFunction,
    x: &[f64],
    want_max: bool,
) -> Result<(AgentType, f64)> {
    let space = prior.space();
    if x.len() != space.d() {
        return Err(AuditError::DimensionMismatch {
            expected: space.d(),
            got: x.len(),
        });
    }
    if space.z_all_lattice() {
        let mut best: Option<(AgentType, f64)> = None;
        for z in space.z_lattice_points(Z_SCAN_CAP)? {
            let a = AgentType::new(x.to_vec(), z);
            if density(prior, &a) <= 0.0 {
                continue;
            }
            let v = f.score(&a)?;
            let better = match &best {
                None => true,
                Some((_, bv)) => {
                    if want_max {
                        v > *bv
                    } else {
                        v < *bv
                    }
                }
            };
            if better {
                best = Some((a, v));
            }
        }
        return best.ok_or_else(|| {
            AuditError::NoSupport(format!("no supported self-report at x = {x:?}"))
        });
    }
    let product = prior.as_product().ok_or_else(|| {
        AuditError::Unsupported("discrete priors need lattice self-reported domains".into())
    })?;
    let d = space.d();
    let s = space.s();
    let z_lattice: Vec<bool> = space.self_reported().iter().map(|dm| dm.is_lattice()).collect();
    // candidate corners over support fragments whose x-slab contains x
    let mut candidates: Vec<(Vec<f64>, f64)> = Vec::new();
    match f {
        ScoreFunction::Linear(parts) | ScoreFunction::Logistic(parts) => {
            // the logistic form is decreasing in the index, so the score
            // extreme sits at the opposite index extreme
            let index_max = want_max != f.is_logistic();
            for frag in product.support_fragments() {
                if !(0..d).all(|j| frag.lo()[j] <= x[j] && x[j] <= frag.hi()[j]) {
                    continue;
                }
                if let Some(z) = fragment_corner(&frag, d, s, &z_lattice, &parts.w_self, index_max)
                {
                    let t: f64 = parts.w_self.iter().zip(&z).map(|(w, v)| w * v).sum();
                    candidates.push((z, if index_max { t } else { -t }));
                }
            }
        }
        ScoreFunction::PiecewiseLinear { cells, .. } => {
            for (region, parts) in cells {
                if !(0..d).all(|j| region.lo()[j] <= x[j] && x[j] <= region.hi()[j]) {
                    continue;
                }
                for frag in product.support_fragments() {
                    if !(0..d).all(|j| frag.lo()[j] <= x[j] && x[j] <= frag.hi()[j]) {
                        continue;
                    }
                    let joint = match region.intersect(&frag) {
                        Some(b) => b,
                        None => continue,
                    };
                    if !(0..d).all(|j| joint.lo()[j] <= x[j] && x[j] <= joint.hi()[j]) {
                        continue;
                    }
                    if let Some(z) =
                        fragment_corner(&joint, d, s, &z_lattice, &parts.w_self, want_max)
                    {
                        let v = parts.eval(x, &z);
                        candidates.push((z, if want_max { v } else { -v }));
                    }
                }
            }
        }
        ScoreFunction::Table { .. } => {
            return Err(AuditError::Unsupported(
                "table scorers need lattice self-reported domains".into(),
            ))
        }
    }
    let best = candidates.into_iter().reduce(|a, b| {
        if b.1 > a.1 || (b.1 == a.1 && lex_less(&b.0, &a.0)) {
            b
        } else {
            a
        }
    });
    match best {
        Some((z, _)) => {
            let a = AgentType::new(x.to_vec(), z);
            let v = match f {
                ScoreFunction::Linear(p) => p.eval(&a.x, &a.z),
                ScoreFunction::Logistic(p) => logistic_value(p.eval(&a.x, &a.z)),
                _ => f.score(&a)?,
            };
            Ok((a, v))
        }
        None => Err(AuditError::NoSupport(format!(
            "no supported self-report at x = {x:?}"
        ))),
    }
}

/// Extreme-index corner of a fragment's self-reported block, snapping
/// lattice dimensions inward; None when a lattice range holds no point.
fn fragment_corner(
    frag: &crate::geometry::BoxRegion,
    d: usize,
    s: usize,
    z_lattice: &[bool],
    w_self: &[f64],
    maximize: bool,
) -> Option<Vec<f64>> {
    let mut z = Vec::with_capacity(s);
    for j in 0..s {
        let (mut lo, mut hi) = (frag.lo()[d + j], frag.hi()[d + j]);
        if z_lattice[j] {
            lo = (lo - LATTICE_EPS).ceil();
            hi = (hi + LATTICE_EPS).floor();
            if lo > hi {
                return None;
            }
        }
        let w = w_self[j];
        let v = if w == 0.0 {
            lo
        } else if (w > 0.0) == maximize {
            hi
        } else {
            lo
        };
        z.push(v);
    }
    Some(z)
}

/// The supported self-report minimizing the score at `x`, ties lexicographic.
pub fn minimum_type(prior: &Prior, f: &ScoreFunction, x: &[f64]) -> Result<AgentType> {
    Ok(extreme_supported_score(prior, f, x, false)?.0)
}

static TOPK_ATOM_WARNED: AtomicBool = AtomicBool::new(false);

/// Classify a report as sure-truth, sure-lie, or suspicious.
pub fn classify_report(instance: &InstanceSpec, report: &AgentType) -> Result<ReportClass> {
    let space = instance.space();
    if !space.contains(report) {
        return Err(AuditError::InvalidDomain(format!(
            "report {:?} lies outside the type space",
            report.joint()
        )));
    }
    if density(instance.prior(), report) == 0.0 {
        return Ok(ReportClass::SureLie);
    }
    match instance.allocation() {
        AllocationRule::Threshold { theta, direction } => {
            let s = instance.score_of(report)?;
            if !direction.allocates(s, *theta) {
                return Ok(ReportClass::SureTruth);
            }
            // the least favorable supported score is the max when lower
            // scores are allocated
            let want_max = *direction == Direction::Leq;
            let (_, ext) =
                extreme_supported_score(instance.prior(), instance.score_fn(), &report.x, want_max)?;
            if direction.allocates(ext, *theta) {
                Ok(ReportClass::SureTruth)
            } else {
                Ok(ReportClass::Suspicious)
            }
        }
        AllocationRule::TopK { .. } => {
            let s = instance.score_of(report)?;
            let (_, minf) =
                extreme_supported_score(instance.prior(), instance.score_fn(), &report.x, false)?;
            if s > minf {
                warn_on_score_atom(instance, minf, s);
                Ok(ReportClass::Suspicious)
            } else {
                Ok(ReportClass::SureTruth)
            }
        }
    }
}

/// The score comparison stands in for the allocation-probability comparison;
/// the two can disagree only when the prior puts no mass strictly between
/// the two scores, so surface that case instead of guessing.
fn warn_on_score_atom(instance: &InstanceSpec, min_score: f64, report_score: f64) {
    if !instance.prior().is_enumerable() || TOPK_ATOM_WARNED.load(Ordering::Relaxed) {
        return;
    }
    let types = match enumerate_types(instance.space(), instance.prior(), ATOM_CHECK_CAP) {
        Ok(t) => t,
        Err(_) => return,
    };
    let mut between = 0.0;
    for t in &types {
        if let Ok(v) = instance.score_of(t) {
            if v >= min_score && v < report_score {
                between += density(instance.prior(), t);
            }
        }
    }
    if between == 0.0 && !TOPK_ATOM_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!(
            "top-k suspicion: scores {min_score} and {report_score} carry equal \
             allocation probability under this prior; the score-based \
             classification may overstate suspicion"
        );
    }
}

/// Ordered lattice key of a report profile, for table policies.
pub fn profile_key(reports: &[AgentType]) -> Result<Vec<Vec<i64>>> {
    reports
        .iter()
        .map(|r| {
            crate::types::lattice_key(&r.joint()).ok_or_else(|| {
                AuditError::Unsupported("table policies need lattice report profiles".into())
            })
        })
        .collect()
}

/// Explicit per-profile audit probability vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolicyTable {
    pub(crate) entries: BTreeMap<Vec<Vec<i64>>, Vec<f64>>,
}

impl PolicyTable {
    pub fn from_entries(entries: BTreeMap<Vec<Vec<i64>>, Vec<f64>>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// An audit policy mapping report profiles to audit probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum AuditPolicy {
    /// Every suspicious report is audited with equal probability
    /// min(B/|G|, 1); sure-lies with probability 1 (threshold setting).
    Uniform,
    /// Each top-k report is audited with probability min(1, B/k); sure-lies
    /// with probability 1 regardless of rank (top-k setting).
    UniformK { policy_seed: u64 },
    Table(PolicyTable),
}

impl AuditPolicy {
    /// Per-agent audit probabilities for a report profile.
    pub fn probabilities(&self, instance: &InstanceSpec, reports: &[AgentType]) -> Result<Vec<f64>> {
        match self {
            AuditPolicy::Uniform => uniform_policy(instance, reports),
            AuditPolicy::UniformK { policy_seed } => {
                uniform_k_policy(instance, reports, *policy_seed)
            }
            AuditPolicy::Table(table) => {
                let key = profile_key(reports)?;
                let phi = table
                    .entries
                    .get(&key)
                    .cloned()
                    .ok_or(AuditError::PolicyTableMiss)?;
                if phi.len() != reports.len() {
                    return Err(AuditError::InvalidParameter(
                        "policy table row length does not match the profile".into(),
                    ));
                }
                if phi.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(AuditError::InvalidParameter(
                        "audit probabilities must lie in [0, 1]".into(),
                    ));
                }
                let mut spent = 0.0;
                for (r, p) in reports.iter().zip(&phi) {
                    if classify_report(instance, r)? != ReportClass::SureLie {
                        spent += p;
                    }
                }
                if spent > instance.budget() + 1e-9 {
                    return Err(AuditError::InvalidParameter(format!(
                        "policy table row spends {spent} over budget {}",
                        instance.budget()
                    )));
                }
                Ok(phi)
            }
        }
    }
}

/// Equal-treatment threshold policy: sure-lies audited surely, suspicious
/// reports with min(B/|G|, 1), sure-truths never.
pub fn uniform_policy(instance: &InstanceSpec, reports: &[AgentType]) -> Result<Vec<f64>> {
    instance.threshold_params()?;
    let classes: Vec<ReportClass> = reports
        .iter()
        .map(|r| classify_report(instance, r))
        .collect::<Result<_>>()?;
    let g = classes
        .iter()
        .filter(|c| **c == ReportClass::Suspicious)
        .count();
    let phi_suspicious = if g > 0 {
        (instance.budget() / g as f64).min(1.0)
    } else {
        0.0
    };
    Ok(classes
        .iter()
        .map(|c| match c {
            ReportClass::SureLie => 1.0,
            ReportClass::Suspicious => phi_suspicious,
            ReportClass::SureTruth => 0.0,
        })
        .collect())
}

/// Top-k policy: rank members get min(1, B/k); sure-lies get 1 at any rank.
pub fn uniform_k_policy(
    instance: &InstanceSpec,
    reports: &[AgentType],
    policy_seed: u64,
) -> Result<Vec<f64>> {
    let (k, tie_rule) = instance.topk_params()?;
    let classes: Vec<ReportClass> = reports
        .iter()
        .map(|r| classify_report(instance, r))
        .collect::<Result<_>>()?;
    let mut scored: Vec<Option<f64>> = Vec::with_capacity(reports.len());
    for (r, class) in reports.iter().zip(&classes) {
        match instance.score_of(r) {
            Ok(v) => scored.push(Some(v)),
            // an off-table sure-lie cannot be ranked; it is audited surely
            Err(AuditError::ScoreUndefined(_)) if *class == ReportClass::SureLie => {
                scored.push(None)
            }
            Err(e) => return Err(e),
        }
    }
    let ranked: Vec<usize> = (0..reports.len()).filter(|i| scored[*i].is_some()).collect();
    let mut member = vec![false; reports.len()];
    let kk = k.min(ranked.len());
    if kk >= 1 && !ranked.is_empty() {
        let sub_scores: Vec<f64> = ranked.iter().map(|i| scored[*i].unwrap()).collect();
        let sel = allocate_topk(&sub_scores, kk, tie_rule, policy_seed)?;
        for (pos, i) in ranked.iter().enumerate() {
            member[*i] = sel[pos];
        }
    }
    let phi_member = (instance.budget() / k as f64).min(1.0);
    Ok((0..reports.len())
        .map(|i| {
            if classes[i] == ReportClass::SureLie {
                1.0
            } else if member[i] {
                phi_member
            } else {
                0.0
            }
        })
        .collect())
}

/// Systematic (dependent) audit draw preserving the marginals in `phi`
/// while keeping the realized count at most the ceiling of their sum.
pub(crate) fn systematic_sample(phi: &[f64], u: f64) -> Vec<bool> {
    let mut out = Vec::with_capacity(phi.len());
    let mut cum = 0.0;
    for p in phi {
        let before = (cum - u).floor();
        cum += p;
        let after = (cum - u).floor();
        out.push(after > before);
    }
    out
}

/// Outcome of one audited allocation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub audited: Vec<bool>,
    pub caught: Vec<bool>,
    pub allocated: Vec<bool>,
    pub utilities: Vec<f64>,
}

/// Play one round: draw audits from the policy, remove caught liars, then
/// allocate (top-k refills from the next-ranked survivors).
pub fn simulate_round(
    instance: &InstanceSpec,
    true_types: &[AgentType],
    reports: &[AgentType],
    policy: &AuditPolicy,
    seed: u64,
) -> Result<RoundOutcome> {
    let n = instance.n();
    if true_types.len() != n || reports.len() != n {
        return Err(AuditError::InvalidParameter(format!(
            "expected {n} true types and {n} reports"
        )));
    }
    for (t, r) in true_types.iter().zip(reports) {
        if t.x != r.x {
            return Err(AuditError::InvalidParameter(
                "reports must keep the known part of the type".into(),
            ));
        }
    }
    let phi = policy.probabilities(instance, reports)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let audited = systematic_sample(&phi, rng.gen());
    let caught: Vec<bool> = (0..n)
        .map(|i| audited[i] && reports[i].z != true_types[i].z)
        .collect();
    let mut allocated = vec![false; n];
    match instance.allocation() {
        AllocationRule::Threshold { theta, direction } => {
            for i in 0..n {
                if !caught[i] {
                    allocated[i] = direction.allocates(instance.score_of(&reports[i])?, *theta);
                }
            }
        }
        AllocationRule::TopK { k, tie_rule } => {
            let survivors: Vec<usize> = (0..n).filter(|i| !caught[*i]).collect();
            let kk = (*k).min(survivors.len());
            if kk >= 1 {
                let scores: Vec<f64> = survivors
                    .iter()
                    .map(|i| instance.score_of(&reports[*i]))
                    .collect::<Result<_>>()?;
                let sel = allocate_topk(&scores, kk, *tie_rule, derive_seed(seed, 1))?;
                for (pos, i) in survivors.iter().enumerate() {
                    allocated[*i] = sel[pos];
                }
            }
        }
    }
    let utilities: Vec<f64> = (0..n)
        .map(|i| {
            let a = if allocated[i] { 1.0 } else { 0.0 };
            let l = if caught[i] { 1.0 } else { 0.0 };
            a * (1.0 - l) - instance.fine() * l
        })
        .collect();
    Ok(RoundOutcome {
        audited,
        caught,
        allocated,
        utilities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::TieRule;
    use crate::geometry::BoxRegion;
    use crate::types::{FeatureDomain, TypeSpace};

    fn unit_square_prior(zero_boxes: Vec<BoxRegion>) -> Prior {
        let space = TypeSpace::new(
            vec![FeatureDomain::continuous(0.0, 1.0).unwrap()],
            vec![FeatureDomain::continuous(0.0, 1.0).unwrap()],
        )
        .unwrap();
        Prior::uniform_box(space, zero_boxes).unwrap()
    }

    fn forced_honest_prior() -> Prior {
        // x = 1 admits only z = 1; x = 0 admits both self-reports
        let space = TypeSpace::new(
            vec![FeatureDomain::lattice(0, 1).unwrap()],
            vec![FeatureDomain::lattice(0, 1).unwrap()],
        )
        .unwrap();
        Prior::discrete_table(
            space,
            vec![
                (AgentType::new(vec![1.0], vec![1.0]), 0.5),
                (AgentType::new(vec![0.0], vec![0.0]), 0.25),
                (AgentType::new(vec![0.0], vec![1.0]), 0.25),
            ],
        )
        .unwrap()
    }

    fn conjunction_instance(n: usize, budget: f64, fine: f64) -> InstanceSpec {
        let space = TypeSpace::new(
            vec![FeatureDomain::lattice(0, 1).unwrap()],
            vec![FeatureDomain::lattice(0, 1).unwrap()],
        )
        .unwrap();
        let prior = Prior::uniform_box(space, vec![]).unwrap();
        let mut entries = BTreeMap::new();
        for x in 0..2i64 {
            for z in 0..2i64 {
                entries.insert(vec![x, z], if x == 1 && z == 1 { 1.0 } else { 0.0 });
            }
        }
        InstanceSpec::new(
            prior,
            ScoreFunction::table(entries).unwrap(),
            AllocationRule::Threshold {
                theta: 0.5,
                direction: Direction::Geq,
            },
            n,
            budget,
            fine,
        )
        .unwrap()
    }

    #[test]
    fn minimum_type_linear_full_support() {
        let prior = unit_square_prior(vec![]);
        let f = ScoreFunction::linear(vec![1.0], vec![1.0], 0.0);
        let m = minimum_type(&prior, &f, &[0.3]).unwrap();
        assert_eq!(m.z, vec![0.0]);
    }

    #[test]
    fn minimum_type_with_zero_box_repair() {
        // remove z in [0, 0.5] everywhere; the supported minimum moves up
        let zb = BoxRegion::new(vec![0.0, 0.0], vec![1.0, 0.5]).unwrap();
        let prior = unit_square_prior(vec![zb]);
        let f = ScoreFunction::linear(vec![1.0], vec![1.0], 0.0);
        let (m, v) = extreme_supported_score(&prior, &f, &[0.3], false).unwrap();
        assert_eq!(m.z, vec![0.5]);
        assert!((v - 0.8).abs() < 1e-12);
    }

    #[test]
    fn minimum_type_no_support_errors() {
        // x below 0.5 has every self-report removed
        let zb = BoxRegion::new(vec![0.0, 0.0], vec![0.4, 1.0]).unwrap();
        let prior = unit_square_prior(vec![zb]);
        let f = ScoreFunction::linear(vec![1.0], vec![1.0], 0.0);
        assert!(matches!(
            minimum_type(&prior, &f, &[0.3]),
            Err(AuditError::NoSupport(_))
        ));
        assert!(minimum_type(&prior, &f, &[0.7]).is_ok());
    }

    #[test]
    fn minimum_type_forced_honest() {
        let prior = forced_honest_prior();
        let f = ScoreFunction::linear(vec![0.0], vec![1.0], 0.0);
        let m = minimum_type(&prior, &f, &[1.0]).unwrap();
        assert_eq!(m.z, vec![1.0]);
        let m0 = minimum_type(&prior, &f, &[0.0]).unwrap();
        assert_eq!(m0.z, vec![0.0]);
    }

    #[test]
    fn minimum_type_table_scan() {
        let inst = conjunction_instance(2, 1.0, 0.0);
        let m = minimum_type(inst.prior(), inst.score_fn(), &[1.0]).unwrap();
        assert_eq!(m.z, vec![0.0]);
    }

    #[test]
    fn classify_threshold_cases() {
        let prior = unit_square_prior(vec![]);
        let inst = InstanceSpec::new(
            prior,
            ScoreFunction::linear(vec![1.0], vec![1.0], 0.0),
            AllocationRule::Threshold {
                theta: 1.0,
                direction: Direction::Geq,
            },
            2,
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(
            classify_report(&inst, &AgentType::new(vec![0.3], vec![0.8])).unwrap(),
            ReportClass::Suspicious
        );
        assert_eq!(
            classify_report(&inst, &AgentType::new(vec![1.0], vec![0.2])).unwrap(),
            ReportClass::SureTruth
        );
        assert_eq!(
            classify_report(&inst, &AgentType::new(vec![0.3], vec![0.2])).unwrap(),
            ReportClass::SureTruth
        );
    }

    #[test]
    fn classify_sure_lie_before_scoring() {
        let prior = forced_honest_prior();
        // the table scorer only covers supported types; the sure-lie (1, 0)
        // must classify without a lookup
        let mut entries = BTreeMap::new();
        entries.insert(vec![1, 1], 1.0);
        entries.insert(vec![0, 0], 0.0);
        entries.insert(vec![0, 1], 1.0);
        let inst = InstanceSpec::new(
            prior,
            ScoreFunction::table(entries).unwrap(),
            AllocationRule::Threshold {
                theta: 0.5,
                direction: Direction::Geq,
            },
            2,
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(
            classify_report(&inst, &AgentType::new(vec![1.0], vec![0.0])).unwrap(),
            ReportClass::SureLie
        );
    }

    #[test]
    fn uniform_policy_splits_budget() {
        let prior = unit_square_prior(vec![]);
        let inst = InstanceSpec::new(
            prior,
            ScoreFunction::linear(vec![1.0], vec![1.0], 0.0),
            AllocationRule::Threshold {
                theta: 1.0,
                direction: Direction::Geq,
            },
            3,
            1.0,
            0.0,
        )
        .unwrap();
        let sus = AgentType::new(vec![0.3], vec![0.8]);
        let phi = uniform_policy(&inst, &[sus.clone(), sus.clone(), sus]).unwrap();
        for p in &phi {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_policy_caps_and_sure_lies() {
        let prior = forced_honest_prior();
        let inst = InstanceSpec::new(
            prior,
            ScoreFunction::linear(vec![0.0], vec![1.0], 0.0),
            AllocationRule::Threshold {
                theta: 0.5,
                direction: Direction::Geq,
            },
            3,
            1.0,
            0.0,
        )
        .unwrap();
        let profile = vec![
            AgentType::new(vec![1.0], vec![0.0]),
            AgentType::new(vec![0.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![1.0]),
        ];
        let phi = AuditPolicy::Uniform.probabilities(&inst, &profile).unwrap();
        assert_eq!(phi[0], 1.0);
        assert!((phi[1] - 0.5).abs() < 1e-12);
        assert!((phi[2] - 0.5).abs() < 1e-12);
        // a big budget caps each suspicious probability at one
        let rich = InstanceSpec::new(
            inst.prior().clone(),
            inst.score_fn().clone(),
            inst.allocation().clone(),
            3,
            5.0,
            0.0,
        )
        .unwrap();
        let phi = uniform_policy(&rich, &profile).unwrap();
        assert_eq!(phi[1], 1.0);
    }

    fn topk_instance(n: usize, k: usize, budget: f64) -> InstanceSpec {
        let prior = forced_honest_prior();
        InstanceSpec::new(
            prior,
            ScoreFunction::linear(vec![0.0], vec![1.0], 0.0),
            AllocationRule::TopK {
                k,
                tie_rule: TieRule::WorstCaseForAgent,
            },
            n,
            budget,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn uniform_k_policy_ranks_and_overrides() {
        let inst = topk_instance(4, 2, 1.0);
        let profile = vec![
            AgentType::new(vec![0.0], vec![1.0]),
            AgentType::new(vec![1.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![0.0]),
            AgentType::new(vec![1.0], vec![0.0]),
        ];
        // reports 0 and 1 score 1 and hold the two slots; report 3 is a
        // sure-lie ranked below them and still gets audited surely
        let phi = uniform_k_policy(&inst, &profile, 0).unwrap();
        assert!((phi[0] - 0.5).abs() < 1e-12);
        assert!((phi[1] - 0.5).abs() < 1e-12);
        assert_eq!(phi[2], 0.0);
        assert_eq!(phi[3], 1.0);
        let spent: f64 = [phi[0], phi[1], phi[2]].iter().sum();
        assert!(spent <= inst.budget() + 1e-12);
    }

    #[test]
    fn uniform_k_policy_budget_cap() {
        let inst = topk_instance(3, 1, 4.0);
        let profile = vec![
            AgentType::new(vec![0.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![0.0]),
            AgentType::new(vec![1.0], vec![1.0]),
        ];
        let phi = uniform_k_policy(&inst, &profile, 0).unwrap();
        assert_eq!(phi.iter().filter(|p| **p == 1.0).count(), 1);
    }

    #[test]
    fn systematic_sampling_counts_and_marginals() {
        let phi = vec![0.5, 0.5, 1.0, 0.25];
        let total: f64 = phi.iter().sum();
        let mut freq = vec![0u32; phi.len()];
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let rounds = 200_000;
        for _ in 0..rounds {
            let picks = systematic_sample(&phi, rng.gen());
            let count = picks.iter().filter(|b| **b).count();
            assert!(count as f64 <= total.ceil() + 1e-9);
            assert!(count as f64 >= total.floor() - 1e-9);
            for (i, b) in picks.iter().enumerate() {
                if *b {
                    freq[i] += 1;
                }
            }
        }
        for (i, f) in freq.iter().enumerate() {
            let hat = *f as f64 / rounds as f64;
            let sigma = (phi[i] * (1.0 - phi[i]) / rounds as f64).sqrt().max(1e-9);
            assert!(
                (hat - phi[i]).abs() < 4.0 * sigma + 1e-9,
                "marginal {i}: {hat} vs {}",
                phi[i]
            );
        }
    }

    #[test]
    fn simulate_round_honest_profile() {
        let inst = conjunction_instance(2, 1.0, 0.5);
        let types = vec![
            AgentType::new(vec![1.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![0.0]),
        ];
        let out = simulate_round(&inst, &types, &types, &AuditPolicy::Uniform, 3).unwrap();
        assert!(!out.caught.iter().any(|c| *c));
        for i in 0..2 {
            let expect = if out.allocated[i] { 1.0 } else { 0.0 };
            assert_eq!(out.utilities[i], expect);
        }
        assert!(out.allocated[0]);
        assert!(!out.allocated[1]);
    }

    #[test]
    fn simulate_round_fines_caught_liar() {
        let inst = conjunction_instance(2, 1.0, 0.5);
        let truth = vec![
            AgentType::new(vec![1.0], vec![0.0]),
            AgentType::new(vec![0.0], vec![0.0]),
        ];
        let reports = vec![
            AgentType::new(vec![1.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![0.0]),
        ];
        // the only suspicious report gets phi = 1 under budget 1
        let out = simulate_round(&inst, &truth, &reports, &AuditPolicy::Uniform, 9).unwrap();
        assert!(out.audited[0] && out.caught[0]);
        assert!(!out.allocated[0]);
        assert_eq!(out.utilities[0], -0.5);
    }

    #[test]
    fn simulate_round_topk_refill() {
        let inst = topk_instance(2, 1, 2.0);
        let truth = vec![
            AgentType::new(vec![0.0], vec![0.0]),
            AgentType::new(vec![0.0], vec![0.0]),
        ];
        let reports = vec![
            AgentType::new(vec![0.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![0.0]),
        ];
        // budget 2 audits the top-1 surely; the liar is caught and the
        // honest runner-up takes the slot
        let out = simulate_round(
            &inst,
            &truth,
            &reports,
            &AuditPolicy::UniformK { policy_seed: 5 },
            13,
        )
        .unwrap();
        assert!(out.caught[0]);
        assert!(!out.allocated[0]);
        assert!(out.allocated[1]);
        assert_eq!(out.utilities[1], 1.0);
    }

    #[test]
    fn simulate_round_rejects_known_part_changes() {
        let inst = conjunction_instance(2, 1.0, 0.0);
        let truth = vec![
            AgentType::new(vec![1.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![0.0]),
        ];
        let reports = vec![
            AgentType::new(vec![0.0], vec![1.0]),
            AgentType::new(vec![0.0], vec![0.0]),
        ];
        assert!(simulate_round(&inst, &truth, &reports, &AuditPolicy::Uniform, 1).is_err());
    }
}
