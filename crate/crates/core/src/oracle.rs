//! Exhaustive ground truth for small enumerable instances.
//!
//! Expected deviation gains are summed over every opponent realization with
//! audit randomness handled analytically through the policy probabilities,
//! so results are exact up to float rounding. The same machinery drives the
//! adversarial-profile variant and a randomized perturbation search used as
//! desk-scale optimality evidence. Enumeration is partitioned into fixed
//! index chunks merged in order, so results do not depend on worker count.

use crate::allocation::TieRule;
use crate::audit::{classify_report, AuditPolicy, PolicyTable, ReportClass};
use crate::error::{AuditError, Result};
use crate::instance::InstanceSpec;
use crate::numeric::KahanSum;
use crate::types::{density, enumerate_types, lattice_key, AgentType};
use crate::verification::{default_workers, EpsilonEstimate, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

const Z_SCAN_CAP: u64 = 1_000_000;
const ENUM_CHUNKS: u64 = 64;
const IMPROVEMENT_TOL: f64 = 1e-9;

/// Size guards for the enumeration.
#[derive(Debug, Clone, Copy)]
pub struct OracleLimits {
    pub max_support: u64,
    pub max_profiles: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_support: 4096,
            max_profiles: 2_000_000,
        }
    }
}

/// A single deviation and its expected gain over truthful opponents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationGain {
    pub true_type: AgentType,
    pub report_z: Vec<f64>,
    pub gain: f64,
}

/// An oracle estimate together with the argmax deviation, when any
/// deviation was evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct OracleOutcome {
    pub estimate: EpsilonEstimate,
    pub best: Option<DeviationGain>,
}

/// Result of the randomized perturbation search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalityCheck {
    pub passed: bool,
    pub best_found_epsilon: f64,
}

#[derive(Clone, Copy)]
enum RuleKind {
    Threshold,
    TopK { k: usize, tie_rule: TieRule },
}

/// Expected membership of a score among opponent scores under a tie rule.
fn membership<I: Iterator<Item = f64>>(v: f64, opp_scores: I, k: usize, rule: TieRule) -> f64 {
    let mut above = 0usize;
    let mut tied = 0usize;
    for s in opp_scores {
        if s > v {
            above += 1;
        } else if s == v {
            tied += 1;
        }
    }
    if k <= above {
        return 0.0;
    }
    let free = k - above;
    match rule {
        TieRule::WorstCaseForAgent => {
            if free >= tied + 1 {
                1.0
            } else {
                0.0
            }
        }
        TieRule::BestCaseForAgent => 1.0,
        TieRule::UniformRandom => {
            if free >= tied + 1 {
                1.0
            } else {
                free as f64 / (tied + 1) as f64
            }
        }
    }
}

struct Deviation {
    true_idx: usize,
    report_z: Vec<f64>,
    key: Vec<i64>,
    class: ReportClass,
    score: Option<f64>,
    threshold_alloc: bool,
}

struct ReportEntry {
    key: Vec<i64>,
    class: ReportClass,
    score: Option<f64>,
}

struct Ground<'a> {
    instance: &'a InstanceSpec,
    rule: RuleKind,
    support: Vec<AgentType>,
    supp_keys: Vec<Vec<i64>>,
    weights: Vec<f64>,
    classes: Vec<ReportClass>,
    scores: Vec<f64>,
    alloc_true: Vec<bool>,
    reportables: Vec<ReportEntry>,
    devs: Vec<Deviation>,
}

impl<'a> Ground<'a> {
    fn new(instance: &'a InstanceSpec, limits: &OracleLimits) -> Result<Self> {
        let space = instance.space();
        let prior = instance.prior();
        let rule = if instance.is_threshold() {
            RuleKind::Threshold
        } else {
            let (k, tie_rule) = instance.topk_params()?;
            RuleKind::TopK { k, tie_rule }
        };
        let support = enumerate_types(space, prior, limits.max_support)?;
        let mut supp_keys = Vec::with_capacity(support.len());
        let mut weights = Vec::with_capacity(support.len());
        let mut classes = Vec::with_capacity(support.len());
        let mut scores = Vec::with_capacity(support.len());
        let mut alloc_true = Vec::with_capacity(support.len());
        for a in &support {
            let key = lattice_key(&a.joint()).ok_or_else(|| {
                AuditError::Unsupported("the oracle needs integer lattice type spaces".into())
            })?;
            supp_keys.push(key);
            weights.push(density(prior, a));
            classes.push(classify_report(instance, a)?);
            let v = instance.score_of(a)?;
            scores.push(v);
            alloc_true.push(match rule {
                RuleKind::Threshold => instance.threshold_allocates(v)?,
                RuleKind::TopK { .. } => false,
            });
        }
        // every reportable (supported known part, any lattice self part)
        let zs = space.z_lattice_points(Z_SCAN_CAP)?;
        let mut seen_x: BTreeSet<Vec<i64>> = BTreeSet::new();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        for a in &support {
            let xk = lattice_key(&a.x).expect("checked above");
            if seen_x.insert(xk) {
                xs.push(a.x.clone());
            }
        }
        let mut reportables = Vec::new();
        let mut devs = Vec::new();
        let mut info: BTreeMap<Vec<i64>, (ReportClass, Option<f64>)> = BTreeMap::new();
        for x in &xs {
            for z in &zs {
                let report = AgentType::new(x.clone(), z.clone());
                let key = lattice_key(&report.joint()).expect("lattice space");
                let class = classify_report(instance, &report)?;
                let score = match instance.score_of(&report) {
                    Ok(v) => Some(v),
                    Err(AuditError::ScoreUndefined(_)) if class == ReportClass::SureLie => None,
                    Err(e) => return Err(e),
                };
                reportables.push(ReportEntry {
                    key: key.clone(),
                    class,
                    score,
                });
                info.insert(key, (class, score));
            }
        }
        for (true_idx, a) in support.iter().enumerate() {
            let true_z_key = lattice_key(&a.z).expect("lattice space");
            for z in &zs {
                if lattice_key(z).expect("lattice values") == true_z_key {
                    continue;
                }
                let report = AgentType::new(a.x.clone(), z.clone());
                let key = lattice_key(&report.joint()).expect("lattice space");
                let (class, score) = info[&key];
                devs.push(Deviation {
                    true_idx,
                    report_z: z.clone(),
                    key,
                    class,
                    score,
                    threshold_alloc: match (rule, score) {
                        (RuleKind::Threshold, Some(v)) => instance.threshold_allocates(v)?,
                        _ => false,
                    },
                });
            }
        }
        Ok(Self {
            instance,
            rule,
            support,
            supp_keys,
            weights,
            classes,
            scores,
            alloc_true,
            reportables,
            devs,
        })
    }

    fn deviator_slots(&self, policy: &AuditPolicy) -> Vec<usize> {
        match policy {
            // symmetric policies make every slot equivalent
            AuditPolicy::Uniform | AuditPolicy::UniformK { .. } => vec![0],
            AuditPolicy::Table(_) => (0..self.instance.n()).collect(),
        }
    }

    /// Audit probability and utility for the deviator's (lying) report.
    fn lie_utility(
        &self,
        policy: &AuditPolicy,
        slot: usize,
        class: ReportClass,
        score: Option<f64>,
        threshold_alloc: bool,
        opp_susp: usize,
        opp_scores: &[f64],
        table_row: Option<&[f64]>,
    ) -> Result<f64> {
        let budget = self.instance.budget();
        let fine = self.instance.fine();
        if let AuditPolicy::UniformK { .. } = policy {
            let RuleKind::TopK { k, tie_rule } = self.rule else {
                return Err(AuditError::Unsupported(
                    "the rank-based policy needs a top-k allocation rule".into(),
                ));
            };
            if class == ReportClass::SureLie {
                return Ok(-fine);
            }
            let q = (budget / k as f64).min(1.0);
            let m = score.map_or(0.0, |v| {
                membership(v, opp_scores.iter().copied(), k, tie_rule)
            });
            return Ok(m * (1.0 - (1.0 + fine) * q));
        }
        let phi = match policy {
            AuditPolicy::Uniform => match class {
                ReportClass::SureLie => 1.0,
                ReportClass::Suspicious => (budget / (opp_susp + 1) as f64).min(1.0),
                ReportClass::SureTruth => 0.0,
            },
            AuditPolicy::Table(_) => {
                let row = table_row.expect("table rows are resolved by the caller");
                row[slot]
            }
            AuditPolicy::UniformK { .. } => unreachable!("handled above"),
        };
        match self.rule {
            RuleKind::Threshold => {
                let alloc = if threshold_alloc { 1.0 } else { 0.0 };
                Ok(alloc * (1.0 - phi) - fine * phi)
            }
            RuleKind::TopK { k, tie_rule } => {
                let m = score.map_or(0.0, |v| {
                    membership(v, opp_scores.iter().copied(), k, tie_rule)
                });
                Ok(-fine * phi + (1.0 - phi) * m)
            }
        }
    }

    /// Validates and returns a table row for the ordered report profile.
    fn table_row<'t>(
        &self,
        table: &'t PolicyTable,
        key: &[Vec<i64>],
        classes: &[ReportClass],
    ) -> Result<&'t Vec<f64>> {
        let row = table.entries.get(key).ok_or(AuditError::PolicyTableMiss)?;
        if row.len() != key.len() {
            return Err(AuditError::InvalidParameter(format!(
                "policy row length {} does not match the agent count {}",
                row.len(),
                key.len()
            )));
        }
        let mut spent = 0.0;
        for (phi, class) in row.iter().zip(classes) {
            if !(0.0..=1.0).contains(phi) {
                return Err(AuditError::InvalidParameter(format!(
                    "audit probabilities must lie in [0, 1], got {phi}"
                )));
            }
            if *class != ReportClass::SureLie {
                spent += phi;
            }
        }
        if spent > self.instance.budget() + 1e-9 {
            return Err(AuditError::InvalidParameter(format!(
                "policy row spends {spent} over non-sure-lie reports, exceeding the budget"
            )));
        }
        Ok(row)
    }
}

fn checked_profile_count(base: usize, exponent: usize, cap: u64) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..exponent {
        total = total
            .checked_mul(base as u64)
            .filter(|t| *t <= cap)
            .ok_or(AuditError::CapExceeded {
                cap,
                needed: u64::MAX,
            })?;
    }
    Ok(total)
}

fn parallel_chunk_map<T: Send>(
    chunks: u64,
    workers: usize,
    f: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let results: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..chunks).map(|_| None).collect());
    let cursor = AtomicU64::new(0);
    let workers = workers.clamp(1, chunks.max(1) as usize);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= chunks {
                    break;
                }
                let r = f(i);
                let stop = r.is_err();
                results.lock().unwrap()[i as usize] = Some(r);
                if stop {
                    break;
                }
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| {
            slot.unwrap_or_else(|| {
                Err(AuditError::Sampling(
                    "an enumeration chunk never completed".into(),
                ))
            })
        })
        .collect()
}

/// Expected gains for every deviation at every deviator slot, summed over
/// all truthful opponent realizations. Indexed slot-major.
fn bnic_gains(g: &Ground, policy: &AuditPolicy, limits: &OracleLimits) -> Result<Vec<f64>> {
    let n = g.instance.n();
    let base = g.support.len();
    let total = checked_profile_count(base, n - 1, limits.max_profiles)?;
    let slots = g.deviator_slots(policy);
    let dev_count = g.devs.len();
    let chunks = ENUM_CHUNKS.min(total).max(1);
    let is_topk = matches!(g.rule, RuleKind::TopK { .. });
    let chunk_sums = parallel_chunk_map(chunks, default_workers(), |ci| {
        let start = ci * total / chunks;
        let end = (ci + 1) * total / chunks;
        let mut gains = vec![KahanSum::new(); slots.len() * dev_count];
        let mut digits = vec![0usize; n - 1];
        let mut opp_scores = vec![0.0f64; n - 1];
        let mut utruth = vec![0.0f64; base];
        let mut key_scaffold: Vec<Vec<i64>> = vec![Vec::new(); n];
        for idx in start..end {
            let mut rest = idx;
            for digit in digits.iter_mut() {
                *digit = (rest % base as u64) as usize;
                rest /= base as u64;
            }
            let mut prob = 1.0;
            let mut opp_susp = 0usize;
            for (pos, &ti) in digits.iter().enumerate() {
                prob *= g.weights[ti];
                opp_scores[pos] = g.scores[ti];
                if g.classes[ti] == ReportClass::Suspicious {
                    opp_susp += 1;
                }
            }
            if is_topk {
                if let RuleKind::TopK { k, tie_rule } = g.rule {
                    for (ti, slot_val) in utruth.iter_mut().enumerate() {
                        *slot_val =
                            membership(g.scores[ti], opp_scores.iter().copied(), k, tie_rule);
                    }
                }
            }
            for (si, &slot) in slots.iter().enumerate() {
                let table = match policy {
                    AuditPolicy::Table(t) => {
                        let mut pos = 0usize;
                        for (j, entry) in key_scaffold.iter_mut().enumerate() {
                            if j != slot {
                                *entry = g.supp_keys[digits[pos]].clone();
                                pos += 1;
                            }
                        }
                        Some(t)
                    }
                    _ => None,
                };
                for (di, dev) in g.devs.iter().enumerate() {
                    let u_truth = if is_topk {
                        utruth[dev.true_idx]
                    } else if g.alloc_true[dev.true_idx] {
                        1.0
                    } else {
                        0.0
                    };
                    let row = match table {
                        Some(t) => {
                            key_scaffold[slot] = dev.key.clone();
                            let mut classes: Vec<ReportClass> = Vec::with_capacity(n);
                            let mut pos = 0usize;
                            for j in 0..n {
                                if j == slot {
                                    classes.push(dev.class);
                                } else {
                                    classes.push(g.classes[digits[pos]]);
                                    pos += 1;
                                }
                            }
                            Some(g.table_row(t, &key_scaffold, &classes)?.clone())
                        }
                        None => None,
                    };
                    let u_lie = g.lie_utility(
                        policy,
                        slot,
                        dev.class,
                        dev.score,
                        dev.threshold_alloc,
                        opp_susp,
                        &opp_scores,
                        row.as_deref(),
                    )?;
                    gains[si * dev_count + di].add(prob * (u_lie - u_truth));
                }
            }
        }
        Ok(gains.into_iter().map(|k| k.value()).collect::<Vec<f64>>())
    })?;
    let mut merged = vec![KahanSum::new(); slots.len() * dev_count];
    for chunk in chunk_sums {
        for (m, v) in merged.iter_mut().zip(chunk) {
            m.add(v);
        }
    }
    Ok(merged.into_iter().map(|k| k.value()).collect())
}

/// Exact expected gain of one deviation against truthful opponents, for the
/// agent in the first slot.
pub fn oracle_expected_gain(
    instance: &InstanceSpec,
    policy: &AuditPolicy,
    true_type: &AgentType,
    report_z: &[f64],
) -> Result<f64> {
    oracle_expected_gain_with_limits(instance, policy, true_type, report_z, &OracleLimits::default())
}

pub fn oracle_expected_gain_with_limits(
    instance: &InstanceSpec,
    policy: &AuditPolicy,
    true_type: &AgentType,
    report_z: &[f64],
    limits: &OracleLimits,
) -> Result<f64> {
    let g = Ground::new(instance, limits)?;
    let true_key = lattice_key(&true_type.joint()).ok_or_else(|| {
        AuditError::InvalidParameter("the oracle needs lattice-valued types".into())
    })?;
    let true_idx = g
        .supp_keys
        .iter()
        .position(|k| *k == true_key)
        .ok_or_else(|| {
            AuditError::InvalidParameter("the true type must have positive prior mass".into())
        })?;
    let z_key = lattice_key(report_z).ok_or_else(|| {
        AuditError::InvalidParameter("the report must be lattice-valued".into())
    })?;
    if z_key == lattice_key(&true_type.z).expect("lattice support") {
        return Ok(0.0);
    }
    if !instance
        .space()
        .contains(&AgentType::new(true_type.x.clone(), report_z.to_vec()))
    {
        return Err(AuditError::InvalidDomain(
            "the report lies outside the type space".into(),
        ));
    }
    let di = g
        .devs
        .iter()
        .position(|d| d.true_idx == true_idx && d.key[instance.space().d()..] == z_key[..])
        .ok_or_else(|| {
            AuditError::InvalidParameter("the report is not an enumerable deviation".into())
        })?;
    let gains = bnic_gains(&g, policy, limits)?;
    Ok(gains[di])
}

/// Maximum expected deviation gain over all types and reports, clamped at 0,
/// with the argmax deviation.
pub fn oracle_epsilon(instance: &InstanceSpec, policy: &AuditPolicy) -> Result<OracleOutcome> {
    oracle_epsilon_with_limits(instance, policy, &OracleLimits::default())
}

pub fn oracle_epsilon_with_limits(
    instance: &InstanceSpec,
    policy: &AuditPolicy,
    limits: &OracleLimits,
) -> Result<OracleOutcome> {
    let g = Ground::new(instance, limits)?;
    let gains = bnic_gains(&g, policy, limits)?;
    let dev_count = g.devs.len();
    let mut best: Option<(usize, f64)> = None;
    for (i, gain) in gains.iter().enumerate() {
        if best.map_or(true, |(_, b)| *gain > b) {
            best = Some((i % dev_count.max(1), *gain));
        }
    }
    let mut estimate = EpsilonEstimate {
        epsilon: 0.0,
        raw_max_gain: 0.0,
        method: Method::Oracle,
        error_bound: None,
        confidence: None,
        samples: None,
        seed: None,
        p_suspicious: None,
    };
    let best = best.map(|(di, gain)| {
        estimate.raw_max_gain = gain;
        estimate.epsilon = gain.max(0.0);
        let dev = &g.devs[di];
        DeviationGain {
            true_type: g.support[dev.true_idx].clone(),
            report_z: dev.report_z.clone(),
            gain,
        }
    });
    Ok(OracleOutcome { estimate, best })
}

/// Maximum deterministic gain over adversarial opponent report profiles:
/// reports are taken at face value (an opponent's report is never treated
/// as caught, since its true type is unspecified).
pub fn oracle_dsic_epsilon(instance: &InstanceSpec, policy: &AuditPolicy) -> Result<EpsilonEstimate> {
    oracle_dsic_epsilon_with_limits(instance, policy, &OracleLimits::default())
}

pub fn oracle_dsic_epsilon_with_limits(
    instance: &InstanceSpec,
    policy: &AuditPolicy,
    limits: &OracleLimits,
) -> Result<EpsilonEstimate> {
    let g = Ground::new(instance, limits)?;
    let n = instance.n();
    let base = g.reportables.len();
    let total = checked_profile_count(base, n - 1, limits.max_profiles)?;
    let slots = g.deviator_slots(policy);
    let chunks = ENUM_CHUNKS.min(total).max(1);
    let chunk_maxima = parallel_chunk_map(chunks, default_workers(), |ci| {
        let start = ci * total / chunks;
        let end = (ci + 1) * total / chunks;
        let mut digits = vec![0usize; n - 1];
        let mut key_scaffold: Vec<Vec<i64>> = vec![Vec::new(); n];
        let mut best = f64::NEG_INFINITY;
        let mut opp_scores: Vec<f64> = Vec::with_capacity(n - 1);
        for idx in start..end {
            let mut rest = idx;
            for digit in digits.iter_mut() {
                *digit = (rest % base as u64) as usize;
                rest /= base as u64;
            }
            let mut opp_susp = 0usize;
            opp_scores.clear();
            for &ri in digits.iter() {
                let entry = &g.reportables[ri];
                if entry.class == ReportClass::Suspicious {
                    opp_susp += 1;
                }
                if let Some(v) = entry.score {
                    opp_scores.push(v);
                }
            }
            for &slot in slots.iter() {
                let table = match policy {
                    AuditPolicy::Table(t) => {
                        let mut pos = 0usize;
                        for (j, entry) in key_scaffold.iter_mut().enumerate() {
                            if j != slot {
                                *entry = g.reportables[digits[pos]].key.clone();
                                pos += 1;
                            }
                        }
                        Some(t)
                    }
                    _ => None,
                };
                for dev in g.devs.iter() {
                    let u_truth = match g.rule {
                        RuleKind::Threshold => {
                            if g.alloc_true[dev.true_idx] {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        RuleKind::TopK { k, tie_rule } => membership(
                            g.scores[dev.true_idx],
                            opp_scores.iter().copied(),
                            k,
                            tie_rule,
                        ),
                    };
                    let row = match table {
                        Some(t) => {
                            key_scaffold[slot] = dev.key.clone();
                            let mut classes: Vec<ReportClass> = Vec::with_capacity(n);
                            let mut pos = 0usize;
                            for j in 0..n {
                                if j == slot {
                                    classes.push(dev.class);
                                } else {
                                    classes.push(g.reportables[digits[pos]].class);
                                    pos += 1;
                                }
                            }
                            Some(g.table_row(t, &key_scaffold, &classes)?.clone())
                        }
                        None => None,
                    };
                    let u_lie = g.lie_utility(
                        policy,
                        slot,
                        dev.class,
                        dev.score,
                        dev.threshold_alloc,
                        opp_susp,
                        &opp_scores,
                        row.as_deref(),
                    )?;
                    let gain = u_lie - u_truth;
                    if gain > best {
                        best = gain;
                    }
                }
            }
        }
        Ok(best)
    })?;
    let mut raw = f64::NEG_INFINITY;
    for m in chunk_maxima {
        if m > raw {
            raw = m;
        }
    }
    if !raw.is_finite() {
        raw = 0.0;
    }
    Ok(EpsilonEstimate {
        epsilon: raw.max(0.0),
        raw_max_gain: raw,
        method: Method::Oracle,
        error_bound: None,
        confidence: None,
        samples: None,
        seed: None,
        p_suspicious: None,
    })
}

/// The ordered report profiles the oracle can reach: one arbitrary
/// reportable in some slot, truthful supported types elsewhere.
fn reachable_rows(g: &Ground) -> Vec<Vec<AgentType>> {
    let n = g.instance.n();
    let mut rows: BTreeMap<Vec<Vec<i64>>, Vec<AgentType>> = BTreeMap::new();
    let base = g.support.len();
    let mut digits = vec![0usize; n.saturating_sub(1)];
    loop {
        for slot in 0..n {
            for entry in &g.reportables {
                let Some(report_type) = report_entry_type(g, entry) else {
                    continue;
                };
                let mut reports: Vec<AgentType> = Vec::with_capacity(n);
                let mut key: Vec<Vec<i64>> = Vec::with_capacity(n);
                let mut pos = 0usize;
                for j in 0..n {
                    if j == slot {
                        reports.push(report_type.clone());
                        key.push(entry.key.clone());
                    } else {
                        reports.push(g.support[digits[pos]].clone());
                        key.push(g.supp_keys[digits[pos]].clone());
                        pos += 1;
                    }
                }
                rows.entry(key).or_insert(reports);
            }
        }
        let mut d = digits.len();
        loop {
            if d == 0 {
                return rows.into_values().collect();
            }
            d -= 1;
            digits[d] += 1;
            if digits[d] < base {
                break;
            }
            digits[d] = 0;
        }
    }
}

fn report_entry_type(g: &Ground, entry: &ReportEntry) -> Option<AgentType> {
    let d = g.instance.space().d();
    let x: Vec<f64> = entry.key[..d].iter().map(|v| *v as f64).collect();
    let z: Vec<f64> = entry.key[d..].iter().map(|v| *v as f64).collect();
    let a = AgentType::new(x, z);
    g.instance.space().contains(&a).then_some(a)
}

/// Randomized search for a feasible policy beating the given one: shifts
/// audit mass between suspicious slots of each reachable profile row and
/// re-evaluates the oracle. Passes when no trial lowers epsilon by more
/// than 1e-9.
pub fn perturbation_optimality_check(
    instance: &InstanceSpec,
    policy: &AuditPolicy,
    trials: u32,
    magnitude: f64,
    seed: u64,
) -> Result<OptimalityCheck> {
    perturbation_optimality_check_with_limits(
        instance,
        policy,
        trials,
        magnitude,
        seed,
        &OracleLimits::default(),
    )
}

pub fn perturbation_optimality_check_with_limits(
    instance: &InstanceSpec,
    policy: &AuditPolicy,
    trials: u32,
    magnitude: f64,
    seed: u64,
    limits: &OracleLimits,
) -> Result<OptimalityCheck> {
    if trials == 0 {
        return Err(AuditError::InvalidParameter(
            "the perturbation search needs at least one trial".into(),
        ));
    }
    if !(magnitude > 0.0 && magnitude <= 1.0) {
        return Err(AuditError::InvalidParameter(format!(
            "the shift magnitude must lie in (0, 1], got {magnitude}"
        )));
    }
    let baseline = oracle_epsilon_with_limits(instance, policy, limits)?
        .estimate
        .epsilon;
    let g = Ground::new(instance, limits)?;
    let rows = reachable_rows(&g);
    struct Row {
        key: Vec<Vec<i64>>,
        phi: Vec<f64>,
        suspicious: Vec<usize>,
    }
    let mut materialized = Vec::with_capacity(rows.len());
    for reports in &rows {
        let phi = policy.probabilities(instance, reports)?;
        let mut suspicious = Vec::new();
        for (j, r) in reports.iter().enumerate() {
            if classify_report(instance, r)? == ReportClass::Suspicious {
                suspicious.push(j);
            }
        }
        materialized.push(Row {
            key: crate::audit::profile_key(reports)?,
            phi,
            suspicious,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best_found = baseline;
    for _ in 0..trials {
        let mut entries: BTreeMap<Vec<Vec<i64>>, Vec<f64>> = BTreeMap::new();
        for row in &materialized {
            let mut phi = row.phi.clone();
            if row.suspicious.len() >= 2 {
                let from = row.suspicious[rng.gen_range(0..row.suspicious.len())];
                let to = loop {
                    let cand = row.suspicious[rng.gen_range(0..row.suspicious.len())];
                    if cand != from {
                        break cand;
                    }
                };
                let delta = magnitude * phi[from].min(1.0 - phi[to]);
                phi[from] -= delta;
                phi[to] += delta;
            }
            entries.insert(row.key.clone(), phi);
        }
        let candidate = AuditPolicy::Table(PolicyTable::from_entries(entries));
        let eps = oracle_epsilon_with_limits(instance, &candidate, limits)?
            .estimate
            .epsilon;
        if eps < best_found {
            best_found = eps;
        }
    }
    Ok(OptimalityCheck {
        passed: best_found >= baseline - IMPROVEMENT_TOL,
        best_found_epsilon: best_found,
    })
}

/// A deliberately lopsided but budget-feasible table policy: in every
/// reachable profile row, the whole audit budget sits on the suspicious
/// slot whose report key is lexicographically smallest (lowest slot on
/// content ties); sure lies keep probability 1.
pub fn skewed_table_policy(instance: &InstanceSpec) -> Result<AuditPolicy> {
    skewed_table_policy_with_limits(instance, &OracleLimits::default())
}

pub fn skewed_table_policy_with_limits(
    instance: &InstanceSpec,
    limits: &OracleLimits,
) -> Result<AuditPolicy> {
    let g = Ground::new(instance, limits)?;
    let rows = reachable_rows(&g);
    let mut entries: BTreeMap<Vec<Vec<i64>>, Vec<f64>> = BTreeMap::new();
    for reports in &rows {
        let key = crate::audit::profile_key(reports)?;
        let mut phi = vec![0.0; reports.len()];
        let mut target: Option<usize> = None;
        for (j, r) in reports.iter().enumerate() {
            match classify_report(instance, r)? {
                ReportClass::SureLie => phi[j] = 1.0,
                ReportClass::Suspicious => {
                    let better = match target {
                        None => true,
                        Some(t) => key[j] < key[t],
                    };
                    if better {
                        target = Some(j);
                    }
                }
                ReportClass::SureTruth => {}
            }
        }
        if let Some(t) = target {
            phi[t] = instance.budget().min(1.0);
        }
        entries.insert(key, phi);
    }
    Ok(AuditPolicy::Table(PolicyTable::from_entries(entries)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::AllocationRule;
    use crate::scoring::{Direction, ScoreFunction};
    use crate::types::{FeatureDomain, Prior, TypeSpace};
    use crate::verification::{epsilon_dsic_topk, epsilon_exact_threshold_auto};

    fn binary_space() -> TypeSpace {
        TypeSpace::new(
            vec![FeatureDomain::lattice(0, 1).unwrap()],
            vec![FeatureDomain::lattice(0, 1).unwrap()],
        )
        .unwrap()
    }

    fn conjunction_instance(n: usize, budget: f64, fine: f64) -> InstanceSpec {
        let prior = Prior::uniform_box(binary_space(), vec![]).unwrap();
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
    fn expected_gain_hand_values() {
        let inst = conjunction_instance(2, 1.0, 0.0);
        let truth = AgentType::new(vec![1.0], vec![0.0]);
        let gain =
            oracle_expected_gain(&inst, &AuditPolicy::Uniform, &truth, &[1.0]).unwrap();
        assert!((gain - 0.125).abs() < 1e-12, "got {gain}");
        // reporting the truth is the null deviation
        let gain = oracle_expected_gain(&inst, &AuditPolicy::Uniform, &truth, &[0.0]).unwrap();
        assert_eq!(gain, 0.0);
        // a fine this harsh swamps the allocation value
        let harsh = conjunction_instance(2, 1.0, 10.0);
        let gain =
            oracle_expected_gain(&harsh, &AuditPolicy::Uniform, &truth, &[1.0]).unwrap();
        assert!(gain < 0.0, "got {gain}");
        // a sure-truth report from another type gains nothing
        let low = AgentType::new(vec![0.0], vec![0.0]);
        let gain = oracle_expected_gain(&inst, &AuditPolicy::Uniform, &low, &[1.0]).unwrap();
        assert_eq!(gain, 0.0);
    }

    #[test]
    fn oracle_epsilon_matches_closed_form() {
        let inst = conjunction_instance(2, 1.0, 0.0);
        let out = oracle_epsilon(&inst, &AuditPolicy::Uniform).unwrap();
        assert!((out.estimate.epsilon - 0.125).abs() < 1e-12);
        let best = out.best.unwrap();
        assert_eq!(best.true_type, AgentType::new(vec![1.0], vec![0.0]));
        assert_eq!(best.report_z, vec![1.0]);
        let closed = epsilon_exact_threshold_auto(&inst).unwrap();
        assert!((out.estimate.epsilon - closed.epsilon).abs() < 1e-12);
    }

    #[test]
    fn full_budget_deters_everyone() {
        let inst = conjunction_instance(2, 2.0, 0.0);
        let out = oracle_epsilon(&inst, &AuditPolicy::Uniform).unwrap();
        assert_eq!(out.estimate.epsilon, 0.0);
    }

    #[test]
    fn uniform_survives_perturbation_search() {
        let inst = conjunction_instance(2, 1.0, 0.0);
        let check =
            perturbation_optimality_check(&inst, &AuditPolicy::Uniform, 50, 0.5, 7).unwrap();
        assert!(check.passed, "best found {}", check.best_found_epsilon);
        assert!(perturbation_optimality_check(&inst, &AuditPolicy::Uniform, 0, 0.5, 7).is_err());
        assert!(perturbation_optimality_check(&inst, &AuditPolicy::Uniform, 5, 0.0, 7).is_err());
    }

    #[test]
    fn skewed_policy_is_worse_and_fails_the_search() {
        let inst = conjunction_instance(2, 1.0, 0.0);
        let skew = skewed_table_policy(&inst).unwrap();
        let uniform_eps = oracle_epsilon(&inst, &AuditPolicy::Uniform)
            .unwrap()
            .estimate
            .epsilon;
        let skew_eps = oracle_epsilon(&inst, &skew).unwrap().estimate.epsilon;
        assert!(
            skew_eps > uniform_eps + 1e-9,
            "skew {skew_eps} vs uniform {uniform_eps}"
        );
        let check = perturbation_optimality_check(&inst, &skew, 60, 0.5, 11).unwrap();
        assert!(!check.passed);
        assert!(check.best_found_epsilon < skew_eps - 1e-9);
    }

    fn linear_topk_instance(n: usize, k: usize, budget: f64, fine: f64) -> InstanceSpec {
        let prior = Prior::uniform_box(binary_space(), vec![]).unwrap();
        InstanceSpec::new(
            prior,
            ScoreFunction::linear(vec![1.0], vec![1.0], 0.0),
            AllocationRule::TopK {
                k,
                tie_rule: TieRule::WorstCaseForAgent,
            },
            n,
            budget,
            fine,
        )
        .unwrap()
    }

    #[test]
    fn dsic_oracle_matches_closed_form() {
        let inst = linear_topk_instance(3, 2, 1.0, 0.0);
        let policy = AuditPolicy::UniformK { policy_seed: 0 };
        let dsic = oracle_dsic_epsilon(&inst, &policy).unwrap();
        assert!((dsic.epsilon - 0.5).abs() < 1e-12, "got {}", dsic.epsilon);
        let closed = epsilon_dsic_topk(&inst).unwrap();
        assert!((dsic.epsilon - closed.epsilon).abs() < 1e-12);
        // adversarial profiles dominate averaged ones
        let bnic = oracle_epsilon(&inst, &policy).unwrap();
        assert!(dsic.epsilon >= bnic.estimate.epsilon - 1e-12);
    }

    #[test]
    fn dsic_oracle_trivial_zeros() {
        // a saturated audit share kills every gain
        let inst = linear_topk_instance(3, 2, 2.0, 0.0);
        let policy = AuditPolicy::UniformK { policy_seed: 0 };
        let est = oracle_dsic_epsilon(&inst, &policy).unwrap();
        assert_eq!(est.epsilon, 0.0);
        // a z-independent scorer leaves nothing to gain
        let prior = Prior::uniform_box(binary_space(), vec![]).unwrap();
        let inst = InstanceSpec::new(
            prior,
            ScoreFunction::linear(vec![1.0], vec![0.0], 0.0),
            AllocationRule::TopK {
                k: 2,
                tie_rule: TieRule::WorstCaseForAgent,
            },
            3,
            1.0,
            0.0,
        )
        .unwrap();
        let est = oracle_dsic_epsilon(&inst, &AuditPolicy::UniformK { policy_seed: 0 }).unwrap();
        assert_eq!(est.epsilon, 0.0);
    }

    #[test]
    fn membership_tie_rules() {
        let opp = [1.0, 1.0];
        assert_eq!(membership(1.0, opp.iter().copied(), 2, TieRule::WorstCaseForAgent), 0.0);
        assert_eq!(membership(1.0, opp.iter().copied(), 2, TieRule::BestCaseForAgent), 1.0);
        let m = membership(1.0, opp.iter().copied(), 2, TieRule::UniformRandom);
        assert!((m - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(membership(0.5, opp.iter().copied(), 2, TieRule::WorstCaseForAgent), 0.0);
        assert_eq!(membership(2.0, opp.iter().copied(), 1, TieRule::WorstCaseForAgent), 1.0);
    }
}
