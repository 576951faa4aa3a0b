//! Agent types, feature domains, and the common prior over types.
//!
//! A type splits into a known part x (d dimensions) and a self-reported part
//! z (s >= 1 dimensions). Priors come in three flavors: an explicit discrete
//! table, a uniform box, and a product of well-behaved one-dimensional
//! marginals. The latter two support zero-probability boxes carved out of
//! the support, renormalized so the supplied prior integrates to one.

use crate::error::{AuditError, Result};
use crate::geometry::{disjoint_union, BoxRegion};
use crate::numeric::{normal_cdf, NORMAL_CDF_ABS_ERROR};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const LATTICE_EPS: f64 = 1e-9;
const MASS_TOL: f64 = 1e-9;
const MIN_SUPPORT_MASS: f64 = 1e-12;
const SAMPLE_RETRY_CAP: u32 = 10_000;

/// Kind of a one-dimensional feature domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainKind {
    Continuous,
    IntegerLattice,
}

/// Closed interval [lo, hi], either continuous or an integer lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDomain {
    lo: f64,
    hi: f64,
    kind: DomainKind,
}

impl FeatureDomain {
    pub fn new(lo: f64, hi: f64, kind: DomainKind) -> Result<Self> {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(AuditError::InvalidDomain(format!(
                "domain bounds must be finite with lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if kind == DomainKind::IntegerLattice && (lo.fract() != 0.0 || hi.fract() != 0.0) {
            return Err(AuditError::InvalidDomain(format!(
                "integer lattice bounds must be integers, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi, kind })
    }

    pub fn continuous(lo: f64, hi: f64) -> Result<Self> {
        Self::new(lo, hi, DomainKind::Continuous)
    }

    pub fn lattice(lo: i64, hi: i64) -> Result<Self> {
        Self::new(lo as f64, hi as f64, DomainKind::IntegerLattice)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_lattice(&self) -> bool {
        self.kind == DomainKind::IntegerLattice
    }

    pub fn contains(&self, v: f64) -> bool {
        if !(v >= self.lo && v <= self.hi) {
            return false;
        }
        match self.kind {
            DomainKind::Continuous => true,
            DomainKind::IntegerLattice => (v - v.round()).abs() <= LATTICE_EPS,
        }
    }

    /// Number of lattice points, if this is a lattice domain.
    pub fn lattice_len(&self) -> Option<u64> {
        match self.kind {
            DomainKind::IntegerLattice => Some((self.hi - self.lo) as u64 + 1),
            DomainKind::Continuous => None,
        }
    }

    /// Lattice points inside [a, b] intersected with the domain.
    fn lattice_count(&self, a: f64, b: f64) -> u64 {
        let lo = a.max(self.lo);
        let hi = b.min(self.hi);
        if lo > hi {
            return 0;
        }
        let first = (lo - LATTICE_EPS).ceil();
        let last = (hi + LATTICE_EPS).floor();
        if first > last {
            0
        } else {
            (last - first) as u64 + 1
        }
    }

    pub fn lattice_values(&self) -> Vec<f64> {
        match self.lattice_len() {
            Some(n) => (0..n).map(|i| self.lo + i as f64).collect(),
            None => Vec::new(),
        }
    }
}

/// One agent type: known part x and self-reported part z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentType {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl AgentType {
    pub fn new(x: Vec<f64>, z: Vec<f64>) -> Self {
        Self { x, z }
    }

    /// Concatenated (x, z) coordinate vector.
    pub fn joint(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + self.z.len());
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.z);
        v
    }
}

/// Product of per-dimension domains for the known and self-reported parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpace {
    known: Vec<FeatureDomain>,
    self_reported: Vec<FeatureDomain>,
}

impl TypeSpace {
    pub fn new(known: Vec<FeatureDomain>, self_reported: Vec<FeatureDomain>) -> Result<Self> {
        if self_reported.is_empty() {
            return Err(AuditError::InvalidDomain(
                "the self-reported part needs at least one dimension".into(),
            ));
        }
        Ok(Self {
            known,
            self_reported,
        })
    }

    /// Re-run construction-time validation (for deserialized values).
    pub fn revalidate(&self) -> Result<()> {
        if self.self_reported.is_empty() {
            return Err(AuditError::InvalidDomain(
                "the self-reported part needs at least one dimension".into(),
            ));
        }
        for dom in self.known.iter().chain(&self.self_reported) {
            FeatureDomain::new(dom.lo, dom.hi, dom.kind)?;
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.known.len()
    }

    pub fn s(&self) -> usize {
        self.self_reported.len()
    }

    pub fn dim(&self) -> usize {
        self.d() + self.s()
    }

    pub fn known(&self) -> &[FeatureDomain] {
        &self.known
    }

    pub fn self_reported(&self) -> &[FeatureDomain] {
        &self.self_reported
    }

    pub fn joint_domains(&self) -> Vec<&FeatureDomain> {
        self.known.iter().chain(self.self_reported.iter()).collect()
    }

    pub fn contains(&self, a: &AgentType) -> bool {
        a.x.len() == self.d()
            && a.z.len() == self.s()
            && a.x.iter().zip(&self.known).all(|(v, d)| d.contains(*v))
            && a.z
                .iter()
                .zip(&self.self_reported)
                .all(|(v, d)| d.contains(*v))
    }

    pub fn full_box(&self) -> BoxRegion {
        let doms = self.joint_domains();
        BoxRegion::new(
            doms.iter().map(|d| d.lo()).collect(),
            doms.iter().map(|d| d.hi()).collect(),
        )
        .expect("domains are validated boxes")
    }

    pub fn x_box(&self) -> BoxRegion {
        BoxRegion::new(
            self.known.iter().map(|d| d.lo()).collect(),
            self.known.iter().map(|d| d.hi()).collect(),
        )
        .expect("domains are validated boxes")
    }

    pub fn z_box(&self) -> BoxRegion {
        BoxRegion::new(
            self.self_reported.iter().map(|d| d.lo()).collect(),
            self.self_reported.iter().map(|d| d.hi()).collect(),
        )
        .expect("domains are validated boxes")
    }

    pub fn lattice_mask(&self) -> Vec<bool> {
        self.joint_domains().iter().map(|d| d.is_lattice()).collect()
    }

    pub fn all_lattice(&self) -> bool {
        self.joint_domains().iter().all(|d| d.is_lattice())
    }

    pub fn z_all_lattice(&self) -> bool {
        self.self_reported.iter().all(|d| d.is_lattice())
    }

    /// Split a joint coordinate vector back into an agent type.
    pub fn split_joint(&self, joint: &[f64]) -> Result<AgentType> {
        if joint.len() != self.dim() {
            return Err(AuditError::DimensionMismatch {
                expected: self.dim(),
                got: joint.len(),
            });
        }
        Ok(AgentType::new(
            joint[..self.d()].to_vec(),
            joint[self.d()..].to_vec(),
        ))
    }

    /// All lattice points of the self-reported block, lexicographic order.
    pub fn z_lattice_points(&self, cap: u64) -> Result<Vec<Vec<f64>>> {
        lattice_product(&self.self_reported, cap)
    }
}

pub(crate) fn lattice_product(domains: &[FeatureDomain], cap: u64) -> Result<Vec<Vec<f64>>> {
    let mut total: u64 = 1;
    for d in domains {
        let len = d.lattice_len().ok_or_else(|| {
            AuditError::Unsupported("enumeration needs integer lattice domains".into())
        })?;
        total = total.saturating_mul(len);
        if total > cap {
            return Err(AuditError::CapExceeded {
                cap,
                needed: total,
            });
        }
    }
    let mut points = vec![Vec::new()];
    for d in domains {
        let vals = d.lattice_values();
        let mut next = Vec::with_capacity(points.len() * vals.len());
        for p in &points {
            for v in &vals {
                let mut q = p.clone();
                q.push(*v);
                next.push(q);
            }
        }
        points = next;
    }
    Ok(points)
}

pub(crate) fn lattice_key(values: &[f64]) -> Option<Vec<i64>> {
    values
        .iter()
        .map(|v| {
            let r = v.round();
            if (v - r).abs() <= LATTICE_EPS {
                Some(r as i64)
            } else {
                None
            }
        })
        .collect()
}

/// One-dimensional marginal with a closed-form interval CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum Marginal {
    /// Uniform over the domain: density 1/width, or equal lattice mass.
    Uniform,
    /// Gaussian truncated to the domain; the CDF uses a rational erf fit
    /// with a stated absolute error, which feeds the epsilon error bound.
    TruncatedGaussian { mean: f64, std: f64 },
    /// Density proportional to exp(-rate * (v - lo)) on the domain.
    TruncatedExponential { rate: f64 },
}

impl Marginal {
    fn validate(&self, dom: &FeatureDomain) -> Result<()> {
        match self {
            Marginal::Uniform => Ok(()),
            Marginal::TruncatedGaussian { std, .. } => {
                if dom.is_lattice() {
                    return Err(AuditError::InvalidPrior(
                        "gaussian marginals need a continuous domain".into(),
                    ));
                }
                if !(*std > 0.0) || !std.is_finite() {
                    return Err(AuditError::InvalidPrior(format!(
                        "gaussian std must be positive and finite, got {std}"
                    )));
                }
                if self.normalizer(dom) < 1e-12 {
                    return Err(AuditError::InvalidPrior(
                        "gaussian marginal has negligible mass on its domain".into(),
                    ));
                }
                Ok(())
            }
            Marginal::TruncatedExponential { rate } => {
                if dom.is_lattice() {
                    return Err(AuditError::InvalidPrior(
                        "exponential marginals need a continuous domain".into(),
                    ));
                }
                if !(*rate > 0.0) || !rate.is_finite() {
                    return Err(AuditError::InvalidPrior(format!(
                        "exponential rate must be positive and finite, got {rate}"
                    )));
                }
                if dom.width() <= 0.0 {
                    return Err(AuditError::InvalidPrior(
                        "exponential marginals need a nondegenerate domain".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    fn normalizer(&self, dom: &FeatureDomain) -> f64 {
        match self {
            Marginal::Uniform => 1.0,
            Marginal::TruncatedGaussian { mean, std } => {
                normal_cdf((dom.hi() - mean) / std) - normal_cdf((dom.lo() - mean) / std)
            }
            Marginal::TruncatedExponential { rate } => 1.0 - (-rate * dom.width()).exp(),
        }
    }

    /// Mass of [a, b] intersected with the domain.
    pub(crate) fn interval_mass(&self, dom: &FeatureDomain, a: f64, b: f64) -> f64 {
        let lo = a.max(dom.lo());
        let hi = b.min(dom.hi());
        if lo > hi {
            return 0.0;
        }
        match self {
            Marginal::Uniform => {
                if dom.is_lattice() {
                    let len = dom.lattice_len().expect("lattice domain") as f64;
                    dom.lattice_count(lo, hi) as f64 / len
                } else if dom.width() == 0.0 {
                    1.0
                } else {
                    ((hi - lo) / dom.width()).clamp(0.0, 1.0)
                }
            }
            Marginal::TruncatedGaussian { mean, std } => {
                let num = normal_cdf((hi - mean) / std) - normal_cdf((lo - mean) / std);
                (num / self.normalizer(dom)).clamp(0.0, 1.0)
            }
            Marginal::TruncatedExponential { rate } => {
                let f = |v: f64| 1.0 - (-rate * (v - dom.lo())).exp();
                ((f(hi) - f(lo)) / self.normalizer(dom)).clamp(0.0, 1.0)
            }
        }
    }

    /// Density (continuous) or point mass (lattice) at v, without support cuts.
    pub(crate) fn point_density(&self, dom: &FeatureDomain, v: f64) -> f64 {
        if !dom.contains(v) {
            return 0.0;
        }
        match self {
            Marginal::Uniform => {
                if dom.is_lattice() {
                    1.0 / dom.lattice_len().expect("lattice domain") as f64
                } else if dom.width() == 0.0 {
                    1.0
                } else {
                    1.0 / dom.width()
                }
            }
            Marginal::TruncatedGaussian { mean, std } => {
                let t = (v - mean) / std;
                let phi = (-0.5 * t * t).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
                phi / self.normalizer(dom)
            }
            Marginal::TruncatedExponential { rate } => {
                rate * (-rate * (v - dom.lo())).exp() / self.normalizer(dom)
            }
        }
    }

    /// Inverse-transform sample from the uniform draw u in [0, 1).
    fn sample(&self, dom: &FeatureDomain, u: f64) -> f64 {
        match self {
            Marginal::Uniform => {
                if dom.is_lattice() {
                    let len = dom.lattice_len().expect("lattice domain");
                    let idx = ((u * len as f64) as u64).min(len - 1);
                    dom.lo() + idx as f64
                } else {
                    dom.lo() + u * dom.width()
                }
            }
            Marginal::TruncatedExponential { rate } => {
                let z = self.normalizer(dom);
                dom.lo() - (1.0 - u * z).ln() / rate
            }
            Marginal::TruncatedGaussian { .. } => {
                // bisection on the interval CDF, deterministic in u
                let mut lo = dom.lo();
                let mut hi = dom.hi();
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.interval_mass(dom, dom.lo(), mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// Declared absolute error of one interval-mass evaluation.
    pub(crate) fn interval_abs_error(&self, dom: &FeatureDomain) -> f64 {
        match self {
            Marginal::TruncatedGaussian { .. } => {
                4.0 * NORMAL_CDF_ABS_ERROR / self.normalizer(dom).max(1e-12)
            }
            _ => 0.0,
        }
    }
}

/// Discrete prior given by an explicit mass table over lattice types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTablePrior {
    space: TypeSpace,
    entries: Vec<(AgentType, f64)>,
    #[serde(skip)]
    index: BTreeMap<Vec<i64>, usize>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl DiscreteTablePrior {
    fn new(space: TypeSpace, raw: Vec<(AgentType, f64)>) -> Result<Self> {
        if !space.all_lattice() {
            return Err(AuditError::InvalidPrior(
                "discrete tables need integer lattice domains on every dimension".into(),
            ));
        }
        let mut keyed: BTreeMap<Vec<i64>, (AgentType, f64)> = BTreeMap::new();
        let mut total = 0.0;
        for (a, mass) in raw {
            if !space.contains(&a) {
                return Err(AuditError::InvalidPrior(format!(
                    "table entry {:?} lies outside the type space",
                    a
                )));
            }
            if !(mass >= 0.0) || !mass.is_finite() {
                return Err(AuditError::InvalidPrior(format!(
                    "table masses must be finite and nonnegative, got {mass}"
                )));
            }
            total += mass;
            if mass == 0.0 {
                continue;
            }
            let key = lattice_key(&a.joint())
                .ok_or_else(|| AuditError::InvalidPrior("non-lattice table entry".into()))?;
            if keyed.insert(key, (a, mass)).is_some() {
                return Err(AuditError::InvalidPrior(
                    "duplicate table entry for the same type".into(),
                ));
            }
        }
        if (total - 1.0).abs() > MASS_TOL {
            return Err(AuditError::InvalidPrior(format!(
                "table masses must sum to 1 as supplied, got {total}"
            )));
        }
        if keyed.is_empty() {
            return Err(AuditError::InvalidPrior("table has no support".into()));
        }
        let mut entries = Vec::with_capacity(keyed.len());
        let mut index = BTreeMap::new();
        let mut cumulative = Vec::with_capacity(keyed.len());
        let mut acc = 0.0;
        for (key, (a, mass)) in keyed {
            index.insert(key, entries.len());
            acc += mass;
            cumulative.push(acc);
            entries.push((a, mass));
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(Self {
            space,
            entries,
            index,
            cumulative,
        })
    }

    pub fn entries(&self) -> &[(AgentType, f64)] {
        &self.entries
    }

    fn mass(&self, a: &AgentType) -> f64 {
        match lattice_key(&a.joint()) {
            Some(key) => self
                .index
                .get(&key)
                .map(|i| self.entries[*i].1)
                .unwrap_or(0.0),
            None => 0.0,
        }
    }

    fn interval_probability(&self, region: &BoxRegion) -> f64 {
        self.entries
            .iter()
            .filter(|(a, _)| region.contains(&a.joint()))
            .map(|(_, m)| m)
            .sum()
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> AgentType {
        let u: f64 = rng.gen();
        let idx = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&u).expect("finite"))
        {
            Ok(i) => (i + 1).min(self.entries.len() - 1),
            Err(i) => i.min(self.entries.len() - 1),
        };
        self.entries[idx].0.clone()
    }
}

/// Prior with independent per-dimension marginals and optional zero boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductPrior {
    space: TypeSpace,
    #[serde(default)]
    marginals: Vec<Marginal>,
    #[serde(default)]
    zero_boxes: Vec<BoxRegion>,
    #[serde(skip)]
    fragments: Vec<BoxRegion>,
    #[serde(skip)]
    support_norm: f64,
}

impl ProductPrior {
    fn new(space: TypeSpace, marginals: Vec<Marginal>, zero_boxes: Vec<BoxRegion>) -> Result<Self> {
        if marginals.len() != space.dim() {
            return Err(AuditError::DimensionMismatch {
                expected: space.dim(),
                got: marginals.len(),
            });
        }
        for (m, dom) in marginals.iter().zip(space.joint_domains()) {
            m.validate(dom)?;
        }
        for zb in &zero_boxes {
            if zb.dim() != space.dim() {
                return Err(AuditError::DimensionMismatch {
                    expected: space.dim(),
                    got: zb.dim(),
                });
            }
        }
        let mut prior = Self {
            space,
            marginals,
            zero_boxes,
            fragments: Vec::new(),
            support_norm: 1.0,
        };
        prior.rebuild_fragments()?;
        Ok(prior)
    }

    fn rebuild_fragments(&mut self) -> Result<()> {
        let mask = self.space.lattice_mask();
        self.fragments = disjoint_union(&self.space.full_box(), &self.zero_boxes, &mask)?;
        let removed: f64 = self.fragments.iter().map(|f| self.base_box_mass(f)).sum();
        self.support_norm = 1.0 - removed;
        if self.support_norm < MIN_SUPPORT_MASS {
            return Err(AuditError::InvalidPrior(
                "zero boxes remove essentially all probability mass".into(),
            ));
        }
        Ok(())
    }

    /// Product-measure mass of a box before zero-box cuts.
    pub(crate) fn base_box_mass(&self, region: &BoxRegion) -> f64 {
        let doms = self.space.joint_domains();
        let mut mass = 1.0;
        for j in 0..self.space.dim() {
            mass *= self.marginals[j].interval_mass(doms[j], region.lo()[j], region.hi()[j]);
            if mass == 0.0 {
                return 0.0;
            }
        }
        mass
    }

    pub(crate) fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub(crate) fn support_norm(&self) -> f64 {
        self.support_norm
    }

    /// Disjoint boxes covering the support (full box minus zero boxes).
    /// Continuous pieces share zero-measure faces with the cut region.
    pub(crate) fn support_fragments(&self) -> Vec<BoxRegion> {
        let mask = self.space.lattice_mask();
        let mut frags = vec![self.space.full_box()];
        for zb in &self.zero_boxes {
            frags = frags
                .iter()
                .flat_map(|f| crate::geometry::subtract_box(f, zb, &mask))
                .collect();
        }
        frags
    }

    pub fn zero_boxes(&self) -> &[BoxRegion] {
        &self.zero_boxes
    }

    fn in_zero_region(&self, joint: &[f64]) -> bool {
        self.zero_boxes.iter().any(|zb| zb.contains(joint))
    }

    fn density(&self, a: &AgentType) -> f64 {
        if !self.space.contains(a) {
            return 0.0;
        }
        let joint = a.joint();
        if self.in_zero_region(&joint) {
            return 0.0;
        }
        let doms = self.space.joint_domains();
        let mut dens = 1.0;
        for j in 0..self.space.dim() {
            dens *= self.marginals[j].point_density(doms[j], joint[j]);
            if dens == 0.0 {
                return 0.0;
            }
        }
        dens / self.support_norm
    }

    fn interval_probability(&self, region: &BoxRegion) -> Result<f64> {
        let clipped = match self.space.full_box().intersect(region) {
            Some(c) => c,
            None => return Ok(0.0),
        };
        let mut mass = self.base_box_mass(&clipped);
        for frag in &self.fragments {
            if let Some(cut) = frag.intersect(&clipped) {
                mass -= self.base_box_mass(&cut);
            }
        }
        Ok((mass / self.support_norm).clamp(0.0, 1.0))
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> Result<AgentType> {
        let doms = self.space.joint_domains();
        for _ in 0..SAMPLE_RETRY_CAP {
            let joint: Vec<f64> = (0..self.space.dim())
                .map(|j| self.marginals[j].sample(doms[j], rng.gen()))
                .collect();
            if !self.in_zero_region(&joint) {
                return self.space.split_joint(&joint);
            }
        }
        Err(AuditError::Sampling(format!(
            "rejection sampling exhausted {SAMPLE_RETRY_CAP} retries; \
             the support mass {:.3e} may be too small",
            self.support_norm
        )))
    }
}

/// Common prior over agent types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    DiscreteTable(DiscreteTablePrior),
    UniformBox(ProductPrior),
    ProductWellBehaved(ProductPrior),
}

impl Prior {
    /// Explicit mass table over a fully lattice type space.
    pub fn discrete_table(space: TypeSpace, entries: Vec<(AgentType, f64)>) -> Result<Self> {
        Ok(Prior::DiscreteTable(DiscreteTablePrior::new(space, entries)?))
    }

    /// Uniform over the whole space box, minus zero boxes, renormalized.
    pub fn uniform_box(space: TypeSpace, zero_boxes: Vec<BoxRegion>) -> Result<Self> {
        let marginals = vec![Marginal::Uniform; space.dim()];
        Ok(Prior::UniformBox(ProductPrior::new(
            space, marginals, zero_boxes,
        )?))
    }

    /// Independent marginals per dimension, minus zero boxes, renormalized.
    pub fn product_well_behaved(
        space: TypeSpace,
        marginals: Vec<Marginal>,
        zero_boxes: Vec<BoxRegion>,
    ) -> Result<Self> {
        Ok(Prior::ProductWellBehaved(ProductPrior::new(
            space, marginals, zero_boxes,
        )?))
    }

    pub fn space(&self) -> &TypeSpace {
        match self {
            Prior::DiscreteTable(p) => &p.space,
            Prior::UniformBox(p) | Prior::ProductWellBehaved(p) => &p.space,
        }
    }

    pub(crate) fn as_product(&self) -> Option<&ProductPrior> {
        match self {
            Prior::UniformBox(p) | Prior::ProductWellBehaved(p) => Some(p),
            Prior::DiscreteTable(_) => None,
        }
    }

    /// True when the support is a finite, enumerable set of lattice types.
    pub fn is_enumerable(&self) -> bool {
        match self {
            Prior::DiscreteTable(_) => true,
            Prior::UniformBox(p) | Prior::ProductWellBehaved(p) => p.space.all_lattice(),
        }
    }

    /// Restore derived lookup state after deserialization by re-running the
    /// construction-time validation.
    pub fn rebuild(&mut self) -> Result<()> {
        match self {
            Prior::DiscreteTable(p) => {
                p.space.revalidate()?;
                *p = DiscreteTablePrior::new(p.space.clone(), p.entries.clone())?;
            }
            Prior::UniformBox(p) => {
                p.space.revalidate()?;
                if p.marginals.iter().any(|m| !matches!(m, Marginal::Uniform)) {
                    return Err(AuditError::InvalidPrior(
                        "a uniform box prior cannot carry non-uniform marginals".into(),
                    ));
                }
                let marginals = vec![Marginal::Uniform; p.space.dim()];
                *p = ProductPrior::new(p.space.clone(), marginals, p.zero_boxes.clone())?;
            }
            Prior::ProductWellBehaved(p) => {
                p.space.revalidate()?;
                *p = ProductPrior::new(
                    p.space.clone(),
                    p.marginals.clone(),
                    p.zero_boxes.clone(),
                )?;
            }
        }
        Ok(())
    }

    pub(crate) fn sample_with_rng(&self, rng: &mut ChaCha12Rng) -> Result<AgentType> {
        match self {
            Prior::DiscreteTable(p) => Ok(p.sample(rng)),
            Prior::UniformBox(p) | Prior::ProductWellBehaved(p) => p.sample(rng),
        }
    }
}

/// Density (continuous dims) or mass (lattice dims) of a type under a prior.
pub fn density(prior: &Prior, a: &AgentType) -> f64 {
    match prior {
        Prior::DiscreteTable(p) => {
            if p.space.contains(a) {
                p.mass(a)
            } else {
                0.0
            }
        }
        Prior::UniformBox(p) | Prior::ProductWellBehaved(p) => p.density(a),
    }
}

/// Probability of a closed axis-aligned box under a prior.
pub fn interval_probability(prior: &Prior, region: &BoxRegion) -> Result<f64> {
    if region.dim() != prior.space().dim() {
        return Err(AuditError::DimensionMismatch {
            expected: prior.space().dim(),
            got: region.dim(),
        });
    }
    match prior {
        Prior::DiscreteTable(p) => Ok(p.interval_probability(region)),
        Prior::UniformBox(p) | Prior::ProductWellBehaved(p) => p.interval_probability(region),
    }
}

/// Draw `count` independent types, deterministically in `seed`.
pub fn sample_types(prior: &Prior, count: usize, seed: u64) -> Result<Vec<AgentType>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count).map(|_| prior.sample_with_rng(&mut rng)).collect()
}

/// All supported types of an enumerable prior, lexicographic order.
pub fn enumerate_types(space: &TypeSpace, prior: &Prior, cap: u64) -> Result<Vec<AgentType>> {
    if space != prior.space() {
        return Err(AuditError::InvalidParameter(
            "prior was constructed over a different type space".into(),
        ));
    }
    match prior {
        Prior::DiscreteTable(p) => {
            let needed = p.entries.len() as u64;
            if needed > cap {
                return Err(AuditError::CapExceeded { cap, needed });
            }
            Ok(p.entries.iter().map(|(a, _)| a.clone()).collect())
        }
        Prior::UniformBox(_) | Prior::ProductWellBehaved(_) => {
            let doms: Vec<FeatureDomain> = space.joint_domains().into_iter().cloned().collect();
            let points = lattice_product(&doms, cap)?;
            Ok(points
                .into_iter()
                .filter_map(|joint| {
                    let a = space.split_joint(&joint).expect("product dims match");
                    if density(prior, &a) > 0.0 {
                        Some(a)
                    } else {
                        None
                    }
                })
                .collect())
        }
    }
}
