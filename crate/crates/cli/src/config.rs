//! JSON run configuration: descriptors for the type space, prior, scorer,
//! and allocation rule, the game parameters, and optional per-command
//! parameters. Every descriptor is rebuilt through the library constructors
//! so a loaded config carries exactly the validation guarantees of code.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use auditgames::allocation::AllocationRule;
use auditgames::geometry::BoxRegion;
use auditgames::instance::InstanceSpec;
use auditgames::scoring::{LinearParts, ScoreFunction};
use auditgames::types::{AgentType, DomainKind, FeatureDomain, Marginal, Prior, TypeSpace};

pub const SCHEMA_VERSION: u32 = 1;
pub const SWEEP_CAP: usize = 10_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub space: SpaceConfig,
    pub prior: PriorConfig,
    pub score: ScoreConfig,
    pub allocation: AllocationRule,
    pub n: usize,
    #[serde(rename = "B")]
    pub budget: f64,
    #[serde(rename = "c")]
    pub fine: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<OracleMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_types: Option<Vec<ReportConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reports: Option<Vec<ReportConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default)]
    pub known: Vec<DomainConfig>,
    pub self_reported: Vec<DomainConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub lo: f64,
    pub hi: f64,
    pub kind: DomainKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PriorConfig {
    DiscreteTable {
        entries: Vec<MassEntry>,
    },
    UniformBox {
        #[serde(default)]
        zero_boxes: Vec<BoxConfig>,
    },
    ProductWellBehaved {
        marginals: Vec<Marginal>,
        #[serde(default)]
        zero_boxes: Vec<BoxConfig>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassEntry {
    #[serde(default)]
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScoreConfig {
    Linear {
        #[serde(default)]
        w_known: Vec<f64>,
        w_self: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
    Logistic {
        #[serde(default)]
        w_known: Vec<f64>,
        w_self: Vec<f64>,
        #[serde(default)]
        bias: f64,
    },
    PiecewiseLinear {
        cells: Vec<CellConfig>,
    },
    Table {
        entries: Vec<ScoreEntry>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default)]
    pub w_known: Vec<f64>,
    pub w_self: Vec<f64>,
    #[serde(default)]
    pub bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreEntry {
    pub key: Vec<i64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    Bayes,
    Dominant,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub command: SweepCommand,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<AxisConfig>,
    #[serde(rename = "c", default, skip_serializing_if = "Option::is_none")]
    pub fine: Option<AxisConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<AxisConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepCommand {
    EpsilonExact,
    EpsilonMc,
    EpsilonTopk,
    EpsilonDsic,
}

/// Inclusive range with an explicit step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl AxisConfig {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        if !self.from.is_finite() || !self.to.is_finite() || !self.step.is_finite() {
            return Err("sweep axis bounds and step must be finite".into());
        }
        if self.step <= 0.0 {
            return Err(format!("sweep axis step must be positive, got {}", self.step));
        }
        if self.from > self.to {
            return Err(format!(
                "sweep axis is empty: from {} exceeds to {}",
                self.from, self.to
            ));
        }
        let mut out = Vec::new();
        let mut i = 0u64;
        loop {
            let v = self.from + self.step * i as f64;
            if v > self.to + 1e-9 * self.step {
                break;
            }
            out.push(v.min(self.to));
            i += 1;
            if out.len() > SWEEP_CAP {
                return Err(format!("sweep axis exceeds the {SWEEP_CAP}-point cap"));
            }
        }
        Ok(out)
    }
}

impl RunConfig {
    pub fn validate_schema(&self) -> Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema {}, this build reads schema {SCHEMA_VERSION}",
                self.schema
            ));
        }
        Ok(())
    }

    pub fn space(&self) -> Result<TypeSpace, String> {
        let dom = |c: &DomainConfig| {
            FeatureDomain::new(c.lo, c.hi, c.kind).map_err(|e| e.to_string())
        };
        let known = self.space.known.iter().map(dom).collect::<Result<Vec<_>, _>>()?;
        let self_reported =
            self.space.self_reported.iter().map(dom).collect::<Result<Vec<_>, _>>()?;
        TypeSpace::new(known, self_reported).map_err(|e| e.to_string())
    }

    fn boxes(configs: &[BoxConfig]) -> Result<Vec<BoxRegion>, String> {
        configs
            .iter()
            .map(|b| BoxRegion::new(b.lo.clone(), b.hi.clone()).map_err(|e| e.to_string()))
            .collect()
    }

    pub fn prior(&self, space: &TypeSpace) -> Result<Prior, String> {
        match &self.prior {
            PriorConfig::DiscreteTable { entries } => {
                let entries = entries
                    .iter()
                    .map(|e| (AgentType::new(e.x.clone(), e.z.clone()), e.mass))
                    .collect();
                Prior::discrete_table(space.clone(), entries).map_err(|e| e.to_string())
            }
            PriorConfig::UniformBox { zero_boxes } => {
                Prior::uniform_box(space.clone(), Self::boxes(zero_boxes)?)
                    .map_err(|e| e.to_string())
            }
            PriorConfig::ProductWellBehaved { marginals, zero_boxes } => {
                Prior::product_well_behaved(
                    space.clone(),
                    marginals.clone(),
                    Self::boxes(zero_boxes)?,
                )
                .map_err(|e| e.to_string())
            }
        }
    }

    pub fn score(&self) -> Result<ScoreFunction, String> {
        match &self.score {
            ScoreConfig::Linear { w_known, w_self, bias } => {
                Ok(ScoreFunction::linear(w_known.clone(), w_self.clone(), *bias))
            }
            ScoreConfig::Logistic { w_known, w_self, bias } => {
                Ok(ScoreFunction::logistic(w_known.clone(), w_self.clone(), *bias))
            }
            ScoreConfig::PiecewiseLinear { cells } => {
                let cells = cells
                    .iter()
                    .map(|c| {
                        let region = BoxRegion::new(c.lo.clone(), c.hi.clone())
                            .map_err(|e| e.to_string())?;
                        Ok((region, LinearParts::new(c.w_known.clone(), c.w_self.clone(), c.bias)))
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                ScoreFunction::piecewise_linear(cells).map_err(|e| e.to_string())
            }
            ScoreConfig::Table { entries } => {
                let mut table = BTreeMap::new();
                for e in entries {
                    if table.insert(e.key.clone(), e.value).is_some() {
                        return Err(format!("duplicate score table key {:?}", e.key));
                    }
                }
                ScoreFunction::table(table).map_err(|e| e.to_string())
            }
        }
    }

    /// Build the validated instance, optionally overriding the game
    /// parameters (used by sweeps).
    pub fn instance_with(
        &self,
        budget: f64,
        fine: f64,
        theta: Option<f64>,
    ) -> Result<InstanceSpec, String> {
        let space = self.space()?;
        let prior = self.prior(&space)?;
        let score = self.score()?;
        let mut allocation = self.allocation.clone();
        if let Some(t) = theta {
            match &mut allocation {
                AllocationRule::Threshold { theta, .. } => *theta = t,
                AllocationRule::TopK { .. } => {
                    return Err("a theta sweep needs a threshold allocation rule".into())
                }
            }
        }
        InstanceSpec::new(prior, score, allocation, self.n, budget, fine)
            .map_err(|e| e.to_string())
    }

    pub fn instance(&self) -> Result<InstanceSpec, String> {
        self.instance_with(self.budget, self.fine, None)
    }

    pub fn agent(&self, space: &TypeSpace, r: &ReportConfig) -> Result<AgentType, String> {
        if r.x.len() != space.d() || r.z.len() != space.s() {
            return Err(format!(
                "report needs {} known and {} self-reported coordinates, got {} and {}",
                space.d(),
                space.s(),
                r.x.len(),
                r.z.len()
            ));
        }
        Ok(AgentType::new(r.x.clone(), r.z.clone()))
    }
}
