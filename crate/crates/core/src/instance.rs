//! A complete game instance: prior, scorer, allocation rule, and the game
//! parameters (n, B, c).

use crate::allocation::{AllocationRule, TieRule};
use crate::error::{AuditError, Result};
use crate::scoring::{Direction, ScoreFunction};
use crate::types::{enumerate_types, AgentType, Prior, TypeSpace};

const TABLE_COVER_CAP: u64 = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    prior: Prior,
    score: ScoreFunction,
    allocation: AllocationRule,
    n: usize,
    budget: f64,
    fine: f64,
}

impl InstanceSpec {
    pub fn new(
        prior: Prior,
        score: ScoreFunction,
        allocation: AllocationRule,
        n: usize,
        budget: f64,
        fine: f64,
    ) -> Result<Self> {
        if n == 0 {
            return Err(AuditError::InvalidParameter(
                "the game needs at least one agent".into(),
            ));
        }
        if !budget.is_finite() || budget < 0.0 {
            return Err(AuditError::InvalidParameter(format!(
                "audit budget must be finite and nonnegative, got {budget}"
            )));
        }
        if !fine.is_finite() || fine < 0.0 {
            return Err(AuditError::InvalidParameter(format!(
                "fine must be finite and nonnegative, got {fine}"
            )));
        }
        score.validate_dims(prior.space())?;
        match &allocation {
            AllocationRule::Threshold { theta, .. } => {
                if !theta.is_finite() {
                    return Err(AuditError::InvalidParameter(format!(
                        "threshold must be finite, got {theta}"
                    )));
                }
            }
            AllocationRule::TopK { k, .. } => {
                if *k == 0 || *k > n {
                    return Err(AuditError::InvalidParameter(format!(
                        "top-k needs 1 <= k <= n, got k={k} with n={n}"
                    )));
                }
            }
        }
        let instance = Self {
            prior,
            score,
            allocation,
            n,
            budget,
            fine,
        };
        instance.check_table_cover()?;
        Ok(instance)
    }

    /// Table scorers must cover every supported type they may be asked about.
    fn check_table_cover(&self) -> Result<()> {
        if !matches!(self.score, ScoreFunction::Table { .. }) {
            return Ok(());
        }
        if !self.prior.is_enumerable() {
            return Err(AuditError::InvalidScore(
                "table scorers need an enumerable prior".into(),
            ));
        }
        let types = match enumerate_types(self.space(), &self.prior, TABLE_COVER_CAP) {
            Ok(t) => t,
            Err(AuditError::CapExceeded { .. }) => return Ok(()),
            Err(e) => return Err(e),
        };
        for t in &types {
            self.score.score(t).map_err(|_| {
                AuditError::InvalidScore(format!(
                    "score table misses the supported type {:?}",
                    t.joint()
                ))
            })?;
        }
        Ok(())
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn space(&self) -> &TypeSpace {
        self.prior.space()
    }

    pub fn score_fn(&self) -> &ScoreFunction {
        &self.score
    }

    pub fn allocation(&self) -> &AllocationRule {
        &self.allocation
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn fine(&self) -> f64 {
        self.fine
    }

    pub fn score_of(&self, a: &AgentType) -> Result<f64> {
        self.score.score(a)
    }

    pub fn threshold_params(&self) -> Result<(f64, Direction)> {
        match &self.allocation {
            AllocationRule::Threshold { theta, direction } => Ok((*theta, *direction)),
            AllocationRule::TopK { .. } => Err(AuditError::Unsupported(
                "this operation needs a threshold allocation rule".into(),
            )),
        }
    }

    pub fn topk_params(&self) -> Result<(usize, TieRule)> {
        match &self.allocation {
            AllocationRule::TopK { k, tie_rule } => Ok((*k, *tie_rule)),
            AllocationRule::Threshold { .. } => Err(AuditError::Unsupported(
                "this operation needs a top-k allocation rule".into(),
            )),
        }
    }

    pub fn is_threshold(&self) -> bool {
        matches!(self.allocation, AllocationRule::Threshold { .. })
    }

    pub fn is_topk(&self) -> bool {
        matches!(self.allocation, AllocationRule::TopK { .. })
    }

    /// Whether a score clears the threshold, honoring the direction tag.
    pub fn threshold_allocates(&self, score: f64) -> Result<bool> {
        let (theta, direction) = self.threshold_params()?;
        Ok(direction.allocates(score, theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureDomain;

    fn binary_prior() -> Prior {
        let space = TypeSpace::new(
            vec![FeatureDomain::lattice(0, 1).unwrap()],
            vec![FeatureDomain::lattice(0, 1).unwrap()],
        )
        .unwrap();
        Prior::uniform_box(space, vec![]).unwrap()
    }

    #[test]
    fn validates_game_parameters() {
        let f = ScoreFunction::linear(vec![1.0], vec![1.0], 0.0);
        let alloc = AllocationRule::Threshold {
            theta: 1.0,
            direction: Direction::Geq,
        };
        assert!(InstanceSpec::new(binary_prior(), f.clone(), alloc.clone(), 0, 1.0, 0.0).is_err());
        assert!(InstanceSpec::new(binary_prior(), f.clone(), alloc.clone(), 2, -1.0, 0.0).is_err());
        assert!(InstanceSpec::new(binary_prior(), f.clone(), alloc.clone(), 2, 1.0, -0.5).is_err());
        assert!(InstanceSpec::new(binary_prior(), f, alloc, 2, 1.0, 0.0).is_ok());
    }

    #[test]
    fn rejects_topk_out_of_range() {
        let f = ScoreFunction::linear(vec![1.0], vec![1.0], 0.0);
        let alloc = AllocationRule::TopK {
            k: 3,
            tie_rule: TieRule::WorstCaseForAgent,
        };
        assert!(InstanceSpec::new(binary_prior(), f, alloc, 2, 1.0, 0.0).is_err());
    }

    #[test]
    fn rejects_mismatched_score_dims() {
        let f = ScoreFunction::linear(vec![1.0, 2.0], vec![1.0], 0.0);
        let alloc = AllocationRule::Threshold {
            theta: 1.0,
            direction: Direction::Geq,
        };
        assert!(InstanceSpec::new(binary_prior(), f, alloc, 2, 1.0, 0.0).is_err());
    }

    #[test]
    fn rejects_partial_table_over_support() {
        let mut entries = std::collections::BTreeMap::new();
        entries.insert(vec![0, 0], 0.0);
        let f = ScoreFunction::table(entries).unwrap();
        let alloc = AllocationRule::Threshold {
            theta: 0.5,
            direction: Direction::Geq,
        };
        let r = InstanceSpec::new(binary_prior(), f, alloc, 2, 1.0, 0.0);
        assert!(matches!(r, Err(AuditError::InvalidScore(_))));
    }
}
