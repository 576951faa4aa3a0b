//! Threshold and top-k allocation rules, and the probability that a given
//! score value lands in the top k against independent draws from the prior.

use crate::error::{AuditError, Result};
use crate::instance::InstanceSpec;
use crate::numeric::binomial_cdf;
use crate::scoring::Direction;
use crate::verification::score_tail_probability;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// How ties at the k-th score are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Tied agents lose the contested slots; realized deterministically by
    /// dropping the lowest-indexed tied agents first.
    WorstCaseForAgent,
    UniformRandom,
    /// Tied agents win the contested slots, lowest index first.
    BestCaseForAgent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AllocationRule {
    Threshold { theta: f64, direction: Direction },
    TopK { k: usize, tie_rule: TieRule },
}

/// Allocate to every score clearing the threshold (closed comparison).
pub fn allocate_threshold(scores: &[f64], theta: f64, direction: Direction) -> Vec<bool> {
    scores
        .iter()
        .map(|s| direction.allocates(*s, theta))
        .collect()
}

/// Allocate to exactly k of the scores, breaking k-th-place ties per rule.
pub fn allocate_topk(scores: &[f64], k: usize, tie_rule: TieRule, seed: u64) -> Result<Vec<bool>> {
    let n = scores.len();
    if k == 0 || k > n {
        return Err(AuditError::InvalidParameter(format!(
            "top-k needs 1 <= k <= {n}, got {k}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .expect("scores must not be NaN")
            .then(i.cmp(&j))
    });
    let boundary = scores[order[k - 1]];
    let mut allocated = vec![false; n];
    let sure: Vec<usize> = (0..n).filter(|&i| scores[i] > boundary).collect();
    let mut tied: Vec<usize> = (0..n).filter(|&i| scores[i] == boundary).collect();
    let slots = k - sure.len();
    for i in sure {
        allocated[i] = true;
    }
    let winners: Vec<usize> = if slots >= tied.len() {
        tied
    } else {
        match tie_rule {
            TieRule::BestCaseForAgent => tied.into_iter().take(slots).collect(),
            TieRule::WorstCaseForAgent => {
                // lowest-indexed tied agents lose first
                let losers = tied.len() - slots;
                tied.into_iter().skip(losers).collect()
            }
            TieRule::UniformRandom => {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                tied.shuffle(&mut rng);
                tied.into_iter().take(slots).collect()
            }
        }
    };
    for i in winners {
        allocated[i] = true;
    }
    Ok(allocated)
}

/// Probability that a report scoring `score_value` is allocated under top-k
/// with the remaining n-1 agents truthful, assuming worst-case ties: it wins
/// iff at most k-1 independent draws from the prior weakly outscore it.
pub fn prob_in_top_k(instance: &InstanceSpec, score_value: f64) -> Result<f64> {
    let (k, _) = instance.topk_params()?;
    let n = instance.n();
    let q = score_tail_probability(instance, score_value)?;
    Ok(binomial_cdf(k as i64 - 1, (n - 1) as u64, q))
}
