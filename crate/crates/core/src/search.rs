//! Searching for a small training subset whose removal flips a prediction.
//!
//! Both searches rank training points by their estimated removal effect on
//! `f(x_t)` and take the shortest prefix whose cumulative effect carries
//! `f(x_t)` across `τ`. The iterative search then repeatedly re-estimates
//! the effects of the current candidate's members after a one-step Newton
//! update of the parameters toward the reduced training set, and shrinks the
//! candidate whenever a strictly shorter prefix still crosses.
//!
//! Later passes linearize around the updated parameters `θ′` rather than
//! around `θ̂`: keeping only a prefix `T` of the candidate `S̃` is treated as
//! putting `S̃ ∖ T` back, so the estimate is
//! `f(x_t; θ′) − Σ_{S̃} δ_i(θ′) + Σ_T δ_i(θ′)`. Adding the re-estimated
//! deltas to the original `f(x_t; θ̂)` instead mixes two linearization
//! points and, once `|S̃|` is a sizeable fraction of the data, badly
//! overstates how much a short prefix achieves.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, Instance};
use crate::error::{Error, Result};
use crate::influence::InfluenceContext;
use crate::model::{newton_direction, sigmoid, TrainedModel};

pub const DEFAULT_MAX_PASSES: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Greedy,
    Iterative,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Iterative => "iterative",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "greedy" => Ok(Algorithm::Greedy),
            "iterative" => Ok(Algorithm::Iterative),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipOutcome {
    Flipped,
    NotFlipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub outcome: FlipOutcome,
    pub retrained_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipsetResult {
    pub test_index: usize,
    pub original_prob: f64,
    pub original_label: u8,
    /// Removal order; empty when no flipping subset was found.
    pub members: Vec<usize>,
    /// Estimated removal effect of each member, from the pass that produced
    /// `members`.
    pub member_deltas: Vec<f64>,
    /// Value the member deltas are added to: `original_prob` for a single
    /// pass, the re-anchored estimate for later iterative passes.
    pub estimate_base: f64,
    pub estimated_prob: f64,
    pub algorithm: Algorithm,
    pub outer_passes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified: Option<Verification>,
}

impl FlipsetResult {
    pub fn found(&self) -> bool {
        !self.members.is_empty()
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn flipped(&self) -> Option<bool> {
        self.verified.map(|v| v.outcome == FlipOutcome::Flipped)
    }

    /// Running estimate `estimate_base + Σ deltas[:k]` for k = 1..=|members|.
    pub fn cumulative_estimates(&self) -> Vec<f64> {
        self.member_deltas
            .iter()
            .scan(self.estimate_base, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect()
    }
}

struct Prefix {
    /// `(train index, delta)` in removal order.
    order: Vec<(usize, f64)>,
    /// Length of the shortest crossing prefix.
    crossing: Option<usize>,
    /// Estimate after the crossing prefix, or after all candidates.
    estimate: f64,
}

/// Orders candidates so the ones pushing hardest against the current label
/// come first and finds the shortest prefix that crosses `tau`.
fn prefix_search(base: f64, tau: f64, label: u8, mut candidates: Vec<(usize, f64)>) -> Prefix {
    candidates.sort_by_key(|&(i, _)| i);
    if label == 1 {
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
    } else {
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
    }
    let mut estimate = base;
    for (k, &(_, d)) in candidates.iter().enumerate() {
        estimate += d;
        if u8::from(estimate > tau) != label {
            return Prefix {
                order: candidates,
                crossing: Some(k + 1),
                estimate,
            };
        }
    }
    Prefix {
        order: candidates,
        crossing: None,
        estimate,
    }
}

fn result_from_prefix(
    x_t: &Instance,
    base: f64,
    label: u8,
    algorithm: Algorithm,
    prefix: Prefix,
) -> FlipsetResult {
    let k = prefix.crossing.unwrap_or(0);
    let (members, member_deltas) = prefix.order[..k].iter().copied().unzip();
    FlipsetResult {
        test_index: x_t.index,
        original_prob: base,
        original_label: label,
        members,
        member_deltas,
        estimate_base: base,
        estimated_prob: prefix.estimate,
        algorithm,
        outer_passes: 1,
        verified: None,
    }
}

/// Single-pass search using a prebuilt influence context for `model`.
pub fn greedy_with_context(
    ctx: &InfluenceContext<'_>,
    model: &TrainedModel,
    x_t: &Instance,
    tau: f64,
) -> Result<FlipsetResult> {
    let base = model.predict_proba(&x_t.features)?;
    let label = u8::from(base > tau);
    let iv = ctx.prediction_influence(x_t)?;
    let candidates = iv.indices.into_iter().zip(iv.deltas).collect();
    let prefix = prefix_search(base, tau, label, candidates);
    Ok(result_from_prefix(x_t, base, label, Algorithm::Greedy, prefix))
}

/// Greedy search: one influence vector, one sorted prefix scan.
pub fn greedy_flipset(
    model: &TrainedModel,
    train: &DatasetSplit,
    x_t: &Instance,
    tau: f64,
) -> Result<FlipsetResult> {
    let ctx = InfluenceContext::new(model, train)?;
    greedy_with_context(&ctx, model, x_t, tau)
}

/// Iterative refinement using a prebuilt influence context for `model`.
pub fn iterative_with_context(
    ctx: &InfluenceContext<'_>,
    model: &TrainedModel,
    train: &DatasetSplit,
    x_t: &Instance,
    tau: f64,
    max_passes: usize,
) -> Result<FlipsetResult> {
    let mut result = greedy_with_context(ctx, model, x_t, tau)?;
    result.algorithm = Algorithm::Iterative;
    if !result.found() {
        return Ok(result);
    }
    if result.k() == train.len() {
        // Removing everything is not a usable answer.
        result.members.clear();
        result.member_deltas.clear();
        return Ok(result);
    }

    let lambda = model.hyper.lambda;
    let solver_tol = model.hyper.solver_tol;
    let mut theta = model.theta.clone();
    let mut passes = 1;
    while passes < max_passes.max(1) {
        passes += 1;
        let mut removed = result.members.clone();
        removed.sort_unstable();
        let remaining = train.rows_without(&removed);

        let step = newton_direction(&remaining, &theta, lambda, solver_tol)
            .map_err(|e| Error::Numerical(format!("iterative pass {passes}: {e}")))?;
        for (t, s) in theta.iter_mut().zip(&step) {
            *t += s;
        }
        let reduced = InfluenceContext::at(remaining, theta.clone(), lambda, solver_tol)
            .map_err(|e| Error::Numerical(format!("iterative pass {passes}: {e}")))?;
        let members = result
            .members
            .iter()
            .map(|&i| train.instance(i))
            .collect::<Result<Vec<_>>>()?;
        let deltas = reduced.prediction_deltas_for(&x_t.features, &members)?;
        let anchor = sigmoid(x_t.features.dot(&theta)) - deltas.iter().sum::<f64>();
        let candidates = result.members.iter().copied().zip(deltas).collect();
        let prefix = prefix_search(anchor, tau, result.original_label, candidates);
        match prefix.crossing {
            Some(k) if k < result.k() => {
                let (members, member_deltas) = prefix.order[..k].iter().copied().unzip();
                result.members = members;
                result.member_deltas = member_deltas;
                result.estimate_base = anchor;
                result.estimated_prob = prefix.estimate;
            }
            _ => break,
        }
    }
    result.outer_passes = passes;
    Ok(result)
}

/// Iterative search: greedy first, then shrink the candidate with
/// re-estimated influences until it stops shrinking or `max_passes` runs
/// out.
pub fn iterative_flipset(
    model: &TrainedModel,
    train: &DatasetSplit,
    x_t: &Instance,
    tau: f64,
    max_passes: usize,
) -> Result<FlipsetResult> {
    let ctx = InfluenceContext::new(model, train)?;
    iterative_with_context(&ctx, model, train, x_t, tau, max_passes)
}

/// Runs `algorithm` for one test point against a shared context.
pub fn find_flipset(
    algorithm: Algorithm,
    ctx: &InfluenceContext<'_>,
    model: &TrainedModel,
    train: &DatasetSplit,
    x_t: &Instance,
    tau: f64,
    max_passes: usize,
) -> Result<FlipsetResult> {
    match algorithm {
        Algorithm::Greedy => greedy_with_context(ctx, model, x_t, tau),
        Algorithm::Iterative => iterative_with_context(ctx, model, train, x_t, tau, max_passes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_search_exhausts_without_crossing() {
        // margin 0.4 above τ, helpful deltas total only 0.1
        let p = prefix_search(0.9, 0.5, 1, vec![(0, -0.05), (1, 0.2), (2, -0.05)]);
        assert_eq!(p.crossing, None);
    }

    #[test]
    fn prefix_search_takes_single_large_delta() {
        let p = prefix_search(0.6, 0.5, 1, vec![(0, -0.01), (1, -0.3), (2, 0.02)]);
        assert_eq!(p.crossing, Some(1));
        assert_eq!(p.order[0].0, 1);
    }

    #[test]
    fn landing_exactly_on_tau_does_not_flip_a_negative() {
        // 0.25 + 0.25 = 0.5 exactly, which is not > 0.5.
        let p = prefix_search(0.25, 0.5, 0, vec![(0, 0.25)]);
        assert_eq!(p.crossing, None);
        // A positive falling to exactly τ does flip (0.5 is not > 0.5).
        let q = prefix_search(0.75, 0.5, 1, vec![(0, -0.25)]);
        assert_eq!(q.crossing, Some(1));
    }

    #[test]
    fn ties_keep_index_order() {
        let p = prefix_search(0.9, 0.5, 1, vec![(3, -0.15), (1, -0.15), (2, -0.15), (0, -0.15)]);
        let order: Vec<usize> = p.order.iter().map(|x| x.0).collect();
        assert_eq!(order, vec![0, 1, 2, 3]);
        assert_eq!(p.crossing, Some(3));
    }

    #[test]
    fn negative_predictions_sort_descending() {
        let p = prefix_search(0.3, 0.5, 0, vec![(0, 0.05), (1, 0.15), (2, -0.4), (3, 0.1)]);
        let order: Vec<usize> = p.order.iter().map(|x| x.0).collect();
        assert_eq!(order, vec![1, 3, 0, 2]);
        assert_eq!(p.crossing, Some(2));
    }

    #[test]
    fn algorithm_parses() {
        assert_eq!("Greedy".parse::<Algorithm>().unwrap(), Algorithm::Greedy);
        assert_eq!("iterative".parse::<Algorithm>().unwrap(), Algorithm::Iterative);
        assert!("alg3".parse::<Algorithm>().is_err());
    }
}
