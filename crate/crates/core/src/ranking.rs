//! Next-question selection: entropy ranking, mutual-information ranking,
//! seeded uniform choice, and the learned policy network.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{entropy, question_rows, LikelihoodRow, SmoothingConfig};
use crate::error::{KbError, PolicyError};
use crate::kb::KnowledgeBase;
use crate::nn::DenseNetwork;
use crate::rl::features::policy_input;

/// Weights closer than this are treated as tied and ordered by question id.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMode {
    /// `sum_m p_m * -H(Y_m)`: negated expected per-concept answer entropy.
    ConditionalEntropy,
    /// Mutual information between concept and answer.
    ExpectedInfoGain,
    /// Zero weights, seeded shuffled order.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuestionRanking {
    pub mode: RankingMode,
    /// `(question id, weight)`, best first.
    pub entries: Vec<(String, f64)>,
}

impl QuestionRanking {
    pub fn top(&self) -> Option<&str> {
        self.entries.first().map(|(id, _)| id.as_str())
    }
}

/// Negated expected conditional answer entropy. Always `<= 0`.
pub fn conditional_entropy_weight(probs: &[f64], rows: &[LikelihoodRow]) -> f64 {
    probs.iter().zip(rows).map(|(p, row)| -p * row.entropy()).sum()
}

/// `H(sum_m p_m Y_m) - sum_m p_m H(Y_m)`, clamped at zero.
pub fn info_gain_weight(probs: &[f64], rows: &[LikelihoodRow]) -> f64 {
    let width = rows.first().map_or(0, |r| r.0.len());
    let mut marginal = vec![0.0; width];
    for (p, row) in probs.iter().zip(rows) {
        for (acc, y) in marginal.iter_mut().zip(&row.0) {
            *acc += p * y;
        }
    }
    (entropy(&marginal) + conditional_entropy_weight(probs, rows)).max(0.0)
}

/// Orders `(id, weight)` pairs by weight, best first; weights within
/// [`TIE_TOLERANCE`] of the current best go to the smallest id.
pub fn order_by_weight(mut pending: Vec<(String, f64)>) -> Vec<(String, f64)> {
    let mut out = Vec::with_capacity(pending.len());
    while !pending.is_empty() {
        let best = pending.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        let pick = pending
            .iter()
            .enumerate()
            .filter(|(_, e)| e.1 >= best - TIE_TOLERANCE)
            .min_by(|a, b| a.1 .0.cmp(&b.1 .0))
            .map(|(i, _)| i)
            .expect("non-empty");
        out.push(pending.swap_remove(pick));
    }
    out
}

fn unasked(kb: &KnowledgeBase, category: &str, asked: &[usize]) -> Result<Vec<usize>, KbError> {
    Ok(kb
        .category_questions(category)?
        .iter()
        .copied()
        .filter(|n| !asked.contains(n))
        .collect())
}

/// Ranks every unasked question of `category` under the given belief.
/// `asked` holds global question indices.
pub fn rank_questions(
    kb: &KnowledgeBase,
    category: &str,
    probs: &[f64],
    asked: &[usize],
    mode: RankingMode,
    cfg: &SmoothingConfig,
) -> Result<QuestionRanking, PolicyError> {
    let concepts = kb
        .category_concepts(category)
        .map_err(crate::error::BeliefError::from)?;
    if probs.len() != concepts.len() {
        return Err(crate::error::BeliefError::LengthMismatch {
            expected: concepts.len(),
            actual: probs.len(),
        }
        .into());
    }
    let candidates = unasked(kb, category, asked).map_err(crate::error::BeliefError::from)?;
    if candidates.is_empty() {
        return Err(PolicyError::Exhausted);
    }
    let entries = match mode {
        RankingMode::Random { seed } => {
            use rand::seq::SliceRandom;
            let mut rng = crate::rl::seeded_rng(seed);
            let mut ids: Vec<(String, f64)> = candidates.iter().map(|&n| (kb.question(n).id.clone(), 0.0)).collect();
            ids.sort_by(|a, b| a.0.cmp(&b.0));
            ids.shuffle(&mut rng);
            ids
        }
        RankingMode::ConditionalEntropy | RankingMode::ExpectedInfoGain => {
            let mut scored = Vec::with_capacity(candidates.len());
            for &n in &candidates {
                let rows = question_rows(kb, concepts, n, cfg).map_err(crate::error::BeliefError::from)?;
                let w = if mode == RankingMode::ConditionalEntropy {
                    conditional_entropy_weight(probs, &rows)
                } else {
                    info_gain_weight(probs, &rows)
                };
                scored.push((kb.question(n).id.clone(), w));
            }
            order_by_weight(scored)
        }
    };
    Ok(QuestionRanking { mode, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Random,
    /// Ranks by negated expected answer entropy.
    #[serde(rename = "entropy-paper")]
    EntropyConditional,
    EntropyInfogain,
    Learned,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] = [
        PolicyKind::Random,
        PolicyKind::EntropyConditional,
        PolicyKind::EntropyInfogain,
        PolicyKind::Learned,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::EntropyConditional => "entropy-paper",
            PolicyKind::EntropyInfogain => "entropy-infogain",
            PolicyKind::Learned => "learned",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected random, entropy-paper, entropy-infogain, learned)"))
    }
}

/// Picks the next question (global index) for the given policy.
///
/// Entropy policies take the top of [`rank_questions`]. The random policy
/// draws uniformly from unasked questions using `rng`. The learned policy
/// takes the most probable unasked question under the network.
#[allow(clippy::too_many_arguments)]
pub fn select_question<R: Rng + ?Sized>(
    kind: PolicyKind,
    kb: &KnowledgeBase,
    category: &str,
    probs: &[f64],
    asked: &[usize],
    cfg: &SmoothingConfig,
    rng: &mut R,
    network: Option<&DenseNetwork>,
) -> Result<usize, PolicyError> {
    let candidates = unasked(kb, category, asked).map_err(crate::error::BeliefError::from)?;
    match candidates.len() {
        0 => return Err(PolicyError::Exhausted),
        1 => return Ok(candidates[0]),
        _ => {}
    }
    match kind {
        PolicyKind::Random => Ok(candidates[rng.random_range(0..candidates.len())]),
        PolicyKind::EntropyConditional | PolicyKind::EntropyInfogain => {
            let mode = if kind == PolicyKind::EntropyConditional {
                RankingMode::ConditionalEntropy
            } else {
                RankingMode::ExpectedInfoGain
            };
            let ranking = rank_questions(kb, category, probs, asked, mode, cfg)?;
            let top = ranking.top().expect("ranking is non-empty");
            Ok(kb.question_index(top).map_err(crate::error::BeliefError::from)?)
        }
        PolicyKind::Learned => {
            let net = network.ok_or(PolicyError::MissingNetwork)?;
            let questions = kb
                .category_questions(category)
                .map_err(crate::error::BeliefError::from)?;
            let asked_mask: Vec<bool> = questions.iter().map(|n| asked.contains(n)).collect();
            let dist = net.forward(&policy_input(probs, &asked_mask), Some(&asked_mask))?;
            let (slot, _) = crate::belief::argmax(&dist);
            Ok(questions[slot])
        }
    }
}
