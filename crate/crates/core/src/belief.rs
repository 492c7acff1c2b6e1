//! Probability distribution over the concepts of one category, and the
//! arithmetic that moves it: prior normalization, smoothed answer
//! likelihoods, the multiplicative update, entropy and probability jumps.

use serde::{Deserialize, Serialize};

use crate::error::{BeliefError, KbError};
use crate::kb::{KnowledgeBase, MatrixCell};

/// Hard cap on questions per game.
pub const MAX_TURNS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    /// Weight of the reference answer relative to historical counts.
    pub alpha: f64,
    /// Relative floor applied after each update so no concept is annihilated.
    pub epsilon_floor: f64,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            epsilon_floor: 1e-6,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.epsilon_floor >= 0.0 && self.epsilon_floor < 1e-3) {
            return Err(format!(
                "epsilon_floor must lie in [0, 1e-3), got {}",
                self.epsilon_floor
            ));
        }
        Ok(())
    }
}

/// One answered question with the belief on either side of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub question: String,
    pub selected: Vec<String>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    probs: Vec<f64>,
    history: Vec<TurnRecord>,
}

impl BeliefState {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn history(&self) -> &[TurnRecord] {
        &self.history
    }

    pub fn turn(&self) -> usize {
        self.history.len()
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index and value of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> (usize, f64) {
        argmax(&self.probs)
    }

    /// Index of the strict maximum, or `None` when the top value is shared.
    pub fn unique_argmax(&self) -> Option<usize> {
        let (best, value) = self.argmax();
        let shared = self.probs.iter().enumerate().any(|(i, &p)| i != best && p == value);
        (!shared).then_some(best)
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    /// Multiplies the belief by `beta` and renormalizes, appending a turn
    /// record. The floor keeps `epsilon_floor * max(beta)` of each concept's
    /// previous mass, so an answer can shrink a concept but not erase it.
    pub fn update(
        &self,
        beta: &[f64],
        cfg: &SmoothingConfig,
        question: &str,
        selected: &[String],
    ) -> Result<BeliefState, BeliefError> {
        if self.turn() >= MAX_TURNS {
            return Err(BeliefError::TurnLimit(MAX_TURNS));
        }
        let after = posterior(&self.probs, beta, cfg.epsilon_floor)?;
        let mut history = self.history.clone();
        history.push(TurnRecord {
            question: question.to_string(),
            selected: selected.to_vec(),
            before: self.probs.clone(),
            after: after.clone(),
        });
        Ok(BeliefState { probs: after, history })
    }
}

pub fn argmax(values: &[f64]) -> (usize, f64) {
    values.iter().copied().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, v)| if v > best.1 { (i, v) } else { best },
    )
}

/// Normalizes non-negative prior weights into a turn-zero belief.
pub fn normalize_prior(weights: &[f64]) -> Result<BeliefState, BeliefError> {
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(BeliefError::InvalidWeight(w));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(BeliefError::DegeneratePrior);
    }
    Ok(BeliefState {
        probs: weights.iter().map(|w| w / total).collect(),
        history: Vec::new(),
    })
}

/// Per-option answer probabilities for one (concept, question) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRow(pub Vec<f64>);

impl LikelihoodRow {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.0)
    }
}

pub fn cell_likelihood(cell: &MatrixCell, alpha: f64) -> LikelihoodRow {
    let mass: Vec<f64> = cell
        .frequencies
        .iter()
        .enumerate()
        .map(|(l, &f)| f as f64 + if cell.is_reference(l) { alpha } else { 0.0 })
        .collect();
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        let k = mass.len() as f64;
        return LikelihoodRow(vec![1.0 / k; mass.len()]);
    }
    LikelihoodRow(mass.into_iter().map(|x| x / total).collect())
}

/// Smoothed likelihood that a user thinking of `concept` picks each option of
/// `question`. Both are global indices and must share a category.
pub fn answer_likelihood(
    kb: &KnowledgeBase,
    concept: usize,
    question: usize,
    cfg: &SmoothingConfig,
) -> Result<LikelihoodRow, KbError> {
    Ok(cell_likelihood(kb.cell(concept, question)?, cfg.alpha))
}

/// Likelihood rows of every concept in `concepts` for one question.
pub fn question_rows(
    kb: &KnowledgeBase,
    concepts: &[usize],
    question: usize,
    cfg: &SmoothingConfig,
) -> Result<Vec<LikelihoodRow>, KbError> {
    concepts
        .iter()
        .map(|&m| answer_likelihood(kb, m, question, cfg))
        .collect()
}

/// Sums each concept's likelihood over the selected option indices.
pub fn aggregate_likelihood(rows: &[LikelihoodRow], selected: &[usize]) -> Result<Vec<f64>, BeliefError> {
    if selected.is_empty() {
        return Err(BeliefError::EmptySelection);
    }
    rows.iter()
        .map(|row| {
            selected
                .iter()
                .map(|&l| {
                    row.0.get(l).copied().ok_or(BeliefError::LengthMismatch {
                        expected: row.0.len(),
                        actual: l + 1,
                    })
                })
                .sum()
        })
        .collect()
}

/// `normalize(max(probs * beta, floor * max(beta) * probs))`. A constant
/// `beta` carries no information and returns `probs` unchanged, bit for bit,
/// unless it is all zero with no floor to fall back on.
pub fn posterior(probs: &[f64], beta: &[f64], epsilon_floor: f64) -> Result<Vec<f64>, BeliefError> {
    if beta.len() != probs.len() {
        return Err(BeliefError::LengthMismatch {
            expected: probs.len(),
            actual: beta.len(),
        });
    }
    if let Some(&b) = beta.iter().find(|b| !(b.is_finite() && **b >= 0.0)) {
        return Err(BeliefError::InvalidWeight(b));
    }
    if beta.windows(2).all(|w| w[0] == w[1]) && (beta.first() > Some(&0.0) || epsilon_floor > 0.0) {
        return Ok(probs.to_vec());
    }
    let scale = beta.iter().copied().fold(0.0, f64::max);
    let floor = epsilon_floor * if scale > 0.0 { scale } else { 1.0 };
    let raw: Vec<f64> = probs.iter().zip(beta).map(|(&p, &b)| (p * b).max(floor * p)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(BeliefError::CollapsedBelief);
    }
    Ok(raw.into_iter().map(|x| x / total).collect())
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy(probs: &[f64]) -> f64 {
    let h: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    h.max(0.0)
}

/// Signed change of one concept's probability across a turn.
pub fn probability_jump(before: &[f64], after: &[f64], concept: usize) -> Result<f64, BeliefError> {
    if before.len() != after.len() {
        return Err(BeliefError::LengthMismatch {
            expected: before.len(),
            actual: after.len(),
        });
    }
    match (before.get(concept), after.get(concept)) {
        (Some(b), Some(a)) => Ok(a - b),
        _ => Err(BeliefError::LengthMismatch {
            expected: before.len(),
            actual: concept + 1,
        }),
    }
}

pub fn state_delta(before: &[f64], after: &[f64]) -> Result<Vec<f64>, BeliefError> {
    if before.len() != after.len() {
        return Err(BeliefError::LengthMismatch {
            expected: before.len(),
            actual: after.len(),
        });
    }
    Ok(after.iter().zip(before).map(|(a, b)| a - b).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::load_kb;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn cell(reference: Vec<usize>, frequencies: Vec<u64>) -> MatrixCell {
        MatrixCell {
            concept: 0,
            question: 0,
            reference,
            frequencies,
        }
    }

    #[test]
    fn prior_normalization() {
        assert_eq!(normalize_prior(&[1.0; 4]).unwrap().probs(), &[0.25; 4]);
        assert_eq!(normalize_prior(&[2.0, 1.0, 1.0]).unwrap().probs(), &[0.5, 0.25, 0.25]);
        assert_eq!(normalize_prior(&[0.0, 0.0]), Err(BeliefError::DegeneratePrior));
        assert!(normalize_prior(&[-1.0, 2.0]).is_err());
        let s = normalize_prior(&[3.0, 1.0]).unwrap();
        assert_eq!(s.turn(), 0);
        assert!(s.history().is_empty());
    }

    #[test]
    fn likelihood_with_history_and_reference() {
        // f = {yes: 3, no: 1}, reference {yes}, alpha 1 -> (4/5, 1/5)
        let row = cell_likelihood(&cell(vec![0], vec![3, 1]), 1.0);
        assert!(close(&row.0, &[0.8, 0.2], 1e-15));
    }

    #[test]
    fn likelihood_reference_only() {
        let row = cell_likelihood(&cell(vec![0], vec![0, 0]), 5.0);
        assert_eq!(row.0, vec![1.0, 0.0]);
    }

    #[test]
    fn likelihood_history_only() {
        let row = cell_likelihood(&cell(vec![2], vec![2, 2, 0]), 0.0);
        assert_eq!(row.0, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn likelihood_degenerate_denominator_is_uniform() {
        let row = cell_likelihood(&cell(vec![1], vec![0, 0, 0]), 0.0);
        assert_eq!(row.0, vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn likelihood_rejects_cross_category() {
        let doc = r#"{"version":1,
          "categories":[{"id":"x","name":"X"},{"id":"y","name":"Y"}],
          "concepts":[{"id":"a","name":"A","category":"x","description":"d","prior_weight":1,"keywords":[]},
                      {"id":"b","name":"B","category":"y","description":"d","prior_weight":1,"keywords":[]}],
          "questions":[{"id":"qx","text":"?","category":"x","options":[{"id":"yes","text":"Yes"},{"id":"no","text":"No"}]},
                       {"id":"qy","text":"?","category":"y","options":[{"id":"yes","text":"Yes"},{"id":"no","text":"No"}]}],
          "cells":[{"concept":"a","question":"qx","reference":["yes"]},{"concept":"b","question":"qy","reference":["no"]}]}"#;
        let kb = load_kb(doc).unwrap();
        assert!(answer_likelihood(&kb, 0, 0, &SmoothingConfig::default()).is_ok());
        assert!(answer_likelihood(&kb, 0, 1, &SmoothingConfig::default()).is_err());
    }

    #[test]
    fn aggregation() {
        let rows = vec![LikelihoodRow(vec![0.8, 0.2]), LikelihoodRow(vec![0.1, 0.9])];
        assert!(close(
            &aggregate_likelihood(&rows, &[0, 1]).unwrap(),
            &[1.0, 1.0],
            1e-15
        ));
        assert_eq!(aggregate_likelihood(&rows, &[0]).unwrap(), vec![0.8, 0.1]);
        assert_eq!(aggregate_likelihood(&rows, &[]), Err(BeliefError::EmptySelection));
    }

    #[test]
    fn update_examples() {
        let s = normalize_prior(&[1.0, 1.0]).unwrap();
        let cfg = SmoothingConfig::default();
        let next = s.update(&[0.8, 0.2], &cfg, "q", &["yes".into()]).unwrap();
        assert!(close(next.probs(), &[0.8, 0.2], 1e-15));
        assert_eq!(next.turn(), 1);
        assert_eq!(next.history()[0].before, vec![0.5, 0.5]);

        let same = s.update(&[1.0, 1.0], &cfg, "q", &[]).unwrap();
        assert_eq!(same.probs(), s.probs());

        let strict = SmoothingConfig {
            epsilon_floor: 0.0,
            ..cfg
        };
        assert_eq!(
            s.update(&[0.0, 0.0], &strict, "q", &[]),
            Err(BeliefError::CollapsedBelief)
        );
        // with a positive floor an all-zero likelihood leaves the belief as it was
        assert_eq!(s.update(&[0.0, 0.0], &cfg, "q", &[]).unwrap().probs(), s.probs());
    }

    #[test]
    fn floor_rescues_contradicted_concept() {
        let s = normalize_prior(&[1.0, 1.0]).unwrap();
        let next = s.update(&[1.0, 0.0], &SmoothingConfig::default(), "q", &[]).unwrap();
        assert!(next.probs()[1] > 0.0);
        assert!((next.probs()[1] - 1e-6 / (1.0 + 1e-6)).abs() < 1e-18);
    }

    #[test]
    fn turn_limit_enforced() {
        let cfg = SmoothingConfig::default();
        let mut s = normalize_prior(&[1.0, 1.0]).unwrap();
        for _ in 0..MAX_TURNS {
            s = s.update(&[1.0, 1.0], &cfg, "q", &[]).unwrap();
        }
        assert_eq!(
            s.update(&[1.0, 1.0], &cfg, "q", &[]),
            Err(BeliefError::TurnLimit(MAX_TURNS))
        );
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.125; 8]) - 3.0).abs() < 1e-15);
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        // -(0.8 log2 0.8 + 0.2 log2 0.2)
        assert!((entropy(&[0.8, 0.2]) - 0.721_928_094_887_362_3).abs() < 1e-12);
    }

    #[test]
    fn constant_beta_is_exact_identity() {
        let p = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(posterior(&p, &[0.7; 4], 1e-6).unwrap(), p.to_vec());
        assert_eq!(posterior(&p, &[0.0; 4], 1e-6).unwrap(), p.to_vec());
    }

    #[test]
    fn jump_examples() {
        let g = probability_jump(&[0.5, 0.5], &[0.8, 0.2], 0).unwrap();
        assert!((g - 0.3).abs() < 1e-15);
        assert_eq!(probability_jump(&[0.3, 0.7], &[0.3, 0.7], 1).unwrap(), 0.0);
        let d = state_delta(&[0.5, 0.25, 0.25], &[0.2, 0.3, 0.5]).unwrap();
        assert!(d.iter().sum::<f64>().abs() < 1e-15);
        assert!(state_delta(&[0.5, 0.5], &[1.0]).is_err());
        assert!(probability_jump(&[0.5, 0.5], &[1.0], 0).is_err());
    }

    fn prob_vec(m: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..10.0, m).prop_map(|w| {
            let t: f64 = w.iter().sum();
            w.into_iter().map(|x| x / t).collect()
        })
    }

    proptest! {
        #[test]
        fn update_stays_normalized(
            (p, beta) in (2usize..8).prop_flat_map(|m| (prob_vec(m), prop::collection::vec(0.0f64..1.0, m)))
        ) {
            let out = posterior(&p, &beta, 1e-6).unwrap();
            prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(out.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }

        #[test]
        fn scaling_beta_does_not_change_posterior(
            (p, beta) in (2usize..8).prop_flat_map(|m| (prob_vec(m), prop::collection::vec(0.0f64..1.0, m))),
            k in 1e-3f64..1e3,
        ) {
            let a = posterior(&p, &beta, 1e-6).unwrap();
            let scaled: Vec<f64> = beta.iter().map(|b| b * k).collect();
            let b = posterior(&p, &scaled, 1e-6).unwrap();
            prop_assert!(close(&a, &b, 1e-12));
        }

        #[test]
        fn updates_commute(
            (p, b1, b2) in (2usize..8).prop_flat_map(|m| (
                prob_vec(m),
                prop::collection::vec(0.05f64..1.0, m),
                prop::collection::vec(0.05f64..1.0, m),
            ))
        ) {
            let ab = posterior(&posterior(&p, &b1, 1e-6).unwrap(), &b2, 1e-6).unwrap();
            let ba = posterior(&posterior(&p, &b2, 1e-6).unwrap(), &b1, 1e-6).unwrap();
            prop_assert!(close(&ab, &ba, 1e-9));
        }

        #[test]
        fn likelihood_rows_sum_to_one(
            freqs in prop::collection::vec(0u64..50, 2..6),
            alpha in 0.0f64..100.0,
            pick in 0usize..6,
        ) {
            let l = freqs.len();
            let row = cell_likelihood(&cell(vec![pick % l], freqs), alpha);
            prop_assert!((row.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn likelihood_limits() {
        let c = cell(vec![0, 2], vec![7, 3, 1, 4]);
        let big = cell_likelihood(&c, 1e12);
        assert!(close(&big.0, &[0.5, 0.0, 0.5, 0.0], 1e-9));
        let empirical = cell_likelihood(&c, 0.0);
        assert!(close(
            &empirical.0,
            &[7.0 / 15.0, 3.0 / 15.0, 1.0 / 15.0, 4.0 / 15.0],
            1e-15
        ));
    }
}
