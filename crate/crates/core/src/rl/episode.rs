use serde::{Deserialize, Serialize};

use crate::belief::{aggregate_likelihood, normalize_prior, question_rows, BeliefState};
use crate::error::{KbError, PolicyError};
use crate::kb::KnowledgeBase;

use super::reward::{shaped_reward, TerminalOutcome};
use super::{MdpConfig, UserSimulator};

/// Picks the next question from the belief and the asked question indices.
pub type Chooser<'a> = dyn FnMut(&[f64], &[usize]) -> Result<usize, PolicyError> + 'a;

/// One step of a self-play episode. Belief vectors and question/option
/// positions are relative to the episode's category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s_t: Vec<f64>,
    /// Question flags (true = asked) before this step.
    pub asked: Vec<bool>,
    /// Position of the question within the category.
    pub question: usize,
    pub selected: Vec<usize>,
    /// Shaped environment reward for this step.
    pub r_next: f64,
    pub s_next: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    /// Position of the target concept within the category.
    pub target: usize,
    pub transitions: Vec<Transition>,
    pub outcome: Outcome,
}

impl Episode {
    pub fn turns(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_correct(&self) -> bool {
        self.outcome == Outcome::Correct
    }
}

/// Plays one training episode.
///
/// `choose` receives the current belief and the global indices of asked
/// questions and returns the next question's global index. The episode stops
/// as soon as the belief's strict argmax is the target, after
/// `cfg.max_turns` questions, or when the category runs out of questions.
pub fn rollout_episode(
    choose: &mut Chooser<'_>,
    sim: &mut UserSimulator,
    kb: &KnowledgeBase,
    cfg: &MdpConfig,
) -> Result<Episode, PolicyError> {
    let concepts = kb
        .category_concepts(&cfg.category)
        .map_err(crate::error::BeliefError::from)?;
    let questions = kb
        .category_questions(&cfg.category)
        .map_err(crate::error::BeliefError::from)?;
    let target = concepts.iter().position(|&m| m == sim.target()).ok_or_else(|| {
        crate::error::BeliefError::from(KbError::Validation(format!(
            "simulator target is not in category `{}`",
            cfg.category
        )))
    })?;
    let prior = kb
        .prior_weights(&cfg.category)
        .map_err(crate::error::BeliefError::from)?;
    let mut belief: BeliefState = normalize_prior(&prior)?;
    let mut asked: Vec<usize> = Vec::new();
    let mut steps: Vec<(Transition, f64, f64)> = Vec::new();
    let limit = cfg.max_turns.min(questions.len());

    while asked.len() < limit {
        let q = choose(belief.probs(), &asked)?;
        let slot = questions
            .iter()
            .position(|&n| n == q)
            .filter(|_| !asked.contains(&q))
            .ok_or_else(|| {
                PolicyError::Belief(KbError::Validation(format!("policy chose invalid question {q}")).into())
            })?;
        let selected = sim
            .simulate_answer(kb, q, &cfg.smoothing)
            .map_err(crate::error::BeliefError::from)?;
        let rows = question_rows(kb, concepts, q, &cfg.smoothing).map_err(crate::error::BeliefError::from)?;
        let beta = aggregate_likelihood(&rows, &selected)?;
        let question_id = &kb.question(q).id;
        let option_ids: Vec<String> = selected.iter().map(|&l| kb.question(q).options[l].id.clone()).collect();
        let next = belief.update(&beta, &cfg.smoothing, question_id, &option_ids)?;
        let asked_flags = questions.iter().map(|n| asked.contains(n)).collect();
        let (h_prev, h_next) = (belief.entropy(), next.entropy());
        steps.push((
            Transition {
                s_t: belief.probs().to_vec(),
                asked: asked_flags,
                question: slot,
                selected,
                r_next: 0.0,
                s_next: next.probs().to_vec(),
            },
            h_prev,
            h_next,
        ));
        asked.push(q);
        belief = next;
        if belief.unique_argmax() == Some(target) {
            break;
        }
    }

    let outcome = if belief.unique_argmax() == Some(target) {
        Outcome::Correct
    } else {
        Outcome::Incorrect
    };
    let last = steps.len().saturating_sub(1);
    let transitions = steps
        .into_iter()
        .enumerate()
        .map(|(t, (mut tr, h_prev, h_next))| {
            let terminal = match (t == last, outcome) {
                (false, _) => TerminalOutcome::None,
                (true, Outcome::Correct) => TerminalOutcome::Correct,
                (true, Outcome::Incorrect) => TerminalOutcome::Incorrect,
            };
            tr.r_next = shaped_reward(h_prev, h_next, terminal, cfg);
            tr
        })
        .collect();
    Ok(Episode {
        target,
        transitions,
        outcome,
    })
}
