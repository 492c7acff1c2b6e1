//! One interactive game: prior priming from the opening description, the
//! question loop, termination and the final explanation.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{aggregate_likelihood, normalize_prior, question_rows, BeliefState, SmoothingConfig, MAX_TURNS};
use crate::error::{BeliefError, KbError, SessionError};
use crate::explain::{explain, Explanation};
use crate::kb::{KnowledgeBase, Question};
use crate::nn::DenseNetwork;
use crate::ranking::{select_question, PolicyKind};
use crate::rl::{seeded_rng, SeededRng};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub category: String,
    pub policy: PolicyKind,
    pub confidence_threshold: f64,
    pub max_turns: usize,
    pub smoothing: SmoothingConfig,
    pub seed: u64,
    /// Prior multiplier per matched keyword is `1 + keyword_boost`.
    pub keyword_boost: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            category: "attack-vectors".into(),
            policy: PolicyKind::EntropyConditional,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            max_turns: MAX_TURNS,
            smoothing: SmoothingConfig::default(),
            seed: 0,
            keyword_boost: 1.0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::Config(m));
        if !(self.confidence_threshold > 0.5 && self.confidence_threshold <= 1.0) {
            return bad(format!(
                "confidence_threshold {} outside (0.5, 1]",
                self.confidence_threshold
            ));
        }
        if self.max_turns == 0 || self.max_turns > MAX_TURNS {
            return bad(format!("max_turns {} outside [1, {MAX_TURNS}]", self.max_turns));
        }
        if !(self.keyword_boost.is_finite() && self.keyword_boost >= 0.0) {
            return bad(format!("keyword_boost {} must be finite and >= 0", self.keyword_boost));
        }
        self.smoothing.validate().map_err(SessionError::Config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingAnswer,
    Identified,
    Exhausted,
}

impl SessionStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SessionStatus::AwaitingAnswer => "awaiting_answer",
            SessionStatus::Identified => "identified",
            SessionStatus::Exhausted => "exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub concept: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub turn: usize,
    pub question: String,
    pub question_text: String,
    pub answer: Vec<String>,
    pub answer_text: Vec<String>,
    /// Three most probable concepts after the answer.
    pub top: Vec<RankedConcept>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub concept: String,
    pub concept_name: String,
    pub confidence: f64,
    pub status: SessionStatus,
    pub explanation: Explanation,
}

/// What happens after an answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Next(Question),
    Finished(SessionResult),
}

#[derive(Debug, Clone)]
pub struct GameSession {
    id: String,
    cfg: SessionConfig,
    concepts: Vec<usize>,
    belief: BeliefState,
    asked: Vec<usize>,
    pending: Option<usize>,
    status: SessionStatus,
    transcript: Vec<TranscriptEntry>,
    result: Option<SessionResult>,
    rng: SeededRng,
    network: Option<Arc<DenseNetwork>>,
}

/// Lowercased tokens of free text; hyphens stay inside tokens.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Prior weights of `category` boosted by keywords found in `text`.
pub fn primed_prior(kb: &KnowledgeBase, category: &str, text: &str, boost: f64) -> Result<Vec<f64>, KbError> {
    let tokens = tokenize(text);
    let weights = kb.prior_weights(category)?;
    Ok(kb
        .category_concepts(category)?
        .iter()
        .zip(weights)
        .map(|(&m, w)| {
            let matched: BTreeSet<&str> = kb
                .concept(m)
                .keywords
                .iter()
                .map(String::as_str)
                .filter(|k| tokens.contains(*k))
                .collect();
            w * (1.0 + boost).powi(matched.len() as i32)
        })
        .collect())
}

/// Starts a game with a fresh identifier derived from the seed.
pub fn start_session(
    kb: &KnowledgeBase,
    initiation_text: &str,
    cfg: &SessionConfig,
) -> Result<GameSession, SessionError> {
    GameSession::start(
        kb,
        format!("session-{:016x}", cfg.seed),
        initiation_text,
        cfg.clone(),
        None,
    )
}

impl GameSession {
    /// Builds the primed prior and picks the first question. `network` is
    /// required for the learned policy and ignored otherwise.
    pub fn start(
        kb: &KnowledgeBase,
        id: String,
        initiation_text: &str,
        cfg: SessionConfig,
        network: Option<Arc<DenseNetwork>>,
    ) -> Result<Self, SessionError> {
        cfg.validate()?;
        let concepts = kb.category_concepts(&cfg.category)?.to_vec();
        if concepts.len() < 2 {
            return Err(SessionError::Config(format!(
                "category `{}` needs at least two concepts",
                cfg.category
            )));
        }
        let prior = primed_prior(kb, &cfg.category, initiation_text, cfg.keyword_boost)?;
        let belief = normalize_prior(&prior)?;
        let rng = seeded_rng(cfg.seed);
        let mut session = Self {
            id,
            cfg,
            concepts,
            belief,
            asked: Vec::new(),
            pending: None,
            status: SessionStatus::AwaitingAnswer,
            transcript: Vec::new(),
            result: None,
            rng,
            network,
        };
        session.pending = Some(session.next_question(kb)?);
        Ok(session)
    }

    fn next_question(&mut self, kb: &KnowledgeBase) -> Result<usize, SessionError> {
        Ok(select_question(
            self.cfg.policy,
            kb,
            &self.cfg.category,
            self.belief.probs(),
            &self.asked,
            &self.cfg.smoothing,
            &mut self.rng,
            self.network.as_deref(),
        )?)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn turn(&self) -> usize {
        self.belief.turn()
    }

    /// Ids of asked questions in order.
    pub fn asked<'a>(&self, kb: &'a KnowledgeBase) -> Vec<&'a str> {
        self.asked.iter().map(|&n| kb.question(n).id.as_str()).collect()
    }

    pub fn pending_question<'a>(&self, kb: &'a KnowledgeBase) -> Option<&'a Question> {
        self.pending.map(|n| kb.question(n))
    }

    /// Concepts ranked by current probability, most likely first (ties by KB order).
    pub fn ranked(&self, kb: &KnowledgeBase) -> Vec<RankedConcept> {
        let mut order: Vec<usize> = (0..self.concepts.len()).collect();
        let p = self.belief.probs();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .map(|slot| RankedConcept {
                concept: kb.concept(self.concepts[slot]).id.clone(),
                probability: p[slot],
            })
            .collect()
    }

    /// Applies the answer to the pending question.
    pub fn submit_answer(
        &mut self,
        kb: &KnowledgeBase,
        question_id: &str,
        options: &[String],
    ) -> Result<Step, SessionError> {
        let pending = match (self.status, self.pending) {
            (SessionStatus::AwaitingAnswer, Some(q)) => q,
            _ => return Err(SessionError::Closed),
        };
        let question = kb.question(pending);
        if question.id != question_id {
            return Err(SessionError::OutOfOrder {
                expected: question.id.clone(),
                got: question_id.to_string(),
            });
        }
        if options.is_empty() {
            return Err(SessionError::Belief(BeliefError::EmptySelection));
        }
        let mut selected = Vec::with_capacity(options.len());
        for id in options {
            match question.option_index(id) {
                Some(l) if !selected.contains(&l) => selected.push(l),
                _ => {
                    return Err(SessionError::InvalidOption {
                        question: question.id.clone(),
                        option: id.clone(),
                    })
                }
            }
        }
        let rows = question_rows(kb, &self.concepts, pending, &self.cfg.smoothing)?;
        let beta = aggregate_likelihood(&rows, &selected)?;
        let option_ids: Vec<String> = selected.iter().map(|&l| question.options[l].id.clone()).collect();
        self.belief = self
            .belief
            .update(&beta, &self.cfg.smoothing, &question.id, &option_ids)?;
        self.asked.push(pending);
        self.pending = None;
        let top = self.ranked(kb).into_iter().take(3).collect();
        self.transcript.push(TranscriptEntry {
            turn: self.belief.turn(),
            question: question.id.clone(),
            question_text: question.text.clone(),
            answer: option_ids,
            answer_text: selected.iter().map(|&l| question.options[l].text.clone()).collect(),
            top,
        });

        let (slot, confidence) = self.belief.argmax();
        let questions_left = kb.category_questions(&self.cfg.category)?.len() > self.asked.len();
        let status = if confidence > self.cfg.confidence_threshold {
            SessionStatus::Identified
        } else if self.belief.turn() >= self.cfg.max_turns || !questions_left {
            SessionStatus::Exhausted
        } else {
            let next = self.next_question(kb)?;
            self.pending = Some(next);
            return Ok(Step::Next(kb.question(next).clone()));
        };
        let concept = self.concepts[slot];
        let explanation = explain(kb, &self.cfg.category, self.belief.history(), concept)?
            .expect("at least one turn has been played");
        let result = SessionResult {
            concept: kb.concept(concept).id.clone(),
            concept_name: kb.concept(concept).name.clone(),
            confidence,
            status,
            explanation,
        };
        self.status = status;
        self.result = Some(result.clone());
        Ok(Step::Finished(result))
    }

    pub fn result(&self) -> Result<&SessionResult, SessionError> {
        self.result.as_ref().ok_or(SessionError::StillActive)
    }

    /// Plain-text transcript: one block per turn with the top three
    /// concepts after the answer.
    pub fn export_transcript(&self, kb: &KnowledgeBase) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "session {} ({})", self.id, self.cfg.category);
        for e in &self.transcript {
            let _ = writeln!(out, "turn {}: {}", e.turn, e.question_text);
            let _ = writeln!(out, "  answer: {}", e.answer_text.join(", "));
            let top: Vec<String> = e
                .top
                .iter()
                .map(|r| {
                    let name = kb
                        .concept_index(&r.concept)
                        .map(|m| kb.concept(m).name.as_str())
                        .unwrap_or(&r.concept);
                    format!("{name} {:.3}", r.probability)
                })
                .collect();
            let _ = writeln!(out, "  top: {}", top.join(" | "));
        }
        match &self.result {
            Some(r) => {
                let _ = writeln!(
                    out,
                    "result: {} ({:.3}, {})",
                    r.concept_name,
                    r.confidence,
                    r.status.as_str()
                );
            }
            None => {
                let _ = writeln!(out, "result: pending");
            }
        }
        out
    }
}

/// How replay answers questions missing from the script.
#[derive(Debug, Clone, PartialEq)]
pub enum Fallback {
    /// Unscripted questions are an error.
    None,
    /// Answer with the reference options of this concept id.
    TargetReference(String),
}

/// Plays a whole game from a script of answers keyed by question id.
pub fn replay_transcript(
    kb: &KnowledgeBase,
    cfg: &SessionConfig,
    initiation_text: &str,
    script: &HashMap<String, Vec<String>>,
    fallback: &Fallback,
) -> Result<GameSession, SessionError> {
    let target = match fallback {
        Fallback::TargetReference(id) => Some(kb.concept_index(id)?),
        Fallback::None => None,
    };
    let mut session = start_session(kb, initiation_text, cfg)?;
    while let Some(q) = session.pending {
        let question = kb.question(q);
        let answer = match (script.get(&question.id), target) {
            (Some(a), _) => a.clone(),
            (None, Some(m)) => kb
                .cell(m, q)?
                .reference
                .iter()
                .map(|&l| question.options[l].id.clone())
                .collect(),
            (None, None) => return Err(SessionError::Unscripted(question.id.clone())),
        };
        session.submit_answer(kb, &question.id, &answer)?;
    }
    Ok(session)
}
