//! Self-play evaluation of question policies against the user simulator.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::MAX_TURNS;
use crate::error::{EvalError, SessionError};
use crate::kb::KnowledgeBase;
use crate::nn::DenseNetwork;
use crate::ranking::PolicyKind;
use crate::rl::{derive_seed, seeded_rng, SimulatorMode, UserSimulator};
use crate::session::{GameSession, SessionConfig};

const TARGET_STREAM: u64 = 0x007A_26E7;
const ANSWER_STREAM: u64 = 0x00A1_153E;
const POLICY_STREAM: u64 = 0x0090_11C7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSampling {
    #[default]
    Uniform,
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Category, policy, threshold and smoothing used by every game.
    /// Its seed is replaced per episode.
    pub session: SessionConfig,
    pub episodes: usize,
    pub noise_prob: f64,
    pub seed: u64,
    pub simulator: SimulatorMode,
    pub targets: TargetSampling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            episodes: 100,
            noise_prob: 0.0,
            seed: 0,
            simulator: SimulatorMode::ReferenceDeterministic,
            targets: TargetSampling::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: PolicyKind,
    pub category: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_turns: f64,
    /// `turn_histogram[t]` counts episodes that ended after `t` questions.
    pub turn_histogram: Vec<usize>,
    pub noise_prob: f64,
    pub seed: u64,
}

impl EvalReport {
    /// Nearest-rank percentile of the turn distribution, `q` in (0, 1].
    pub fn turn_percentile(&self, q: f64) -> usize {
        let total: usize = self.turn_histogram.iter().sum();
        if total == 0 {
            return 0;
        }
        let rank = ((q * total as f64).ceil() as usize).clamp(1, total);
        let mut seen = 0;
        for (turns, &count) in self.turn_histogram.iter().enumerate() {
            seen += count;
            if seen >= rank {
                return turns;
            }
        }
        self.turn_histogram.len() - 1
    }
}

/// Outcome of one self-play game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameOutcome {
    pub target: String,
    pub identified: String,
    pub turns: usize,
}

impl GameOutcome {
    pub fn success(&self) -> bool {
        self.target == self.identified
    }
}

/// Plays episode `index` of an evaluation. Targets, answers and policy
/// randomness come from streams derived from `cfg.seed` and `index`, so
/// every policy evaluated with the same seed faces the same games.
pub fn play_episode(
    kb: &KnowledgeBase,
    cfg: &EvalConfig,
    index: usize,
    network: Option<Arc<DenseNetwork>>,
) -> Result<GameOutcome, EvalError> {
    let category = &cfg.session.category;
    let concepts = kb.category_concepts(category)?;
    let mut target_rng = seeded_rng(derive_seed(cfg.seed ^ TARGET_STREAM, index as u64));
    let slot = match cfg.targets {
        TargetSampling::Uniform => target_rng.random_range(0..concepts.len()),
        TargetSampling::Prior => WeightedIndex::new(kb.prior_weights(category)?)
            .map_err(|e| EvalError::Config(format!("cannot sample targets by prior: {e}")))?
            .sample(&mut target_rng),
    };
    let target = concepts[slot];
    let mut sim = UserSimulator::from_index(
        target,
        cfg.simulator,
        cfg.noise_prob,
        derive_seed(cfg.seed ^ ANSWER_STREAM, index as u64),
    )?;
    let session_cfg = SessionConfig {
        seed: derive_seed(cfg.seed ^ POLICY_STREAM, index as u64),
        ..cfg.session.clone()
    };
    let mut session = GameSession::start(kb, format!("eval-{index}"), "", session_cfg, network)?;
    while let Some(q) = session.pending_question(kb) {
        let q = q.clone();
        let n = kb.question_index(&q.id)?;
        let answer: Vec<String> = sim
            .simulate_answer(kb, n, &cfg.session.smoothing)?
            .into_iter()
            .map(|l| q.options[l].id.clone())
            .collect();
        session.submit_answer(kb, &q.id, &answer)?;
    }
    let result = session.result()?;
    Ok(GameOutcome {
        target: kb.concept(target).id.clone(),
        identified: result.concept.clone(),
        turns: session.turn(),
    })
}

/// Runs `cfg.episodes` self-play games and aggregates them.
pub fn self_play_eval(
    kb: &KnowledgeBase,
    cfg: &EvalConfig,
    network: Option<Arc<DenseNetwork>>,
) -> Result<EvalReport, EvalError> {
    if cfg.episodes == 0 {
        return Err(EvalError::Config("episodes must be at least 1".into()));
    }
    if cfg.session.policy == PolicyKind::Learned && network.is_none() {
        return Err(EvalError::Config(
            "the learned policy needs a trained checkpoint".into(),
        ));
    }
    let mut histogram = vec![0usize; MAX_TURNS + 1];
    let mut successes = 0usize;
    for i in 0..cfg.episodes {
        let outcome = play_episode(kb, cfg, i, network.clone())?;
        histogram[outcome.turns] += 1;
        successes += usize::from(outcome.success());
    }
    let turns: usize = histogram.iter().enumerate().map(|(t, c)| t * c).sum();
    Ok(EvalReport {
        policy: cfg.session.policy,
        category: cfg.session.category.clone(),
        episodes: cfg.episodes,
        success_rate: successes as f64 / cfg.episodes as f64,
        mean_turns: turns as f64 / cfg.episodes as f64,
        turn_histogram: histogram,
        noise_prob: cfg.noise_prob,
        seed: cfg.seed,
    })
}

/// One report per (policy, noise) pair, all sharing `base.seed`.
pub fn compare_policies(
    kb: &KnowledgeBase,
    base: &EvalConfig,
    policies: &[PolicyKind],
    noise_grid: &[f64],
    network: Option<Arc<DenseNetwork>>,
) -> Result<Vec<EvalReport>, EvalError> {
    if policies.len() < 2 {
        return Err(EvalError::Config("compare at least two policies".into()));
    }
    if policies.contains(&PolicyKind::Learned) && network.is_none() {
        return Err(EvalError::Config(
            "the learned policy needs a trained checkpoint".into(),
        ));
    }
    let mut out = Vec::with_capacity(policies.len() * noise_grid.len());
    for &policy in policies {
        for &noise_prob in noise_grid {
            let cfg = EvalConfig {
                session: SessionConfig {
                    policy,
                    ..base.session.clone()
                },
                noise_prob,
                ..base.clone()
            };
            out.push(self_play_eval(kb, &cfg, network.clone())?);
        }
    }
    Ok(out)
}

pub const CSV_HEADER: &str = "policy,noise,episodes,success_rate,mean_turns,p50_turns,p90_turns";

pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.policy,
            r.noise_prob,
            r.episodes,
            r.success_rate,
            r.mean_turns,
            r.turn_percentile(0.5),
            r.turn_percentile(0.9)
        );
    }
    out
}

/// Writes the reports as CSV with a header row.
pub fn emit_report(reports: &[EvalReport], path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, report_csv(reports)).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl From<crate::error::BeliefError> for EvalError {
    fn from(e: crate::error::BeliefError) -> Self {
        EvalError::Session(SessionError::Belief(e))
    }
}
