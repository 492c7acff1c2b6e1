use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{answer_likelihood, SmoothingConfig};
use crate::error::KbError;
use crate::kb::KnowledgeBase;

use super::{seeded_rng, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimulatorMode {
    /// Answers with the reference option set, occasionally replaced by a
    /// single wrong option.
    #[default]
    ReferenceDeterministic,
    /// Draws one option from the smoothed likelihood row.
    LikelihoodSampling,
}

impl SimulatorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SimulatorMode::ReferenceDeterministic => "reference-deterministic",
            SimulatorMode::LikelihoodSampling => "likelihood-sampling",
        }
    }
}

impl std::str::FromStr for SimulatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SimulatorMode::ReferenceDeterministic, SimulatorMode::LikelihoodSampling]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown simulator `{s}` (expected reference-deterministic, likelihood-sampling)"))
    }
}

/// Automated player that has a target concept in mind.
#[derive(Debug, Clone)]
pub struct UserSimulator {
    target: usize,
    mode: SimulatorMode,
    noise_prob: f64,
    rng: SeededRng,
}

impl UserSimulator {
    pub fn new(
        kb: &KnowledgeBase,
        target: &str,
        mode: SimulatorMode,
        noise_prob: f64,
        seed: u64,
    ) -> Result<Self, KbError> {
        let target = kb.concept_index(target)?;
        Self::from_index(target, mode, noise_prob, seed)
    }

    pub fn from_index(target: usize, mode: SimulatorMode, noise_prob: f64, seed: u64) -> Result<Self, KbError> {
        if !(0.0..1.0).contains(&noise_prob) {
            return Err(KbError::Validation(format!(
                "noise_prob must lie in [0, 1), got {noise_prob}"
            )));
        }
        Ok(Self {
            target,
            mode,
            noise_prob,
            rng: seeded_rng(seed),
        })
    }

    /// Global index of the target concept.
    pub fn target(&self) -> usize {
        self.target
    }

    /// Selected option indices for `question` (global index).
    ///
    /// Every call consumes exactly two random draws, so two simulators with
    /// the same seed stay in lockstep turn by turn whichever questions they
    /// are asked.
    pub fn simulate_answer(
        &mut self,
        kb: &KnowledgeBase,
        question: usize,
        cfg: &SmoothingConfig,
    ) -> Result<Vec<usize>, KbError> {
        let cell = kb.cell(self.target, question)?;
        let coin: f64 = self.rng.random();
        let pick: f64 = self.rng.random();
        match self.mode {
            SimulatorMode::ReferenceDeterministic => {
                let wrong: Vec<usize> = (0..cell.frequencies.len()).filter(|l| !cell.is_reference(*l)).collect();
                if coin < self.noise_prob && !wrong.is_empty() {
                    let i = ((pick * wrong.len() as f64) as usize).min(wrong.len() - 1);
                    Ok(vec![wrong[i]])
                } else {
                    Ok(cell.reference.clone())
                }
            }
            SimulatorMode::LikelihoodSampling => {
                let row = answer_likelihood(kb, self.target, question, cfg)?;
                let mut acc = 0.0;
                for (l, &p) in row.0.iter().enumerate() {
                    acc += p;
                    if pick < acc {
                        return Ok(vec![l]);
                    }
                }
                Ok(vec![row.0.iter().rposition(|&p| p > 0.0).unwrap_or(0)])
            }
        }
    }
}
