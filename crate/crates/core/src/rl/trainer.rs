//! Joint training loop for the policy, value and reward networks.
//!
//! Each epoch samples a target by prior weight, plays one episode with the
//! current stochastic policy against the user simulator, scores every step
//! with the reward network, squashes the discounted return through a
//! sigmoid, regresses the value network toward it, stores the advantage in
//! episode memory and, once memory holds more than a batch, updates the
//! reward and policy networks from a sampled mini-batch.

use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{entropy, SmoothingConfig, MAX_TURNS};
use crate::error::{KbError, NnError, PolicyError, TrainError};
use crate::kb::KnowledgeBase;
use crate::nn::{DenseNetwork, Direction, Gradients, Head, OptimizerConfig};

use super::episode::{rollout_episode, Outcome};
use super::features::{policy_input, reward_input, reward_input_dim, value_input};
use super::memory::{EpisodeMemory, MemoryEntry};
use super::reward::{discounted_return, supervision_targets};
use super::simulator::{SimulatorMode, UserSimulator};
use super::{derive_seed, seeded_rng};

pub const POLICY_FILE: &str = "policy.net";
pub const VALUE_FILE: &str = "value.net";
pub const REWARD_FILE: &str = "reward.net";

#[derive(Debug, Clone, PartialEq)]
pub struct MdpConfig {
    pub category: String,
    pub gamma: f64,
    pub max_turns: usize,
    pub kappa: f64,
    pub reward_alpha: f64,
    pub reward_beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub memory_capacity: usize,
    pub hidden_units: usize,
    pub optimizer: OptimizerConfig,
    pub smoothing: SmoothingConfig,
    pub simulator: SimulatorMode,
    pub noise_prob: f64,
    pub seed: u64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            category: "attack-vectors".into(),
            gamma: 0.95,
            max_turns: MAX_TURNS,
            kappa: 1.0,
            reward_alpha: 1.0,
            reward_beta: 1.0,
            epochs: 2000,
            batch_size: 64,
            memory_capacity: 10_000,
            hidden_units: 64,
            optimizer: OptimizerConfig::default(),
            smoothing: SmoothingConfig::default(),
            simulator: SimulatorMode::ReferenceDeterministic,
            noise_prob: 0.0,
            seed: 0,
        }
    }
}

impl MdpConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if self.max_turns == 0 || self.max_turns > MAX_TURNS {
            return bad(format!("max_turns {} outside [1, {MAX_TURNS}]", self.max_turns));
        }
        if self.kappa.is_nan() || self.kappa <= 0.0 {
            return bad(format!("kappa {} must be positive", self.kappa));
        }
        if !(self.reward_alpha >= 0.0 && self.reward_beta >= 0.0) {
            return bad("reward_alpha and reward_beta must be non-negative".into());
        }
        if self.batch_size == 0 || self.memory_capacity == 0 || self.hidden_units == 0 {
            return bad("batch_size, memory_capacity and hidden_units must be positive".into());
        }
        if !(0.0..1.0).contains(&self.noise_prob) {
            return bad(format!("noise_prob {} outside [0, 1)", self.noise_prob));
        }
        self.smoothing.validate().map_err(TrainError::Config)?;
        self.optimizer.validate()?;
        Ok(())
    }
}

/// The three trained networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkBundle {
    pub policy: DenseNetwork,
    pub value: DenseNetwork,
    pub reward: DenseNetwork,
}

impl NetworkBundle {
    /// Fresh networks sized for `category`. The policy's output layer starts
    /// at zero so an untrained policy is uniform over unasked questions.
    pub fn initialize<R: Rng + ?Sized>(
        kb: &KnowledgeBase,
        category: &str,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        let m = kb.category_concepts(category)?.len();
        let n = kb.category_questions(category)?.len();
        let l = kb.max_options(category)?;
        let mut policy = DenseNetwork::new(&[m + n, hidden, n], Head::MaskedSoftmax, rng)?;
        let value = DenseNetwork::new(&[m, hidden, 1], Head::SigmoidScalar, rng)?;
        let reward = DenseNetwork::new(&[reward_input_dim(m, n, l), hidden, 1], Head::LinearScalar, rng)?;
        let out = policy.num_parameters() - n * hidden - n;
        for i in out..policy.num_parameters() {
            policy.set_parameter(i, 0.0);
        }
        Ok(Self { policy, value, reward })
    }

    /// Checks that the networks' shapes fit `category`.
    pub fn check_shapes(&self, kb: &KnowledgeBase, category: &str) -> Result<(), KbError> {
        let m = kb.category_concepts(category)?.len();
        let n = kb.category_questions(category)?.len();
        let l = kb.max_options(category)?;
        let ok = self.policy.head() == Head::MaskedSoftmax
            && self.policy.input_dim() == m + n
            && self.policy.output_dim() == n
            && self.value.head() == Head::SigmoidScalar
            && self.value.input_dim() == m
            && self.reward.head() == Head::LinearScalar
            && self.reward.input_dim() == reward_input_dim(m, n, l);
        if ok {
            Ok(())
        } else {
            Err(KbError::Validation(format!(
                "checkpoint shapes do not match category `{category}` ({m} concepts, {n} questions)"
            )))
        }
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(POLICY_FILE), self.policy.to_text())?;
        std::fs::write(dir.join(VALUE_FILE), self.value.to_text())?;
        std::fs::write(dir.join(REWARD_FILE), self.reward.to_text())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, LoadError> {
        let read = |name: &str| -> Result<DenseNetwork, LoadError> {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| LoadError::Io(path.display().to_string(), e))?;
            DenseNetwork::from_text(&text).map_err(|e| LoadError::Format(path.display().to_string(), e))
        };
        Ok(Self {
            policy: read(POLICY_FILE)?,
            value: read(VALUE_FILE)?,
            reward: read(REWARD_FILE)?,
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read `{0}`: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("`{0}`: {1}")]
    Format(String, #[source] NnError),
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub target: String,
    pub turns: usize,
    pub outcome: Outcome,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub reward_loss: f64,
    pub mean_advantage: f64,
}

fn numerical(what: &'static str, epoch: usize, checkpoint: &NetworkBundle) -> TrainError {
    TrainError::Numerical {
        what,
        epoch,
        checkpoint: Box::new(checkpoint.clone()),
    }
}

/// Samples a question from the policy, never one already asked.
pub fn sample_question<R: Rng + ?Sized>(
    policy: &DenseNetwork,
    questions: &[usize],
    probs: &[f64],
    asked: &[usize],
    rng: &mut R,
) -> Result<usize, PolicyError> {
    let mask: Vec<bool> = questions.iter().map(|n| asked.contains(n)).collect();
    let dist = policy.forward(&policy_input(probs, &mask), Some(&mask))?;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_open = None;
    for (slot, &p) in dist.iter().enumerate() {
        if mask[slot] {
            continue;
        }
        last_open = Some(slot);
        acc += p;
        if u < acc {
            return Ok(questions[slot]);
        }
    }
    last_open.map(|s| questions[s]).ok_or(PolicyError::Exhausted)
}

/// One descent step of the value network toward the squashed return `ret`,
/// then the advantage `ret - V(s)` under the updated network. Returns the
/// pre-step loss and the advantage.
pub fn value_step(value: &mut DenseNetwork, s: &[f64], ret: f64, opt: &OptimizerConfig) -> Result<(f64, f64), NnError> {
    let vin = value_input(s);
    let (loss, grads) = value.sigmoid_mse_gradient(&vin, ret)?;
    value.sgd_step(&grads, opt, Direction::Descent)?;
    Ok((loss, ret - value.scalar(&vin)?))
}

/// Runs the joint training loop and returns the trained networks with one
/// log record per epoch.
pub fn train(kb: &KnowledgeBase, cfg: &MdpConfig) -> Result<(NetworkBundle, Vec<EpochLog>), TrainError> {
    cfg.validate()?;
    let concepts = kb.category_concepts(&cfg.category)?.to_vec();
    let questions = kb.category_questions(&cfg.category)?.to_vec();
    let max_options = kb.max_options(&cfg.category)?;
    let prior = kb.prior_weights(&cfg.category)?;
    let target_dist =
        WeightedIndex::new(&prior).map_err(|e| TrainError::Config(format!("cannot sample targets by prior: {e}")))?;

    let mut rng = seeded_rng(cfg.seed);
    let mut nets = NetworkBundle::initialize(kb, &cfg.category, cfg.hidden_units, &mut rng)?;
    let mut memory = EpisodeMemory::new(cfg.memory_capacity);
    let mut log = Vec::with_capacity(cfg.epochs);
    let batch_scale = 1.0 / cfg.batch_size as f64;

    for epoch in 1..=cfg.epochs {
        let checkpoint = nets.clone();
        let target_slot = target_dist.sample(&mut rng);
        let target = concepts[target_slot];
        let mut sim = UserSimulator::from_index(
            target,
            cfg.simulator,
            cfg.noise_prob,
            derive_seed(cfg.seed, epoch as u64),
        )?;

        let mut policy_rng = seeded_rng(derive_seed(cfg.seed ^ 0x5EED, epoch as u64));
        let policy = &nets.policy;
        let mut choose = |p: &[f64], asked: &[usize]| sample_question(policy, &questions, p, asked, &mut policy_rng);
        let episode = rollout_episode(&mut choose, &mut sim, kb, cfg)?;

        // Immediate rewards come from the reward network.
        let rewards: Vec<f64> = episode
            .transitions
            .iter()
            .map(|tr| {
                nets.reward.scalar(&reward_input(
                    &tr.s_t,
                    tr.question,
                    questions.len(),
                    &tr.selected,
                    max_options,
                    target_slot,
                ))
            })
            .collect::<Result<_, _>>()?;
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(numerical("reward estimate", epoch, &checkpoint));
        }
        let mut entropies = Vec::with_capacity(episode.turns() + 1);
        if let Some(first) = episode.transitions.first() {
            entropies.push(entropy(&first.s_t));
        }
        entropies.extend(episode.transitions.iter().map(|tr| entropy(&tr.s_next)));
        let reward_targets = supervision_targets(&entropies, episode.is_correct(), cfg);
        let returns = discounted_return(&rewards, cfg.gamma);

        let (mut value_loss, mut policy_loss, mut reward_loss, mut adv_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for (t, tr) in episode.transitions.iter().enumerate() {
            let (loss, advantage) = value_step(&mut nets.value, &tr.s_t, returns[t], &cfg.optimizer)
                .map_err(|_| numerical("value update", epoch, &checkpoint))?;
            value_loss += loss;
            adv_sum += advantage;
            memory.push(MemoryEntry {
                state: tr.s_t.clone(),
                asked: tr.asked.clone(),
                question: tr.question,
                selected: tr.selected.clone(),
                target: target_slot,
                advantage,
                reward_target: reward_targets[t],
            });

            if memory.len() > cfg.batch_size {
                let batch = memory.sample(&mut rng, cfg.batch_size);
                let mut g_reward = Gradients::zeros_like(&nets.reward);
                let mut g_policy = Gradients::zeros_like(&nets.policy);
                let (mut rl, mut pl) = (0.0, 0.0);
                for e in batch {
                    let rin = reward_input(
                        &e.state,
                        e.question,
                        questions.len(),
                        &e.selected,
                        max_options,
                        e.target,
                    );
                    let (loss, g) = nets.reward.linear_mse_gradient(&rin, e.reward_target)?;
                    rl += loss;
                    g_reward.accumulate(&g);
                    let pin = policy_input(&e.state, &e.asked);
                    let (logp, g) = nets
                        .policy
                        .log_prob_gradient(&pin, Some(&e.asked), e.question, e.advantage)?;
                    pl -= logp * e.advantage;
                    g_policy.accumulate(&g);
                }
                g_reward.scale(batch_scale);
                g_policy.scale(batch_scale);
                reward_loss += rl * batch_scale;
                policy_loss += pl * batch_scale;
                batches += 1;
                nets.reward
                    .sgd_step(&g_reward, &cfg.optimizer, Direction::Descent)
                    .map_err(|_| numerical("reward update", epoch, &checkpoint))?;
                nets.policy
                    .sgd_step(&g_policy, &cfg.optimizer, Direction::Ascent)
                    .map_err(|_| numerical("policy update", epoch, &checkpoint))?;
            }
        }
        let turns = episode.turns().max(1) as f64;
        let per_batch = |x: f64| if batches > 0 { x / batches as f64 } else { 0.0 };
        let record = EpochLog {
            epoch,
            target: kb.concept(target).id.clone(),
            turns: episode.turns(),
            outcome: episode.outcome,
            policy_loss: per_batch(policy_loss),
            value_loss: value_loss / turns,
            reward_loss: per_batch(reward_loss),
            mean_advantage: adv_sum / turns,
        };
        if ![
            record.policy_loss,
            record.value_loss,
            record.reward_loss,
            record.mean_advantage,
        ]
        .iter()
        .all(|x| x.is_finite())
        {
            return Err(numerical("loss", epoch, &checkpoint));
        }
        log.push(record);
    }
    Ok((nets, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::starter_kb;

    fn small_cfg(epochs: usize) -> MdpConfig {
        MdpConfig {
            category: "kill-chain-stages".into(),
            epochs,
            batch_size: 8,
            hidden_units: 16,
            seed: 3,
            ..MdpConfig::default()
        }
    }

    #[test]
    fn zero_epochs_gives_uniform_policy() {
        let kb = starter_kb();
        let (nets, log) = train(&kb, &small_cfg(0)).unwrap();
        assert!(log.is_empty());
        let questions = kb.category_questions("kill-chain-stages").unwrap();
        let m = kb.category_concepts("kill-chain-stages").unwrap().len();
        let mut mask = vec![false; questions.len()];
        mask[0] = true;
        mask[3] = true;
        let dist = nets
            .policy
            .forward(&policy_input(&vec![1.0 / m as f64; m], &mask), Some(&mask))
            .unwrap();
        let open = (questions.len() - 2) as f64;
        for (i, p) in dist.iter().enumerate() {
            if mask[i] {
                assert_eq!(*p, 0.0);
            } else {
                assert!((p - 1.0 / open).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_seeds_replay_identically() {
        let kb = starter_kb();
        let (a, la) = train(&kb, &small_cfg(30)).unwrap();
        let (b, lb) = train(&kb, &small_cfg(30)).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let (c, _) = train(
            &kb,
            &MdpConfig {
                seed: 4,
                ..small_cfg(30)
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn log_invariants_hold() {
        let kb = starter_kb();
        let (nets, log) = train(&kb, &small_cfg(40)).unwrap();
        assert_eq!(log.len(), 40);
        for rec in &log {
            assert!(rec.turns >= 1 && rec.turns <= 20);
            assert!(rec.mean_advantage > -1.0 && rec.mean_advantage < 1.0);
        }
        assert!(nets.policy.is_finite() && nets.value.is_finite() && nets.reward.is_finite());
        nets.check_shapes(&kb, "kill-chain-stages").unwrap();
        assert!(nets.check_shapes(&kb, "attack-vectors").is_err());
    }

    #[test]
    fn bundle_round_trips_through_directory() {
        let kb = starter_kb();
        let (nets, _) = train(&kb, &small_cfg(5)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        nets.save(dir.path()).unwrap();
        assert_eq!(NetworkBundle::load(dir.path()).unwrap(), nets);
    }

    #[test]
    fn rejects_bad_config() {
        let kb = starter_kb();
        assert!(train(
            &kb,
            &MdpConfig {
                gamma: 1.5,
                ..small_cfg(1)
            }
        )
        .is_err());
        assert!(train(
            &kb,
            &MdpConfig {
                max_turns: 21,
                ..small_cfg(1)
            }
        )
        .is_err());
        assert!(train(
            &kb,
            &MdpConfig {
                category: "nope".into(),
                ..small_cfg(1)
            }
        )
        .is_err());
    }

    #[test]
    fn sampled_questions_never_repeat() {
        let kb = starter_kb();
        let (nets, _) = train(&kb, &small_cfg(10)).unwrap();
        let questions = kb.category_questions("kill-chain-stages").unwrap();
        let m = kb.category_concepts("kill-chain-stages").unwrap().len();
        let mut rng = seeded_rng(2);
        let mut asked = Vec::new();
        for _ in 0..questions.len() {
            let q = sample_question(&nets.policy, questions, &vec![1.0 / m as f64; m], &asked, &mut rng).unwrap();
            assert!(!asked.contains(&q));
            asked.push(q);
        }
        assert_eq!(
            sample_question(&nets.policy, questions, &vec![1.0 / m as f64; m], &asked, &mut rng),
            Err(PolicyError::Nn(NnError::EmptyMask))
        );
    }
}
