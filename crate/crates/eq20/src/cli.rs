//! `eq20` command line: serve, play, train, eval, validate-kb and rank.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use eq20_core::belief::{normalize_prior, SmoothingConfig, MAX_TURNS};
use eq20_core::error::{KbError, TrainError};
use eq20_core::eval::{compare_policies, report_csv, self_play_eval, EvalConfig};
use eq20_core::kb::{load_kb, starter_kb, KnowledgeBase};
use eq20_core::nn::OptimizerConfig;
use eq20_core::ranking::{rank_questions, PolicyKind, RankingMode};
use eq20_core::rl::{train, MdpConfig, NetworkBundle, SimulatorMode};
use eq20_core::session::{primed_prior, GameSession, SessionConfig, Step, DEFAULT_CONFIDENCE_THRESHOLD};

use crate::api::{self, ServiceConfig};

/// Exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad input, unreadable files, failed training.
pub const EXIT_FAILURE: i32 = 1;
/// Usage errors and aborted interactive games.
pub const EXIT_ABORTED: i32 = 2;
/// Knowledge base is valid but two concepts cannot be told apart.
pub const EXIT_NOT_IDENTIFIABLE: i32 = 3;

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Parser)]
#[command(name = "eq20", version, about = "Twenty-questions tutor for cybersecurity concepts")]
pub struct Cli {
    /// Knowledge base document; the bundled starter KB is used when absent.
    #[arg(long, global = true, env = "EQ20_KB_PATH")]
    pub kb: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Play one game in the terminal.
    Play(PlayArgs),
    /// Train the policy, value and reward networks by self-play.
    Train(TrainArgs),
    /// Evaluate question policies by self-play and print a CSV table.
    Eval(EvalArgs),
    /// Check a knowledge base document and its identifiability.
    ValidateKb(ValidateArgs),
    /// Print question weights for a belief snapshot.
    Rank(RankArgs),
}

#[derive(Debug, Args)]
pub struct GameArgs {
    #[arg(long, default_value = "attack-vectors")]
    pub category: String,
    #[arg(long, default_value = "entropy-paper")]
    pub policy: PolicyKind,
    /// Stop once the top concept's probability exceeds this.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = MAX_TURNS)]
    pub max_turns: usize,
    /// Weight of reference answers against recorded answer counts.
    #[arg(long, default_value_t = 10.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon_floor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory holding policy.net, value.net and reward.net.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
}

impl GameArgs {
    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            category: self.category.clone(),
            policy: self.policy,
            confidence_threshold: self.threshold,
            max_turns: self.max_turns,
            smoothing: SmoothingConfig {
                alpha: self.alpha,
                epsilon_floor: self.epsilon_floor,
            },
            seed: self.seed,
            ..SessionConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Idle seconds before a session is dropped.
    #[arg(long, default_value_t = 1800)]
    pub session_ttl: u64,
    /// Count live answers into the knowledge base frequencies.
    #[arg(long)]
    pub record_frequencies: bool,
    /// Append-only event log (JSON lines).
    #[arg(long)]
    pub log_path: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    #[command(flatten)]
    pub game: GameArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "attack-vectors")]
    pub category: String,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.95)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1.0)]
    pub reward_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub reward_beta: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10_000)]
    pub memory: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = MAX_TURNS)]
    pub max_turns: usize,
    /// Probability that the simulated user gives a wrong single answer.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value = "reference-deterministic")]
    pub simulator: SimulatorMode,
    /// Games used to score the trained policy after training.
    #[arg(long, default_value_t = 200)]
    pub eval_episodes: usize,
    #[arg(long)]
    pub model_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "attack-vectors")]
    pub category: String,
    #[arg(long, value_delimiter = ',', default_value = "random,entropy-paper,entropy-infogain")]
    pub policies: Vec<PolicyKind>,
    #[arg(long, default_value_t = 1000)]
    pub episodes: usize,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub noise: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Document to check; defaults to --kb.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long, default_value = "attack-vectors")]
    pub category: String,
    /// Comma-separated probabilities in category order; defaults to the prior.
    #[arg(long, value_delimiter = ',')]
    pub belief: Option<Vec<f64>>,
    /// Opening description used to prime the prior when --belief is absent.
    #[arg(long, default_value = "")]
    pub description: String,
    /// Question ids already asked.
    #[arg(long, value_delimiter = ',')]
    pub asked: Vec<String>,
    /// `entropy` (negated expected answer entropy) or `infogain`.
    #[arg(long, default_value = "entropy")]
    pub mode: String,
}

struct Io<'a> {
    input: &'a mut dyn BufRead,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ABORTED } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let mut io = Io { input, out, err };
    match dispatch(cli, &mut io) {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(io.err, "error: {message}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cli: Cli, io: &mut Io) -> Result<i32, String> {
    match cli.command {
        Command::ValidateKb(args) => Ok(validate(args.path.as_deref().or(cli.kb.as_deref()), io)),
        command => {
            let kb = read_kb(cli.kb.as_deref())?;
            match command {
                Command::Serve(a) => serve(kb, a, io),
                Command::Play(a) => play(kb, a, io),
                Command::Train(a) => train_cmd(kb, a, io),
                Command::Eval(a) => eval_cmd(kb, a, io),
                Command::Rank(a) => rank(kb, a, io),
                Command::ValidateKb(_) => unreachable!("handled above"),
            }
        }
    }
}

fn read_kb(path: Option<&Path>) -> Result<KnowledgeBase, String> {
    let Some(path) = path else {
        return Ok(starter_kb());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| format!("cannot read knowledge base `{}`: {e}", path.display()))?;
    load_kb(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn load_models(dir: Option<&Path>) -> Result<Option<NetworkBundle>, String> {
    dir.map(|d| NetworkBundle::load(d).map_err(|e| e.to_string()))
        .transpose()
}

fn validate(path: Option<&Path>, io: &mut Io) -> i32 {
    let kb = match path {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(text) => load_kb(&text),
            Err(e) => {
                let _ = writeln!(io.err, "error: cannot read `{}`: {e}", p.display());
                return EXIT_FAILURE;
            }
        },
        None => Ok(starter_kb()),
    };
    let kb = match kb {
        Ok(kb) => kb,
        Err(e) => {
            let _ = writeln!(io.out, "schema: invalid");
            let _ = writeln!(io.err, "error: {e}");
            return EXIT_FAILURE;
        }
    };
    let _ = writeln!(io.out, "schema: ok");
    let mut clashes = Vec::new();
    for cat in kb.categories() {
        let pairs = kb.validate_identifiability(&cat.id).unwrap_or_default();
        let _ = writeln!(
            io.out,
            "category {}: {} concepts, {} questions",
            cat.id,
            kb.category_concepts(&cat.id).map(|c| c.len()).unwrap_or(0),
            kb.category_questions(&cat.id).map(|q| q.len()).unwrap_or(0)
        );
        clashes.extend(pairs);
    }
    if clashes.is_empty() {
        let _ = writeln!(io.out, "identifiable: yes");
        EXIT_OK
    } else {
        let _ = writeln!(io.out, "identifiable: no");
        for (a, b) in clashes {
            let _ = writeln!(io.out, "  indistinguishable: {a} {b}");
        }
        EXIT_NOT_IDENTIFIABLE
    }
}

fn serve(kb: KnowledgeBase, args: ServeArgs, io: &mut Io) -> Result<i32, String> {
    let _ = tracing_subscriber::fmt()
        .with_target(false)
        .with_writer(std::io::stderr)
        .try_init();
    let mut cfg = ServiceConfig::new(kb);
    cfg.models = load_models(args.model_dir.as_deref())?;
    cfg.session_ttl = Duration::from_secs(args.session_ttl);
    cfg.record_frequencies = args.record_frequencies;
    cfg.log_path = args.log_path;
    cfg.seed = args.seed;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind)
            .await
            .map_err(|e| format!("cannot bind {}: {e}", args.bind))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        let _ = writeln!(io.out, "listening on http://{addr}");
        let _ = io.out.flush();
        api::serve(listener, cfg).await.map_err(|e| e.to_string())
    })?;
    Ok(EXIT_OK)
}

fn read_line(io: &mut Io) -> Option<String> {
    let mut line = String::new();
    match io.input.read_line(&mut line) {
        Ok(0) | Err(_) => None,
        Ok(_) => Some(line.trim().to_string()),
    }
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Letters or option ids separated by commas or spaces.
fn parse_selection(line: &str, q: &eq20_core::kb::Question) -> Option<Vec<String>> {
    let mut picked: Vec<String> = Vec::new();
    for token in line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
    {
        let by_letter = (token.len() == 1)
            .then(|| token.to_ascii_uppercase().chars().next())
            .flatten()
            .and_then(|c| (c as usize).checked_sub('A' as usize))
            .and_then(|i| q.options.get(i));
        let by_id = q.options.iter().find(|o| o.id.eq_ignore_ascii_case(token));
        let option = by_letter.or(by_id)?;
        if !picked.contains(&option.id) {
            picked.push(option.id.clone());
        }
    }
    (!picked.is_empty()).then_some(picked)
}

const MAX_INVALID: usize = 3;

fn play(kb: KnowledgeBase, args: PlayArgs, io: &mut Io) -> Result<i32, String> {
    let cfg = args.game.session_config();
    let network = match (cfg.policy, load_models(args.game.model_dir.as_deref())?) {
        (PolicyKind::Learned, Some(m)) => {
            m.check_shapes(&kb, &cfg.category).map_err(|e| e.to_string())?;
            Some(Arc::new(m.policy))
        }
        (PolicyKind::Learned, None) => return Err("the learned policy needs --model-dir".into()),
        _ => None,
    };
    let _ = writeln!(io.out, "Briefly describe the incident you are experiencing");
    let Some(description) = read_line(io) else {
        let _ = writeln!(io.err, "aborted: no input");
        return Ok(EXIT_ABORTED);
    };
    let mut session = GameSession::start(&kb, "cli".into(), &description, cfg, network).map_err(|e| e.to_string())?;
    loop {
        let q = session
            .pending_question(&kb)
            .expect("active session has a question")
            .clone();
        let _ = writeln!(io.out, "\n{}", q.text);
        for (i, o) in q.options.iter().enumerate() {
            let _ = writeln!(io.out, "  {}) {}", letter(i), o.text);
        }
        let mut invalid = 0;
        let selection = loop {
            let _ = write!(io.out, "> ");
            let _ = io.out.flush();
            let Some(line) = read_line(io) else {
                let _ = writeln!(io.err, "aborted: end of input");
                return Ok(EXIT_ABORTED);
            };
            match parse_selection(&line, &q) {
                Some(s) => break s,
                None => {
                    invalid += 1;
                    if invalid >= MAX_INVALID {
                        let _ = writeln!(io.err, "aborted: {MAX_INVALID} invalid selections");
                        return Ok(EXIT_ABORTED);
                    }
                    let _ = writeln!(io.out, "Please answer with one or more of the letters shown.");
                }
            }
        };
        match session
            .submit_answer(&kb, &q.id, &selection)
            .map_err(|e| e.to_string())?
        {
            Step::Next(_) => continue,
            Step::Finished(result) => {
                let _ = writeln!(
                    io.out,
                    "\nThe {} you are thinking of is {} (confidence {:.3}, {}).",
                    kb.categories()
                        .iter()
                        .find(|c| c.id == session.config().category)
                        .map(|c| c.name.to_lowercase())
                        .unwrap_or_else(|| "concept".into()),
                    result.concept_name,
                    result.confidence,
                    result.status.as_str()
                );
                let _ = writeln!(io.out, "\n{}\n", result.explanation.text);
                let _ = writeln!(io.out, "turn  jump     question -> answer");
                for row in &result.explanation.trace {
                    let mark = if row.turn == turn_of(&result) { '*' } else { ' ' };
                    let _ = writeln!(
                        io.out,
                        "{mark}{:>3}  {:+.4}  {} -> {}",
                        row.turn,
                        row.jump,
                        row.question,
                        row.answer.join(",")
                    );
                }
                return Ok(EXIT_OK);
            }
        }
    }
}

fn turn_of(result: &eq20_core::session::SessionResult) -> usize {
    let e = &result.explanation;
    e.trace
        .iter()
        .find(|r| r.question == e.pivotal_question)
        .map(|r| r.turn)
        .unwrap_or(0)
}

fn train_cmd(kb: KnowledgeBase, a: TrainArgs, io: &mut Io) -> Result<i32, String> {
    let cfg = MdpConfig {
        category: a.category.clone(),
        gamma: a.gamma,
        max_turns: a.max_turns,
        kappa: a.kappa,
        reward_alpha: a.reward_alpha,
        reward_beta: a.reward_beta,
        epochs: a.epochs,
        batch_size: a.batch_size,
        memory_capacity: a.memory,
        hidden_units: a.hidden,
        optimizer: OptimizerConfig {
            learning_rate: a.learning_rate,
            gradient_clip_norm: a.clip,
            seed: a.seed,
        },
        smoothing: SmoothingConfig::default(),
        simulator: a.simulator,
        noise_prob: a.noise,
        seed: a.seed,
    };
    if a.epochs == 0 {
        let _ = writeln!(io.err, "warning: --epochs 0 writes untrained networks");
    }
    let (nets, log) = match train(&kb, &cfg) {
        Ok(r) => r,
        Err(TrainError::Numerical {
            what,
            epoch,
            checkpoint,
        }) => {
            checkpoint.save(&a.model_dir).map_err(|e| e.to_string())?;
            return Err(format!(
                "non-finite {what} at epoch {epoch}; last good networks saved to {}",
                a.model_dir.display()
            ));
        }
        Err(e) => return Err(e.to_string()),
    };
    nets.save(&a.model_dir)
        .map_err(|e| format!("cannot write {}: {e}", a.model_dir.display()))?;
    let mut lines = String::new();
    for rec in &log {
        lines.push_str(&serde_json::to_string(rec).map_err(|e| e.to_string())?);
        lines.push('\n');
    }
    let log_path = a.model_dir.join(TRAIN_LOG_FILE);
    std::fs::write(&log_path, lines).map_err(|e| format!("cannot write {}: {e}", log_path.display()))?;
    let _ = writeln!(io.out, "wrote {} epochs to {}", log.len(), a.model_dir.display());
    if a.eval_episodes > 0 {
        let eval = EvalConfig {
            session: SessionConfig {
                category: a.category,
                policy: PolicyKind::Learned,
                ..SessionConfig::default()
            },
            episodes: a.eval_episodes,
            seed: a.seed,
            ..EvalConfig::default()
        };
        let r = self_play_eval(&kb, &eval, Some(Arc::new(nets.policy))).map_err(|e| e.to_string())?;
        let _ = writeln!(
            io.out,
            "final: success_rate={:.3} mean_turns={:.2} episodes={}",
            r.success_rate, r.mean_turns, r.episodes
        );
    }
    Ok(EXIT_OK)
}

fn eval_cmd(kb: KnowledgeBase, a: EvalArgs, io: &mut Io) -> Result<i32, String> {
    let models = load_models(a.model_dir.as_deref())?;
    let network = match models {
        Some(m) => {
            m.check_shapes(&kb, &a.category).map_err(|e| e.to_string())?;
            Some(Arc::new(m.policy))
        }
        None => None,
    };
    let base = EvalConfig {
        session: SessionConfig {
            category: a.category.clone(),
            policy: a.policies.first().copied().unwrap_or(PolicyKind::EntropyConditional),
            confidence_threshold: a.threshold,
            ..SessionConfig::default()
        },
        episodes: a.episodes,
        seed: a.seed,
        ..EvalConfig::default()
    };
    let reports = if a.policies.len() >= 2 {
        compare_policies(&kb, &base, &a.policies, &a.noise, network).map_err(|e| e.to_string())?
    } else {
        let mut out = Vec::new();
        for &noise_prob in &a.noise {
            let cfg = EvalConfig {
                noise_prob,
                ..base.clone()
            };
            out.push(self_play_eval(&kb, &cfg, network.clone()).map_err(|e| e.to_string())?);
        }
        out
    };
    let csv = report_csv(&reports);
    match a.out {
        Some(path) => std::fs::write(&path, csv).map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => {
            let _ = write!(io.out, "{csv}");
        }
    }
    Ok(EXIT_OK)
}

fn rank(kb: KnowledgeBase, a: RankArgs, io: &mut Io) -> Result<i32, String> {
    let mode = match a.mode.as_str() {
        "entropy" => RankingMode::ConditionalEntropy,
        "infogain" => RankingMode::ExpectedInfoGain,
        other => return Err(format!("unknown mode `{other}` (expected entropy or infogain)")),
    };
    let probs = match a.belief {
        Some(b) => normalize_prior(&b).map_err(|e| e.to_string())?.probs().to_vec(),
        None => {
            let prior = primed_prior(&kb, &a.category, &a.description, 1.0).map_err(|e: KbError| e.to_string())?;
            normalize_prior(&prior).map_err(|e| e.to_string())?.probs().to_vec()
        }
    };
    let asked = a
        .asked
        .iter()
        .map(|id| kb.question_index(id))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let ranking = rank_questions(&kb, &a.category, &probs, &asked, mode, &SmoothingConfig::default())
        .map_err(|e| e.to_string())?;
    for (id, w) in ranking.entries {
        let _ = writeln!(io.out, "{id}\t{w:.12}");
    }
    Ok(EXIT_OK)
}
