//! `forge`: batch driver and session server.
//!
//! Every command prints one JSON object on stdout and exits 0 only when its
//! job finished with status `done`.

mod config;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use forge_core::batch::{
    self, AnalyzeInputs, BatchError, BatchJob, GenerationConfig, JobStatus, TopUp,
};
use forge_core::dialogue::AgentBindings;
use forge_core::modbench::{self, Adapter, Averaging, EvalOptions, Task};
use forge_core::refinement::{self, RefineBindings, RefineConfig};
use forge_core::registry::{self, RegistryError, SeedCorpus, SeedFormat};
use forge_core::vsm::{self, QuestionBank, ReferenceTable, SurveyConfig};
use forge_core::{CultureId, CultureRegistry, Gender, Mode};
use serde_json::{json, Value};
use thiserror::Error;

use config::{ForgeConfig, Role};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("io error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Refinement(#[from] refinement::RefinementError),
    #[error(transparent)]
    Vsm(#[from] vsm::VsmError),
    #[error(transparent)]
    Moderation(#[from] modbench::ModError),
    #[error(transparent)]
    Server(#[from] forge_server::ServerError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Parser, Debug)]
#[command(name = "forge", version, about = "Cultural dialogue data engine")]
struct Cli {
    /// Backend configuration (TOML). Without it, offline mock backends are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra roster entries (JSON) merged over the bundled cultures.
    #[arg(long, global = true)]
    roster: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run dialogues for every seed and write transcripts.
    Generate(GenerateArgs),
    /// Extract, verify, and deduplicate opinions from transcripts.
    Refine(RefineArgs),
    /// Convert refined samples into chat-format fine-tuning records.
    Export(ExportArgs),
    /// Compute dialogue statistics over transcripts.
    Analyze(AnalyzeArgs),
    /// Evaluate a model endpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Serve live sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Seed file (JSONL, or CSV by extension).
    #[arg(long)]
    seeds: PathBuf,
    /// Only seeds targeting this culture.
    #[arg(long)]
    culture: Option<String>,
    #[arg(long, default_value = "self_guided")]
    mode: Mode,
    #[arg(long)]
    max_turns: Option<usize>,
    /// Library guidance cadence in statements.
    #[arg(long)]
    guidance_every: Option<usize>,
    #[arg(long)]
    delegate_gender: Option<Gender>,
    #[arg(long)]
    contact_gender: Option<Gender>,
    /// Stamp turns with wall-clock time instead of the turn index.
    #[arg(long)]
    wall_clock: bool,
    /// Stop after this many seeds.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RefineArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    target_count: usize,
    #[arg(long)]
    no_verify: bool,
    #[arg(long)]
    no_diversify: bool,
    /// Run extra dialogues for seeds short of the target.
    #[arg(long)]
    top_up: bool,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Refined samples (JSONL).
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    culture: String,
    /// Defaults to `finetune-<culture>.jsonl` next to the samples.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    transcripts: PathBuf,
    /// Defaults to the transcript directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Refined samples whose answers are classified and scored for diversity.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Classify topics with the judge model.
    #[arg(long)]
    topics: bool,
    /// Skip the embedding-based diversity score.
    #[arg(long)]
    no_diversity: bool,
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Administer the VSM survey and score six dimensions.
    Vsm(VsmArgs),
    /// Zero-shot moderation F1.
    Mod(ModArgs),
}

#[derive(Args, Debug)]
struct VsmArgs {
    /// Question bank CSV (q_index,text).
    #[arg(long)]
    bank: PathBuf,
    /// Reference scores CSV (culture,PDI,IDV,MAS,UAI,LTO,IVR).
    #[arg(long)]
    reference: PathBuf,
    /// Cultures to survey; repeat or separate with commas.
    #[arg(long, required = true, value_delimiter = ',')]
    culture: Vec<String>,
    /// Culture whose reference row fixes the constants.
    #[arg(long, default_value = "en")]
    anchor: String,
    #[arg(long, default_value_t = vsm::DEFAULT_REPETITIONS)]
    repetitions: usize,
    #[arg(long, default_value_t = vsm::DEFAULT_TEMPERATURE)]
    temperature: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModArgs {
    /// Dataset files; pair each with a --task and --culture, or give one of each for all.
    #[arg(long, required = true)]
    dataset: Vec<PathBuf>,
    #[arg(long, default_value = "jsonl")]
    adapter: Adapter,
    #[arg(long, required = true)]
    task: Vec<Task>,
    #[arg(long, required = true)]
    culture: Vec<String>,
    #[arg(long, default_value = "macro", value_parser = parse_averaging)]
    averaging: Averaging,
    /// Weight the per-culture mean by dataset size.
    #[arg(long)]
    by_size: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_averaging(s: &str) -> Result<Averaging, String> {
    match s {
        "macro" => Ok(Averaging::Macro),
        "micro" => Ok(Averaging::Micro),
        other => Err(format!("unknown averaging {other:?} (macro or micro)")),
    }
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Seeds addressable by id.
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Where closed sessions are written.
    #[arg(long)]
    transcripts: Option<PathBuf>,
}

struct Env {
    config: ForgeConfig,
    registry: CultureRegistry,
}

impl Env {
    fn load(cli: &Cli) -> Result<Self, CliError> {
        let config = ForgeConfig::load(cli.config.as_deref())?;
        let registry = match &cli.roster {
            Some(p) => CultureRegistry::bundled_with(&fs::read_to_string(p).map_err(io_err(p))?)?,
            None => CultureRegistry::bundled(),
        };
        Ok(Env { config, registry })
    }

    fn agents(&self) -> Result<AgentBindings, CliError> {
        Ok(AgentBindings { contact: self.config.binding(Role::Contact)?, delegate: self.config.binding(Role::Delegate)? })
    }

    fn culture(&self, id: &str) -> Result<CultureId, CliError> {
        let id = CultureId::new(id);
        if !self.registry.contains(&id) {
            return Err(RegistryError::UnknownCulture(id.as_str().to_string()).into());
        }
        Ok(id)
    }

    fn seeds(&self, path: &Path) -> Result<SeedCorpus, CliError> {
        Ok(registry::load_seed_corpus(path, SeedFormat::from_path(path), &self.registry)?)
    }
}

fn generation_config(args: &GenerateArgs) -> Result<GenerationConfig, CliError> {
    if args.mode == Mode::Interactive {
        return Err(CliError::Usage("interactive sessions are driven through `forge serve`".into()));
    }
    let mut g = GenerationConfig { mode: args.mode, ..Default::default() };
    if let Some(n) = args.max_turns {
        if n == 0 {
            return Err(CliError::Usage("--max-turns must be positive".into()));
        }
        g.max_turns = n;
    }
    if let Some(n) = args.guidance_every {
        g.guidance_every = n;
    }
    g.delegate_gender = args.delegate_gender;
    g.contact_gender = args.contact_gender;
    if args.wall_clock {
        g.clock = forge_core::dialogue::Clock::System;
    }
    Ok(g)
}

fn job_summary(job: &BatchJob, extra: Value) -> (Value, bool) {
    let mut v = serde_json::to_value(job).expect("job serializes");
    if let (Value::Object(map), Value::Object(more)) = (&mut v, extra) {
        map.extend(more);
    }
    (v, job.status == JobStatus::Done)
}

fn done(extra: Value) -> (Value, bool) {
    let mut v = json!({"status": "done"});
    if let (Value::Object(map), Value::Object(more)) = (&mut v, extra) {
        map.extend(more);
    }
    (v, true)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    fs::write(path, bytes).map_err(io_err(path))
}

fn run(cli: Cli) -> Result<(Value, bool), CliError> {
    let env = Env::load(&cli)?;
    match cli.command {
        Command::Generate(args) => {
            let generation = generation_config(&args)?;
            let mut corpus = env.seeds(&args.seeds)?;
            if let Some(c) = &args.culture {
                corpus = corpus.filter_culture(&env.culture(c)?);
            }
            let mut seeds = corpus.entries().to_vec();
            if let Some(n) = args.limit {
                seeds.truncate(n);
            }
            let gw = env.config.gateway()?;
            let job = batch::run_generation_batch(&seeds, &env.registry, &gw, &env.agents()?, &generation, &args.out)?;
            Ok(job_summary(&job, json!({"out": args.out})))
        }
        Command::Refine(args) => {
            let mut config = RefineConfig { target_count: args.target_count, ..Default::default() };
            config.stages.verify = !args.no_verify;
            config.stages.diversify = !args.no_diversify;
            let bindings = RefineBindings {
                extraction: env.config.binding(Role::Extraction)?,
                verification: env.config.binding(Role::Verification)?,
                embedding: env.config.binding(Role::Embedding)?,
            };
            let gw = env.config.gateway()?;
            let agents = env.agents()?;
            let generation = GenerationConfig::default();
            let top_up =
                args.top_up.then_some(TopUp { registry: &env.registry, agents: &agents, generation: &generation });
            let (job, manifest) =
                batch::run_refine_batch(&args.transcripts, &env.registry, &gw, &bindings, &config, top_up, &args.out)?;
            Ok(job_summary(&job, json!({"manifest": manifest})))
        }
        Command::Export(args) => {
            let culture = env.culture(&args.culture)?;
            let text = fs::read_to_string(&args.samples).map_err(io_err(&args.samples))?;
            let samples = refinement::read_samples(&text)?;
            let out = args.out.unwrap_or_else(|| args.samples.with_file_name(format!("finetune-{culture}.jsonl")));
            let manifest =
                refinement::export_finetune_file(&samples, &culture, env.registry.display_name(&culture)?, &out)?;
            Ok(done(json!({"manifest": manifest})))
        }
        Command::Analyze(args) => {
            let out = args.out.clone().unwrap_or_else(|| args.transcripts.clone());
            let samples = match &args.samples {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(io_err(p))?;
                    Some(refinement::read_samples(&text)?.into_iter().map(|s| s.answer).collect())
                }
                None => None,
            };
            let judge = env.config.binding(Role::Judge)?;
            let embedding = env.config.binding(Role::Embedding)?;
            let inputs = AnalyzeInputs {
                judge: &judge,
                embedding: (!args.no_diversity).then_some(&embedding),
                samples,
                classify_topics: args.topics,
            };
            let gw = env.config.gateway()?;
            let (job, report) = batch::run_analyze_batch(&args.transcripts, &gw, &inputs, &out)?;
            Ok(job_summary(&job, json!({"report": report})))
        }
        Command::Eval(EvalCommand::Vsm(args)) => {
            let bank = QuestionBank::load(&args.bank)?;
            let reference = ReferenceTable::load(&args.reference)?;
            let cultures = args.culture.iter().map(|c| env.culture(c)).collect::<Result<Vec<_>, _>>()?;
            let anchor = env.culture(&args.anchor)?;
            if args.repetitions == 0 {
                return Err(CliError::Usage("--repetitions must be positive".into()));
            }
            let survey = SurveyConfig { repetitions: args.repetitions, ..Default::default() };
            let binding = env.config.binding(Role::Evaluated)?.with_temperature(args.temperature);
            let gw = env.config.gateway()?;
            let reports =
                batch::run_vsm_eval(&gw, &binding, &bank, &reference, &env.registry, &cultures, &anchor, &survey)?;
            if let Some(p) = &args.out {
                write_json(p, &reports)?;
            }
            Ok(done(json!({"model": binding.model_name, "anchor": anchor, "reports": reports})))
        }
        Command::Eval(EvalCommand::Mod(args)) => {
            let n = args.dataset.len();
            let pick = |len: usize, name: &str| -> Result<(), CliError> {
                if len == 1 || len == n {
                    Ok(())
                } else {
                    Err(CliError::Usage(format!("give one --{name} or one per --dataset ({n})")))
                }
            };
            pick(args.task.len(), "task")?;
            pick(args.culture.len(), "culture")?;
            let mut datasets = Vec::with_capacity(n);
            for (i, path) in args.dataset.iter().enumerate() {
                let task = args.task[i.min(args.task.len() - 1)];
                let culture = env.culture(&args.culture[i.min(args.culture.len() - 1)])?;
                datasets.push(modbench::load_dataset(path, args.adapter, task, culture, None)?);
            }
            let options = EvalOptions {
                averaging: args.averaging,
                weighting: if args.by_size {
                    modbench::CultureWeighting::BySize
                } else {
                    modbench::CultureWeighting::Unweighted
                },
            };
            let binding = env.config.binding(Role::Evaluated)?;
            let gw = env.config.gateway()?;
            let report = batch::run_moderation_eval(&datasets, &env.registry, &gw, &binding, &options)?;
            if let Some(p) = &args.out {
                write_json(p, &report)?;
                let csv = p.with_extension("csv");
                fs::write(&csv, report.to_csv()).map_err(io_err(&csv))?;
            }
            Ok(done(json!({"report": report})))
        }
        Command::Serve(args) => {
            let corpus = match &args.seeds {
                Some(p) => env.seeds(p)?,
                None => SeedCorpus::default(),
            };
            let mut state =
                forge_server::AppState::new(env.registry.clone(), corpus, env.config.gateway()?, env.agents()?);
            if let Some(dir) = args.transcripts {
                state = state.with_transcript_dir(dir);
            }
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Usage(format!("runtime: {e}")))?;
            runtime.block_on(forge_server::serve(args.addr, Arc::new(state)))?;
            Ok(done(json!({"addr": args.addr.to_string()})))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok((summary, ok)) => {
            println!("{summary}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            println!("{}", json!({"status": "failed", "error": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
