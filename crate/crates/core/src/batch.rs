//! Resumable batch jobs: generation, refinement, analysis, and evaluation.
//!
//! Jobs keep their state as flat files in a workspace directory. Each job
//! writes `job.json` with a config snapshot, its hash, and progress; work
//! units that already have an output file made under the same config are
//! skipped on rerun.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError, AnalysisReport, DiversitySummary};
use crate::dialogue::{
    self, open_session, run_session_to_completion, AgentBindings, Clock, DialogueError, DialogueSession, Mode,
    SessionConfig, SessionStatus,
};
use crate::gateway::{BackendBinding, Gateway};
use crate::modbench::{self, EvalOptions, EvalReport, ModError, ModerationDataset};
use crate::refinement::{
    self, collect_opinions, finish_seed, RefineBindings, RefineConfig, RefinedSample, RefinementError, SeedRefinement,
};
use crate::registry::{CultureId, CultureRegistry, Gender, RegistryError, SeedDatum};
use crate::util::{config_hash, file_stem_for, stable_hash, write_atomic};
use crate::vsm::{self, QuestionBank, ReferenceTable, SurveyConfig, VsmError, VsmReport};

pub const JOB_FILE: &str = "job.json";

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("io error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid job input: {0}")]
    Input(String),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Refinement(#[from] RefinementError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Vsm(#[from] VsmError),
    #[error(transparent)]
    Moderation(#[from] ModError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BatchError + '_ {
    move |e| BatchError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Generate,
    Refine,
    Analyze,
    EvalVsm,
    EvalModeration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchJob {
    pub job_id: String,
    pub kind: JobKind,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub progress: Progress,
    pub status: JobStatus,
    /// Work units skipped because their output already existed.
    pub skipped: Vec<String>,
    /// Failure cause per work unit.
    pub failures: BTreeMap<String, String>,
}

impl BatchJob {
    pub fn start<C: Serialize>(kind: JobKind, config: &C, total: usize) -> Self {
        let hash = config_hash(config);
        BatchJob {
            job_id: format!("{}-{hash}", serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
            kind,
            config: serde_json::to_value(config).expect("config serializes"),
            config_hash: hash,
            progress: Progress { done: 0, total },
            status: JobStatus::Running,
            skipped: Vec::new(),
            failures: BTreeMap::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), BatchError> {
        let path = dir.join(JOB_FILE);
        write_atomic(&path, &serde_json::to_vec_pretty(self).expect("job serializes")).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, BatchError> {
        let path = dir.join(JOB_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| BatchError::Io { path, message: e.to_string() })
    }

    fn tick(&mut self, dir: &Path) -> Result<(), BatchError> {
        self.progress.done += 1;
        self.save(dir)
    }

    /// Done unless every unit failed.
    fn finish(&mut self, dir: &Path) -> Result<(), BatchError> {
        self.status = if self.progress.total > 0 && self.failures.len() == self.progress.total {
            JobStatus::Failed
        } else {
            JobStatus::Done
        };
        self.save(dir)
    }

    pub fn is_done(&self) -> bool {
        self.status == JobStatus::Done
    }
}

/// Settings for dialogue generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub mode: Mode,
    pub max_turns: usize,
    pub guidance_every: usize,
    pub library: Vec<String>,
    /// Fixed delegate gender; alternates by seed when absent.
    pub delegate_gender: Option<Gender>,
    /// Fixed main-contact gender; alternates by seed when absent.
    pub contact_gender: Option<Gender>,
    pub clock: Clock,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let s = SessionConfig::default();
        GenerationConfig {
            mode: s.mode,
            max_turns: s.max_turns,
            guidance_every: s.guidance_every,
            library: s.library,
            delegate_gender: None,
            contact_gender: None,
            clock: Clock::Logical,
        }
    }
}

impl GenerationConfig {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            mode: self.mode,
            max_turns: self.max_turns,
            guidance_every: self.guidance_every,
            library: self.library.clone(),
            clock: self.clock,
        }
    }

    /// Unset genders start from the seed-id hash parity and walk through
    /// the four pairings as `attempt` grows, so top-up dialogues differ.
    fn genders(&self, seed: &SeedDatum, attempt: usize) -> (Gender, Gender) {
        let flip = stable_hash(&seed.seed_id).is_multiple_of(2);
        let alt = |first: bool| if first { Gender::Male } else { Gender::Female };
        let delegate = alt(flip ^ (attempt & 1 == 1));
        let contact = alt(!flip ^ (attempt & 2 == 2));
        (self.delegate_gender.unwrap_or(delegate), self.contact_gender.unwrap_or(contact))
    }
}

/// Session id for the `attempt`-th dialogue generated from a seed.
pub fn session_id_for(seed: &SeedDatum, attempt: usize) -> String {
    format!("{}-s{attempt}", file_stem_for(&seed.seed_id))
}

/// Opens and runs one session, then writes its transcript.
#[allow(clippy::too_many_arguments)]
pub fn generate_session(
    seed: &SeedDatum,
    attempt: usize,
    registry: &CultureRegistry,
    gateway: &Gateway,
    bindings: &AgentBindings,
    config: &GenerationConfig,
    transcripts: &Path,
    hash: &str,
) -> Result<DialogueSession, BatchError> {
    let (delegate_gender, contact_gender) = config.genders(seed, attempt);
    let (contact, delegate) = registry.resolve_personas(&seed.target_culture, delegate_gender, contact_gender)?;
    let session = open_session(
        session_id_for(seed, attempt),
        seed.clone(),
        contact,
        delegate,
        registry,
        config.session_config(),
    )?;
    let session = run_session_to_completion(session, gateway, bindings);
    dialogue::write_transcript(&session, transcripts, hash)?;
    Ok(session)
}

#[derive(Serialize)]
struct GenerateSnapshot<'a> {
    generation: &'a GenerationConfig,
    bindings: &'a AgentBindings,
    seeds: Vec<&'a str>,
}

/// One completed dialogue per seed, transcripts in `out`. Seeds that already
/// have a completed transcript are skipped. A seed whose session aborts is
/// recorded as failed; the batch fails only if every seed fails.
pub fn run_generation_batch(
    seeds: &[SeedDatum],
    registry: &CultureRegistry,
    gateway: &Gateway,
    bindings: &AgentBindings,
    config: &GenerationConfig,
    out: &Path,
) -> Result<BatchJob, BatchError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let snapshot = GenerateSnapshot { generation: config, bindings, seeds: seeds.iter().map(|s| s.seed_id.as_str()).collect() };
    let mut job = BatchJob::start(JobKind::Generate, &snapshot, seeds.len());
    let hash = job.config_hash.clone();
    job.save(out)?;
    for seed in seeds {
        let path = dialogue::transcript_path(out, &session_id_for(seed, 0));
        let existing = path.exists().then(|| dialogue::read_transcript(&path)).and_then(Result::ok);
        if existing.is_some_and(|(s, _)| s.status == SessionStatus::Completed) {
            info!("seed {}: transcript exists, skipping", seed.seed_id);
            job.skipped.push(seed.seed_id.clone());
        } else {
            match generate_session(seed, 0, registry, gateway, bindings, config, out, &hash) {
                Ok(s) if s.status == SessionStatus::Completed => {}
                Ok(s) => {
                    let cause = s.abort_cause.unwrap_or_else(|| "aborted".into());
                    warn!("seed {}: {cause}", seed.seed_id);
                    job.failures.insert(seed.seed_id.clone(), cause);
                }
                Err(e) => {
                    warn!("seed {}: {e}", seed.seed_id);
                    job.failures.insert(seed.seed_id.clone(), e.to_string());
                }
            }
        }
        job.tick(out)?;
    }
    job.finish(out)?;
    Ok(job)
}

/// Reads every transcript (`*.jsonl`) in a directory, sorted by session id.
pub fn load_transcripts(dir: &Path) -> Result<Vec<DialogueSession>, BatchError> {
    let mut sessions = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "jsonl") {
            let (session, _) = dialogue::read_transcript(&path)
                .map_err(|e| BatchError::Input(format!("{}: {e}", path.display())))?;
            sessions.push(session);
        }
    }
    sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Ok(sessions)
}

/// How refinement may run extra dialogues when a seed falls short.
pub struct TopUp<'a> {
    pub registry: &'a CultureRegistry,
    pub agents: &'a AgentBindings,
    pub generation: &'a GenerationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CultureTally {
    pub seeds: usize,
    pub samples: usize,
    /// Samples per seed.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineManifest {
    pub stages: String,
    pub target_count: usize,
    pub config_hash: String,
    pub total_seeds: usize,
    pub total_samples: usize,
    pub cultures: BTreeMap<CultureId, CultureTally>,
    pub samples_files: BTreeMap<CultureId, PathBuf>,
}

pub const REFINE_MANIFEST: &str = "refine_manifest.json";

#[derive(Serialize)]
struct RefineSnapshot<'a> {
    refine: &'a RefineConfig,
    bindings: &'a RefineBindings,
}

#[derive(Serialize, Deserialize)]
struct SeedMarker {
    config_hash: String,
    result: SeedRefinement,
}

/// Refines every seed found in `transcripts`, writing per-culture sample
/// files and a manifest to `out`. With `top_up`, seeds with fewer verified
/// opinions than the target get extra dialogues, up to the retry budget.
pub fn run_refine_batch(
    transcripts: &Path,
    registry: &CultureRegistry,
    gateway: &Gateway,
    bindings: &RefineBindings,
    config: &RefineConfig,
    top_up: Option<TopUp<'_>>,
    out: &Path,
) -> Result<(BatchJob, RefineManifest), BatchError> {
    if config.target_count == 0 {
        return Err(BatchError::Input("target_count must be positive".into()));
    }
    let sessions = load_transcripts(transcripts)?;
    let mut by_seed: BTreeMap<String, (SeedDatum, Vec<DialogueSession>)> = BTreeMap::new();
    for s in sessions {
        by_seed.entry(s.seed.seed_id.clone()).or_insert_with(|| (s.seed.clone(), Vec::new())).1.push(s);
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let markers = out.join("seeds");
    fs::create_dir_all(&markers).map_err(io_err(&markers))?;
    let mut job = BatchJob::start(JobKind::Refine, &RefineSnapshot { refine: config, bindings }, by_seed.len());
    job.save(out)?;

    let mut results: Vec<SeedRefinement> = Vec::new();
    for (seed_id, (seed, mut sessions)) in by_seed {
        let marker = markers.join(format!("{}.json", file_stem_for(&seed_id)));
        if let Some(prev) = fs::read_to_string(&marker)
            .ok()
            .and_then(|t| serde_json::from_str::<SeedMarker>(&t).ok())
            .filter(|m| m.config_hash == job.config_hash)
        {
            job.skipped.push(seed_id.clone());
            results.push(prev.result);
            job.tick(out)?;
            continue;
        }
        let culture_name = registry.display_name(&seed.target_culture)?.to_string();
        match refine_one(&seed, &culture_name, &mut sessions, gateway, bindings, config, top_up.as_ref(), transcripts) {
            Ok(result) => {
                let m = SeedMarker { config_hash: job.config_hash.clone(), result: result.clone() };
                write_atomic(&marker, &serde_json::to_vec(&m).expect("marker serializes")).map_err(io_err(&marker))?;
                results.push(result);
            }
            Err(e) => {
                warn!("seed {seed_id}: {e}");
                job.failures.insert(seed_id, e.to_string());
            }
        }
        job.tick(out)?;
    }

    let mut per_culture: BTreeMap<CultureId, Vec<RefinedSample>> = BTreeMap::new();
    let mut seed_counts: BTreeMap<CultureId, usize> = BTreeMap::new();
    for r in &results {
        if let Some(first) = r.samples.first() {
            *seed_counts.entry(first.culture.clone()).or_insert(0) += 1;
        }
        for s in &r.samples {
            per_culture.entry(s.culture.clone()).or_default().push(s.clone());
        }
    }
    let mut samples_files = BTreeMap::new();
    let mut cultures = BTreeMap::new();
    for (culture, samples) in &per_culture {
        let path = out.join(format!("samples-{}.jsonl", file_stem_for(culture.as_str())));
        write_atomic(&path, refinement::samples_to_jsonl(samples).as_bytes()).map_err(io_err(&path))?;
        samples_files.insert(culture.clone(), path);
        let seeds = seed_counts.get(culture).copied().unwrap_or(0);
        cultures.insert(
            culture.clone(),
            CultureTally { seeds, samples: samples.len(), ratio: samples.len() as f64 / seeds.max(1) as f64 },
        );
    }
    let manifest = RefineManifest {
        stages: config.stages.label().to_string(),
        target_count: config.target_count,
        config_hash: job.config_hash.clone(),
        total_seeds: results.len(),
        total_samples: per_culture.values().map(Vec::len).sum(),
        cultures,
        samples_files,
    };
    let path = out.join(REFINE_MANIFEST);
    write_atomic(&path, &serde_json::to_vec_pretty(&manifest).expect("manifest serializes")).map_err(io_err(&path))?;
    job.finish(out)?;
    Ok((job, manifest))
}

#[allow(clippy::too_many_arguments)]
fn refine_one(
    seed: &SeedDatum,
    culture_name: &str,
    sessions: &mut Vec<DialogueSession>,
    gateway: &Gateway,
    bindings: &RefineBindings,
    config: &RefineConfig,
    top_up: Option<&TopUp<'_>>,
    transcripts: &Path,
) -> Result<SeedRefinement, BatchError> {
    let (mut extracted, mut kept) = collect_opinions(seed, sessions, gateway, bindings, config.stages)?;
    if let Some(t) = top_up {
        let hash = config_hash(t.generation);
        let mut extra = 0;
        while kept.len() < config.target_count && extra < config.retry_budget {
            extra += 1;
            let attempt = sessions.len();
            let session = generate_session(seed, attempt, t.registry, gateway, t.agents, t.generation, transcripts, &hash)?;
            let (e, k) = collect_opinions(seed, std::slice::from_ref(&session), gateway, bindings, config.stages)?;
            extracted += e;
            kept.extend(k);
            sessions.push(session);
        }
    }
    if kept.len() < config.target_count {
        warn!("seed {}: {} opinions kept, target {}", seed.seed_id, kept.len(), config.target_count);
    }
    Ok(finish_seed(seed, culture_name, extracted, kept, gateway, bindings, config)?)
}

/// Options for the analysis batch.
pub struct AnalyzeInputs<'a> {
    pub judge: &'a BackendBinding,
    pub embedding: Option<&'a BackendBinding>,
    /// Texts to classify by topic and score for diversity; the seed
    /// questions of the analyzed sessions when absent.
    pub samples: Option<Vec<String>>,
    pub classify_topics: bool,
}

/// Statistics over a transcript directory; writes `report.json` and `report.csv` to `out`.
pub fn run_analyze_batch(
    transcripts: &Path,
    gateway: &Gateway,
    inputs: &AnalyzeInputs<'_>,
    out: &Path,
) -> Result<(BatchJob, AnalysisReport), BatchError> {
    let sessions = load_transcripts(transcripts)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    #[derive(Serialize)]
    struct Snapshot<'a> {
        judge: &'a BackendBinding,
        embedding: Option<&'a BackendBinding>,
        sessions: usize,
    }
    let mut job = BatchJob::start(
        JobKind::Analyze,
        &Snapshot { judge: inputs.judge, embedding: inputs.embedding, sessions: sessions.len() },
        1,
    );
    job.save(out)?;
    let mut report = analysis::analyze_sessions(&sessions, gateway, inputs.judge)?;
    let texts: Vec<String> = match &inputs.samples {
        Some(s) => s.clone(),
        None => {
            let mut seen = std::collections::BTreeSet::new();
            sessions.iter().filter(|s| seen.insert(s.seed.seed_id.clone())).map(|s| s.seed.question.clone()).collect()
        }
    };
    if inputs.classify_topics && !texts.is_empty() {
        report.topic_mix = Some(analysis::classify_topics(&texts, gateway, inputs.judge)?);
    }
    if let (Some(emb), false) = (inputs.embedding, texts.is_empty()) {
        let vectors = gateway.embed_texts(emb, &texts).map_err(AnalysisError::from)?;
        let score = analysis::diversity_score(&vectors)?;
        report.diversity = Some(DiversitySummary { mean_gain: score.mean_gain, set_value: score.set_value });
    }
    let json = out.join("report.json");
    write_atomic(&json, &serde_json::to_vec_pretty(&report).expect("report serializes")).map_err(io_err(&json))?;
    let csv = out.join("report.csv");
    write_atomic(&csv, report.to_csv().as_bytes()).map_err(io_err(&csv))?;
    job.tick(out)?;
    job.finish(out)?;
    Ok((job, report))
}

/// Surveys the anchor culture to fix the constants, then each culture.
/// Reports carry the distance to the reference row when one exists.
#[allow(clippy::too_many_arguments)]
pub fn run_vsm_eval(
    gateway: &Gateway,
    binding: &BackendBinding,
    bank: &QuestionBank,
    reference: &ReferenceTable,
    registry: &CultureRegistry,
    cultures: &[CultureId],
    anchor: &CultureId,
    survey: &SurveyConfig,
) -> Result<Vec<VsmReport>, BatchError> {
    let anchor_ref = reference.get(anchor.as_str())?;
    let anchor_sheet = vsm::administer_survey(gateway, binding, bank, registry.display_name(anchor)?, survey)?;
    let raw = vsm::score_dimensions(&anchor_sheet.means(), &vsm::VsmConstants::default());
    let constants = vsm::calibrate_constants(&raw, anchor_ref);
    let mut reports = Vec::new();
    for culture in cultures {
        let sheet = if culture == anchor {
            anchor_sheet.clone()
        } else {
            vsm::administer_survey(gateway, binding, bank, registry.display_name(culture)?, survey)?
        };
        let reference_row = reference.get(culture.as_str()).ok().copied();
        reports.push(VsmReport::build(culture.as_str(), &sheet, constants, reference_row));
    }
    Ok(reports)
}

/// Evaluates each dataset and aggregates per culture.
pub fn run_moderation_eval(
    datasets: &[ModerationDataset],
    registry: &CultureRegistry,
    gateway: &Gateway,
    binding: &BackendBinding,
    options: &EvalOptions,
) -> Result<EvalReport, BatchError> {
    #[derive(Serialize)]
    struct Snapshot<'a> {
        binding: &'a BackendBinding,
        options: &'a EvalOptions,
        datasets: Vec<&'a str>,
    }
    let hash = config_hash(&Snapshot { binding, options, datasets: datasets.iter().map(|d| d.dataset_id.as_str()).collect() });
    let mut reports = Vec::new();
    for d in datasets {
        let name = registry.display_name(&d.culture)?;
        reports.push(modbench::evaluate(d, name, gateway, binding, options)?);
    }
    Ok(EvalReport::new(&binding.model_name, &hash, *options, reports))
}
