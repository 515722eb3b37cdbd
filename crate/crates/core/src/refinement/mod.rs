//! Turning completed dialogues into fine-tuning samples.
//!
//! Stages: extract opinions about the target culture from each dialogue,
//! verify each opinion against the seed (relevance and consistency),
//! deduplicate by clustering embeddings and keeping one opinion per
//! cluster, then assemble question/answer samples and export them.

pub mod firstperson;
pub mod kmeans;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{parse_yes_no, YES_NO_SUFFIX};
use crate::dialogue::{DialogueSession, SessionStatus, TurnKind};
use crate::gateway::{BackendBinding, CallTag, ChatMessage, Gateway, GatewayError};
use crate::registry::{CultureId, SeedDatum};
use crate::util::write_atomic;

pub use firstperson::to_first_person;
pub use kmeans::{kmeans, ClusterAssignment, KMeansConfig, KMeansError};

/// Phrase that identifies an opinion-extraction request.
pub const EXTRACTION_MARKER: &str = "List the opinions about";
pub const TARGET_CULTURE_PREFIX: &str = "Target culture: ";
pub const DEFAULT_TARGET_COUNT: usize = 10;
pub const DEFAULT_RETRY_BUDGET: usize = 3;

const ANNOTATOR_SYSTEM: &str = "You are a careful annotator of cross-cultural conversations.";

#[derive(Debug, Error)]
pub enum RefinementError {
    #[error("session {0} is not completed")]
    NotCompleted(String),
    #[error("opinion {opinion_id} belongs to seed {opinion_seed}, not {seed}")]
    Lineage { opinion_id: String, opinion_seed: String, seed: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
    #[error("clustering failed: {0}")]
    Cluster(#[from] KMeansError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opinion {
    pub opinion_id: String,
    pub text: String,
    pub seed_id: String,
    pub session_id: String,
    pub source_turns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub relevant: bool,
    pub consistent: bool,
    pub rationale: String,
}

impl Verdict {
    pub fn passes(&self) -> bool {
        self.relevant && self.consistent
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed_id: String,
    pub session_id: String,
    pub opinion_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinedSample {
    pub question: String,
    pub answer: String,
    pub culture: CultureId,
    pub provenance: Provenance,
}

/// Which optional stages run. Extraction and assembly always run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub verify: bool,
    pub diversify: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages { verify: true, diversify: true }
    }
}

impl Stages {
    pub const GENERATE: Stages = Stages { verify: false, diversify: false };
    pub const GENERATE_VERIFY: Stages = Stages { verify: true, diversify: false };
    pub const FULL: Stages = Stages { verify: true, diversify: true };

    pub fn label(&self) -> &'static str {
        match (self.verify, self.diversify) {
            (false, false) => "generate",
            (true, false) => "generate+verify",
            (false, true) => "generate+diversify",
            (true, true) => "generate+verify+diversify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub target_count: usize,
    pub stages: Stages,
    pub kmeans: KMeansConfig,
    /// Extra dialogue sessions allowed per seed when too few opinions survive.
    pub retry_budget: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            target_count: DEFAULT_TARGET_COUNT,
            stages: Stages::default(),
            kmeans: KMeansConfig::default(),
            retry_budget: DEFAULT_RETRY_BUDGET,
        }
    }
}

/// Backends used during refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineBindings {
    pub extraction: BackendBinding,
    pub verification: BackendBinding,
    pub embedding: BackendBinding,
}

/// Parses a numbered or bulleted list ("1.", "1)", "-", "*").
///
/// Unmarked lines after the first item continue the previous item; lines
/// before it are ignored. Returns `None` if no list item is found.
pub fn parse_numbered_list(text: &str) -> Option<Vec<String>> {
    let mut items: Vec<String> = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(body) = strip_list_marker(line) {
            let body = body.trim();
            if !body.is_empty() {
                items.push(body.to_string());
            }
        } else if let Some(last) = items.last_mut() {
            last.push(' ');
            last.push_str(line);
        }
    }
    if items.is_empty() {
        None
    } else {
        Some(items)
    }
}

fn strip_list_marker(line: &str) -> Option<&str> {
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest);
        }
    }
    let digits = line.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 || digits > 4 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some(rest)
    } else {
        None
    }
}

fn content_words(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.chars().count() > 3)
        .map(str::to_lowercase)
        .collect()
}

/// Statement turns that share the most content words with `opinion`.
fn attribute(session: &DialogueSession, opinion: &str) -> Vec<usize> {
    let words = content_words(opinion);
    let scored: Vec<(usize, usize)> = session
        .statement_turns()
        .map(|t| (t.index, content_words(&t.content).intersection(&words).count()))
        .collect();
    let best = scored.iter().map(|(_, s)| *s).max().unwrap_or(0);
    if best == 0 {
        return Vec::new();
    }
    scored.into_iter().filter(|(_, s)| *s == best).map(|(i, _)| i).collect()
}

/// The extraction request for a session.
pub fn extraction_prompt(session: &DialogueSession) -> String {
    let culture = &session.delegate_culture_name;
    let mut dialogue = String::new();
    for turn in session.turns.iter().filter(|t| t.kind == TurnKind::Statement) {
        dialogue.push_str(&format!("{}: {}\n", turn.speaker, turn.content));
    }
    format!(
        "Below is a dialogue between {contact} ({contact_culture} culture) and {delegate} ({culture} culture) \
         about the question: \"{question}\"\n\
         {EXTRACTION_MARKER} {culture} culture expressed in the dialogue. Write each opinion as one short \
         declarative sentence about the {culture} people, one per line, as a numbered list.\n\
         {TARGET_CULTURE_PREFIX}{culture}\n\n\
         Dialogue:\n{dialogue}",
        contact = session.contact.name,
        contact_culture = session.contact_culture_name,
        delegate = session.delegate.name,
        question = session.seed.question.trim(),
    )
}

/// Extracts opinions about the target culture from a completed session.
pub fn extract_opinions(
    session: &DialogueSession,
    gateway: &Gateway,
    binding: &BackendBinding,
) -> Result<Vec<Opinion>, RefinementError> {
    if session.status != SessionStatus::Completed {
        return Err(RefinementError::NotCompleted(session.session_id.clone()));
    }
    if session.statement_count() == 0 {
        return Ok(Vec::new());
    }
    let history = [ChatMessage::system(ANNOTATOR_SYSTEM), ChatMessage::user(extraction_prompt(session))];
    let tag = CallTag::new("extract").session(session.session_id.clone());
    let reply = gateway.complete_chat_tagged(&tag, binding, &history)?.message.content;
    let Some(items) = parse_numbered_list(&reply) else {
        warn!("session {}: extraction reply is not a list; no opinions taken", session.session_id);
        return Ok(Vec::new());
    };
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(i, text)| Opinion {
            opinion_id: format!("{}-o{}", session.session_id, i + 1),
            source_turns: attribute(session, &text),
            text,
            seed_id: session.seed.seed_id.clone(),
            session_id: session.session_id.clone(),
        })
        .collect())
}

pub fn relevance_prompt(opinion: &Opinion, seed: &SeedDatum) -> String {
    format!(
        "Question: \"{}\"\nOpinion: \"{}\"\nIs the opinion related to the question? {YES_NO_SUFFIX}",
        seed.question.trim(),
        opinion.text
    )
}

pub fn consistency_prompt(opinion: &Opinion, seed: &SeedDatum) -> String {
    format!(
        "Question: \"{}\"\nAttested answer of the target culture: \"{}\"\nOpinion: \"{}\"\n\
         Is the opinion consistent with the attested answer? {YES_NO_SUFFIX}",
        seed.question.trim(),
        seed.attested_answer.trim(),
        opinion.text
    )
}

/// Two independent yes/no judgments: is the opinion on-topic, and does it
/// agree with the attested answer. A reply that is neither yes nor no counts
/// as no.
pub fn verify_opinion(
    opinion: &Opinion,
    seed: &SeedDatum,
    gateway: &Gateway,
    binding: &BackendBinding,
) -> Result<Verdict, RefinementError> {
    if opinion.seed_id != seed.seed_id {
        return Err(RefinementError::Lineage {
            opinion_id: opinion.opinion_id.clone(),
            opinion_seed: opinion.seed_id.clone(),
            seed: seed.seed_id.clone(),
        });
    }
    let tag = CallTag::new("verify").session(opinion.session_id.clone());
    let ask = |prompt: String| -> Result<(bool, String), RefinementError> {
        let history = [ChatMessage::system(ANNOTATOR_SYSTEM), ChatMessage::user(prompt)];
        let raw = gateway.complete_chat_tagged(&tag, binding, &history)?.message.content;
        Ok((parse_yes_no(&raw).unwrap_or(false), raw))
    };
    let (relevant, r1) = ask(relevance_prompt(opinion, seed))?;
    let (consistent, r2) = ask(consistency_prompt(opinion, seed))?;
    Ok(Verdict { relevant, consistent, rationale: format!("relevance: {}; consistency: {}", r1.trim(), r2.trim()) })
}

/// Keeps at most `target_count` opinions, one per embedding cluster.
///
/// Verbatim-identical texts are merged first. Survivors keep input order.
pub fn deduplicate(
    opinions: &[Opinion],
    gateway: &Gateway,
    binding: &BackendBinding,
    target_count: usize,
    config: &KMeansConfig,
) -> Result<Vec<(Opinion, usize)>, RefinementError> {
    if opinions.is_empty() {
        return Err(RefinementError::Precondition("deduplicate needs at least one opinion".into()));
    }
    if target_count == 0 {
        return Err(RefinementError::Precondition("target_count must be positive".into()));
    }
    let mut seen = HashSet::new();
    let unique: Vec<&Opinion> = opinions.iter().filter(|o| seen.insert(o.text.trim().to_string())).collect();
    let texts: Vec<String> = unique.iter().map(|o| o.text.clone()).collect();
    let vectors: Vec<Vec<f64>> = gateway.embed_texts(binding, &texts)?.into_iter().map(|v| v.values).collect();
    let k = target_count.min(unique.len());
    let clusters = kmeans(&vectors, k, config)?;
    let mut reps: Vec<(usize, usize)> =
        clusters.representatives.iter().enumerate().map(|(cluster, &item)| (item, cluster)).collect();
    reps.sort();
    Ok(reps.into_iter().map(|(item, cluster)| (unique[item].clone(), cluster)).collect())
}

/// One sample per survivor: the seed question, answered with the attested
/// stance followed by the opinion in first person.
pub fn assemble_samples(seed: &SeedDatum, culture_name: &str, survivors: &[(Opinion, Option<usize>)]) -> Vec<RefinedSample> {
    let stance = seed.attested_answer.trim().trim_end_matches('.');
    survivors
        .iter()
        .map(|(opinion, cluster_id)| RefinedSample {
            question: seed.question.trim().to_string(),
            answer: format!("{stance}. {}", to_first_person(&opinion.text, culture_name)),
            culture: seed.target_culture.clone(),
            provenance: Provenance {
                seed_id: seed.seed_id.clone(),
                session_id: opinion.session_id.clone(),
                opinion_id: opinion.opinion_id.clone(),
                cluster_id: *cluster_id,
            },
        })
        .collect()
}

/// Counts at each stage for one seed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub extracted: usize,
    pub verified: usize,
    pub survivors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRefinement {
    pub seed_id: String,
    pub counts: StageCounts,
    pub samples: Vec<RefinedSample>,
}

/// Verified (or, with verification off, all) opinions from `sessions`.
pub fn collect_opinions(
    seed: &SeedDatum,
    sessions: &[DialogueSession],
    gateway: &Gateway,
    bindings: &RefineBindings,
    stages: Stages,
) -> Result<(usize, Vec<Opinion>), RefinementError> {
    let mut extracted = 0;
    let mut kept = Vec::new();
    for session in sessions.iter().filter(|s| s.status == SessionStatus::Completed) {
        let opinions = extract_opinions(session, gateway, &bindings.extraction)?;
        extracted += opinions.len();
        for opinion in opinions {
            if !stages.verify || verify_opinion(&opinion, seed, gateway, &bindings.verification)?.passes() {
                kept.push(opinion);
            }
        }
    }
    Ok((extracted, kept))
}

/// Runs the enabled stages over the completed sessions of one seed.
/// Aborted sessions are ignored.
pub fn refine_seed(
    seed: &SeedDatum,
    culture_name: &str,
    sessions: &[DialogueSession],
    gateway: &Gateway,
    bindings: &RefineBindings,
    config: &RefineConfig,
) -> Result<SeedRefinement, RefinementError> {
    let (extracted, kept) = collect_opinions(seed, sessions, gateway, bindings, config.stages)?;
    finish_seed(seed, culture_name, extracted, kept, gateway, bindings, config)
}

pub(crate) fn finish_seed(
    seed: &SeedDatum,
    culture_name: &str,
    extracted: usize,
    kept: Vec<Opinion>,
    gateway: &Gateway,
    bindings: &RefineBindings,
    config: &RefineConfig,
) -> Result<SeedRefinement, RefinementError> {
    let verified = kept.len();
    let survivors: Vec<(Opinion, Option<usize>)> = if config.stages.diversify && !kept.is_empty() {
        deduplicate(&kept, gateway, &bindings.embedding, config.target_count, &config.kmeans)?
            .into_iter()
            .map(|(o, c)| (o, Some(c)))
            .collect()
    } else {
        kept.into_iter().map(|o| (o, None)).collect()
    };
    let samples = assemble_samples(seed, culture_name, &survivors);
    Ok(SeedRefinement {
        seed_id: seed.seed_id.clone(),
        counts: StageCounts { extracted, verified, survivors: samples.len() },
        samples,
    })
}

/// Recommended fine-tuning epochs per culture.
pub fn recommended_epochs(culture: &CultureId) -> Option<u32> {
    match culture.as_str() {
        "ar" => Some(12),
        "bn" => Some(6),
        "zh" => Some(7),
        "de" => Some(4),
        "ko" => Some(2),
        "pt" => Some(3),
        "es" => Some(5),
        "tr" => Some(2),
        _ => None,
    }
}

/// System prompt used for exported chat records and survey administration.
pub fn culture_system_prompt(culture_name: &str) -> String {
    format!("You are a {culture_name} chatbot that knows {culture_name} very well")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub culture: CultureId,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    pub samples_file: PathBuf,
    pub system_prompt: String,
}

#[derive(Serialize)]
struct ExportMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ExportRecord<'a> {
    messages: [ExportMessage<'a>; 3],
}

/// Path of the manifest written next to an export file.
pub fn manifest_path(samples_path: &Path) -> PathBuf {
    let mut name = samples_path.file_stem().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    samples_path.with_file_name(name)
}

/// Writes chat-format fine-tuning records (system, user, assistant) and a
/// manifest next to them.
pub fn export_finetune_file(
    samples: &[RefinedSample],
    culture: &CultureId,
    culture_name: &str,
    path: &Path,
) -> Result<ExportManifest, RefinementError> {
    if let Some(other) = samples.iter().find(|s| &s.culture != culture) {
        return Err(RefinementError::Precondition(format!(
            "sample for culture {} in a {} export",
            other.culture, culture
        )));
    }
    let system_prompt = culture_system_prompt(culture_name);
    let mut out = String::new();
    for s in samples {
        let record = ExportRecord {
            messages: [
                ExportMessage { role: "system", content: &system_prompt },
                ExportMessage { role: "user", content: &s.question },
                ExportMessage { role: "assistant", content: &s.answer },
            ],
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())?;
    let manifest = ExportManifest {
        culture: culture.clone(),
        count: samples.len(),
        epochs: recommended_epochs(culture),
        samples_file: path.to_path_buf(),
        system_prompt,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path(path), &json)?;
    Ok(manifest)
}

/// Reads refined samples (one JSON object per line).
pub fn read_samples(text: &str) -> Result<Vec<RefinedSample>, RefinementError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RefinementError::Precondition(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn samples_to_jsonl(samples: &[RefinedSample]) -> String {
    samples.iter().map(|s| serde_json::to_string(s).expect("sample serializes") + "\n").collect()
}

/// Sample counts per culture.
pub fn count_by_culture(samples: &[RefinedSample]) -> BTreeMap<CultureId, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.culture.clone()).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{open_session, run_session_to_completion, AgentBindings, Clock, Mode, SessionConfig};
    use crate::gateway::mock::{HashEmbedder, ScriptedChat};
    use crate::gateway::RetryPolicy;
    use crate::registry::{CultureRegistry, Gender, SeedSource};
    use std::sync::Arc;

    fn seed() -> SeedDatum {
        SeedDatum {
            seed_id: "q1".into(),
            question: "One of my main goals in life has been to make my parents proud".into(),
            target_culture: "ar".into(),
            attested_answer: "Strongly agree".into(),
            source: SeedSource::Wvs,
        }
    }

    fn gateway(chat: ScriptedChat) -> Gateway {
        Gateway::builder()
            .chat_backend("chat", Arc::new(chat))
            .embedding_backend("emb", Arc::new(HashEmbedder::new(16)))
            .retry(RetryPolicy::immediate(1))
            .build()
    }

    fn binding() -> BackendBinding {
        BackendBinding::chat("chat", "mock://", "m")
    }

    fn emb() -> BackendBinding {
        BackendBinding::embedding("emb", "mock://", "e")
    }

    fn completed(gw: &Gateway, turns: usize) -> DialogueSession {
        let reg = CultureRegistry::bundled();
        let (c, d) = reg.resolve_personas(&"ar".into(), Gender::Male, Gender::Female).unwrap();
        let cfg = SessionConfig::default().with_mode(Mode::FreeChat).with_max_turns(turns).with_clock(Clock::Logical);
        let s = open_session("s1", seed(), c, d, &reg, cfg).unwrap();
        run_session_to_completion(s, gw, &AgentBindings::same(binding()))
    }

    fn opinion(id: &str, text: &str) -> Opinion {
        Opinion {
            opinion_id: id.into(),
            text: text.into(),
            seed_id: "q1".into(),
            session_id: "s1".into(),
            source_turns: vec![],
        }
    }

    #[test]
    fn list_markers() {
        assert_eq!(parse_numbered_list("1. a\n2) b\n- c\n* d").unwrap(), vec!["a", "b", "c", "d"]);
        assert_eq!(parse_numbered_list("Here:\n1. a\n   more\n2. b").unwrap(), vec!["a more", "b"]);
        assert!(parse_numbered_list("no list here").is_none());
        assert!(parse_numbered_list("2020.5 is a number").is_none());
        assert!(parse_numbered_list("").is_none());
    }

    #[test]
    fn extracts_fixture_list() {
        let fixture = "1. The Arabian equates their parents' happiness to their own success\n\
                       2) Family pride matters\n- Elders are respected";
        let gw = gateway(ScriptedChat::fixed("I value family.").when(EXTRACTION_MARKER, fixture));
        let s = completed(&gw, 2);
        let ops = extract_opinions(&s, &gw, &binding()).unwrap();
        let texts: Vec<&str> = ops.iter().map(|o| o.text.as_str()).collect();
        assert_eq!(
            texts,
            vec![
                "The Arabian equates their parents' happiness to their own success",
                "Family pride matters",
                "Elders are respected"
            ]
        );
        assert!(ops.iter().all(|o| o.seed_id == "q1" && o.session_id == "s1"));
        assert_eq!(ops[1].source_turns, vec![1, 2]);
        assert!(ops[0].source_turns.is_empty());
    }

    #[test]
    fn non_list_reply_gives_no_opinions() {
        let gw = gateway(ScriptedChat::fixed("Sure."));
        let s = completed(&gw, 2);
        assert!(extract_opinions(&s, &gw, &binding()).unwrap().is_empty());
    }

    #[test]
    fn open_session_rejected() {
        let gw = gateway(ScriptedChat::fixed("x"));
        let mut s = completed(&gw, 2);
        s.status = SessionStatus::Open;
        assert!(matches!(extract_opinions(&s, &gw, &binding()), Err(RefinementError::NotCompleted(_))));
    }

    #[test]
    fn verification_judgments() {
        let gw = gateway(
            ScriptedChat::fixed("Yes")
                .when("Opinion: \"Football is fun\"\nIs the opinion related", "No")
                .when("Opinion: \"Parents do not matter\"\nIs the opinion consistent", "No"),
        );
        let v = verify_opinion(&opinion("a", "Parents' pride is a goal"), &seed(), &gw, &binding()).unwrap();
        assert!(v.passes());
        let v = verify_opinion(&opinion("b", "Football is fun"), &seed(), &gw, &binding()).unwrap();
        assert!(!v.relevant);
        let v = verify_opinion(&opinion("c", "Parents do not matter"), &seed(), &gw, &binding()).unwrap();
        assert!(v.relevant && !v.consistent);
    }

    #[test]
    fn unparseable_verdict_counts_as_no() {
        let gw = gateway(ScriptedChat::fixed("Perhaps"));
        let v = verify_opinion(&opinion("a", "x"), &seed(), &gw, &binding()).unwrap();
        assert!(!v.relevant && !v.consistent);
    }

    #[test]
    fn lineage_checked() {
        let gw = gateway(ScriptedChat::fixed("Yes"));
        let mut o = opinion("a", "x");
        o.seed_id = "other".into();
        assert!(matches!(verify_opinion(&o, &seed(), &gw, &binding()), Err(RefinementError::Lineage { .. })));
    }

    #[test]
    fn dedup_counts_and_idempotence() {
        let gw = gateway(ScriptedChat::fixed("x"));
        let ops: Vec<Opinion> = (0..30).map(|i| opinion(&format!("o{i}"), &format!("opinion number {i}"))).collect();
        let cfg = KMeansConfig::default();
        let once: Vec<Opinion> = deduplicate(&ops, &gw, &emb(), 10, &cfg).unwrap().into_iter().map(|(o, _)| o).collect();
        assert_eq!(once.len(), 10);
        let twice: Vec<Opinion> = deduplicate(&once, &gw, &emb(), 10, &cfg).unwrap().into_iter().map(|(o, _)| o).collect();
        assert_eq!(once, twice);
        let four = &ops[..4];
        assert_eq!(deduplicate(four, &gw, &emb(), 10, &cfg).unwrap().len(), 4);
    }

    #[test]
    fn verbatim_duplicates_collapse() {
        let gw = gateway(ScriptedChat::fixed("x"));
        let mut ops: Vec<Opinion> = (0..11).map(|i| opinion(&format!("o{i}"), &format!("claim {i}"))).collect();
        ops.push(opinion("dup", "claim 3"));
        let out = deduplicate(&ops, &gw, &emb(), 11, &KMeansConfig::default()).unwrap();
        assert_eq!(out.len(), 11);
        assert_eq!(out.iter().filter(|(o, _)| o.text == "claim 3").count(), 1);
    }

    #[test]
    fn sample_answer_shape() {
        let o = opinion("a", "The Arabian equates their parents' happiness and satisfaction to their own success");
        let samples = assemble_samples(&seed(), "Arabic", &[(o, Some(0))]);
        assert_eq!(samples[0].answer, "Strongly agree. I equate my parents' happiness and satisfaction to my own success");
        assert_eq!(samples[0].question, seed().question);
        assert!(assemble_samples(&seed(), "Arabic", &[]).is_empty());
    }

    #[test]
    fn export_writes_records_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ar.jsonl");
        let o = opinion("a", "Family comes first");
        let samples = assemble_samples(&seed(), "Arabic", &[(o, None)]);
        let m = export_finetune_file(&samples, &"ar".into(), "Arabic", &path).unwrap();
        assert_eq!(m.count, 1);
        assert_eq!(m.epochs, Some(12));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["messages"].as_array().unwrap().len(), 3);
        assert!(manifest_path(&path).exists());
        assert!(export_finetune_file(&samples, &"de".into(), "German", &path).is_err());
    }

    #[test]
    fn epochs_table() {
        let expected = [("ar", 12), ("bn", 6), ("zh", 7), ("de", 4), ("ko", 2), ("pt", 3), ("es", 5), ("tr", 2)];
        for (c, e) in expected {
            assert_eq!(recommended_epochs(&c.into()), Some(e));
        }
        assert_eq!(recommended_epochs(&"en".into()), None);
    }
}
