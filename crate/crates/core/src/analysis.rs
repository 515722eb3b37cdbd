//! Dialogue statistics and diversity measures.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueSession, SessionStatus};
use crate::gateway::{BackendBinding, CallTag, ChatMessage, EmbeddingVector, Gateway, GatewayError};

pub const YES_NO_SUFFIX: &str = "Just answer with Yes, or No.";
pub const SAME_TOPIC_PROMPT: &str = "Do the two paragraphs discuss same topic? Just answer with Yes, or No.";
pub const UNDERSTANDING_PROMPT: &str = "Does the paragraph reflect cross-cultural understanding? Just answer with Yes, or No.";
pub const TOPIC_CLASSIFY_MARKER: &str = "Classify the topic of the following text";

const JUDGE_SYSTEM: &str = "You are a helpful assistant.";

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
    #[error("unparseable verdict: {0:?}")]
    UnparseableVerdict(String),
    #[error("session {0} has no statement turns")]
    EmptySession(String),
    #[error("session {0} needs at least two statement turns")]
    TooFewStatements(String),
    #[error("session {0} is not completed")]
    NotCompleted(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Reads a yes/no verdict from the first word of a reply.
pub fn parse_yes_no(raw: &str) -> Option<bool> {
    let word: String = raw
        .trim_start()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    match word.to_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

fn judge(gateway: &Gateway, binding: &BackendBinding, tag: &CallTag, prompt: String) -> Result<bool, AnalysisError> {
    let history = [ChatMessage::system(JUDGE_SYSTEM), ChatMessage::user(prompt)];
    let raw = gateway.complete_chat_tagged(tag, binding, &history)?.message.content;
    parse_yes_no(&raw).ok_or(AnalysisError::UnparseableVerdict(raw))
}

pub fn same_topic_prompt(p1: &str, p2: &str) -> String {
    format!("{SAME_TOPIC_PROMPT}\n\nParagraph 1: {p1}\n\nParagraph 2: {p2}")
}

pub fn understanding_prompt(p: &str) -> String {
    format!("{UNDERSTANDING_PROMPT}\n\nParagraph: {p}")
}

/// Whether two paragraphs discuss the same topic. Identical inputs answer
/// `true` without a backend call.
pub fn same_topic(p1: &str, p2: &str, gateway: &Gateway, binding: &BackendBinding) -> Result<bool, AnalysisError> {
    if p1.trim().is_empty() || p2.trim().is_empty() {
        return Err(AnalysisError::Precondition("paragraphs must be non-empty".into()));
    }
    if p1 == p2 {
        return Ok(true);
    }
    judge(gateway, binding, &CallTag::new("same_topic"), same_topic_prompt(p1, p2))
}

pub fn reflects_understanding(p: &str, gateway: &Gateway, binding: &BackendBinding) -> Result<bool, AnalysisError> {
    if p.trim().is_empty() {
        return Err(AnalysisError::Precondition("paragraph must be non-empty".into()));
    }
    judge(gateway, binding, &CallTag::new("understanding"), understanding_prompt(p))
}

fn require_completed(session: &DialogueSession) -> Result<(), AnalysisError> {
    if session.status == SessionStatus::Completed {
        Ok(())
    } else {
        Err(AnalysisError::NotCompleted(session.session_id.clone()))
    }
}

/// Per-turn understanding judgments for a completed session.
pub fn understanding_verdicts(
    session: &DialogueSession,
    gateway: &Gateway,
    binding: &BackendBinding,
) -> Result<Vec<bool>, AnalysisError> {
    require_completed(session)?;
    session
        .statement_turns()
        .map(|t| reflects_understanding(&t.content, gateway, binding))
        .collect()
}

/// Share of statement turns judged to show cross-cultural understanding.
pub fn understanding_ratio(session: &DialogueSession, gateway: &Gateway, binding: &BackendBinding) -> Result<f64, AnalysisError> {
    let verdicts = understanding_verdicts(session, gateway, binding)?;
    if verdicts.is_empty() {
        return Err(AnalysisError::EmptySession(session.session_id.clone()));
    }
    Ok(verdicts.iter().filter(|v| **v).count() as f64 / verdicts.len() as f64)
}

/// Topic-change judgments for each adjacent pair of statement turns.
pub fn topic_changes(session: &DialogueSession, gateway: &Gateway, binding: &BackendBinding) -> Result<Vec<bool>, AnalysisError> {
    require_completed(session)?;
    let statements: Vec<&str> = session.statement_turns().map(|t| t.content.as_str()).collect();
    if statements.len() < 2 {
        return Err(AnalysisError::TooFewStatements(session.session_id.clone()));
    }
    statements
        .windows(2)
        .map(|pair| same_topic(pair[0], pair[1], gateway, binding).map(|same| !same))
        .collect()
}

/// Share of adjacent statement pairs judged to change topic.
pub fn extend_rate(session: &DialogueSession, gateway: &Gateway, binding: &BackendBinding) -> Result<f64, AnalysisError> {
    let changes = topic_changes(session, gateway, binding)?;
    Ok(changes.iter().filter(|c| **c).count() as f64 / changes.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicCategory {
    Belief,
    Norm,
    Custom,
}

impl TopicCategory {
    pub const ALL: [TopicCategory; 3] = [TopicCategory::Belief, TopicCategory::Norm, TopicCategory::Custom];

    pub fn as_str(self) -> &'static str {
        match self {
            TopicCategory::Belief => "belief",
            TopicCategory::Norm => "norm",
            TopicCategory::Custom => "custom",
        }
    }

    pub fn subtypes(self) -> &'static [&'static str] {
        match self {
            TopicCategory::Belief => &["religious", "social", "ethical"],
            TopicCategory::Norm => &["descriptive", "prescriptive", "traditional"],
            TopicCategory::Custom => &["social", "family", "community"],
        }
    }
}

/// Sub-type used when a label names only the category.
pub const UNSPECIFIED_SUBTYPE: &str = "unspecified";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicLabel {
    pub category: TopicCategory,
    pub subtype: String,
}

/// Parses labels such as "belief/social", "Norm", or "family custom".
/// Exactly one category word must occur in the first non-empty line.
pub fn parse_topic_label(raw: &str) -> Option<TopicLabel> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?.to_lowercase();
    let words: Vec<&str> = line.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()).collect();
    let mut found: Vec<TopicCategory> = Vec::new();
    for w in &words {
        let cat = match *w {
            "belief" | "beliefs" => TopicCategory::Belief,
            "norm" | "norms" => TopicCategory::Norm,
            "custom" | "customs" => TopicCategory::Custom,
            _ => continue,
        };
        if !found.contains(&cat) {
            found.push(cat);
        }
    }
    let [category] = found[..] else { return None };
    let subtype = category
        .subtypes()
        .iter()
        .find(|s| words.contains(s))
        .map_or(UNSPECIFIED_SUBTYPE, |s| s)
        .to_string();
    Some(TopicLabel { category, subtype })
}

pub fn topic_prompt(text: &str) -> String {
    format!(
        "{TOPIC_CLASSIFY_MARKER} into one category: belief (religious, social, ethical), \
         norm (descriptive, prescriptive, traditional), or custom (social, family, community). \
         Answer only with the category and type, like \"belief/social\".\n\nText: {text}"
    )
}

/// Topic proportions: over categories, and over sub-types within each category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMix {
    pub total: usize,
    pub categories: BTreeMap<TopicCategory, f64>,
    pub subtypes: BTreeMap<TopicCategory, BTreeMap<String, f64>>,
}

impl TopicMix {
    pub fn from_labels(labels: &[TopicLabel]) -> TopicMix {
        let total = labels.len();
        let mut categories: BTreeMap<TopicCategory, f64> = TopicCategory::ALL.iter().map(|c| (*c, 0.0)).collect();
        let mut counts: BTreeMap<TopicCategory, BTreeMap<String, usize>> = BTreeMap::new();
        for l in labels {
            *categories.get_mut(&l.category).expect("all categories present") += 1.0;
            *counts.entry(l.category).or_default().entry(l.subtype.clone()).or_insert(0) += 1;
        }
        if total > 0 {
            categories.values_mut().for_each(|v| *v /= total as f64);
        }
        let subtypes = counts
            .into_iter()
            .map(|(cat, subs)| {
                let n: usize = subs.values().sum();
                (cat, subs.into_iter().map(|(s, c)| (s, c as f64 / n as f64)).collect())
            })
            .collect();
        TopicMix { total, categories, subtypes }
    }

    pub fn share(&self, category: TopicCategory) -> f64 {
        self.categories.get(&category).copied().unwrap_or(0.0)
    }
}

pub fn classify_topic(text: &str, gateway: &Gateway, binding: &BackendBinding) -> Result<TopicLabel, AnalysisError> {
    let history = [ChatMessage::system(JUDGE_SYSTEM), ChatMessage::user(topic_prompt(text))];
    let raw = gateway.complete_chat_tagged(&CallTag::new("topic"), binding, &history)?.message.content;
    parse_topic_label(&raw).ok_or(AnalysisError::UnparseableVerdict(raw))
}

pub fn classify_topics(texts: &[String], gateway: &Gateway, binding: &BackendBinding) -> Result<TopicMix, AnalysisError> {
    if texts.is_empty() {
        return Err(AnalysisError::Precondition("classify_topics needs at least one sample".into()));
    }
    let labels = texts
        .iter()
        .map(|t| classify_topic(t, gateway, binding))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TopicMix::from_labels(&labels))
}

fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        a.dot(b) / denom
    }
}

/// Marginal facility-location gain of `candidate` over `existing`:
/// one minus the largest (non-negative) cosine similarity. An empty set
/// gives 1 and an exact duplicate gives 0.
pub fn diversity_gain(existing: &[EmbeddingVector], candidate: &EmbeddingVector) -> Result<f64, AnalysisError> {
    let dim = candidate.dimension();
    let mut best: f64 = 0.0;
    for e in existing {
        if e.dimension() != dim {
            return Err(AnalysisError::DimensionMismatch { expected: dim, found: e.dimension() });
        }
        if e.values == candidate.values {
            return Ok(0.0);
        }
        best = best.max(cosine(e, candidate));
    }
    Ok((1.0 - best).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    /// Sum of gains when items are added in order.
    pub set_value: f64,
    pub marginal_gains: Vec<f64>,
    pub mean_gain: f64,
}

/// Accumulates each item's gain over the items before it.
pub fn diversity_score(vectors: &[EmbeddingVector]) -> Result<DiversityScore, AnalysisError> {
    let gains = (0..vectors.len())
        .map(|i| diversity_gain(&vectors[..i], &vectors[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let set_value: f64 = gains.iter().sum();
    let mean_gain = if gains.is_empty() { 0.0 } else { set_value / gains.len() as f64 };
    Ok(DiversityScore { set_value, marginal_gains: gains, mean_gain })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySummary {
    pub mean_gain: f64,
    pub set_value: f64,
}

/// Batch-level statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub sessions: usize,
    pub statements: usize,
    /// Pooled over all adjacent statement pairs.
    pub extend_rate: Option<f64>,
    /// Pooled over all statement turns.
    pub understanding_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_mix: Option<TopicMix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversitySummary>,
}

impl AnalysisReport {
    /// One header row and one value row.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["sessions".to_string(), "statements".into(), "extend_rate".into(), "understanding_ratio".into()];
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut row = vec![
            self.sessions.to_string(),
            self.statements.to_string(),
            fmt(self.extend_rate),
            fmt(self.understanding_ratio),
        ];
        for cat in TopicCategory::ALL {
            header.push(cat.as_str().to_string());
            row.push(fmt(self.topic_mix.as_ref().map(|m| m.share(cat))));
        }
        header.push("diversity_mean_gain".into());
        row.push(fmt(self.diversity.as_ref().map(|d| d.mean_gain)));
        header.push("diversity_set_value".into());
        row.push(fmt(self.diversity.as_ref().map(|d| d.set_value)));
        format!("{}\n{}\n", header.join(","), row.join(","))
    }
}

/// Pooled extend rate and understanding ratio over completed sessions.
/// Sessions too short for a statistic are skipped for that statistic.
pub fn analyze_sessions(
    sessions: &[DialogueSession],
    gateway: &Gateway,
    binding: &BackendBinding,
) -> Result<AnalysisReport, AnalysisError> {
    let completed: Vec<&DialogueSession> = sessions.iter().filter(|s| s.status == SessionStatus::Completed).collect();
    let (mut changes, mut pairs, mut understood, mut statements) = (0usize, 0usize, 0usize, 0usize);
    for s in &completed {
        if s.statement_count() >= 2 {
            let c = topic_changes(s, gateway, binding)?;
            pairs += c.len();
            changes += c.iter().filter(|x| **x).count();
        }
        let u = understanding_verdicts(s, gateway, binding)?;
        statements += u.len();
        understood += u.iter().filter(|x| **x).count();
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(AnalysisReport {
        sessions: completed.len(),
        statements,
        extend_rate: ratio(changes, pairs),
        understanding_ratio: ratio(understood, statements),
        topic_mix: None,
        diversity: None,
    })
}
