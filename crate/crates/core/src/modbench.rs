//! Zero-shot content-moderation evaluation.
//!
//! Each dataset targets one [`Task`]; items are sent one per request with a
//! culture system prompt, replies are mapped back onto the task's labels,
//! and scored with per-class F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BackendBinding, CallTag, ChatMessage, Gateway};
use crate::registry::CultureId;

#[derive(Debug, Error, PartialEq)]
pub enum ModError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("unknown adapter {0:?} (expected jsonl, csv, or tsv)")]
    UnknownAdapter(String),
    #[error("line {line}: label {label:?} is not one of {task}'s labels")]
    UnknownLabel { line: usize, label: String, task: Task },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("item text is empty")]
    EmptyText,
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Offensive,
    Hate,
    Vulgar,
    Spam,
    Stereotype,
    Mockery,
    Insult,
    Improper,
    Aggressiveness,
    Toxicity,
    NegativeStance,
    Homophobia,
    Racism,
    Misogyny,
    Threat,
    BiasOnGender,
    HostilityDirectness,
    HateOffens,
    HateFinegrained,
    OffensiveFinegrained,
}

const BINARY: &[&str] = &["1", "0"];

impl Task {
    pub const ALL: [Task; 20] = [
        Task::Offensive,
        Task::Hate,
        Task::Vulgar,
        Task::Spam,
        Task::Stereotype,
        Task::Mockery,
        Task::Insult,
        Task::Improper,
        Task::Aggressiveness,
        Task::Toxicity,
        Task::NegativeStance,
        Task::Homophobia,
        Task::Racism,
        Task::Misogyny,
        Task::Threat,
        Task::BiasOnGender,
        Task::HostilityDirectness,
        Task::HateOffens,
        Task::HateFinegrained,
        Task::OffensiveFinegrained,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Task::Offensive => "offensive",
            Task::Hate => "hate",
            Task::Vulgar => "vulgar",
            Task::Spam => "spam",
            Task::Stereotype => "stereotype",
            Task::Mockery => "mockery",
            Task::Insult => "insult",
            Task::Improper => "improper",
            Task::Aggressiveness => "aggressiveness",
            Task::Toxicity => "toxicity",
            Task::NegativeStance => "negative_stance",
            Task::Homophobia => "homophobia",
            Task::Racism => "racism",
            Task::Misogyny => "misogyny",
            Task::Threat => "threat",
            Task::BiasOnGender => "bias_on_gender",
            Task::HostilityDirectness => "hostility_directness",
            Task::HateOffens => "hate_offens",
            Task::HateFinegrained => "hate_finegrained",
            Task::OffensiveFinegrained => "offensive_finegrained",
        }
    }

    /// The instruction placed before the item text.
    pub fn instruction(self) -> &'static str {
        match self {
            Task::Offensive => "if the following sentence is offensive, just say \"OFF\", otherwise, say \"NOT_OFF\" without explanation:",
            Task::Hate => "if the following sentence has hate speech, just say \"HS\", otherwise, say \"NOT_HS\" without explanation:",
            Task::Vulgar => "if the following sentence has vulgar speech, just say \"Vulgar\", otherwise, say \"NOT_Vulgar\" without explanation:",
            Task::Spam => "if the following sentence is spam tweet, just say \"Spam\", otherwise, say \"NOT_Spam\" without explanation:",
            Task::Stereotype => "if the following sentence has stereotype speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Mockery => "if the following sentence has mockery speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Insult => "if the following sentence has insult speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Improper => "if the following sentence has improper speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Aggressiveness => "if the following sentence has aggressiveness speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Toxicity => "if the following sentence has toxicity speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::NegativeStance => "if the following sentence has negative stance speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Homophobia => "if the following sentence has homophobia speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Racism => "if the following sentence has racism speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Misogyny => "if the following sentence has misogyny speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::Threat => "if the following sentence has threat speech, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::BiasOnGender => "if the following speech expressing bias on gender, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::HostilityDirectness => "if the following speech expressing hostility directness, just say \"1\", otherwise, say \"0\" without explanation:",
            Task::HateOffens => "if the following sentence contains hate speech, just say \"0\", else if contains offensive language, say \"1\", otherwise, say \"2\" without explanation:",
            Task::HateFinegrained => "if the following sentence doesn't have hate speech, just say \"NOT_HS\", otherwise, label the hate speech with \"HS1\"(Race), \"HS2\"(Religion), \"HS3\"(Ideology), \"HS4\"(Disability), \"HS5\"(Social Class), \"HS6\"(Gender) without explanation:",
            Task::OffensiveFinegrained => "if the following sentence doesn't have offensive speech, just say \"non\", otherwise, label the offensive speech with \"prof\"(profanity, or non-targeted offense), \"grp\"(offense towards a group), \"indv\"(offense towards an individual), \"oth\"(ffense towards an other (non-human) entity, often an event or organization) without explanation:",
        }
    }

    /// Canonical label tokens.
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Task::Offensive => &["OFF", "NOT_OFF"],
            Task::Hate => &["HS", "NOT_HS"],
            Task::Vulgar => &["Vulgar", "NOT_Vulgar"],
            Task::Spam => &["Spam", "NOT_Spam"],
            Task::HateOffens => &["0", "1", "2"],
            Task::HateFinegrained => &["NOT_HS", "HS1", "HS2", "HS3", "HS4", "HS5", "HS6"],
            Task::OffensiveFinegrained => &["non", "prof", "grp", "indv", "oth"],
            _ => BINARY,
        }
    }

    /// Maps a label onto its canonical spelling, ignoring case.
    pub fn canonical_label(self, label: &str) -> Option<&'static str> {
        let label = label.trim();
        self.labels().iter().copied().find(|l| l.eq_ignore_ascii_case(label))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Task {
    type Err = ModError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let norm = norm.strip_suffix("_detect").unwrap_or(&norm).to_string();
        let norm = match norm.as_str() {
            "hate_detect_fine_grained" | "hate_fine_grained" => "hate_finegrained".to_string(),
            "offensive_detect_finegrained" | "offensive_fine_grained" => "offensive_finegrained".to_string(),
            _ => norm,
        };
        Task::ALL.into_iter().find(|t| t.id() == norm).ok_or_else(|| ModError::UnknownTask(s.to_string()))
    }
}

/// Evaluation system prompt for a culture.
pub fn culture_eval_prompt(culture_name: &str) -> String {
    let article = match culture_name.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    };
    format!("You are {article} {culture_name} chatbot that know {culture_name} very well.")
}

/// System message plus the instruction followed by the item text.
pub fn build_prompt(task: Task, culture_name: &str, text: &str) -> Result<Vec<ChatMessage>, ModError> {
    if text.trim().is_empty() {
        return Err(ModError::EmptyText);
    }
    Ok(vec![
        ChatMessage::system(culture_eval_prompt(culture_name)),
        ChatMessage::user(format!("{}\n{}", task.instruction(), text)),
    ])
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Label(String),
    Unparseable,
}

/// Maps a reply onto a task label. Exact (case-insensitive) matches win;
/// otherwise the reply must contain exactly one distinct label as a word.
/// Never fails: anything else is `Unparseable`.
pub fn parse_label(task: Task, raw: &str) -> Prediction {
    let trimmed = raw.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '.' | '`')).trim();
    if let Some(l) = task.canonical_label(trimmed) {
        return Prediction::Label(l.to_string());
    }
    let mut found: BTreeSet<&'static str> = BTreeSet::new();
    for token in raw.split(|c: char| !(c.is_alphanumeric() || c == '_')) {
        if let Some(l) = task.canonical_label(token).filter(|_| !token.is_empty()) {
            found.insert(l);
        }
    }
    match found.len() {
        1 => Prediction::Label(found.into_iter().next().expect("one element").to_string()),
        _ => Prediction::Unparseable,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationItem {
    pub text: String,
    pub gold: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationDataset {
    pub dataset_id: String,
    pub culture: CultureId,
    pub task: Task,
    pub items: Vec<ModerationItem>,
}

impl ModerationDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Normalized cache form: one `{text, gold}` object per line.
    pub fn to_jsonl(&self) -> String {
        self.items.iter().map(|i| serde_json::to_string(i).expect("item serializes") + "\n").collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adapter {
    Jsonl,
    Csv,
    Tsv,
}

impl FromStr for Adapter {
    type Err = ModError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Adapter::Jsonl),
            "csv" => Ok(Adapter::Csv),
            "tsv" => Ok(Adapter::Tsv),
            other => Err(ModError::UnknownAdapter(other.to_string())),
        }
    }
}

const TEXT_KEYS: [&str; 4] = ["text", "tweet", "sentence", "content"];
const LABEL_KEYS: [&str; 3] = ["label", "gold", "gold_label"];

fn pick<'a>(map: &'a BTreeMap<String, String>, keys: &[&str]) -> Option<&'a String> {
    keys.iter().find_map(|k| map.get(*k))
}

fn to_item(task: Task, line: usize, fields: &BTreeMap<String, String>) -> Result<ModerationItem, ModError> {
    let text = pick(fields, &TEXT_KEYS).ok_or_else(|| ModError::Parse { line, message: "missing text column".into() })?;
    let label = pick(fields, &LABEL_KEYS).ok_or_else(|| ModError::Parse { line, message: "missing label column".into() })?;
    let gold = task
        .canonical_label(label)
        .ok_or_else(|| ModError::UnknownLabel { line, label: label.clone(), task })?;
    Ok(ModerationItem { text: text.clone(), gold: gold.to_string() })
}

/// Parses dataset bytes. Columns: a text column (`text`, `tweet`,
/// `sentence`, or `content`) and a label column (`label`, `gold`, or
/// `gold_label`); header names are matched case-insensitively.
pub fn parse_dataset(bytes: &[u8], adapter: Adapter, task: Task) -> Result<Vec<ModerationItem>, ModError> {
    let mut items = Vec::new();
    match adapter {
        Adapter::Jsonl => {
            let text = std::str::from_utf8(bytes).map_err(|e| ModError::Parse { line: 0, message: e.to_string() })?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value = serde_json::from_str(line)
                    .map_err(|e| ModError::Parse { line: i + 1, message: e.to_string() })?;
                let obj = value
                    .as_object()
                    .ok_or_else(|| ModError::Parse { line: i + 1, message: "expected a JSON object".into() })?;
                let fields: BTreeMap<String, String> = obj
                    .iter()
                    .filter_map(|(k, v)| {
                        let v = match v {
                            serde_json::Value::String(s) => s.clone(),
                            serde_json::Value::Number(n) => n.to_string(),
                            serde_json::Value::Bool(b) => b.to_string(),
                            _ => return None,
                        };
                        Some((k.to_ascii_lowercase(), v))
                    })
                    .collect();
                items.push(to_item(task, i + 1, &fields)?);
            }
        }
        Adapter::Csv | Adapter::Tsv => {
            let delimiter = if adapter == Adapter::Csv { b',' } else { b'\t' };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .flexible(false)
                .quoting(adapter == Adapter::Csv)
                .from_reader(bytes);
            let headers: Vec<String> = reader
                .headers()
                .map_err(|e| ModError::Parse { line: 1, message: e.to_string() })?
                .iter()
                .map(|h| h.trim().to_ascii_lowercase())
                .collect();
            for record in reader.records() {
                let record = record.map_err(|e| ModError::Parse {
                    line: e.position().map_or(0, |p| p.line() as usize),
                    message: e.to_string(),
                })?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                let fields: BTreeMap<String, String> =
                    headers.iter().cloned().zip(record.iter().map(str::to_string)).collect();
                items.push(to_item(task, line, &fields)?);
            }
        }
    }
    Ok(items)
}

/// Loads a dataset file through an adapter.
pub fn load_dataset(
    path: &Path,
    adapter: Adapter,
    task: Task,
    culture: CultureId,
    dataset_id: Option<String>,
) -> Result<ModerationDataset, ModError> {
    let bytes = std::fs::read(path).map_err(|e| ModError::Io(format!("{}: {e}", path.display())))?;
    let items = parse_dataset(&bytes, adapter, task)?;
    if items.is_empty() {
        warn!("dataset {} has no items", path.display());
    }
    let dataset_id = dataset_id
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    Ok(ModerationDataset { dataset_id, culture, task, items })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassCounts {
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| 2.0 * self.tp as f64 / denom as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CultureWeighting {
    #[default]
    Unweighted,
    BySize,
}

/// Per-class counts. An unparseable prediction is a miss for the gold class
/// and a false positive for no class.
pub fn confusion(task: Task, gold: &[String], predicted: &[Prediction]) -> BTreeMap<String, ClassCounts> {
    let mut counts: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(predicted) {
        match p {
            Prediction::Label(l) if l == g => counts.entry(g.clone()).or_default().tp += 1,
            Prediction::Label(l) => {
                counts.entry(g.clone()).or_default().fn_ += 1;
                counts.entry(l.clone()).or_default().fp += 1;
            }
            Prediction::Unparseable => counts.entry(g.clone()).or_default().fn_ += 1,
        }
    }
    counts.retain(|label, _| task.canonical_label(label).is_some());
    counts
}

/// Mean per-class F1 over classes that occur in gold or predictions.
pub fn macro_f1(counts: &BTreeMap<String, ClassCounts>) -> f64 {
    let scores: Vec<f64> = counts.values().filter_map(ClassCounts::f1).collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// F1 over pooled counts.
pub fn micro_f1(counts: &BTreeMap<String, ClassCounts>) -> f64 {
    let total = counts.values().fold(ClassCounts::default(), |a, c| ClassCounts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
    });
    total.f1().unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset_id: String,
    pub culture: CultureId,
    pub task: Task,
    pub items: usize,
    pub unparseable: usize,
    pub confusion: BTreeMap<String, ClassCounts>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// The F1 selected by the run's averaging option.
    pub f1: f64,
}

pub fn score_predictions(dataset: &ModerationDataset, predicted: &[Prediction], averaging: Averaging) -> DatasetReport {
    let gold: Vec<String> = dataset.items.iter().map(|i| i.gold.clone()).collect();
    let counts = confusion(dataset.task, &gold, predicted);
    let macro_f1 = macro_f1(&counts);
    let micro_f1 = micro_f1(&counts);
    DatasetReport {
        dataset_id: dataset.dataset_id.clone(),
        culture: dataset.culture.clone(),
        task: dataset.task,
        items: dataset.items.len(),
        unparseable: predicted.iter().filter(|p| **p == Prediction::Unparseable).count(),
        confusion: counts,
        macro_f1,
        micro_f1,
        f1: match averaging {
            Averaging::Macro => macro_f1,
            Averaging::Micro => micro_f1,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub averaging: Averaging,
    pub weighting: CultureWeighting,
}

/// Predicts every item (temperature forced to 0) and scores the dataset.
/// Backend failures after retries count as unparseable.
pub fn evaluate(
    dataset: &ModerationDataset,
    culture_name: &str,
    gateway: &Gateway,
    binding: &BackendBinding,
    options: &EvalOptions,
) -> Result<DatasetReport, ModError> {
    let binding = binding.clone().with_temperature(0.0);
    let tag = CallTag::new("moderation").session(dataset.dataset_id.clone());
    let predicted: Vec<Prediction> = dataset
        .items
        .par_iter()
        .map(|item| {
            let prompt = build_prompt(dataset.task, culture_name, &item.text)?;
            Ok(match gateway.complete_chat_tagged(&tag, &binding, &prompt) {
                Ok(c) => parse_label(dataset.task, &c.message.content),
                Err(e) => {
                    warn!("dataset {}: item failed after retries: {e}", dataset.dataset_id);
                    Prediction::Unparseable
                }
            })
        })
        .collect::<Result<_, ModError>>()?;
    Ok(score_predictions(dataset, &predicted, options.averaging))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub config_hash: String,
    pub options: EvalOptions,
    pub datasets: Vec<DatasetReport>,
    pub per_culture: BTreeMap<CultureId, f64>,
}

impl EvalReport {
    pub fn new(model_id: &str, config_hash: &str, options: EvalOptions, datasets: Vec<DatasetReport>) -> Self {
        let mut groups: BTreeMap<CultureId, Vec<&DatasetReport>> = BTreeMap::new();
        for d in &datasets {
            groups.entry(d.culture.clone()).or_default().push(d);
        }
        let per_culture = groups
            .into_iter()
            .map(|(c, ds)| {
                let avg = match options.weighting {
                    CultureWeighting::Unweighted => ds.iter().map(|d| d.f1).sum::<f64>() / ds.len() as f64,
                    CultureWeighting::BySize => {
                        let n: usize = ds.iter().map(|d| d.items).sum();
                        if n == 0 {
                            0.0
                        } else {
                            ds.iter().map(|d| d.f1 * d.items as f64).sum::<f64>() / n as f64
                        }
                    }
                };
                (c, avg)
            })
            .collect();
        EvalReport { model_id: model_id.to_string(), config_hash: config_hash.to_string(), options, datasets, per_culture }
    }

    /// Culture-by-task table of F1 scores plus each culture's average.
    pub fn to_csv(&self) -> String {
        let tasks: BTreeSet<Task> = self.datasets.iter().map(|d| d.task).collect();
        let mut out = String::from("culture");
        for t in &tasks {
            out.push(',');
            out.push_str(t.id());
        }
        out.push_str(",average\n");
        for (culture, avg) in &self.per_culture {
            out.push_str(culture.as_str());
            for t in &tasks {
                let ds: Vec<f64> =
                    self.datasets.iter().filter(|d| &d.culture == culture && d.task == *t).map(|d| d.f1).collect();
                out.push(',');
                if !ds.is_empty() {
                    out.push_str(&format!("{:.4}", ds.iter().sum::<f64>() / ds.len() as f64));
                }
            }
            out.push_str(&format!(",{avg:.4}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::ScriptedChat;
    use crate::gateway::RetryPolicy;
    use std::sync::Arc;

    #[test]
    fn all_instructions_end_with_colon() {
        for t in Task::ALL {
            assert!(t.instruction().ends_with(':'), "{t}");
            assert!(t.instruction().starts_with("if the following"), "{t}");
            assert_eq!(t.id().parse::<Task>().unwrap(), t);
        }
        assert_eq!(Task::HateFinegrained.labels().len(), 7);
        assert_eq!(Task::HateOffens.labels().len(), 3);
        assert_eq!("offensive_detect".parse::<Task>().unwrap(), Task::Offensive);
        assert_eq!("hate_detect_fine-grained".parse::<Task>().unwrap(), Task::HateFinegrained);
    }

    #[test]
    fn prompt_shape() {
        let m = build_prompt(Task::Offensive, "Arabic", "some text").unwrap();
        assert_eq!(m[0].content, "You are an Arabic chatbot that know Arabic very well.");
        assert!(m[1].content.starts_with("if the following sentence is offensive"));
        assert!(m[1].content.ends_with(":\nsome text"));
        let de = build_prompt(Task::HateFinegrained, "German", "x").unwrap();
        assert!(de[0].content.starts_with("You are a German chatbot"));
        for i in 1..=6 {
            assert!(de[1].content.contains(&format!("\"HS{i}\"")));
        }
        assert_eq!(build_prompt(Task::Offensive, "Arabic", "  "), Err(ModError::EmptyText));
    }

    #[test]
    fn label_parsing() {
        let p = |t, s| parse_label(t, s);
        assert_eq!(p(Task::Offensive, "OFF"), Prediction::Label("OFF".into()));
        assert_eq!(p(Task::Offensive, " not_off\n"), Prediction::Label("NOT_OFF".into()));
        assert_eq!(p(Task::Offensive, "I think it is OFF"), Prediction::Label("OFF".into()));
        assert_eq!(p(Task::Offensive, "\"NOT_OFF\"."), Prediction::Label("NOT_OFF".into()));
        assert_eq!(p(Task::Offensive, "OFF or NOT_OFF"), Prediction::Unparseable);
        assert_eq!(p(Task::Offensive, "cannot say"), Prediction::Unparseable);
        assert_eq!(p(Task::Stereotype, "The answer is 1"), Prediction::Label("1".into()));
        assert_eq!(p(Task::HateFinegrained, "HS3"), Prediction::Label("HS3".into()));
        assert_eq!(p(Task::Offensive, ""), Prediction::Unparseable);
    }

    #[test]
    fn worked_binary_f1() {
        let gold: Vec<String> = ["1", "1", "0", "0"].iter().map(|s| s.to_string()).collect();
        let pred: Vec<Prediction> = ["1", "0", "1", "0"].iter().map(|s| Prediction::Label(s.to_string())).collect();
        let c = confusion(Task::Threat, &gold, &pred);
        assert_eq!(c["1"].f1(), Some(0.5));
        assert_eq!(c["0"].f1(), Some(0.5));
        assert_eq!(macro_f1(&c), 0.5);
    }

    #[test]
    fn unparseable_counts_against_gold() {
        let gold: Vec<String> = vec!["1".into(), "0".into()];
        let pred = vec![Prediction::Label("1".into()), Prediction::Unparseable];
        let c = confusion(Task::Threat, &gold, &pred);
        assert_eq!(c["1"], ClassCounts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(c["0"], ClassCounts { tp: 0, fp: 0, fn_: 1 });
        assert_eq!(macro_f1(&c), 0.5);
    }

    #[test]
    fn dataset_adapters() {
        let csv = "text,label\n\"hello, world\",off\nbye,NOT_OFF\n";
        let items = parse_dataset(csv.as_bytes(), Adapter::Csv, Task::Offensive).unwrap();
        assert_eq!(items[0], ModerationItem { text: "hello, world".into(), gold: "OFF".into() });
        let tsv = "Tweet\tLabel\nhi there\tHS\n";
        assert_eq!(parse_dataset(tsv.as_bytes(), Adapter::Tsv, Task::Hate).unwrap().len(), 1);
        let jsonl = "{\"text\": \"a\", \"gold\": 1}\n\n{\"text\": \"b\", \"label\": \"0\"}\n";
        assert_eq!(parse_dataset(jsonl.as_bytes(), Adapter::Jsonl, Task::Threat).unwrap().len(), 2);
        let bad = "text,label\nx,maybe\n";
        assert!(matches!(
            parse_dataset(bad.as_bytes(), Adapter::Csv, Task::Offensive),
            Err(ModError::UnknownLabel { line: 2, .. })
        ));
        assert!(parse_dataset(b"text,label\n", Adapter::Csv, Task::Offensive).unwrap().is_empty());
    }

    fn dataset() -> ModerationDataset {
        ModerationDataset {
            dataset_id: "d".into(),
            culture: "ar".into(),
            task: Task::Offensive,
            items: vec![
                ModerationItem { text: "bad words".into(), gold: "OFF".into() },
                ModerationItem { text: "nice day".into(), gold: "NOT_OFF".into() },
            ],
        }
    }

    #[test]
    fn perfect_mock_scores_one() {
        let chat = ScriptedChat::fixed("NOT_OFF").when("bad words", "OFF");
        let gw = Gateway::builder().chat_backend("c", Arc::new(chat)).retry(RetryPolicy::immediate(1)).build();
        let r = evaluate(&dataset(), "Arabic", &gw, &BackendBinding::chat("c", "mock://", "m"), &EvalOptions::default())
            .unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!(gw.call_log().len(), 4);
    }

    #[test]
    fn one_class_predictions_score_below_one() {
        let chat = ScriptedChat::fixed("OFF");
        let gw = Gateway::builder().chat_backend("c", Arc::new(chat)).retry(RetryPolicy::immediate(1)).build();
        let r = evaluate(&dataset(), "Arabic", &gw, &BackendBinding::chat("c", "mock://", "m"), &EvalOptions::default())
            .unwrap();
        assert!(r.f1 < 1.0);
    }

    #[test]
    fn culture_average() {
        let mk = |id: &str, f1: f64, items: usize| DatasetReport {
            dataset_id: id.into(),
            culture: "ar".into(),
            task: Task::Offensive,
            items,
            unparseable: 0,
            confusion: BTreeMap::new(),
            macro_f1: f1,
            micro_f1: f1,
            f1,
        };
        let r = EvalReport::new("m", "h", EvalOptions::default(), vec![mk("a", 0.5, 10), mk("b", 1.0, 30)]);
        assert_eq!(r.per_culture[&CultureId::from("ar")], 0.75);
        let opts = EvalOptions { weighting: CultureWeighting::BySize, ..Default::default() };
        let r = EvalReport::new("m", "h", opts, vec![mk("a", 0.5, 10), mk("b", 1.0, 30)]);
        assert_eq!(r.per_culture[&CultureId::from("ar")], 0.875);
        assert!(r.to_csv().starts_with("culture,offensive,average\n"));
    }
}
