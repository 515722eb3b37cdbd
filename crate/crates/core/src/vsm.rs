//! Values Survey Module scoring: the 24-item survey, six culture dimensions,
//! and the distance between two dimension profiles.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BackendBinding, CallTag, ChatMessage, Gateway, GatewayError};

pub const QUESTION_COUNT: usize = 24;
pub const DEFAULT_REPETITIONS: usize = 10;
pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_RETRY_BUDGET: usize = 3;
pub const ANSWER_INSTRUCTION: &str = "Answer with a single number from 1 to 5 and nothing else.";

#[derive(Debug, Error, PartialEq)]
pub enum VsmError {
    #[error("question bank: {0}")]
    Bank(String),
    #[error("reference table: {0}")]
    Reference(String),
    #[error("no reference scores for culture {0:?}")]
    MissingReference(String),
    #[error("answer to question {question} is not a number from 1 to 5: {raw:?}")]
    UnparseableAnswer { question: usize, raw: String },
    #[error("invalid answer sheet: {0}")]
    InvalidSheet(String),
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
    #[error("io error: {0}")]
    Io(String),
}

/// System prompt used when surveying a model about a culture.
pub fn survey_system_prompt(culture_name: &str) -> String {
    format!("You are a {culture_name} chatbot that knows {culture_name} very well")
}

pub fn survey_prompt(question: &str) -> String {
    format!("{}\n{ANSWER_INSTRUCTION}", question.trim())
}

/// First standalone digit 1-5 in the first non-empty line.
pub fn parse_answer(raw: &str) -> Option<u8> {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty())?;
    line.split(|c: char| !c.is_alphanumeric())
        .find_map(|tok| match tok {
            "1" | "2" | "3" | "4" | "5" => tok.parse().ok(),
            _ => None,
        })
}

/// The 24 survey items, indexed 1..=24.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBank {
    questions: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct BankRow {
    q_index: usize,
    text: String,
}

impl QuestionBank {
    pub fn new(questions: Vec<String>) -> Result<Self, VsmError> {
        if questions.len() != QUESTION_COUNT {
            return Err(VsmError::Bank(format!("expected {QUESTION_COUNT} questions, found {}", questions.len())));
        }
        if let Some(i) = questions.iter().position(|q| q.trim().is_empty()) {
            return Err(VsmError::Bank(format!("question {} is empty", i + 1)));
        }
        Ok(QuestionBank { questions })
    }

    /// Parses a `q_index,text` CSV. Every index 1..=24 must appear exactly once.
    pub fn from_csv(bytes: &[u8]) -> Result<Self, VsmError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let mut slots: Vec<Option<String>> = vec![None; QUESTION_COUNT];
        for row in reader.deserialize::<BankRow>() {
            let row = row.map_err(|e| VsmError::Bank(e.to_string()))?;
            if !(1..=QUESTION_COUNT).contains(&row.q_index) {
                return Err(VsmError::Bank(format!("q_index {} out of range 1..=24", row.q_index)));
            }
            let slot = &mut slots[row.q_index - 1];
            if slot.is_some() {
                return Err(VsmError::Bank(format!("duplicate q_index {}", row.q_index)));
            }
            *slot = Some(row.text);
        }
        let questions = slots
            .into_iter()
            .enumerate()
            .map(|(i, q)| q.ok_or_else(|| VsmError::Bank(format!("missing q_index {}", i + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(questions)
    }

    pub fn load(path: &Path) -> Result<Self, VsmError> {
        let bytes = std::fs::read(path).map_err(|e| VsmError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(&bytes)
    }

    /// Item text for a 1-based index.
    pub fn question(&self, q: usize) -> &str {
        &self.questions[q - 1]
    }
}

/// Respondent-by-question answers, each 1..=5.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VsmAnswerSheet {
    answers: Vec<[u8; QUESTION_COUNT]>,
}

impl VsmAnswerSheet {
    pub fn new(answers: Vec<[u8; QUESTION_COUNT]>) -> Result<Self, VsmError> {
        if answers.is_empty() {
            return Err(VsmError::InvalidSheet("no respondents".into()));
        }
        for (r, row) in answers.iter().enumerate() {
            if let Some(q) = row.iter().position(|a| !(1..=5).contains(a)) {
                return Err(VsmError::InvalidSheet(format!("respondent {r}, question {}: {}", q + 1, row[q])));
            }
        }
        Ok(VsmAnswerSheet { answers })
    }

    pub fn respondent_count(&self) -> usize {
        self.answers.len()
    }

    pub fn rows(&self) -> &[[u8; QUESTION_COUNT]] {
        &self.answers
    }

    pub fn means(&self) -> VsmMeans {
        let n = self.answers.len() as f64;
        let mut values = [0.0; QUESTION_COUNT];
        for row in &self.answers {
            for (v, a) in values.iter_mut().zip(row) {
                *v += f64::from(*a);
            }
        }
        values.iter_mut().for_each(|v| *v /= n);
        VsmMeans { values }
    }
}

/// Per-question mean answers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VsmMeans {
    pub values: [f64; QUESTION_COUNT],
}

impl VsmMeans {
    /// Mean of question `q` (1-based).
    pub fn q(&self, q: usize) -> f64 {
        self.values[q - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Dimension {
    Pdi,
    Idv,
    Mas,
    Uai,
    Lto,
    Ivr,
}

impl Dimension {
    pub const ALL: [Dimension; 6] =
        [Dimension::Pdi, Dimension::Idv, Dimension::Mas, Dimension::Uai, Dimension::Lto, Dimension::Ivr];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Pdi => "PDI",
            Dimension::Idv => "IDV",
            Dimension::Mas => "MAS",
            Dimension::Uai => "UAI",
            Dimension::Lto => "LTO",
            Dimension::Ivr => "IVR",
        }
    }

    /// `(weight, plus_q, minus_q)` pairs; the score is
    /// `sum(weight * (mean[plus] - mean[minus])) + constant`.
    pub fn terms(self) -> [(f64, usize, usize); 2] {
        match self {
            Dimension::Pdi => [(35.0, 7, 2), (25.0, 20, 23)],
            Dimension::Idv => [(35.0, 4, 1), (35.0, 9, 6)],
            Dimension::Mas => [(35.0, 5, 3), (25.0, 8, 10)],
            Dimension::Uai => [(40.0, 18, 15), (25.0, 21, 24)],
            Dimension::Lto => [(40.0, 13, 14), (25.0, 19, 22)],
            Dimension::Ivr => [(35.0, 12, 11), (40.0, 17, 16)],
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Six values, one per dimension. Used for scores and for anchoring constants.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct DimensionValues {
    pub pdi: f64,
    pub idv: f64,
    pub mas: f64,
    pub uai: f64,
    pub lto: f64,
    pub ivr: f64,
}

pub type VsmScores = DimensionValues;
pub type VsmConstants = DimensionValues;

impl DimensionValues {
    pub fn get(&self, d: Dimension) -> f64 {
        match d {
            Dimension::Pdi => self.pdi,
            Dimension::Idv => self.idv,
            Dimension::Mas => self.mas,
            Dimension::Uai => self.uai,
            Dimension::Lto => self.lto,
            Dimension::Ivr => self.ivr,
        }
    }

    pub fn set(&mut self, d: Dimension, value: f64) {
        match d {
            Dimension::Pdi => self.pdi = value,
            Dimension::Idv => self.idv = value,
            Dimension::Mas => self.mas = value,
            Dimension::Uai => self.uai = value,
            Dimension::Lto => self.lto = value,
            Dimension::Ivr => self.ivr = value,
        }
    }

    pub fn from_fn(f: impl Fn(Dimension) -> f64) -> Self {
        let mut out = DimensionValues::default();
        for d in Dimension::ALL {
            out.set(d, f(d));
        }
        out
    }
}

pub fn score_dimensions(means: &VsmMeans, constants: &VsmConstants) -> VsmScores {
    DimensionValues::from_fn(|d| {
        d.terms().iter().map(|(w, plus, minus)| w * (means.q(*plus) - means.q(*minus))).sum::<f64>() + constants.get(d)
    })
}

/// Euclidean distance between two six-dimension profiles.
pub fn cultural_distance(model: &VsmScores, reference: &VsmScores) -> f64 {
    Dimension::ALL
        .iter()
        .map(|d| (model.get(*d) - reference.get(*d)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Constants that move `raw` (scored with zero constants) onto `reference`.
pub fn calibrate_constants(raw: &VsmScores, reference: &VsmScores) -> VsmConstants {
    DimensionValues::from_fn(|d| reference.get(d) - raw.get(d))
}

/// Reference dimension scores per culture, from a `culture,PDI,IDV,MAS,UAI,LTO,IVR` CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReferenceTable {
    rows: BTreeMap<String, VsmScores>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
struct ReferenceRow {
    #[serde(rename = "culture")]
    culture: String,
    pdi: f64,
    idv: f64,
    mas: f64,
    uai: f64,
    lto: f64,
    ivr: f64,
}

impl ReferenceTable {
    pub fn from_csv(bytes: &[u8]) -> Result<Self, VsmError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let mut rows = BTreeMap::new();
        for row in reader.deserialize::<ReferenceRow>() {
            let row = row.map_err(|e| VsmError::Reference(e.to_string()))?;
            let scores = VsmScores { pdi: row.pdi, idv: row.idv, mas: row.mas, uai: row.uai, lto: row.lto, ivr: row.ivr };
            if rows.insert(row.culture.clone(), scores).is_some() {
                return Err(VsmError::Reference(format!("duplicate culture {:?}", row.culture)));
            }
        }
        Ok(ReferenceTable { rows })
    }

    pub fn load(path: &Path) -> Result<Self, VsmError> {
        let bytes = std::fs::read(path).map_err(|e| VsmError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(&bytes)
    }

    pub fn insert(&mut self, culture: impl Into<String>, scores: VsmScores) {
        self.rows.insert(culture.into(), scores);
    }

    pub fn get(&self, culture: &str) -> Result<&VsmScores, VsmError> {
        self.rows.get(culture).ok_or_else(|| VsmError::MissingReference(culture.to_string()))
    }
}

/// Calibrates constants on the anchor culture's reference row.
pub fn calibrate_from_table(raw: &VsmScores, table: &ReferenceTable, anchor: &str) -> Result<VsmConstants, VsmError> {
    Ok(calibrate_constants(raw, table.get(anchor)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub repetitions: usize,
    /// Extra attempts per pass when an answer cannot be parsed.
    pub retry_budget: usize,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        SurveyConfig { repetitions: DEFAULT_REPETITIONS, retry_budget: DEFAULT_RETRY_BUDGET }
    }
}

fn survey_pass(
    gateway: &Gateway,
    binding: &BackendBinding,
    bank: &QuestionBank,
    system: &str,
    tag: &CallTag,
) -> Result<[u8; QUESTION_COUNT], VsmError> {
    let mut row = [0u8; QUESTION_COUNT];
    for (q, slot) in row.iter_mut().enumerate() {
        let history = [ChatMessage::system(system), ChatMessage::user(survey_prompt(bank.question(q + 1)))];
        let raw = gateway.complete_chat_tagged(tag, binding, &history)?.message.content;
        *slot = parse_answer(&raw).ok_or(VsmError::UnparseableAnswer { question: q + 1, raw })?;
    }
    Ok(row)
}

/// Poses the survey `repetitions` times, one question per request. A pass
/// containing an unparseable answer is repeated up to the retry budget.
pub fn administer_survey(
    gateway: &Gateway,
    binding: &BackendBinding,
    bank: &QuestionBank,
    culture_name: &str,
    config: &SurveyConfig,
) -> Result<VsmAnswerSheet, VsmError> {
    if config.repetitions == 0 {
        return Err(VsmError::InvalidSheet("repetitions must be positive".into()));
    }
    let system = survey_system_prompt(culture_name);
    let mut rows = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let tag = CallTag::new("vsm").session(format!("vsm-{culture_name}-{rep}"));
        let mut attempt = 0;
        let row = loop {
            match survey_pass(gateway, binding, bank, &system, &tag) {
                Ok(row) => break row,
                Err(e @ VsmError::UnparseableAnswer { .. }) => {
                    if attempt >= config.retry_budget {
                        return Err(e);
                    }
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        rows.push(row);
    }
    VsmAnswerSheet::new(rows)
}

/// Survey outcome for one culture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsmReport {
    pub culture: String,
    pub respondents: usize,
    pub means: VsmMeans,
    pub constants: VsmConstants,
    pub scores: VsmScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<VsmScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl VsmReport {
    pub fn build(culture: &str, sheet: &VsmAnswerSheet, constants: VsmConstants, reference: Option<VsmScores>) -> Self {
        let means = sheet.means();
        let scores = score_dimensions(&means, &constants);
        VsmReport {
            culture: culture.to_string(),
            respondents: sheet.respondent_count(),
            means,
            constants,
            scores,
            distance: reference.as_ref().map(|r| cultural_distance(&scores, r)),
            reference,
        }
    }
}
