//! Culture catalog, persona roster, and seed survey corpora.
//!
//! The roster is data: a JSON map from culture id to display name, language
//! tag, and one persona name per gender. The bundled roster covers English
//! (the main-contact culture) and the eight delegate cultures; additional
//! cultures load from a user-supplied file with the same shape.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_ROSTER: &str = include_str!("../data/roster.json");

/// Culture of the main contact in every session.
pub const MAIN_CONTACT_CULTURE: &str = "en";

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("seed file not found: {0}")]
    FileMissing(String),
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("duplicate seed id {0:?}")]
    DuplicateSeedId(String),
    #[error("unknown culture {0:?}")]
    UnknownCulture(String),
    #[error("invalid roster: {0}")]
    InvalidRoster(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<io::Error> for RegistryError {
    fn from(err: io::Error) -> Self {
        RegistryError::Io(err.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CultureId(pub String);

impl CultureId {
    pub fn new(id: impl Into<String>) -> Self {
        CultureId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CultureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CultureId {
    fn from(s: &str) -> Self {
        CultureId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    /// Object pronoun used when another agent refers to this persona.
    pub fn object_pronoun(self) -> &'static str {
        match self {
            Gender::Male => "him",
            Gender::Female => "her",
        }
    }
}

impl std::str::FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Gender::Male),
            "female" | "f" => Ok(Gender::Female),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    MainContact,
    Delegate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CultureProfile {
    pub culture_id: CultureId,
    pub display_name: String,
    pub language_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPersona {
    pub name: String,
    pub culture: CultureId,
    pub gender: Gender,
    pub role: AgentRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RosterEntry {
    display_name: String,
    #[serde(default)]
    language_tag: Option<String>,
    male: String,
    female: String,
}

/// Registered cultures and their personas. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CultureRegistry {
    entries: BTreeMap<CultureId, RosterEntry>,
}

impl CultureRegistry {
    /// The roster shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_ROSTER).expect("bundled roster is valid")
    }

    /// Parses a roster file: `{culture_id: {male, female, display_name, language_tag?}}`.
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let entries: BTreeMap<CultureId, RosterEntry> =
            serde_json::from_str(text).map_err(|e| RegistryError::InvalidRoster(e.to_string()))?;
        if !entries.contains_key(&CultureId::from(MAIN_CONTACT_CULTURE)) {
            return Err(RegistryError::InvalidRoster(format!(
                "roster must define the main-contact culture {MAIN_CONTACT_CULTURE:?}"
            )));
        }
        let mut names = HashSet::new();
        for (id, entry) in &entries {
            if id.0.trim().is_empty() {
                return Err(RegistryError::InvalidRoster("empty culture id".into()));
            }
            for name in [&entry.male, &entry.female] {
                if name.trim().is_empty() {
                    return Err(RegistryError::InvalidRoster(format!("empty persona name for {id}")));
                }
                if !names.insert(name.clone()) {
                    return Err(RegistryError::InvalidRoster(format!("persona name {name:?} used twice")));
                }
            }
        }
        Ok(CultureRegistry { entries })
    }

    /// Bundled roster extended (or overridden) by the entries of `text`.
    pub fn bundled_with(text: &str) -> Result<Self, RegistryError> {
        let extra: BTreeMap<CultureId, RosterEntry> =
            serde_json::from_str(text).map_err(|e| RegistryError::InvalidRoster(e.to_string()))?;
        let mut merged = Self::bundled().entries;
        merged.extend(extra);
        let json = serde_json::to_string(&merged).expect("roster serializes");
        Self::from_json(&json)
    }

    pub fn contains(&self, culture: &CultureId) -> bool {
        self.entries.contains_key(culture)
    }

    pub fn cultures(&self) -> impl Iterator<Item = &CultureId> {
        self.entries.keys()
    }

    pub fn profile(&self, culture: &CultureId) -> Result<CultureProfile, RegistryError> {
        let entry = self.entry(culture)?;
        Ok(CultureProfile {
            culture_id: culture.clone(),
            display_name: entry.display_name.clone(),
            language_tag: entry.language_tag.clone().unwrap_or_else(|| culture.0.clone()),
        })
    }

    pub fn display_name(&self, culture: &CultureId) -> Result<&str, RegistryError> {
        Ok(&self.entry(culture)?.display_name)
    }

    fn entry(&self, culture: &CultureId) -> Result<&RosterEntry, RegistryError> {
        self.entries
            .get(culture)
            .ok_or_else(|| RegistryError::UnknownCulture(culture.0.clone()))
    }

    pub fn persona(
        &self,
        culture: &CultureId,
        gender: Gender,
        role: AgentRole,
    ) -> Result<AgentPersona, RegistryError> {
        let entry = self.entry(culture)?;
        let name = match gender {
            Gender::Male => &entry.male,
            Gender::Female => &entry.female,
        };
        Ok(AgentPersona { name: name.clone(), culture: culture.clone(), gender, role })
    }

    /// Reverse roster lookup: persona name to (culture, gender).
    pub fn lookup_name(&self, name: &str) -> Option<(CultureId, Gender)> {
        self.entries.iter().find_map(|(id, e)| {
            if e.male == name {
                Some((id.clone(), Gender::Male))
            } else if e.female == name {
                Some((id.clone(), Gender::Female))
            } else {
                None
            }
        })
    }

    /// Returns `(main_contact, delegate)` for a session on `target_culture`.
    pub fn resolve_personas(
        &self,
        target_culture: &CultureId,
        delegate_gender: Gender,
        contact_gender: Gender,
    ) -> Result<(AgentPersona, AgentPersona), RegistryError> {
        let delegate = self.persona(target_culture, delegate_gender, AgentRole::Delegate)?;
        let contact =
            self.persona(&CultureId::from(MAIN_CONTACT_CULTURE), contact_gender, AgentRole::MainContact)?;
        Ok((contact, delegate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SeedSource {
    #[serde(rename = "WVS")]
    Wvs,
    #[serde(rename = "GAS")]
    Gas,
}

impl std::str::FromStr for SeedSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "WVS" | "wvs" => Ok(SeedSource::Wvs),
            "GAS" | "gas" => Ok(SeedSource::Gas),
            other => Err(format!("unknown seed source {other:?} (expected WVS or GAS)")),
        }
    }
}

/// A survey question and the target culture's attested attitude toward it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedDatum {
    pub seed_id: String,
    pub question: String,
    pub target_culture: CultureId,
    pub attested_answer: String,
    pub source: SeedSource,
}

impl SeedDatum {
    pub fn validate(&self) -> Result<(), String> {
        if self.seed_id.trim().is_empty() {
            return Err("seed_id is empty".into());
        }
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.attested_answer.trim().is_empty() {
            return Err("attested_answer is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedFormat {
    Jsonl,
    Csv,
}

impl SeedFormat {
    /// Guesses the format from a file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => SeedFormat::Csv,
            _ => SeedFormat::Jsonl,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedCorpus {
    entries: Vec<SeedDatum>,
    counts: BTreeMap<CultureId, usize>,
}

impl SeedCorpus {
    /// Builds a corpus, enforcing unique seed ids and registered cultures.
    pub fn from_entries(entries: Vec<SeedDatum>, registry: &CultureRegistry) -> Result<Self, RegistryError> {
        let mut corpus = SeedCorpus::default();
        for (idx, seed) in entries.into_iter().enumerate() {
            corpus.push(seed, idx + 1, registry)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, seed: SeedDatum, line: usize, registry: &CultureRegistry) -> Result<(), RegistryError> {
        seed.validate().map_err(|message| RegistryError::ParseError { line, message })?;
        if !registry.contains(&seed.target_culture) {
            return Err(RegistryError::UnknownCulture(seed.target_culture.0.clone()));
        }
        if self.entries.iter().any(|s| s.seed_id == seed.seed_id) {
            return Err(RegistryError::DuplicateSeedId(seed.seed_id));
        }
        *self.counts.entry(seed.target_culture.clone()).or_default() += 1;
        self.entries.push(seed);
        Ok(())
    }

    pub fn entries(&self) -> &[SeedDatum] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> &BTreeMap<CultureId, usize> {
        &self.counts
    }

    pub fn count_for(&self, culture: &CultureId) -> usize {
        self.counts.get(culture).copied().unwrap_or(0)
    }

    pub fn get(&self, seed_id: &str) -> Option<&SeedDatum> {
        self.entries.iter().find(|s| s.seed_id == seed_id)
    }

    /// Keeps only seeds targeting `culture`.
    pub fn filter_culture(&self, culture: &CultureId) -> SeedCorpus {
        let entries: Vec<_> = self.entries.iter().filter(|s| &s.target_culture == culture).cloned().collect();
        let mut counts = BTreeMap::new();
        if !entries.is_empty() {
            counts.insert(culture.clone(), entries.len());
        }
        SeedCorpus { entries, counts }
    }
}

/// Loads a seed file. The whole file is rejected on the first bad row.
pub fn load_seed_corpus(
    path: &Path,
    format: SeedFormat,
    registry: &CultureRegistry,
) -> Result<SeedCorpus, RegistryError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(RegistryError::FileMissing(path.display().to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    match format {
        SeedFormat::Jsonl => {
            let text = std::str::from_utf8(&bytes).map_err(|e| RegistryError::ParseError {
                line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
                message: "invalid UTF-8".into(),
            })?;
            parse_seed_jsonl(text, registry)
        }
        SeedFormat::Csv => parse_seed_csv(&bytes, registry),
    }
}

/// Parses line-delimited JSON seed records. Blank lines are skipped.
pub fn parse_seed_jsonl(text: &str, registry: &CultureRegistry) -> Result<SeedCorpus, RegistryError> {
    let mut corpus = SeedCorpus::default();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let seed: SeedDatum = serde_json::from_str(line)
            .map_err(|e| RegistryError::ParseError { line: line_no, message: e.to_string() })?;
        corpus.push(seed, line_no, registry)?;
    }
    Ok(corpus)
}

#[derive(Debug, Deserialize)]
struct CsvSeedRow {
    seed_id: String,
    question: String,
    target_culture: String,
    attested_answer: String,
    source: String,
}

/// Parses CSV with header `seed_id,question,target_culture,attested_answer,source`.
/// Reported line numbers count the header as line 1.
pub fn parse_seed_csv(bytes: &[u8], registry: &CultureRegistry) -> Result<SeedCorpus, RegistryError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| RegistryError::ParseError { line: 1, message: e.to_string() })?
        .clone();
    let mut corpus = SeedCorpus::default();
    for result in reader.records() {
        let record = result.map_err(|e| RegistryError::ParseError {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let row: CsvSeedRow = record
            .deserialize(Some(&headers))
            .map_err(|e| RegistryError::ParseError { line, message: e.to_string() })?;
        let source = row
            .source
            .parse::<SeedSource>()
            .map_err(|message| RegistryError::ParseError { line, message })?;
        let seed = SeedDatum {
            seed_id: row.seed_id,
            question: row.question,
            target_culture: CultureId(row.target_culture.trim().to_string()),
            attested_answer: row.attested_answer,
            source,
        };
        corpus.push(seed, line, registry)?;
    }
    Ok(corpus)
}

/// Serializes a corpus to its canonical JSONL form.
pub fn seeds_to_jsonl(seeds: &[SeedDatum]) -> String {
    let mut out = String::new();
    for seed in seeds {
        out.push_str(&serde_json::to_string(seed).expect("seed serializes"));
        out.push('\n');
    }
    out
}
