//! Two-agent dialogue sessions.
//!
//! A session pairs the English main contact with a cultural delegate around
//! one seed question. Turn 0 is a system turn carrying the opening question;
//! statement turns then alternate delegate, contact, delegate, ... Guidance
//! turns (spoken by `moderator`) can be interleaved: on a fixed schedule in
//! self-guided mode, or by a human in interactive mode. Guidance turns never
//! affect whose turn it is.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BackendBinding, CallTag, ChatMessage, Gateway, GatewayError};
use crate::registry::{AgentPersona, AgentRole, CultureRegistry, SeedDatum};
use crate::util::{file_stem_for, write_atomic};

/// First line of every persona system prompt.
pub const PERSONA_MARKER: &str = "You are taking part in a cross-cultural conversation.";
pub const NAME_LINE_PREFIX: &str = "Name: ";
/// Instruction binding the delegate to the seed's attested answer.
pub const CONFORMANCE_CLAUSE: &str = "All of your following statements should conform to this answer";
/// An agent replying with exactly this ends the dialogue early.
pub const END_OF_DIALOGUE: &str = "[END]";
pub const MODERATOR: &str = "moderator";

pub const DEFAULT_MAX_TURNS: usize = 10;
pub const DEFAULT_GUIDANCE_EVERY: usize = 2;

/// Library guidance prompts. `{other}` becomes "him"/"her" for the agent who
/// spoke last.
pub const DEFAULT_GUIDANCE_LIBRARY: [&str; 2] = [
    "Are there anything in your culture related to the problem talked before?",
    "Do you agree with {other}? Provide more reasons to support your idea?",
];

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("session is closed")]
    SessionClosed,
    #[error("operation not allowed in {0:?} mode")]
    WrongMode(Mode),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("backend error: {0}")]
    Backend(#[from] GatewayError),
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SelfGuided,
    FreeChat,
    Interactive,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "self_guided" => Ok(Mode::SelfGuided),
            "free_chat" => Ok(Mode::FreeChat),
            "interactive" => Ok(Mode::Interactive),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Open,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnKind {
    Statement,
    Guidance,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceOrigin {
    Library,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub index: usize,
    pub kind: TurnKind,
    pub speaker: String,
    pub content: String,
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<GuidanceOrigin>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidancePrompt {
    pub template: String,
    pub origin: GuidanceOrigin,
}

impl GuidancePrompt {
    pub fn human(text: impl Into<String>) -> Self {
        GuidancePrompt { template: text.into(), origin: GuidanceOrigin::Human }
    }

    pub fn library(template: impl Into<String>) -> Self {
        GuidancePrompt { template: template.into(), origin: GuidanceOrigin::Library }
    }
}

/// Source of turn timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    /// Milliseconds since the Unix epoch.
    #[default]
    System,
    /// The turn index; makes transcripts reproducible.
    Logical,
}

impl Clock {
    fn stamp(self, index: usize) -> u64 {
        match self {
            Clock::System => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            Clock::Logical => index as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    pub max_turns: usize,
    pub guidance_every: usize,
    pub library: Vec<String>,
    pub clock: Clock,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: Mode::SelfGuided,
            max_turns: DEFAULT_MAX_TURNS,
            guidance_every: DEFAULT_GUIDANCE_EVERY,
            library: DEFAULT_GUIDANCE_LIBRARY.iter().map(|s| s.to_string()).collect(),
            clock: Clock::System,
        }
    }
}

impl SessionConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_max_turns(mut self, max_turns: usize) -> Self {
        self.max_turns = max_turns;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }
}

/// Chat bindings for the two agents; they may point at different models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBindings {
    pub contact: BackendBinding,
    pub delegate: BackendBinding,
}

impl AgentBindings {
    pub fn same(binding: BackendBinding) -> Self {
        AgentBindings { contact: binding.clone(), delegate: binding }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub seed: SeedDatum,
    pub contact: AgentPersona,
    pub delegate: AgentPersona,
    pub contact_culture_name: String,
    pub delegate_culture_name: String,
    pub config: SessionConfig,
    pub turns: Vec<Turn>,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_cause: Option<String>,
    pub library_cursor: usize,
}

/// Renders `(contact_prompt, delegate_prompt)` for a seed and persona pair.
pub fn build_system_prompts(
    seed: &SeedDatum,
    contact: &AgentPersona,
    delegate: &AgentPersona,
    registry: &CultureRegistry,
) -> Result<(String, String), DialogueError> {
    seed.validate().map_err(DialogueError::Precondition)?;
    if contact.role != AgentRole::MainContact || delegate.role != AgentRole::Delegate {
        return Err(DialogueError::Precondition("personas must be (main_contact, delegate)".into()));
    }
    let culture_name = |p: &AgentPersona| {
        registry
            .display_name(&p.culture)
            .map(str::to_string)
            .map_err(|e| DialogueError::Precondition(e.to_string()))
    };
    Ok(render_prompts(seed, contact, &culture_name(contact)?, delegate, &culture_name(delegate)?))
}

fn render_prompts(
    seed: &SeedDatum,
    contact: &AgentPersona,
    contact_culture: &str,
    delegate: &AgentPersona,
    delegate_culture: &str,
) -> (String, String) {
    let question = seed.question.trim();
    let answer = seed.attested_answer.trim();
    let contact_prompt = format!(
        "{PERSONA_MARKER}\n\
         {NAME_LINE_PREFIX}{cn}\n\
         Culture: {cc}\n\
         Gender: {cg}\n\
         You are {cn}, a {cg} from {cc} culture, talking with {dn}, a {dg} from {dc} culture.\n\
         The topic is the question: \"{question}\"\n\
         All of your statements should conform to {cc} culture. Share your own opinions and reasons, \
         ask {dn} about the reasons behind the views of {dc} culture, and keep each reply to a few sentences.\n\
         If you have nothing more to add, reply with {END_OF_DIALOGUE}.",
        cn = contact.name,
        cc = contact_culture,
        cg = contact.gender.as_str(),
        dn = delegate.name,
        dg = delegate.gender.as_str(),
        dc = delegate_culture,
    );
    let delegate_prompt = format!(
        "{PERSONA_MARKER}\n\
         {NAME_LINE_PREFIX}{dn}\n\
         Culture: {dc}\n\
         Gender: {dg}\n\
         You are {dn}, a {dg} from {dc} culture, talking with {cn}, a {cg} from {cc} culture.\n\
         The topic is the question: \"{question}\"\n\
         People in {dc} culture answer this question with: \"{answer}\".\n\
         You share this attitude. {CONFORMANCE_CLAUSE}: \"{answer}\".\n\
         Explain your opinions and reasons from the perspective of {dc} culture, respond to what {cn} says, \
         and keep each reply to a few sentences.\n\
         If you have nothing more to add, reply with {END_OF_DIALOGUE}.",
        cn = contact.name,
        cc = contact_culture,
        cg = contact.gender.as_str(),
        dn = delegate.name,
        dg = delegate.gender.as_str(),
        dc = delegate_culture,
    );
    (contact_prompt, delegate_prompt)
}

/// The opening question, e.g. "How do you think about X? Please provide your
/// opinions and reasons".
pub fn initial_question(question: &str) -> String {
    let trimmed = question.trim().trim_end_matches(['?', '.', '!']).trim_end();
    let mut chars = trimmed.chars();
    let body = match (chars.next(), chars.clone().next()) {
        // Keep acronyms and single-letter words like "I" as written.
        (Some(first), Some(second)) if first.is_uppercase() && !second.is_uppercase() && second != ' ' => {
            first.to_lowercase().chain(chars).collect()
        }
        _ => trimmed.to_string(),
    };
    format!("How do you think about {body}? Please provide your opinions and reasons")
}

/// Opens a session: status `open`, a single system turn carrying the opening question.
pub fn open_session(
    session_id: impl Into<String>,
    seed: SeedDatum,
    contact: AgentPersona,
    delegate: AgentPersona,
    registry: &CultureRegistry,
    config: SessionConfig,
) -> Result<DialogueSession, DialogueError> {
    if config.max_turns == 0 {
        return Err(DialogueError::Precondition("max_turns must be positive".into()));
    }
    if config.mode == Mode::SelfGuided && (config.guidance_every == 0 || config.library.is_empty()) {
        return Err(DialogueError::Precondition(
            "self-guided mode needs guidance_every > 0 and a non-empty library".into(),
        ));
    }
    // Validates personas and seed.
    build_system_prompts(&seed, &contact, &delegate, registry)?;
    let contact_culture_name = registry.display_name(&contact.culture).expect("validated").to_string();
    let delegate_culture_name = registry.display_name(&delegate.culture).expect("validated").to_string();
    let opening = Turn {
        index: 0,
        kind: TurnKind::System,
        speaker: "system".into(),
        content: initial_question(&seed.question),
        timestamp: config.clock.stamp(0),
        origin: None,
    };
    Ok(DialogueSession {
        session_id: session_id.into(),
        seed,
        contact,
        delegate,
        contact_culture_name,
        delegate_culture_name,
        config,
        turns: vec![opening],
        status: SessionStatus::Open,
        abort_cause: None,
        library_cursor: 0,
    })
}

impl DialogueSession {
    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn max_turns(&self) -> usize {
        self.config.max_turns
    }

    pub fn is_open(&self) -> bool {
        self.status == SessionStatus::Open
    }

    pub fn statement_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.kind == TurnKind::Statement)
    }

    pub fn statement_count(&self) -> usize {
        self.statement_turns().count()
    }

    pub fn guidance_count(&self) -> usize {
        self.turns.iter().filter(|t| t.kind == TurnKind::Guidance).count()
    }

    /// Who speaks next: the delegate after an even number of statements.
    pub fn next_speaker(&self) -> &AgentPersona {
        if self.statement_count().is_multiple_of(2) {
            &self.delegate
        } else {
            &self.contact
        }
    }

    fn other_than(&self, persona: &AgentPersona) -> &AgentPersona {
        if persona.role == AgentRole::Delegate {
            &self.contact
        } else {
            &self.delegate
        }
    }

    pub fn system_prompts(&self) -> (String, String) {
        render_prompts(
            &self.seed,
            &self.contact,
            &self.contact_culture_name,
            &self.delegate,
            &self.delegate_culture_name,
        )
    }

    /// The chat history sent when `speaker` takes the next turn: its system
    /// prompt, then the full transcript with its own statements as
    /// `assistant` messages and everything else as `user` messages.
    pub fn history_for(&self, speaker: &AgentPersona) -> Vec<ChatMessage> {
        let (contact_prompt, delegate_prompt) = self.system_prompts();
        let system = if speaker.role == AgentRole::Delegate { delegate_prompt } else { contact_prompt };
        let mut history = vec![ChatMessage::system(system)];
        for turn in &self.turns {
            let msg = match turn.kind {
                TurnKind::System => ChatMessage::user(turn.content.clone()),
                TurnKind::Guidance => {
                    ChatMessage::user(format!("Moderator: {}", turn.content)).with_speaker(MODERATOR)
                }
                TurnKind::Statement if turn.speaker == speaker.name => {
                    ChatMessage::assistant(turn.content.clone()).with_speaker(turn.speaker.clone())
                }
                TurnKind::Statement => ChatMessage::user(turn.content.clone()).with_speaker(turn.speaker.clone()),
            };
            history.push(msg);
        }
        history
    }

    fn push_turn(&mut self, kind: TurnKind, speaker: String, content: String, origin: Option<GuidanceOrigin>) -> Turn {
        let index = self.turns.last().map_or(0, |t| t.index + 1);
        let turn = Turn { index, kind, speaker, content, timestamp: self.config.clock.stamp(index), origin };
        self.turns.push(turn.clone());
        turn
    }

    fn render_guidance(&self, template: &str) -> String {
        // The guidance is addressed to the next speaker; {other} is the agent
        // that spoke last.
        let other = self.other_than(self.next_speaker());
        template.replace("{other}", other.gender.object_pronoun())
    }
}

/// Appends a guidance turn. Allowed in self-guided and interactive modes.
pub fn inject_guidance(session: &mut DialogueSession, prompt: GuidancePrompt) -> Result<Turn, DialogueError> {
    if !session.is_open() {
        return Err(DialogueError::SessionClosed);
    }
    if session.mode() == Mode::FreeChat {
        return Err(DialogueError::WrongMode(Mode::FreeChat));
    }
    let text = session.render_guidance(&prompt.template);
    if text.trim().is_empty() {
        return Err(DialogueError::Precondition("guidance text is empty".into()));
    }
    Ok(session.push_turn(TurnKind::Guidance, MODERATOR.into(), text, Some(prompt.origin)))
}

/// Produces the next statement turn.
///
/// Returns `Ok(None)` when the agent ends the dialogue with [`END_OF_DIALOGUE`];
/// the session is then completed. Reaching `max_turns` statements completes
/// the session too. In self-guided mode a library guidance prompt is appended
/// after every `guidance_every` statements (never after the final one).
/// Backend errors leave the session unchanged.
pub fn advance_turn(
    session: &mut DialogueSession,
    gateway: &Gateway,
    bindings: &AgentBindings,
) -> Result<Option<Turn>, DialogueError> {
    if !session.is_open() {
        return Err(DialogueError::SessionClosed);
    }
    let statements = session.statement_count();
    if statements >= session.max_turns() {
        session.status = SessionStatus::Completed;
        return Err(DialogueError::SessionClosed);
    }
    let speaker = session.next_speaker().clone();
    let binding = if speaker.role == AgentRole::Delegate { &bindings.delegate } else { &bindings.contact };
    let history = session.history_for(&speaker);
    let tag = CallTag::new("dialogue").session(session.session_id.clone()).speaker(speaker.name.clone());
    let reply = gateway.complete_chat_tagged(&tag, binding, &history)?.message.content;
    let content = reply.trim();
    if content == END_OF_DIALOGUE {
        session.status = SessionStatus::Completed;
        return Ok(None);
    }
    let turn = session.push_turn(TurnKind::Statement, speaker.name, content.to_string(), None);
    let statements = statements + 1;
    if statements >= session.max_turns() {
        session.status = SessionStatus::Completed;
    } else if session.mode() == Mode::SelfGuided && statements.is_multiple_of(session.config.guidance_every) {
        let template = session.config.library[session.library_cursor % session.config.library.len()].clone();
        session.library_cursor += 1;
        inject_guidance(session, GuidancePrompt::library(template))?;
    }
    Ok(Some(turn))
}

/// Closes an open session, keeping its turns.
pub fn terminate(session: &mut DialogueSession) -> Result<(), DialogueError> {
    if !session.is_open() {
        return Err(DialogueError::SessionClosed);
    }
    session.status = SessionStatus::Completed;
    Ok(())
}

/// Runs turns until the session closes. A backend failure aborts the session
/// (turns so far are kept, `abort_cause` is set) rather than returning an error.
pub fn run_session_to_completion(
    mut session: DialogueSession,
    gateway: &Gateway,
    bindings: &AgentBindings,
) -> DialogueSession {
    while session.is_open() {
        match advance_turn(&mut session, gateway, bindings) {
            Ok(_) => {}
            Err(err) => {
                session.status = SessionStatus::Aborted;
                session.abort_cause = Some(err.to_string());
            }
        }
    }
    session
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SteeringCommand {
    InjectGuidance { text: String },
    Advance,
    Terminate,
}

/// Applies a human steering command to an interactive (or self-guided) session.
pub fn apply_steering(
    session: &mut DialogueSession,
    command: SteeringCommand,
    gateway: &Gateway,
    bindings: &AgentBindings,
) -> Result<Option<Turn>, DialogueError> {
    match command {
        SteeringCommand::InjectGuidance { text } => inject_guidance(session, GuidancePrompt::human(text)).map(Some),
        SteeringCommand::Advance => advance_turn(session, gateway, bindings),
        SteeringCommand::Terminate => terminate(session).map(|_| None),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub session_id: String,
    pub seed: SeedDatum,
    pub contact: AgentPersona,
    pub delegate: AgentPersona,
    pub contact_culture_name: String,
    pub delegate_culture_name: String,
    pub config: SessionConfig,
    pub status: SessionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_cause: Option<String>,
    pub library_cursor: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TranscriptLine {
    Header(Box<TranscriptHeader>),
    Turn(Turn),
}

/// Renders a session as line-delimited JSON: a header record then one record per turn.
pub fn render_transcript(session: &DialogueSession, config_hash: &str) -> String {
    let header = TranscriptHeader {
        session_id: session.session_id.clone(),
        seed: session.seed.clone(),
        contact: session.contact.clone(),
        delegate: session.delegate.clone(),
        contact_culture_name: session.contact_culture_name.clone(),
        delegate_culture_name: session.delegate_culture_name.clone(),
        config: session.config.clone(),
        status: session.status,
        abort_cause: session.abort_cause.clone(),
        library_cursor: session.library_cursor,
        config_hash: config_hash.to_string(),
    };
    let mut out = serde_json::to_string(&TranscriptLine::Header(Box::new(header))).expect("header serializes");
    out.push('\n');
    for turn in &session.turns {
        out.push_str(&serde_json::to_string(&TranscriptLine::Turn(turn.clone())).expect("turn serializes"));
        out.push('\n');
    }
    out
}

/// Path of the transcript file for `session_id` inside `dir`.
pub fn transcript_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{}.jsonl", file_stem_for(session_id)))
}

pub fn write_transcript(session: &DialogueSession, dir: &Path, config_hash: &str) -> Result<PathBuf, DialogueError> {
    let path = transcript_path(dir, &session.session_id);
    write_atomic(&path, render_transcript(session, config_hash).as_bytes())?;
    Ok(path)
}

/// Parses a transcript and checks the session invariants.
pub fn parse_transcript(text: &str) -> Result<(DialogueSession, String), DialogueError> {
    let err = |line: usize, message: String| DialogueError::Transcript { line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (first_no, first) = lines.next().ok_or_else(|| err(1, "empty transcript".into()))?;
    let header = match serde_json::from_str::<TranscriptLine>(first) {
        Ok(TranscriptLine::Header(h)) => *h,
        Ok(TranscriptLine::Turn(_)) => return Err(err(first_no + 1, "first record must be the header".into())),
        Err(e) => return Err(err(first_no + 1, e.to_string())),
    };
    let mut turns: Vec<Turn> = Vec::new();
    for (idx, line) in lines {
        match serde_json::from_str::<TranscriptLine>(line) {
            Ok(TranscriptLine::Turn(turn)) => turns.push(turn),
            Ok(TranscriptLine::Header(_)) => return Err(err(idx + 1, "duplicate header".into())),
            Err(e) => return Err(err(idx + 1, e.to_string())),
        }
    }
    let session = DialogueSession {
        session_id: header.session_id,
        seed: header.seed,
        contact: header.contact,
        delegate: header.delegate,
        contact_culture_name: header.contact_culture_name,
        delegate_culture_name: header.delegate_culture_name,
        config: header.config,
        turns,
        status: header.status,
        abort_cause: header.abort_cause,
        library_cursor: header.library_cursor,
    };
    check_invariants(&session).map_err(|m| err(0, m))?;
    Ok((session, header.config_hash))
}

pub fn read_transcript(path: &Path) -> Result<(DialogueSession, String), DialogueError> {
    parse_transcript(&fs::read_to_string(path)?)
}

/// Structural invariants every well-formed session satisfies.
pub fn check_invariants(session: &DialogueSession) -> Result<(), String> {
    if session.config.max_turns == 0 {
        return Err("max_turns must be positive".into());
    }
    match session.turns.first() {
        Some(t) if t.kind == TurnKind::System => {}
        _ => return Err("turn 0 must be the system turn".into()),
    }
    for pair in session.turns.windows(2) {
        if pair[1].index <= pair[0].index {
            return Err(format!("turn indices not increasing at {}", pair[1].index));
        }
    }
    for (i, turn) in session.statement_turns().enumerate() {
        let expected = if i % 2 == 0 { &session.delegate.name } else { &session.contact.name };
        if &turn.speaker != expected {
            return Err(format!("statement {} spoken by {:?}, expected {:?}", turn.index, turn.speaker, expected));
        }
    }
    for turn in &session.turns {
        if turn.kind == TurnKind::Guidance && turn.speaker != MODERATOR {
            return Err(format!("guidance turn {} not spoken by moderator", turn.index));
        }
    }
    if session.turns.iter().skip(1).any(|t| t.kind == TurnKind::System) {
        return Err("only turn 0 may be a system turn".into());
    }
    if session.statement_count() > session.config.max_turns {
        return Err("more statements than max_turns".into());
    }
    if session.mode() == Mode::FreeChat && session.guidance_count() > 0 {
        return Err("free-chat session contains guidance".into());
    }
    Ok(())
}
