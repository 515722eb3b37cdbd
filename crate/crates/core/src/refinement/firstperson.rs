//! Template rewriting of third-person cultural claims into first person.
//!
//! "The Arabian equates their parents' happiness to their own success"
//! becomes "I equate my parents' happiness to my own success". Claims whose
//! subject is not recognizably the culture get an "I believe that " prefix.

use regex::Regex;
use std::sync::LazyLock;

const GROUP_NOUNS: [&str; 8] = ["people", "person", "culture", "society", "community", "communities", "families", "family"];
const KEEP_WORDS: [&str; 14] = [
    "often", "also", "always", "usually", "generally", "still", "typically", "really", "truly", "deeply", "strongly",
    "highly", "greatly", "mostly",
];
const MODALS: [&str; 10] = ["can", "could", "should", "will", "would", "may", "might", "must", "tend", "tends"];

static PRONOUNS: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
    [
        (r"\b[Tt]hey are\b", "I am"),
        (r"\b[Tt]hey were\b", "I was"),
        (r"\b[Tt]hey're\b", "I'm"),
        (r"\b[Tt]hemselves\b", "myself"),
        (r"\b[Tt]heirs\b", "mine"),
        (r"\bhis or her\b", "my"),
        (r"\b[Tt]heir\b", "my"),
        (r"\b[Tt]hem\b", "me"),
        (r"\b[Tt]hey\b", "I"),
    ]
    .into_iter()
    .map(|(p, r)| (Regex::new(p).expect("static pattern"), r))
    .collect()
});

/// Whether `word` names the culture: same first three letters as the culture
/// name ("Arabian" for "Arabic", "Germans" for "German").
fn is_demonym(word: &str, culture_name: &str) -> bool {
    let w: Vec<char> = word.chars().flat_map(char::to_lowercase).collect();
    let c: Vec<char> = culture_name.chars().flat_map(char::to_lowercase).collect();
    word.chars().next().is_some_and(char::is_uppercase) && w.len() >= 3 && c.len() >= 3 && w[..3] == c[..3]
}

/// Length in words of a leading culture subject, if any.
fn subject_len(words: &[&str], culture_name: &str) -> Option<usize> {
    let bare = |w: &str| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string();
    let mut i = 0;
    if words.first().is_some_and(|w| matches!(*w, "The" | "the" | "Many" | "Most")) {
        i = 1;
    }
    if words.len() > i + 1 && matches!(words[i], "People" | "people") && matches!(words[i + 1], "in" | "from" | "of") {
        let mut j = i + 2;
        if words.get(j).is_some_and(|w| *w == "the") {
            j += 1;
        }
        if words.get(j).is_some_and(|w| is_demonym(&bare(w), culture_name)) {
            j += 1;
            if words.get(j).is_some_and(|w| GROUP_NOUNS.contains(&bare(w).to_lowercase().as_str())) {
                j += 1;
            }
            return Some(j);
        }
        return None;
    }
    if words.get(i).is_some_and(|w| is_demonym(&bare(w), culture_name)) {
        let mut j = i + 1;
        if words.get(j).is_some_and(|w| GROUP_NOUNS.contains(&bare(w).to_lowercase().as_str())) {
            j += 1;
        }
        return Some(j);
    }
    None
}

/// Third-person singular present to base form: "equates" -> "equate".
fn base_form(verb: &str) -> String {
    match verb {
        "is" | "are" => return "am".into(),
        "was" | "were" => return "was".into(),
        "has" => return "have".into(),
        "does" => return "do".into(),
        _ => {}
    }
    if !verb.chars().all(|c| c.is_ascii_lowercase()) || verb.len() < 3 {
        return verb.into();
    }
    if let Some(stem) = verb.strip_suffix("ies") {
        return format!("{stem}y");
    }
    for suffix in ["sses", "shes", "ches", "xes", "zes", "oes"] {
        if verb.ends_with(suffix) {
            return verb[..verb.len() - 2].into();
        }
    }
    if verb.ends_with('s') && !verb.ends_with("ss") && !verb.ends_with("us") {
        return verb[..verb.len() - 1].into();
    }
    verb.into()
}

fn lower_first_if_common(text: &str) -> String {
    const COMMON: [&str; 16] = [
        "The", "A", "An", "This", "That", "These", "Those", "Many", "Most", "Some", "Every", "Each", "In", "For", "It",
        "There",
    ];
    let first = text.split_whitespace().next().unwrap_or("");
    if COMMON.contains(&first) {
        let mut chars = text.chars();
        chars.next().map(|c| c.to_lowercase().chain(chars).collect()).unwrap_or_default()
    } else {
        text.to_string()
    }
}

/// Rewrites a cultural claim about `culture_name` into a first-person statement.
pub fn to_first_person(opinion: &str, culture_name: &str) -> String {
    let text = opinion.trim();
    let words: Vec<&str> = text.split_whitespace().collect();
    let Some(subject) = subject_len(&words, culture_name).filter(|&n| n < words.len()) else {
        return format!("I believe that {}", lower_first_if_common(text));
    };
    let mut rest: Vec<String> = words[subject..].iter().map(|w| w.to_string()).collect();
    let mut i = 0;
    while i < rest.len() {
        let w = rest[i].clone();
        if KEEP_WORDS.contains(&w.as_str()) {
            i += 1;
            continue;
        }
        if MODALS.contains(&w.as_str()) {
            rest[i] = if w == "tends" { "tend".into() } else { w };
            break;
        }
        rest[i] = base_form(&w);
        break;
    }
    let mut out = format!("I {}", rest.join(" "));
    for (re, replacement) in PRONOUNS.iter() {
        out = re.replace_all(&out, *replacement).into_owned();
    }
    out
}
