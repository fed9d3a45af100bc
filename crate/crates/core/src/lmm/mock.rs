use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use super::{prompt_fingerprint, BackendFailure, GenerationRequest, LmmBackend};
use crate::distance::{fold, fold_chars, Ned, PatternMatcher};
use crate::error::Error;
use crate::linking::{parse_link_prompt, LinkPrompt};

/// What the gold-answer mock knows about one dataset item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldEntry {
    pub entity_name: String,
    pub answer: String,
    pub supporting_fact: Option<String>,
}

/// Policy names as used on the command line and in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockMode {
    EchoFirstCandidate,
    NearestCandidateByNed,
    ScriptedMap,
    GoldAnswer,
}

impl MockMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MockMode::EchoFirstCandidate => "echo_first_candidate",
            MockMode::NearestCandidateByNed => "nearest_candidate_by_ned",
            MockMode::ScriptedMap => "scripted_map",
            MockMode::GoldAnswer => "gold_answer",
        }
    }
}

impl fmt::Display for MockMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MockMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Ok(match s {
            "echo_first_candidate" => MockMode::EchoFirstCandidate,
            "nearest_candidate_by_ned" => MockMode::NearestCandidateByNed,
            "scripted_map" => MockMode::ScriptedMap,
            "gold_answer" => MockMode::GoldAnswer,
            other => return Err(Error::invalid(format!("unknown mock policy `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockPolicy {
    /// Answers a linking prompt with its first listed candidate.
    EchoFirstCandidate,
    /// Answers a linking prompt with the candidate closest to the visual text,
    /// scoring names (and aliases, when known) the way the entity index does.
    /// Ties go to the earlier candidate in the prompt.
    NearestCandidateByNed {
        /// Canonical name to aliases.
        aliases: HashMap<String, Vec<String>>,
    },
    /// Looks the prompt fingerprint up in a fixed table.
    ScriptedMap { script: BTreeMap<String, String> },
    /// Replies with the gold entity name to linking prompts and the gold
    /// answer plus supporting fact to QA prompts, keyed by request id.
    GoldAnswer { gold: HashMap<String, GoldEntry> },
}

impl MockPolicy {
    pub fn mode(&self) -> MockMode {
        match self {
            MockPolicy::EchoFirstCandidate => MockMode::EchoFirstCandidate,
            MockPolicy::NearestCandidateByNed { .. } => MockMode::NearestCandidateByNed,
            MockPolicy::ScriptedMap { .. } => MockMode::ScriptedMap,
            MockPolicy::GoldAnswer { .. } => MockMode::GoldAnswer,
        }
    }

    pub fn nearest() -> Self {
        MockPolicy::NearestCandidateByNed {
            aliases: HashMap::new(),
        }
    }
}

/// Deterministic backend; may use a different policy for each stage.
#[derive(Debug, Clone)]
pub struct MockBackend {
    link: MockPolicy,
    answer: MockPolicy,
    tag: String,
}

impl MockBackend {
    pub fn new(policy: MockPolicy) -> Self {
        MockBackend::staged(policy.clone(), policy)
    }

    pub fn staged(link: MockPolicy, answer: MockPolicy) -> Self {
        let tag = if link.mode() == answer.mode() {
            format!("mock:{}", link.mode())
        } else {
            format!("mock:{}+{}", link.mode(), answer.mode())
        };
        MockBackend { link, answer, tag }
    }

    fn respond(&self, request: &GenerationRequest) -> Result<String, Error> {
        let prompt = &request.prompt_text;
        let link = parse_link_prompt(prompt);
        let policy = if link.is_some() { &self.link } else { &self.answer };
        match policy {
            MockPolicy::EchoFirstCandidate => {
                let link = link.ok_or_else(|| not_a_link_prompt(policy))?;
                link.candidates
                    .first()
                    .map(|s| s.to_string())
                    .ok_or_else(|| Error::Protocol("linking prompt lists no candidates".into()))
            }
            MockPolicy::NearestCandidateByNed { aliases } => {
                let link = link.ok_or_else(|| not_a_link_prompt(policy))?;
                nearest(&link, aliases)
            }
            MockPolicy::ScriptedMap { script } => {
                let fp = prompt_fingerprint(prompt);
                script
                    .get(&fp)
                    .cloned()
                    .ok_or_else(|| Error::Protocol(format!("script has no entry for prompt {fp}")))
            }
            MockPolicy::GoldAnswer { gold } => {
                let id = request.request_id.as_deref().ok_or_else(|| {
                    Error::Protocol("gold_answer mock needs a request id".into())
                })?;
                let entry = gold
                    .get(id)
                    .ok_or_else(|| Error::Protocol(format!("no gold entry for `{id}`")))?;
                Ok(if link.is_some() {
                    entry.entity_name.clone()
                } else {
                    match &entry.supporting_fact {
                        Some(f) => format!("{} Supporting fact: {}", entry.answer, f),
                        None => entry.answer.clone(),
                    }
                })
            }
        }
    }
}

fn not_a_link_prompt(policy: &MockPolicy) -> Error {
    Error::Protocol(format!("{} mock only answers linking prompts", policy.mode()))
}

fn nearest(link: &LinkPrompt<'_>, aliases: &HashMap<String, Vec<String>>) -> Result<String, Error> {
    let Some(text) = link.visual_text.filter(|t| !fold(t).is_empty()) else {
        return link
            .candidates
            .first()
            .map(|s| s.to_string())
            .ok_or_else(|| Error::Protocol("linking prompt lists no candidates".into()));
    };
    let folded = fold(text);
    let mut queries: Vec<(PatternMatcher, bool)> = vec![(PatternMatcher::new(folded.chars().collect()), false)];
    let words: Vec<&str> = folded.split(' ').collect();
    if words.len() > 1 {
        for w in words {
            queries.push((PatternMatcher::new(w.chars().collect()), true));
        }
    }
    let mut best: Option<((Ned, bool, usize), &str)> = None;
    for &name in &link.candidates {
        let surfaces = std::iter::once(name)
            .chain(aliases.get(name).into_iter().flatten().map(String::as_str));
        for surface in surfaces {
            let s = fold_chars(surface);
            if s.is_empty() {
                continue;
            }
            for (q, word) in &queries {
                let d = q.distance(&s);
                let key = (Ned::from_parts(d, q.len(), s.len()), *word, s.len());
                if best.as_ref().is_none_or(|(b, _)| key < *b) {
                    best = Some((key, name));
                }
            }
        }
    }
    best.map(|(_, n)| n.to_string())
        .ok_or_else(|| Error::Protocol("linking prompt lists no candidates".into()))
}

impl LmmBackend for MockBackend {
    fn tag(&self) -> &str {
        &self.tag
    }

    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendFailure> {
        self.respond(request).map_err(BackendFailure::Fatal)
    }
}
