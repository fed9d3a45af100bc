//! Knowledge-augmented question answering: prompt construction per ablation
//! variant, generation, and answer / supporting-fact parsing.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{FactSentence, KnowledgeBase};
use crate::linking::{LinkResult, Resolution, IMAGE_PLACEHOLDER};
use crate::lmm::{GenerationRequest, LmmGateway, QA_MAX_NEW_TOKENS};
use crate::ocr::ImageRef;

pub const SUPPORTING_FACT_INSTRUCTION: &str = "Answer the question and then state the supporting fact.";
pub const TRUNCATION_MARKER: &str = "[...]";
pub const DEFAULT_KNOWLEDGE_WORD_BUDGET: usize = 512;

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)supporting\s+fact\s*:").expect("static regex"));

/// What context accompanies the question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    NoKnowledge,
    OcrOnly,
    EntityNameOnly,
    KnowledgeFacts,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] = [
        PromptVariant::NoKnowledge,
        PromptVariant::OcrOnly,
        PromptVariant::EntityNameOnly,
        PromptVariant::KnowledgeFacts,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PromptVariant::NoKnowledge => "no_knowledge",
            PromptVariant::OcrOnly => "ocr_only",
            PromptVariant::EntityNameOnly => "entity_name_only",
            PromptVariant::KnowledgeFacts => "knowledge_facts",
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PromptVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown prompt variant `{s}`")))
    }
}

/// Question framing. `Default` supports every variant; the others reproduce
/// the plain question templates of common open models and only accept
/// [`PromptVariant::NoKnowledge`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    #[default]
    Default,
    MplugOwl,
    MiniGpt4v2,
    InstructBlip,
    Llava15,
}

impl FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "default" => PromptStyle::Default,
            "mplug_owl" => PromptStyle::MplugOwl,
            "minigpt4v2" => PromptStyle::MiniGpt4v2,
            "instructblip" => PromptStyle::InstructBlip,
            "llava15" => PromptStyle::Llava15,
            other => return Err(Error::invalid(format!("unknown prompt style `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaRequest {
    pub image: Option<ImageRef>,
    pub question: String,
    pub knowledge: Vec<FactSentence>,
    pub entity_name: Option<String>,
    pub ocr_text: Option<String>,
    pub variant: PromptVariant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QaPromptOptions {
    pub style: PromptStyle,
    /// Whether the knowledge variant asks for a supporting fact.
    pub supporting_fact_instruction: bool,
    pub knowledge_word_budget: usize,
}

impl Default for QaPromptOptions {
    fn default() -> Self {
        QaPromptOptions {
            style: PromptStyle::Default,
            supporting_fact_instruction: true,
            knowledge_word_budget: DEFAULT_KNOWLEDGE_WORD_BUDGET,
        }
    }
}

/// Facts in order while they fit the word budget; the first fact is always
/// kept. Returns the joined text and whether anything was cut.
pub fn pack_knowledge(facts: &[FactSentence], word_budget: usize) -> (String, bool) {
    let mut used = 0;
    let mut parts: Vec<&str> = Vec::new();
    for f in facts {
        let words = f.sentence.split_whitespace().count();
        if !parts.is_empty() && used + words > word_budget {
            break;
        }
        used += words;
        parts.push(&f.sentence);
    }
    let truncated = parts.len() < facts.len();
    let mut text = parts.join(" ");
    if truncated {
        text.push(' ');
        text.push_str(TRUNCATION_MARKER);
    }
    (text, truncated)
}

fn non_empty(field: &Option<String>) -> Option<&str> {
    field.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

pub fn build_qa_prompt(request: &QaRequest, options: &QaPromptOptions) -> Result<String> {
    let question = request.question.trim();
    if question.is_empty() {
        return Err(Error::invalid("question is empty"));
    }
    if options.style != PromptStyle::Default {
        if request.variant != PromptVariant::NoKnowledge {
            return Err(Error::invalid(format!(
                "prompt style {:?} only supports the no_knowledge variant",
                options.style
            )));
        }
        return Ok(match options.style {
            PromptStyle::MplugOwl => format!(
                "The following is a conversation between a curious human and an AI assistant. \
                 The assistant gives accurate and crisp answers to the user's questions.\n\
                 Human: {IMAGE_PLACEHOLDER}\nHuman: {question}\nAI:"
            ),
            PromptStyle::MiniGpt4v2 => format!(
                "{IMAGE_PLACEHOLDER}\n{{vqa}} Based on the image, respond to this question with a short answer: {question}, ASSISTANT:"
            ),
            PromptStyle::InstructBlip | PromptStyle::Llava15 => {
                format!("{IMAGE_PLACEHOLDER}\nUSER: {question}. ASSISTANT:")
            }
            PromptStyle::Default => unreachable!(),
        });
    }
    let mut lines = vec![IMAGE_PLACEHOLDER.to_string(), format!("USER: {question}")];
    match request.variant {
        PromptVariant::NoKnowledge => {}
        PromptVariant::OcrOnly => {
            let ocr = non_empty(&request.ocr_text)
                .ok_or_else(|| Error::invalid("ocr_only variant needs OCR text"))?;
            lines.push(format!("The image contains the text: {ocr}"));
        }
        PromptVariant::EntityNameOnly => {
            let name = non_empty(&request.entity_name)
                .ok_or_else(|| Error::invalid("entity_name_only variant needs an entity name"))?;
            lines.push(format!("The visual text refers to: {name}"));
        }
        PromptVariant::KnowledgeFacts => {
            if request.knowledge.is_empty() {
                return Err(Error::invalid("knowledge_facts variant needs at least one fact"));
            }
            let (text, _) = pack_knowledge(&request.knowledge, options.knowledge_word_budget);
            lines.push(format!("Use the following knowledge: {text}"));
            if options.supporting_fact_instruction {
                lines.push(SUPPORTING_FACT_INSTRUCTION.to_string());
            }
        }
    }
    lines.push("ASSISTANT:".to_string());
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaOutput {
    pub answer: String,
    pub supporting_fact: Option<String>,
    pub raw_completion: String,
}

/// Splits a completion at the first "Supporting fact:" marker (any case).
pub fn parse_answer(raw: &str) -> Result<QaOutput> {
    if raw.trim().is_empty() {
        return Err(Error::EmptyOutput);
    }
    let (answer, fact) = match MARKER.find(raw) {
        Some(m) => {
            let fact = raw[m.end()..].trim();
            (raw[..m.start()].trim(), (!fact.is_empty()).then(|| fact.to_string()))
        }
        None => (raw.trim(), None),
    };
    // A completion that is only a supporting fact still answers with it.
    let answer = if answer.is_empty() {
        fact.clone().unwrap_or_default()
    } else {
        answer.to_string()
    };
    Ok(QaOutput {
        answer,
        supporting_fact: fact,
        raw_completion: raw.to_string(),
    })
}

/// Context for answering one question about one image.
#[derive(Debug, Clone, Copy)]
pub struct AnswerInput<'r> {
    pub question_id: &'r str,
    pub image: &'r ImageRef,
    pub question: &'r str,
    /// The linked entity; ignored when `oracle_entity` is set.
    pub link: Option<&'r LinkResult>,
    pub oracle_entity: Option<&'r str>,
    pub ocr_text: Option<&'r str>,
    pub variant: PromptVariant,
}

impl AnswerInput<'_> {
    pub fn entity_id(&self) -> Option<&str> {
        self.oracle_entity
            .or_else(|| self.link.map(|l| l.entity_id.as_str()))
    }

    fn resolution(&self) -> Option<Resolution> {
        if self.oracle_entity.is_some() {
            None
        } else {
            self.link.map(|l| l.resolution)
        }
    }
}

/// One line of the QA-results JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question_id: String,
    pub answer: String,
    pub supporting_fact: Option<String>,
    pub raw: String,
    pub variant: PromptVariant,
    pub entity_id: Option<String>,
    pub resolution: Option<Resolution>,
}

pub struct Answerer<'a> {
    kb: &'a KnowledgeBase,
    gateway: &'a LmmGateway,
    options: QaPromptOptions,
    max_new_tokens: u32,
}

impl<'a> Answerer<'a> {
    pub fn new(kb: &'a KnowledgeBase, gateway: &'a LmmGateway, options: QaPromptOptions) -> Self {
        Answerer {
            kb,
            gateway,
            options,
            max_new_tokens: QA_MAX_NEW_TOKENS,
        }
    }

    pub fn request_for(&self, input: &AnswerInput<'_>) -> Result<QaRequest> {
        let needs_entity = matches!(
            input.variant,
            PromptVariant::KnowledgeFacts | PromptVariant::EntityNameOnly
        );
        let (knowledge, entity_name) = match (needs_entity, input.entity_id()) {
            (false, _) => (Vec::new(), None),
            (true, None) => {
                return Err(Error::invalid(format!(
                    "variant {} needs a linked entity",
                    input.variant
                )))
            }
            (true, Some(id)) => {
                let entity = self
                    .kb
                    .get(id)
                    .ok_or_else(|| Error::NotFound(format!("entity `{id}`")))?;
                let knowledge = if input.variant == PromptVariant::KnowledgeFacts {
                    self.kb.knowledge_for(id)?.to_vec()
                } else {
                    Vec::new()
                };
                (knowledge, Some(entity.name.clone()))
            }
        };
        // Missing context degrades to the next weaker variant instead of
        // sending an empty knowledge or OCR line.
        let ocr_text = input.ocr_text.map(str::trim).filter(|t| !t.is_empty());
        let variant = match input.variant {
            PromptVariant::KnowledgeFacts if knowledge.is_empty() => PromptVariant::EntityNameOnly,
            PromptVariant::OcrOnly if ocr_text.is_none() => PromptVariant::NoKnowledge,
            v => v,
        };
        Ok(QaRequest {
            image: Some(input.image.clone()),
            question: input.question.to_string(),
            knowledge,
            entity_name,
            ocr_text: ocr_text.map(String::from),
            variant,
        })
    }

    pub fn answer(&self, input: &AnswerInput<'_>) -> Result<QaOutput> {
        let request = self.request_for(input)?;
        let prompt = build_qa_prompt(&request, &self.options)?;
        let mut gen = GenerationRequest::new(prompt, self.max_new_tokens)
            .with_request_id(input.question_id);
        gen.image = request.image;
        let raw = self.gateway.generate(&gen)?.text;
        parse_answer(&raw)
    }

    pub fn record(&self, input: &AnswerInput<'_>, output: &QaOutput) -> QaRecord {
        QaRecord {
            question_id: input.question_id.to_string(),
            answer: output.answer.clone(),
            supporting_fact: output.supporting_fact.clone(),
            raw: output.raw_completion.clone(),
            variant: input.variant,
            entity_id: input.entity_id().map(String::from),
            resolution: input.resolution(),
        }
    }
}
