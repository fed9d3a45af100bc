//! Visual text entity linking: OCR text and NED candidates go into a prompt,
//! the model names an entity, and the completion is resolved back to an id.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{fold, ned_ratio, Ned};
use crate::error::{Error, Result};
use crate::index::{CandidateSet, EntityIndex};
use crate::lmm::{GenerationRequest, LmmGateway, LINK_MAX_NEW_TOKENS};
use crate::ocr::{ImageRef, OcrGateway, OcrResult, DEFAULT_MIN_CONFIDENCE};

pub const IMAGE_PLACEHOLDER: &str = "<image>";
const LINK_LEAD: &str = "USER:Given an image. The task is to link the visual text ";
const LINK_LIST: &str = " to one of the following entities: ";
const IMAGE_ONLY_TEXT: &str = "in the image";
const ASSISTANT: &str = "ASSISTANT:";

/// Completions farther than this from every candidate name fall back to NED.
pub const FUZZY_RESOLUTION_MAX_NED: f64 = 0.5;

fn render_link_prompt<S: AsRef<str>>(text: &str, candidate_names: &[S]) -> Result<String> {
    if candidate_names.is_empty() {
        return Err(Error::invalid("linking prompt needs at least one candidate"));
    }
    let list = candidate_names
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!(
        "{IMAGE_PLACEHOLDER}\n{LINK_LEAD}{text}{LINK_LIST}{list}\n{ASSISTANT}"
    ))
}

/// Linking prompt for recognized visual text and ordered candidate names.
pub fn build_link_prompt<S: AsRef<str>>(ocr_text: &str, candidate_names: &[S]) -> Result<String> {
    render_link_prompt(ocr_text, candidate_names)
}

/// Variant used when no visual text was recognized: the text slot refers to
/// the image itself.
pub fn build_image_only_link_prompt<S: AsRef<str>>(candidate_names: &[S]) -> Result<String> {
    render_link_prompt(IMAGE_ONLY_TEXT, candidate_names)
}

/// A linking prompt taken apart again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkPrompt<'a> {
    /// `None` for the image-only variant.
    pub visual_text: Option<&'a str>,
    pub candidates: Vec<&'a str>,
}

/// Recognizes prompts produced by [`build_link_prompt`] and
/// [`build_image_only_link_prompt`]. Candidate names containing ", " cannot
/// be told apart from the separator.
pub fn parse_link_prompt(prompt: &str) -> Option<LinkPrompt<'_>> {
    let line = prompt.lines().find_map(|l| l.strip_prefix(LINK_LEAD))?;
    let (text, list) = line.split_once(LINK_LIST)?;
    let visual_text = (text != IMAGE_ONLY_TEXT).then_some(text);
    let candidates = list.split(", ").filter(|s| !s.is_empty()).collect();
    Some(LinkPrompt {
        visual_text,
        candidates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// The completion equals a candidate name after folding.
    LmmExact,
    /// The completion is close enough to one candidate name.
    LmmFuzzy,
    /// The completion matched nothing; the NED top-1 candidate was used.
    NedFallback,
    /// No visual text was recognized.
    NoTextFallback,
}

impl Resolution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resolution::LmmExact => "lmm_exact",
            Resolution::LmmFuzzy => "lmm_fuzzy",
            Resolution::NedFallback => "ned_fallback",
            Resolution::NoTextFallback => "no_text_fallback",
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a raw completion onto one of the candidates.
pub fn resolve_output(raw: &str, candidates: &CandidateSet) -> Result<(String, Resolution)> {
    let top = candidates
        .top()
        .ok_or_else(|| Error::invalid("cannot resolve against an empty candidate set"))?;
    let folded = fold(raw);
    if let Some(c) = candidates.items.iter().find(|c| fold(&c.name) == folded) {
        return Ok((c.entity_id.clone(), Resolution::LmmExact));
    }
    let mut best: Option<(Ned, &str)> = None;
    for c in &candidates.items {
        let d = ned_ratio(raw, &c.name);
        if best.is_none_or(|(b, _)| d < b) {
            best = Some((d, &c.entity_id));
        }
    }
    if let Some((d, id)) = best {
        if d.value() <= FUZZY_RESOLUTION_MAX_NED {
            return Ok((id.to_string(), Resolution::LmmFuzzy));
        }
    }
    Ok((top.entity_id.clone(), Resolution::NedFallback))
}

/// How the entity for an image is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkingMode {
    /// NED candidates disambiguated by the model.
    Vistel,
    /// NED top-1 without the model.
    NedTop1,
    /// The gold entity.
    Oracle,
}

impl LinkingMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkingMode::Vistel => "vistel",
            LinkingMode::NedTop1 => "ned_top1",
            LinkingMode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for LinkingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vistel" => Ok(LinkingMode::Vistel),
            "ned_top1" => Ok(LinkingMode::NedTop1),
            "oracle" => Ok(LinkingMode::Oracle),
            other => Err(Error::invalid(format!("unknown linking mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkResult {
    pub image_id: String,
    pub entity_id: String,
    pub resolution: Resolution,
    pub candidates: CandidateSet,
    pub raw_completion: String,
}

/// One line of the link-results JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub image: String,
    pub entity_id: String,
    pub resolution: Resolution,
    pub raw: String,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: String,
    pub ned: f64,
}

impl From<&LinkResult> for LinkRecord {
    fn from(r: &LinkResult) -> Self {
        LinkRecord {
            image: r.image_id.clone(),
            entity_id: r.entity_id.clone(),
            resolution: r.resolution,
            raw: r.raw_completion.clone(),
            candidates: r
                .candidates
                .items
                .iter()
                .map(|c| CandidateRecord {
                    id: c.entity_id.clone(),
                    ned: c.ned.value(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkerConfig {
    pub k: usize,
    pub min_confidence: f64,
    pub max_new_tokens: u32,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        LinkerConfig {
            k: 5,
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            max_new_tokens: LINK_MAX_NEW_TOKENS,
        }
    }
}

/// Request id used for the linking call of an image.
pub fn link_request_id(image_id: &str) -> String {
    format!("link:{image_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemFailure {
    pub item: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitLinks {
    /// In input order.
    pub results: Vec<LinkResult>,
    pub failures: Vec<ItemFailure>,
}

pub struct Linker<'a> {
    index: &'a EntityIndex,
    gateway: Option<&'a LmmGateway>,
    config: LinkerConfig,
}

impl<'a> Linker<'a> {
    /// Model-backed linker.
    pub fn new(index: &'a EntityIndex, gateway: &'a LmmGateway, config: LinkerConfig) -> Self {
        Linker {
            index,
            gateway: Some(gateway),
            config,
        }
    }

    /// NED top-1 linker that never calls a model.
    pub fn ned_only(index: &'a EntityIndex, config: LinkerConfig) -> Self {
        Linker {
            index,
            gateway: None,
            config,
        }
    }

    pub fn config(&self) -> &LinkerConfig {
        &self.config
    }

    /// Links one image given its recognized text.
    pub fn link(&self, image: &ImageRef, ocr: &OcrResult) -> Result<LinkResult> {
        if self.config.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let text = ocr.visual_text(self.config.min_confidence);
        let (candidates, no_text) = match self.index.candidates(&text, self.config.k) {
            Ok(c) => (c, false),
            Err(Error::NoVisualText) => (self.index.prior_candidates(self.config.k), true),
            Err(e) => return Err(e),
        };
        let Some(gateway) = self.gateway else {
            let top = candidates.top().expect("index is non-empty").entity_id.clone();
            return Ok(LinkResult {
                image_id: image.id.clone(),
                entity_id: top,
                resolution: if no_text {
                    Resolution::NoTextFallback
                } else {
                    Resolution::NedFallback
                },
                candidates,
                raw_completion: String::new(),
            });
        };
        let names = candidates.names();
        let prompt = if no_text {
            build_image_only_link_prompt(&names)?
        } else {
            build_link_prompt(&text, &names)?
        };
        let mut request = GenerationRequest::new(prompt, self.config.max_new_tokens)
            .with_request_id(link_request_id(&image.id));
        request.image = Some(image.clone());
        let raw = gateway.generate(&request)?.text;
        let (entity_id, resolution) = resolve_output(&raw, &candidates)?;
        Ok(LinkResult {
            image_id: image.id.clone(),
            entity_id,
            resolution: if no_text {
                Resolution::NoTextFallback
            } else {
                resolution
            },
            candidates,
            raw_completion: raw,
        })
    }

    /// Recognizes and links every image; item errors are collected.
    pub fn link_split(&self, images: &[ImageRef], ocr: &dyn OcrGateway) -> SplitLinks {
        let outcomes: Vec<std::result::Result<LinkResult, ItemFailure>> = images
            .par_iter()
            .map(|image| {
                ocr.recognize(image)
                    .and_then(|o| self.link(image, &o))
                    .map_err(|e| {
                        tracing::warn!(image = %image.id, error = %e, "linking failed");
                        ItemFailure {
                            item: image.id.clone(),
                            error: e.to_string(),
                        }
                    })
            })
            .collect();
        let mut results = Vec::with_capacity(outcomes.len());
        let mut failures = Vec::new();
        for o in outcomes {
            match o {
                Ok(r) => results.push(r),
                Err(f) => failures.push(f),
            }
        }
        SplitLinks { results, failures }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Ned;
    use crate::index::ScoredCandidate;

    fn cands(names: &[(&str, &str)]) -> CandidateSet {
        CandidateSet {
            query_text: "q".into(),
            k: names.len(),
            items: names
                .iter()
                .map(|(id, name)| ScoredCandidate {
                    entity_id: id.to_string(),
                    name: name.to_string(),
                    matched_surface: name.to_string(),
                    ned: Ned::ZERO,
                    word_match: false,
                })
                .collect(),
        }
    }

    #[test]
    fn prompt_shape() {
        let p = build_link_prompt("Domino's", &["Domino's Pizza", "Pizza Hut"]).unwrap();
        assert_eq!(
            p,
            "<image>\nUSER:Given an image. The task is to link the visual text Domino's to one of the following entities: Domino's Pizza, Pizza Hut\nASSISTANT:"
        );
        let single = build_link_prompt("HP", &["Hewlett-Packard"]).unwrap();
        assert!(single.contains("entities: Hewlett-Packard\nASSISTANT:"));
        assert!(build_link_prompt::<&str>("x", &[]).is_err());
    }

    #[test]
    fn prompts_parse_back() {
        let p = build_link_prompt("dominos pizzq", &["Domino's Pizza", "Pizza Hut"]).unwrap();
        let parsed = parse_link_prompt(&p).unwrap();
        assert_eq!(parsed.visual_text, Some("dominos pizzq"));
        assert_eq!(parsed.candidates, vec!["Domino's Pizza", "Pizza Hut"]);
        let img = build_image_only_link_prompt(&["A"]).unwrap();
        assert_eq!(parse_link_prompt(&img).unwrap().visual_text, None);
        assert!(parse_link_prompt("<image>\nUSER: what?\nASSISTANT:").is_none());
    }

    #[test]
    fn resolves_exact_fuzzy_and_fallback() {
        let c = cands(&[("pz", "Pizza Hut"), ("dp", "Domino's Pizza")]);
        assert_eq!(resolve_output("Domino's Pizza", &c).unwrap(), ("dp".into(), Resolution::LmmExact));
        assert_eq!(
            resolve_output("  domino's pizza \n", &c).unwrap(),
            ("dp".into(), Resolution::LmmExact)
        );
        assert_eq!(resolve_output("Dominos Pizza.", &c).unwrap(), ("dp".into(), Resolution::LmmFuzzy));
        assert_eq!(
            resolve_output("a pizza restaurant", &c).unwrap(),
            ("pz".into(), Resolution::NedFallback)
        );
        assert_eq!(resolve_output("", &c).unwrap(), ("pz".into(), Resolution::NedFallback));
        assert!(resolve_output("x", &cands(&[])).is_err());
    }

    #[test]
    fn record_serialization() {
        let r = LinkResult {
            image_id: "img1".into(),
            entity_id: "dp".into(),
            resolution: Resolution::LmmFuzzy,
            candidates: cands(&[("dp", "Domino's Pizza")]),
            raw_completion: "Dominos".into(),
        };
        let line = serde_json::to_string(&LinkRecord::from(&r)).unwrap();
        assert_eq!(
            line,
            r#"{"image":"img1","entity_id":"dp","resolution":"lmm_fuzzy","raw":"Dominos","candidates":[{"id":"dp","ned":0.0}]}"#
        );
    }

    #[test]
    fn mode_names() {
        for m in [LinkingMode::Vistel, LinkingMode::NedTop1, LinkingMode::Oracle] {
            assert_eq!(m.as_str().parse::<LinkingMode>().unwrap(), m);
        }
    }
}
