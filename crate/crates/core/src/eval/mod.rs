//! Scoring of linking and QA runs, ablation sweeps and report emission.

mod dataset;
mod metrics;
mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

pub use dataset::{load_dataset, read_dataset, Category, DatasetRecord, Split};
pub use metrics::{gold_entities_by_image, normalize_answer, recall_at_1, score_qa};
pub use report::{
    emit_report, emit_reports, parse_reports, EvalReport, Provenance, ReportFormat, SCHEMA_VERSION,
};

use crate::distance::fold;
use crate::error::{Error, Result};
use crate::index::EntityIndex;
use crate::kb::KnowledgeBase;
use crate::linking::{link_request_id, ItemFailure, LinkResult, Linker, LinkerConfig, LinkingMode};
use crate::lmm::{GoldEntry, LmmGateway, MockPolicy};
use crate::ocr::{ImageRef, OcrGateway};
use crate::qa::{AnswerInput, Answerer, PromptVariant, QaOutput, QaPromptOptions, QaRecord};

/// Share of failed items above which a run is reported invalid.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub variant: PromptVariant,
    pub linking_mode: LinkingMode,
    pub linker: LinkerConfig,
    pub prompt: QaPromptOptions,
    /// Directory image file names are resolved against, for live backends.
    pub image_root: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            variant: PromptVariant::KnowledgeFacts,
            linking_mode: LinkingMode::Vistel,
            linker: LinkerConfig::default(),
            prompt: QaPromptOptions::default(),
            image_root: None,
        }
    }
}

impl EvalConfig {
    pub fn image_ref(&self, image: &str) -> ImageRef {
        match &self.image_root {
            Some(root) => ImageRef::with_path(image, root.join(image)),
            None => ImageRef::new(image),
        }
    }
}

/// Everything a run reads from.
#[derive(Clone, Copy)]
pub struct EvalResources<'a> {
    pub kb: &'a KnowledgeBase,
    pub index: &'a EntityIndex,
    pub ocr: &'a dyn OcrGateway,
    pub gateway: &'a LmmGateway,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Successful links in image order; empty under oracle linking.
    pub links: Vec<LinkResult>,
    /// One record per answered question, in dataset order.
    pub qa: Vec<QaRecord>,
    pub failures: Vec<ItemFailure>,
}

fn distinct_images(dataset: &[DatasetRecord]) -> Vec<&str> {
    let mut seen = std::collections::HashSet::new();
    dataset
        .iter()
        .map(|r| r.image.as_str())
        .filter(|i| seen.insert(*i))
        .collect()
}

fn dataset_split(dataset: &[DatasetRecord]) -> Result<Split> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::invalid("dataset is empty"))?
        .split;
    if let Some(other) = dataset.iter().find(|r| r.split != first) {
        return Err(Error::invalid(format!(
            "dataset mixes splits `{first}` and `{}`",
            other.split
        )));
    }
    Ok(first)
}

/// Whether a generated fact matches one of the entity's sentences after
/// folding.
pub fn fact_is_attributable(kb: &KnowledgeBase, entity_id: &str, fact: &str) -> bool {
    let folded = fold(fact);
    kb.knowledge_for(entity_id)
        .map(|facts| facts.iter().any(|f| fold(&f.sentence) == folded))
        .unwrap_or(false)
}

/// Links (unless oracle), answers and scores one split.
pub fn evaluate_split(
    dataset: &[DatasetRecord],
    resources: EvalResources<'_>,
    config: &EvalConfig,
) -> Result<EvalOutcome> {
    let split = dataset_split(dataset)?;
    let gold_by_image = gold_entities_by_image(dataset)?;
    let images = distinct_images(dataset);
    let image_refs: Vec<ImageRef> = images.iter().map(|i| config.image_ref(i)).collect();

    let mut failures: Vec<ItemFailure> = Vec::new();
    let mut link_by_image: HashMap<String, LinkResult> = HashMap::new();
    let mut link_errors: HashMap<String, String> = HashMap::new();
    let mut links = Vec::new();
    if config.linking_mode != LinkingMode::Oracle {
        let linker = match config.linking_mode {
            LinkingMode::Vistel => Linker::new(resources.index, resources.gateway, config.linker),
            _ => Linker::ned_only(resources.index, config.linker),
        };
        let split_links = linker.link_split(&image_refs, resources.ocr);
        for f in split_links.failures {
            link_errors.insert(f.item, f.error);
        }
        for l in &split_links.results {
            link_by_image.insert(l.image_id.clone(), l.clone());
        }
        links = split_links.results;
    }

    let ocr_texts: HashMap<String, std::result::Result<String, String>> =
        if config.variant == PromptVariant::OcrOnly {
            image_refs
                .par_iter()
                .map(|img| {
                    let text = resources
                        .ocr
                        .recognize(img)
                        .map(|o| o.visual_text(config.linker.min_confidence))
                        .map_err(|e| e.to_string());
                    (img.id.clone(), text)
                })
                .collect()
        } else {
            HashMap::new()
        };

    let answerer = Answerer::new(resources.kb, resources.gateway, config.prompt);
    let outcomes: Vec<std::result::Result<(QaOutput, QaRecord), ItemFailure>> = dataset
        .par_iter()
        .map(|rec| {
            let fail = |error: String| ItemFailure {
                item: rec.question_id.clone(),
                error,
            };
            let link = match config.linking_mode {
                LinkingMode::Oracle => None,
                _ => match link_by_image.get(&rec.image) {
                    Some(l) => Some(l),
                    None => {
                        let why = link_errors
                            .get(&rec.image)
                            .cloned()
                            .unwrap_or_else(|| "image was not linked".into());
                        return Err(fail(format!("linking failed: {why}")));
                    }
                },
            };
            let ocr_text = match ocr_texts.get(&rec.image) {
                Some(Ok(t)) => Some(t.as_str()),
                Some(Err(e)) => return Err(fail(format!("OCR failed: {e}"))),
                None => None,
            };
            let image = config.image_ref(&rec.image);
            let input = AnswerInput {
                question_id: &rec.question_id,
                image: &image,
                question: &rec.question,
                link,
                oracle_entity: (config.linking_mode == LinkingMode::Oracle)
                    .then_some(rec.gold_entity_id.as_str()),
                ocr_text,
                variant: config.variant,
            };
            let output = answerer.answer(&input).map_err(|e| fail(e.to_string()))?;
            let record = answerer.record(&input, &output);
            Ok((output, record))
        })
        .collect();

    // Deterministic reduction in dataset order.
    let mut correct = 0usize;
    let mut per_cat: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    let mut attr_support = 0usize;
    let mut attr_hits = 0usize;
    let mut qa = Vec::new();
    for (rec, outcome) in dataset.iter().zip(outcomes) {
        let slot = per_cat.entry(rec.category).or_insert((0, 0));
        slot.1 += 1;
        match outcome {
            Ok((output, record)) => {
                let score = usize::from(score_qa(&output, rec));
                correct += score;
                slot.0 += score;
                let entity_ok = record.entity_id.as_deref() == Some(rec.gold_entity_id.as_str());
                if let (Some(fact), true) = (&output.supporting_fact, entity_ok) {
                    attr_support += 1;
                    if fact_is_attributable(resources.kb, &rec.gold_entity_id, fact) {
                        attr_hits += 1;
                    }
                }
                qa.push(record);
            }
            Err(f) => failures.push(f),
        }
    }

    let n_items = dataset.len();
    let n_images = images.len();
    let (recall, gold_in_candidates) = if config.linking_mode == LinkingMode::Oracle {
        (1.0, 1.0)
    } else {
        let mut hit = 0usize;
        let mut contained = 0usize;
        for l in &links {
            let gold = gold_by_image[l.image_id.as_str()];
            hit += usize::from(l.entity_id == gold);
            contained += usize::from(l.candidates.contains(gold));
        }
        (
            hit as f64 / n_images as f64,
            contained as f64 / n_images as f64,
        )
    };
    let mut resolution_counts = BTreeMap::new();
    for l in &links {
        *resolution_counts
            .entry(l.resolution.as_str().to_string())
            .or_insert(0) += 1;
    }
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        split,
        variant: config.variant,
        linking_mode: config.linking_mode,
        k: config.linker.k,
        backend: match config.linking_mode {
            LinkingMode::NedTop1 => format!("ned_top1+{}", resources.gateway.backend_tag()),
            _ => resources.gateway.backend_tag().to_string(),
        },
        n_items,
        n_images,
        accuracy: correct as f64 / n_items as f64,
        recall_at_1: recall,
        gold_in_candidates_at_k: gold_in_candidates,
        attribution_precision: if attr_support == 0 {
            0.0
        } else {
            attr_hits as f64 / attr_support as f64
        },
        attribution_support: attr_support,
        per_category: per_cat
            .iter()
            .map(|(c, (ok, n))| (*c, *ok as f64 / *n as f64))
            .collect(),
        category_counts: per_cat.iter().map(|(c, (_, n))| (*c, *n)).collect(),
        resolution_counts,
        failures: failures.len(),
        valid: (failures.len() as f64) <= MAX_FAILURE_RATE * n_items as f64,
        provenance: None,
    };
    Ok(EvalOutcome {
        report,
        links,
        qa,
        failures,
    })
}

/// Recall@1 of the model-free linking baselines on the same visual text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineReport {
    pub n_images: usize,
    pub direct_match: f64,
    pub ned_top1: f64,
    pub gold_in_candidates_at_k: f64,
    pub k: usize,
}

pub fn linking_baselines(
    dataset: &[DatasetRecord],
    index: &EntityIndex,
    ocr: &dyn OcrGateway,
    config: &EvalConfig,
) -> Result<BaselineReport> {
    let gold = gold_entities_by_image(dataset)?;
    let images = distinct_images(dataset);
    if images.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let k = config.linker.k;
    let (mut direct, mut top1, mut contained) = (0usize, 0usize, 0usize);
    for image in &images {
        let gold_id = gold[image];
        let text = match ocr.recognize(&config.image_ref(image)) {
            Ok(o) => o.visual_text(config.linker.min_confidence),
            Err(_) => continue,
        };
        if index.direct_match(&text) == Some(gold_id) {
            direct += 1;
        }
        let cands = match index.candidates(&text, k) {
            Ok(c) => c,
            Err(Error::NoVisualText) => index.prior_candidates(k),
            Err(e) => return Err(e),
        };
        if cands.top().map(|c| c.entity_id.as_str()) == Some(gold_id) {
            top1 += 1;
        }
        if cands.contains(gold_id) {
            contained += 1;
        }
    }
    let n = images.len() as f64;
    Ok(BaselineReport {
        n_images: images.len(),
        direct_match: direct as f64 / n,
        ned_top1: top1 as f64 / n,
        gold_in_candidates_at_k: contained as f64 / n,
        k,
    })
}

/// Gold-answer mock for a dataset: QA prompts are keyed by question id and
/// linking prompts by image.
pub fn gold_answer_policy(dataset: &[DatasetRecord], kb: &KnowledgeBase) -> MockPolicy {
    let mut gold = HashMap::new();
    for r in dataset {
        let entity_name = kb
            .get(&r.gold_entity_id)
            .map(|e| e.name.clone())
            .unwrap_or_else(|| r.gold_entity_id.clone());
        let entry = GoldEntry {
            entity_name,
            answer: r.gold_answer.clone(),
            supporting_fact: r.gold_supporting_fact.clone(),
        };
        gold.entry(link_request_id(&r.image))
            .or_insert_with(|| entry.clone());
        gold.insert(r.question_id.clone(), entry);
    }
    MockPolicy::GoldAnswer { gold }
}

/// Nearest-candidate mock that knows every entity's aliases.
pub fn nearest_policy(kb: &KnowledgeBase) -> MockPolicy {
    let mut aliases: HashMap<String, Vec<String>> = HashMap::new();
    for e in kb.iter() {
        aliases
            .entry(e.name.clone())
            .or_default()
            .extend(e.aliases.iter().cloned());
    }
    MockPolicy::NearestCandidateByNed { aliases }
}
