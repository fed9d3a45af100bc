use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vistext_core::eval::{
    emit_report, emit_reports, gold_answer_policy, linking_baselines, load_dataset, nearest_policy,
    parse_reports, Provenance,
};
use vistext_core::linking::{LinkRecord, LinkerConfig};
use vistext_core::lmm::{HttpBackend, HttpBackendConfig, MockBackend, MockMode};
use vistext_core::ocr::{LiveOcrConfig, DEFAULT_MIN_CONFIDENCE};
use vistext_core::qa::{AnswerInput, QaRecord};
use vistext_core::util::sha256_hex;
use vistext_core::{
    evaluate_split, Answerer, DatasetRecord, EntityIndex, Error, EvalConfig, EvalResources,
    FixtureOcr, ImageRef, KbSplit, KnowledgeBase, LinkResult, Linker, LinkingMode, LiveOcr,
    LmmGateway, MockPolicy, OcrGateway, PromptStyle, PromptVariant, QaPromptOptions, ReportFormat,
    Result, RetryPolicy, Split, TemplateTable,
};

use crate::args::{AskArgs, Cli, Command, EvalArgs, IndexArgs, IngestArgs, LinkArgs, ReportArgs};
use crate::config::RunConfig;

const BUILD: &str = env!("VISTEXT_BUILD");

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut flags = RunConfig::default();
    match &cli.command {
        Command::Ingest(a) => a.kb.apply(&mut flags),
        Command::Index(a) => {
            a.kb.apply(&mut flags);
            flags.k = a.k;
        }
        Command::Link(a) => {
            a.kb.apply(&mut flags);
            a.pipeline.apply(&mut flags);
        }
        Command::Ask(a) => {
            a.kb.apply(&mut flags);
            a.pipeline.apply(&mut flags);
            a.qa.apply(&mut flags);
        }
        Command::Eval(a) => {
            a.kb.apply(&mut flags);
            a.pipeline.apply(&mut flags);
            a.qa.apply(&mut flags);
            flags.output_dir = a.output_dir.clone();
        }
        Command::Report(_) => {}
    }
    config.overlay(&flags);
    match &cli.command {
        Command::Ingest(a) => ingest(a, &config),
        Command::Index(a) => index(a, &config),
        Command::Link(a) => link(a, &config),
        Command::Ask(a) => ask(a, &config),
        Command::Eval(a) => eval(a, &config),
        Command::Report(a) => report(a),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_output(None, &text)
}

fn kb_split(c: &RunConfig, dataset: Option<&[DatasetRecord]>) -> Result<KbSplit> {
    match (&c.split, dataset.and_then(|d| d.first())) {
        (Some(s), _) => s.parse(),
        (None, Some(first)) => Ok(first.split.kb_split()),
        (None, None) => Err(Error::invalid("--split is required (flag or config file)")),
    }
}

fn load_kb(c: &RunConfig, split: KbSplit) -> Result<KnowledgeBase> {
    let path = RunConfig::require(&c.kb_path, "kb")?;
    let templates = match &c.templates_path {
        Some(p) => TemplateTable::load(p)?,
        None => TemplateTable::default(),
    };
    let (kb, report) = KnowledgeBase::load(path, c.aliases_path.as_deref(), split, &templates)?;
    if !report.skipped.is_empty() {
        tracing::warn!(skipped = report.skipped.len(), "knowledge base records skipped");
    }
    tracing::info!(entities = kb.len(), split = %split, "knowledge base loaded");
    Ok(kb)
}

fn build_index(c: &RunConfig, kb: &KnowledgeBase) -> Result<EntityIndex> {
    match &c.index_cache {
        Some(path) => EntityIndex::load_or_build(kb, path),
        None => EntityIndex::build(kb),
    }
}

fn load_dataset_opt(c: &RunConfig) -> Result<Option<Vec<DatasetRecord>>> {
    c.dataset_path.as_deref().map(load_dataset).transpose()
}

fn ocr_gateway(c: &RunConfig) -> Result<Box<dyn OcrGateway>> {
    match c.ocr_mode.as_deref().unwrap_or("fixture") {
        "fixture" => {
            let path = RunConfig::require(&c.fixture_path, "fixture")?;
            Ok(Box::new(FixtureOcr::load(path, None)?))
        }
        "live" => {
            let url = match &c.ocr_url {
                Some(u) => u.clone(),
                None => std::env::var("OCR_BASE_URL").map_err(|_| {
                    Error::invalid("live OCR needs --ocr-url or OCR_BASE_URL")
                })?,
            };
            Ok(Box::new(LiveOcr::new(LiveOcrConfig {
                backend: c.ocr_backend.clone(),
                max_inflight: c.max_inflight()?,
                ..LiveOcrConfig::new(url)
            })))
        }
        other => Err(Error::invalid(format!("unknown ocr mode `{other}`"))),
    }
}

fn mock_policy(
    mode: MockMode,
    c: &RunConfig,
    kb: &KnowledgeBase,
    dataset: Option<&[DatasetRecord]>,
) -> Result<MockPolicy> {
    Ok(match mode {
        MockMode::EchoFirstCandidate => MockPolicy::EchoFirstCandidate,
        MockMode::NearestCandidateByNed => nearest_policy(kb),
        MockMode::ScriptedMap => {
            let path = RunConfig::require(&c.mock_script, "mock-script")?;
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let script: BTreeMap<String, String> = serde_json::from_str(&text)
                .map_err(|e| Error::data(path.display().to_string(), e.to_string()))?;
            MockPolicy::ScriptedMap { script }
        }
        MockMode::GoldAnswer => {
            let dataset = dataset.ok_or_else(|| {
                Error::invalid("the gold_answer mock needs --dataset")
            })?;
            gold_answer_policy(dataset, kb)
        }
    })
}

fn lmm_gateway(
    c: &RunConfig,
    kb: &KnowledgeBase,
    dataset: Option<&[DatasetRecord]>,
) -> Result<LmmGateway> {
    let inflight = c.max_inflight()?;
    match c.backend.as_deref().unwrap_or("mock") {
        "mock" => {
            let answer: MockMode = c
                .mock_policy
                .as_deref()
                .unwrap_or("echo_first_candidate")
                .parse()?;
            let link: MockMode = match &c.link_mock_policy {
                Some(p) => p.parse()?,
                None => answer,
            };
            let backend = MockBackend::staged(
                mock_policy(link, c, kb, dataset)?,
                mock_policy(answer, c, kb, dataset)?,
            );
            Ok(LmmGateway::new(Box::new(backend), RetryPolicy::none(), inflight))
        }
        "http" => {
            let backend = HttpBackend::new(HttpBackendConfig::from_env()?);
            Ok(LmmGateway::new(Box::new(backend), RetryPolicy::default(), inflight))
        }
        other => Err(Error::invalid(format!("unknown backend `{other}`"))),
    }
}

fn linker_config(c: &RunConfig) -> Result<LinkerConfig> {
    let min_confidence = c.min_confidence.unwrap_or(DEFAULT_MIN_CONFIDENCE);
    if !(0.0..=1.0).contains(&min_confidence) {
        return Err(Error::invalid("min_confidence must lie in [0, 1]"));
    }
    Ok(LinkerConfig {
        k: c.k()?,
        min_confidence,
        ..LinkerConfig::default()
    })
}

fn linking_mode(c: &RunConfig) -> Result<LinkingMode> {
    c.linking_mode.as_deref().unwrap_or("vistel").parse()
}

fn prompt_options(c: &RunConfig) -> Result<QaPromptOptions> {
    let style: PromptStyle = c.prompt_style.as_deref().unwrap_or("default").parse()?;
    Ok(QaPromptOptions {
        style,
        supporting_fact_instruction: c.supporting_fact.unwrap_or(true),
        ..QaPromptOptions::default()
    })
}

fn variants(c: &RunConfig) -> Result<Vec<PromptVariant>> {
    match c.variant.as_deref().unwrap_or("knowledge_facts") {
        "all" => Ok(PromptVariant::ALL.to_vec()),
        list => list.split(',').map(|v| v.trim().parse()).collect(),
    }
}

fn image_ref(c: &RunConfig, id: &str) -> ImageRef {
    match &c.image_root {
        Some(root) => ImageRef::with_path(id, root.join(id)),
        None => ImageRef::new(id),
    }
}

fn ingest(a: &IngestArgs, c: &RunConfig) -> Result<()> {
    let split = kb_split(c, None)?;
    let path = RunConfig::require(&c.kb_path, "kb")?;
    let templates = match &c.templates_path {
        Some(p) => TemplateTable::load(p)?,
        None => TemplateTable::default(),
    };
    let (kb, report) = KnowledgeBase::load(path, c.aliases_path.as_deref(), split, &templates)?;
    for s in &report.skipped {
        tracing::warn!(line = s.line, reason = %s.reason, "skipped record");
    }
    write_output(a.output.as_deref(), &kb.to_jsonl_string())?;
    if a.output.is_some() {
        print_json(&report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct IndexStats<'a> {
    entities: usize,
    surfaces: usize,
    kb_hash: &'a str,
    cache: Option<&'a Path>,
}

fn index(a: &IndexArgs, c: &RunConfig) -> Result<()> {
    let kb = load_kb(c, kb_split(c, None)?)?;
    let index = build_index(c, &kb)?;
    match &a.query {
        Some(q) => {
            let set = index.candidates(q, c.k()?)?;
            print_json(&set)
        }
        None => print_json(&IndexStats {
            entities: index.entity_count(),
            surfaces: index.surface_count(),
            kb_hash: index.kb_hash(),
            cache: c.index_cache.as_deref(),
        }),
    }
}

fn link(a: &LinkArgs, c: &RunConfig) -> Result<()> {
    let dataset = load_dataset_opt(c)?;
    let kb = load_kb(c, kb_split(c, dataset.as_deref())?)?;
    let index = build_index(c, &kb)?;
    let ocr = ocr_gateway(c)?;
    let config = linker_config(c)?;
    if a.baselines {
        let dataset = dataset.ok_or_else(|| Error::invalid("--baselines needs --dataset"))?;
        let eval_config = EvalConfig {
            linker: config,
            image_root: c.image_root.clone(),
            ..EvalConfig::default()
        };
        let b = linking_baselines(&dataset, &index, ocr.as_ref(), &eval_config)?;
        return print_json(&b);
    }
    let ids: Vec<String> = if !a.images.is_empty() {
        a.images.clone()
    } else if let Some(d) = &dataset {
        let mut seen = HashSet::new();
        d.iter()
            .filter(|r| seen.insert(r.image.clone()))
            .map(|r| r.image.clone())
            .collect()
    } else {
        return Err(Error::invalid("give --images or --dataset"));
    };
    let images: Vec<ImageRef> = ids.iter().map(|i| image_ref(c, i)).collect();
    let gateway;
    let linker = match linking_mode(c)? {
        LinkingMode::Vistel => {
            gateway = lmm_gateway(c, &kb, dataset.as_deref())?;
            Linker::new(&index, &gateway, config)
        }
        LinkingMode::NedTop1 => Linker::ned_only(&index, config),
        LinkingMode::Oracle => return Err(Error::invalid("oracle linking needs no link run")),
    };
    let links = linker.link_split(&images, ocr.as_ref());
    for f in &links.failures {
        tracing::error!(image = %f.item, error = %f.error, "linking failed");
    }
    write_output(a.output.as_deref(), &links_jsonl(&links.results)?)?;
    if !links.failures.is_empty() && links.results.is_empty() {
        return Err(Error::Protocol(format!("all {} images failed", links.failures.len())));
    }
    Ok(())
}

fn links_jsonl(links: &[LinkResult]) -> Result<String> {
    let mut out = String::new();
    for l in links {
        out.push_str(&serde_json::to_string(&LinkRecord::from(l))?);
        out.push('\n');
    }
    Ok(out)
}

fn qa_jsonl(records: &[QaRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Serialize)]
struct AskOutput {
    image: String,
    entity_id: Option<String>,
    entity_name: Option<String>,
    resolution: Option<vistext_core::Resolution>,
    answer: String,
    supporting_fact: Option<String>,
}

fn ask(a: &AskArgs, c: &RunConfig) -> Result<()> {
    let dataset = load_dataset_opt(c)?;
    let kb = load_kb(c, kb_split(c, dataset.as_deref())?)?;
    let gateway = lmm_gateway(c, &kb, dataset.as_deref())?;
    let variant = match variants(c)?.as_slice() {
        [v] => *v,
        _ => return Err(Error::invalid("ask takes a single --variant")),
    };
    let image = image_ref(c, &a.image);
    let config = linker_config(c)?;
    let mode = if a.entity.is_some() {
        LinkingMode::Oracle
    } else {
        linking_mode(c)?
    };
    let needs_ocr = mode != LinkingMode::Oracle || variant == PromptVariant::OcrOnly;
    let ocr_result = if needs_ocr {
        Some(ocr_gateway(c)?.recognize(&image)?)
    } else {
        None
    };
    let link = match mode {
        LinkingMode::Oracle => {
            let id = RunConfig::require(&a.entity, "entity")?;
            if kb.get(id).is_none() {
                return Err(Error::NotFound(format!("entity `{id}`")));
            }
            None
        }
        mode => {
            let index = build_index(c, &kb)?;
            let ocr = ocr_result.as_ref().expect("OCR ran");
            let linker = if mode == LinkingMode::Vistel {
                Linker::new(&index, &gateway, config)
            } else {
                Linker::ned_only(&index, config)
            };
            Some(linker.link(&image, ocr)?)
        }
    };
    let ocr_text = ocr_result
        .as_ref()
        .map(|o| o.visual_text(config.min_confidence));
    let input = AnswerInput {
        question_id: &a.question_id,
        image: &image,
        question: &a.question,
        link: link.as_ref(),
        oracle_entity: a.entity.as_deref(),
        ocr_text: (variant == PromptVariant::OcrOnly)
            .then_some(ocr_text.as_deref())
            .flatten(),
        variant,
    };
    let answerer = Answerer::new(&kb, &gateway, prompt_options(c)?);
    let output = answerer.answer(&input)?;
    let entity_id = input.entity_id().map(String::from);
    print_json(&AskOutput {
        image: a.image.clone(),
        entity_name: entity_id
            .as_deref()
            .and_then(|id| kb.get(id))
            .map(|e| e.name.clone()),
        entity_id,
        resolution: link.as_ref().map(|l| l.resolution),
        answer: output.answer,
        supporting_fact: output.supporting_fact,
    })
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn input_hashes(c: &RunConfig) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let files: [(&str, &Option<PathBuf>); 6] = [
        ("kb", &c.kb_path),
        ("aliases", &c.aliases_path),
        ("templates", &c.templates_path),
        ("dataset", &c.dataset_path),
        ("ocr_fixture", &c.fixture_path),
        ("mock_script", &c.mock_script),
    ];
    for (name, path) in files {
        if let Some(p) = path {
            out.insert(name.to_string(), hash_file(p)?);
        }
    }
    Ok(out)
}

fn eval(_a: &EvalArgs, c: &RunConfig) -> Result<()> {
    let dataset_path = RunConfig::require(&c.dataset_path, "dataset")?;
    let dataset = load_dataset(dataset_path)?;
    let split: Split = match dataset.first() {
        Some(r) => r.split,
        None => return Err(Error::data(dataset_path.display().to_string(), "dataset is empty")),
    };
    let kb = load_kb(c, kb_split(c, Some(&dataset))?)?;
    if kb.split() != split.kb_split() {
        return Err(Error::invalid(format!(
            "dataset split `{split}` does not match knowledge base split `{}`",
            kb.split()
        )));
    }
    let index = build_index(c, &kb)?;
    let ocr = ocr_gateway(c)?;
    let gateway = lmm_gateway(c, &kb, Some(&dataset))?;
    let out_dir = c.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    // Where results go is not part of what produced them.
    let mut effective = c.effective();
    effective.output_dir = None;
    let provenance = Provenance {
        build: BUILD.to_string(),
        config: effective.to_map(),
        input_hashes: input_hashes(c)?,
    };
    let variants = variants(c)?;
    let resources = EvalResources {
        kb: &kb,
        index: &index,
        ocr: ocr.as_ref(),
        gateway: &gateway,
    };
    let mut reports = Vec::new();
    for &variant in &variants {
        let config = EvalConfig {
            variant,
            linking_mode: linking_mode(c)?,
            linker: linker_config(c)?,
            prompt: prompt_options(c)?,
            image_root: c.image_root.clone(),
        };
        let outcome = evaluate_split(&dataset, resources, &config)?;
        for f in &outcome.failures {
            tracing::error!(item = %f.item, error = %f.error, "item failed");
        }
        let mut report = outcome.report;
        report.provenance = Some(provenance.clone());
        let dir = if variants.len() == 1 {
            out_dir.clone()
        } else {
            out_dir.join(variant.as_str())
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let files = [
            ("report.json", emit_report(&report, ReportFormat::Json)),
            ("report.md", emit_report(&report, ReportFormat::MarkdownTable)),
            ("links.jsonl", links_jsonl(&outcome.links)?),
            ("qa.jsonl", qa_jsonl(&outcome.qa)?),
        ];
        for (name, text) in files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        tracing::info!(
            variant = %variant,
            accuracy = report.accuracy,
            recall_at_1 = report.recall_at_1,
            failures = report.failures,
            dir = %dir.display(),
            "evaluation finished"
        );
        if !report.valid {
            tracing::warn!(failures = report.failures, items = report.n_items, "run marked invalid");
        }
        reports.push(report);
    }
    if variants.len() > 1 {
        let path = out_dir.join("summary.md");
        std::fs::write(&path, emit_reports(&reports, ReportFormat::MarkdownTable))
            .map_err(|e| Error::io(&path, e))?;
    }
    write_output(None, &emit_reports(&reports, ReportFormat::MarkdownTable))?;
    if reports.iter().all(|r| r.failures == r.n_items) {
        return Err(Error::Protocol("every item failed".into()));
    }
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let format: ReportFormat = a.format.parse()?;
    let mut reports = Vec::new();
    for path in &a.inputs {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = parse_reports(&text).map_err(|e| match e {
            Error::Json(j) => Error::data(path.display().to_string(), j.to_string()),
            other => other,
        })?;
        reports.extend(parsed);
    }
    write_output(None, &emit_reports(&reports, format))
}
