use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "vistext",
    version,
    about = "Link visual text to knowledge base entities and answer questions about images"
)]
pub struct Cli {
    /// TOML file with run settings; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render knowledge triplets into an entity file.
    Ingest(IngestArgs),
    /// Build the candidate index and optionally cache it.
    Index(IndexArgs),
    /// Link images to entities.
    Link(LinkArgs),
    /// Answer one question about one image.
    Ask(AskArgs),
    /// Run a split end to end and write reports.
    Eval(EvalArgs),
    /// Re-render saved reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct KbOpts {
    /// Knowledge base: triplet JSONL or an ingested entity file.
    #[arg(long = "kb", value_name = "PATH")]
    pub kb_path: Option<PathBuf>,
    /// Alias JSONL merged into the knowledge base.
    #[arg(long = "aliases", value_name = "PATH")]
    pub aliases_path: Option<PathBuf>,
    /// Relation templates (TOML) replacing the built-in table.
    #[arg(long = "templates", value_name = "PATH")]
    pub templates_path: Option<PathBuf>,
    /// scene, book or movie.
    #[arg(long)]
    pub split: Option<String>,
    /// Index cache file, reused when the knowledge base is unchanged.
    #[arg(long, value_name = "PATH")]
    pub index_cache: Option<PathBuf>,
}

impl KbOpts {
    pub fn apply(&self, c: &mut RunConfig) {
        c.kb_path = self.kb_path.clone();
        c.aliases_path = self.aliases_path.clone();
        c.templates_path = self.templates_path.clone();
        c.split = self.split.clone();
        c.index_cache = self.index_cache.clone();
    }
}

#[derive(Debug, Args)]
pub struct PipelineOpts {
    /// fixture or live.
    #[arg(long)]
    pub ocr_mode: Option<String>,
    /// Pre-extracted OCR JSONL.
    #[arg(long = "fixture", value_name = "PATH")]
    pub fixture_path: Option<PathBuf>,
    /// Recognition service base URL (live mode); defaults to $OCR_BASE_URL.
    #[arg(long)]
    pub ocr_url: Option<String>,
    /// Detector/recognizer pair requested from the service.
    #[arg(long)]
    pub ocr_backend: Option<String>,
    /// Directory image ids are resolved against.
    #[arg(long, value_name = "DIR")]
    pub image_root: Option<PathBuf>,
    /// mock or http (http reads LMM_BASE_URL, LMM_API_KEY, LMM_MODEL).
    #[arg(long)]
    pub backend: Option<String>,
    /// echo_first_candidate, nearest_candidate_by_ned, scripted_map or gold_answer.
    #[arg(long)]
    pub mock_policy: Option<String>,
    /// Mock policy for linking prompts only; defaults to --mock-policy.
    #[arg(long)]
    pub link_mock_policy: Option<String>,
    /// JSON object mapping prompt fingerprints to replies (scripted_map).
    #[arg(long, value_name = "PATH")]
    pub mock_script: Option<PathBuf>,
    /// Candidates per image.
    #[arg(long)]
    pub k: Option<usize>,
    /// OCR tokens below this confidence are ignored.
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Concurrent backend requests.
    #[arg(long)]
    pub max_inflight: Option<usize>,
    /// vistel, ned_top1 or oracle.
    #[arg(long)]
    pub linking_mode: Option<String>,
    /// Dataset JSONL (gold answers for the gold_answer mock, images for link).
    #[arg(long = "dataset", value_name = "PATH")]
    pub dataset_path: Option<PathBuf>,
}

impl PipelineOpts {
    pub fn apply(&self, c: &mut RunConfig) {
        c.ocr_mode = self.ocr_mode.clone();
        c.fixture_path = self.fixture_path.clone();
        c.ocr_url = self.ocr_url.clone();
        c.ocr_backend = self.ocr_backend.clone();
        c.image_root = self.image_root.clone();
        c.backend = self.backend.clone();
        c.mock_policy = self.mock_policy.clone();
        c.link_mock_policy = self.link_mock_policy.clone();
        c.mock_script = self.mock_script.clone();
        c.k = self.k;
        c.min_confidence = self.min_confidence;
        c.max_inflight = self.max_inflight;
        c.linking_mode = self.linking_mode.clone();
        c.dataset_path = self.dataset_path.clone();
    }
}

#[derive(Debug, Args)]
pub struct QaOpts {
    /// no_knowledge, ocr_only, entity_name_only or knowledge_facts; eval
    /// accepts a comma-separated list or `all`.
    #[arg(long)]
    pub variant: Option<String>,
    /// default, mplug_owl, minigpt4v2, instructblip or llava15.
    #[arg(long)]
    pub prompt_style: Option<String>,
    /// Do not ask for a supporting fact.
    #[arg(long)]
    pub no_supporting_fact: bool,
}

impl QaOpts {
    pub fn apply(&self, c: &mut RunConfig) {
        c.variant = self.variant.clone();
        c.prompt_style = self.prompt_style.clone();
        c.supporting_fact = self.no_supporting_fact.then_some(false);
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub kb: KbOpts,
    /// Where to write the entity JSONL; stdout if omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub kb: KbOpts,
    /// Print the top candidates for this text instead of index statistics.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LinkArgs {
    #[command(flatten)]
    pub kb: KbOpts,
    #[command(flatten)]
    pub pipeline: PipelineOpts,
    /// Image ids to link; defaults to the images of --dataset.
    #[arg(long, value_delimiter = ',')]
    pub images: Vec<String>,
    /// Report direct-match and NED top-1 Recall@1 instead of linking with
    /// the model (needs --dataset).
    #[arg(long)]
    pub baselines: bool,
    /// Where to write link JSONL; stdout if omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    #[command(flatten)]
    pub kb: KbOpts,
    #[command(flatten)]
    pub pipeline: PipelineOpts,
    #[command(flatten)]
    pub qa: QaOpts,
    /// Image id (resolved against --image-root for live backends).
    #[arg(long)]
    pub image: String,
    #[arg(long)]
    pub question: String,
    /// Request id passed to the backend; the gold_answer mock keys on it.
    #[arg(long, default_value = "ask")]
    pub question_id: String,
    /// Skip linking and use this entity (oracle linking).
    #[arg(long)]
    pub entity: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub kb: KbOpts,
    #[command(flatten)]
    pub pipeline: PipelineOpts,
    #[command(flatten)]
    pub qa: QaOpts,
    /// Directory for report.json, report.md, links.jsonl and qa.jsonl.
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files (single reports or arrays).
    #[arg(required = true, value_name = "REPORT")]
    pub inputs: Vec<PathBuf>,
    /// json or markdown.
    #[arg(long, default_value = "markdown")]
    pub format: String,
}
