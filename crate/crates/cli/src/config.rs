//! Run configuration: an optional TOML file whose keys mirror the long flag
//! names (with underscores), overridden by whatever flags are given.
//!
//! ```toml
//! kb_path = "data/scene_kb.jsonl"
//! dataset_path = "data/scene_test.jsonl"
//! ocr_mode = "fixture"
//! fixture_path = "data/scene_ocr.jsonl"
//! backend = "mock"
//! mock_policy = "gold_answer"
//! k = 5
//! variant = "knowledge_facts"
//! linking_mode = "vistel"
//! output_dir = "runs/scene"
//! max_inflight = 4
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vistext_core::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kb_path: Option<PathBuf>,
    pub aliases_path: Option<PathBuf>,
    pub templates_path: Option<PathBuf>,
    pub split: Option<String>,
    pub index_cache: Option<PathBuf>,
    pub dataset_path: Option<PathBuf>,
    pub ocr_mode: Option<String>,
    pub fixture_path: Option<PathBuf>,
    pub ocr_url: Option<String>,
    pub ocr_backend: Option<String>,
    pub image_root: Option<PathBuf>,
    pub backend: Option<String>,
    pub mock_policy: Option<String>,
    pub link_mock_policy: Option<String>,
    pub mock_script: Option<PathBuf>,
    pub k: Option<usize>,
    pub min_confidence: Option<f64>,
    pub variant: Option<String>,
    pub linking_mode: Option<String>,
    pub prompt_style: Option<String>,
    pub supporting_fact: Option<bool>,
    pub output_dir: Option<PathBuf>,
    pub max_inflight: Option<usize>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($field:ident),+ $(,)?) => {
        $( if $src.$field.is_some() { $dst.$field = $src.$field.clone(); } )+
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))
    }

    /// Fields set in `flags` win.
    pub fn overlay(&mut self, flags: &RunConfig) {
        overlay!(
            self, flags, kb_path, aliases_path, templates_path, split, index_cache, dataset_path,
            ocr_mode, fixture_path, ocr_url, ocr_backend, image_root, backend, mock_policy,
            link_mock_policy, mock_script, k, min_confidence, variant, linking_mode, prompt_style,
            supporting_fact, output_dir, max_inflight,
        );
    }

    pub fn k(&self) -> Result<usize> {
        match self.k.unwrap_or(5) {
            0 => Err(Error::invalid("k must be at least 1")),
            k => Ok(k),
        }
    }

    pub fn max_inflight(&self) -> Result<usize> {
        match self.max_inflight.unwrap_or(4) {
            0 => Err(Error::invalid("max_inflight must be at least 1")),
            n => Ok(n),
        }
    }

    /// Copy with every defaulted setting spelled out.
    pub fn effective(&self) -> RunConfig {
        let mut c = self.clone();
        c.ocr_mode.get_or_insert_with(|| "fixture".into());
        c.backend.get_or_insert_with(|| "mock".into());
        c.k.get_or_insert(5);
        c.max_inflight.get_or_insert(4);
        c.variant.get_or_insert_with(|| "knowledge_facts".into());
        c.linking_mode.get_or_insert_with(|| "vistel".into());
        c.prompt_style.get_or_insert_with(|| "default".into());
        c.supporting_fact.get_or_insert(true);
        c.min_confidence.get_or_insert(vistext_core::ocr::DEFAULT_MIN_CONFIDENCE);
        if c.backend.as_deref() == Some("mock") {
            c.mock_policy.get_or_insert_with(|| "echo_first_candidate".into());
        }
        c
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("--{flag} is required (flag or config file)")))
    }

    /// Flat key/value view of the set fields, for report provenance.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let value = serde_json::to_value(self).expect("config serializes");
        value
            .as_object()
            .into_iter()
            .flatten()
            .filter(|(_, v)| !v.is_null())
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                (k.clone(), s)
            })
            .collect()
    }
}
