//! Visual text access: pre-extracted fixtures or a live recognition service.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::Semaphore;

/// Tokens below this confidence are dropped before concatenation.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.3;

/// One recognized word with its box `[x1, y1, x2, y2]` in pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextToken {
    pub text: String,
    pub bbox: [f64; 4],
    #[serde(rename = "conf")]
    pub confidence: f64,
}

impl TextToken {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let [x1, y1, x2, y2] = self.bbox;
        if self.text.trim().is_empty() {
            return Err("token text is empty".into());
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(format!("degenerate box {:?} for `{}`", self.bbox, self.text));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        Ok(())
    }

    fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    fn y_center(&self) -> f64 {
        (self.bbox[1] + self.bbox[3]) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResult {
    pub image_id: String,
    pub tokens: Vec<TextToken>,
    pub backend_tag: String,
}

impl OcrResult {
    /// Reading-order text of the tokens at or above `min_confidence`.
    pub fn visual_text(&self, min_confidence: f64) -> String {
        let kept: Vec<TextToken> = self
            .tokens
            .iter()
            .filter(|t| t.confidence >= min_confidence)
            .cloned()
            .collect();
        concat_tokens(&kept)
    }
}

/// Joins tokens in reading order with single spaces.
///
/// Tokens are taken top to bottom by vertical box center; a token opens a new
/// line when its center lies more than half the median token height below
/// the center of the line's first token. Within a line tokens run left to
/// right. Remaining ties fall back to the other box coordinates and the text
/// so the output does not depend on input order.
pub fn concat_tokens(tokens: &[TextToken]) -> String {
    if tokens.is_empty() {
        return String::new();
    }
    let mut heights: Vec<f64> = tokens.iter().map(TextToken::height).collect();
    heights.sort_by(f64::total_cmp);
    let mid = heights.len() / 2;
    let median = if heights.len() % 2 == 0 {
        (heights[mid - 1] + heights[mid]) / 2.0
    } else {
        heights[mid]
    };
    let tolerance = median / 2.0;
    let total = |a: &&TextToken, b: &&TextToken| {
        a.bbox[0]
            .total_cmp(&b.bbox[0])
            .then(a.bbox[1].total_cmp(&b.bbox[1]))
            .then(a.bbox[2].total_cmp(&b.bbox[2]))
            .then(a.bbox[3].total_cmp(&b.bbox[3]))
            .then_with(|| a.text.cmp(&b.text))
            .then(a.confidence.total_cmp(&b.confidence))
    };
    let mut by_y: Vec<&TextToken> = tokens.iter().collect();
    by_y.sort_by(|a, b| a.y_center().total_cmp(&b.y_center()).then_with(|| total(a, b)));
    let mut lines: Vec<Vec<&TextToken>> = Vec::new();
    let mut line_top = f64::NEG_INFINITY;
    for t in by_y {
        match lines.last_mut() {
            Some(line) if t.y_center() - line_top <= tolerance => line.push(t),
            _ => {
                line_top = t.y_center();
                lines.push(vec![t]);
            }
        }
    }
    let mut ordered: Vec<&TextToken> = Vec::with_capacity(tokens.len());
    for mut line in lines {
        line.sort_by(total);
        ordered.extend(line);
    }
    let mut out = String::new();
    for t in ordered {
        let text = t.text.trim();
        if text.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(text);
    }
    out
}

/// An image reference: the id used to join datasets and fixtures, plus an
/// optional path to the pixels for live backends.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageRef {
    pub id: String,
    pub path: Option<PathBuf>,
}

impl ImageRef {
    pub fn new(id: impl Into<String>) -> Self {
        ImageRef {
            id: id.into(),
            path: None,
        }
    }

    pub fn with_path(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        ImageRef {
            id: id.into(),
            path: Some(path.into()),
        }
    }

    pub fn read_base64(&self) -> Result<String> {
        let path = self
            .path
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("image `{}` has no file path", self.id)))?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
    }
}

pub trait OcrGateway: Send + Sync {
    fn recognize(&self, image: &ImageRef) -> Result<OcrResult>;
}

#[derive(Debug, Deserialize)]
struct FixtureLine {
    image: String,
    #[serde(default)]
    tokens: Vec<TextToken>,
    backend: String,
}

/// Token list as returned by the live recognition service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResponse {
    pub tokens: Vec<TextToken>,
    pub backend: String,
}

/// Pre-extracted OCR keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct FixtureOcr {
    entries: HashMap<String, OcrResult>,
}

impl FixtureOcr {
    /// Parses fixture JSONL. `allowed_backends`, when given, restricts the
    /// accepted backend tags.
    pub fn from_reader<R: BufRead>(
        reader: R,
        source_name: &str,
        allowed_backends: Option<&[String]>,
    ) -> Result<Self> {
        let mut entries = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::data(source_name, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |msg: String| Error::data(source_name, format!("line {}: {msg}", i + 1));
            let rec: FixtureLine = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            if let Some(allowed) = allowed_backends {
                if !allowed.iter().any(|b| b == &rec.backend) {
                    return Err(at(format!("backend `{}` is not configured", rec.backend)));
                }
            }
            for t in &rec.tokens {
                t.validate().map_err(at)?;
            }
            if entries.contains_key(&rec.image) {
                return Err(at(format!("duplicate image `{}`", rec.image)));
            }
            entries.insert(
                rec.image.clone(),
                OcrResult {
                    image_id: rec.image,
                    tokens: rec.tokens,
                    backend_tag: rec.backend,
                },
            );
        }
        Ok(FixtureOcr { entries })
    }

    pub fn load(path: &Path, allowed_backends: Option<&[String]>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(
            std::io::BufReader::new(file),
            &path.display().to_string(),
            allowed_backends,
        )
    }

    pub fn insert(&mut self, result: OcrResult) {
        self.entries.insert(result.image_id.clone(), result);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl OcrGateway for FixtureOcr {
    fn recognize(&self, image: &ImageRef) -> Result<OcrResult> {
        self.entries
            .get(&image.id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("no OCR fixture for image `{}`", image.id)))
    }
}

#[derive(Debug, Clone)]
pub struct LiveOcrConfig {
    pub base_url: String,
    /// Backend pair requested from the service, if not its default.
    pub backend: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    pub retry_base_delay: Duration,
    pub max_inflight: usize,
}

impl LiveOcrConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        LiveOcrConfig {
            base_url: base_url.into(),
            backend: None,
            timeout: Duration::from_secs(30),
            max_retries: 2,
            retry_base_delay: Duration::from_millis(200),
            max_inflight: 4,
        }
    }
}

/// Client for the recognition service's `POST /ocr` endpoint.
pub struct LiveOcr {
    config: LiveOcrConfig,
    agent: ureq::Agent,
    inflight: Semaphore,
}

impl LiveOcr {
    pub fn new(config: LiveOcrConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        LiveOcr {
            inflight: Semaphore::new(config.max_inflight),
            config,
            agent,
        }
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<OcrResponse, Attempt> {
        let url = format!("{}/ocr", self.config.base_url.trim_end_matches('/'));
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(Error::Protocol(format!("HTTP {status}: {text}"))));
        }
        serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(Error::Protocol(format!("bad /ocr response: {e}"))))
    }
}

enum Attempt {
    Retry(String),
    Fatal(Error),
}

impl OcrGateway for LiveOcr {
    fn recognize(&self, image: &ImageRef) -> Result<OcrResult> {
        let mut body = serde_json::json!({ "image_b64": image.read_base64()? });
        if let Some(b) = &self.config.backend {
            body["backend"] = serde_json::Value::String(b.clone());
        }
        let _permit = self.inflight.acquire();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(resp) => {
                    for t in &resp.tokens {
                        t.validate().map_err(Error::Protocol)?;
                    }
                    return Ok(OcrResult {
                        image_id: image.id.clone(),
                        tokens: resp.tokens,
                        backend_tag: resp.backend,
                    });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    if attempts > self.config.max_retries {
                        return Err(Error::Transport {
                            attempts,
                            message: msg,
                        });
                    }
                    tracing::warn!(image = %image.id, attempt = attempts, error = %msg, "OCR request failed, retrying");
                    std::thread::sleep(self.config.retry_base_delay * 2u32.pow(attempts - 1));
                }
            }
        }
    }
}
