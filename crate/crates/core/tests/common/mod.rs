//! Reference implementations and fixture helpers shared by the integration
//! tests. The oracles are deliberately naive and share no code with the
//! library beyond case folding.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use vistext_core::kb::{KbSplit, KnowledgeBase, TemplateTable};
use vistext_core::linking::build_link_prompt;
use vistext_core::qa::{build_qa_prompt, QaPromptOptions, QaRequest};
use vistext_core::{fold, DatasetRecord, EntityIndex, FixtureOcr, ImageRef, OcrGateway, PromptVariant};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

pub fn challenge_kb() -> KnowledgeBase {
    let (kb, report) = KnowledgeBase::load(
        &fixture("challenge_kb.jsonl"),
        Some(&fixture("challenge_aliases.jsonl")),
        KbSplit::Business,
        &TemplateTable::default(),
    )
    .unwrap();
    assert!(report.skipped.is_empty());
    kb
}

pub fn challenge_ocr() -> FixtureOcr {
    FixtureOcr::load(&fixture("challenge_ocr.jsonl"), None).unwrap()
}

pub fn challenge_dataset() -> Vec<DatasetRecord> {
    vistext_core::eval::load_dataset(&fixture("challenge_dataset.jsonl")).unwrap()
}

pub fn dominos_link_prompt() -> String {
    let kb = challenge_kb();
    let index = EntityIndex::build(&kb).unwrap();
    let ocr = challenge_ocr()
        .recognize(&ImageRef::new("dominos.jpg"))
        .unwrap();
    let text = ocr.visual_text(0.3);
    let candidates = index.candidates(&text, 5).unwrap();
    build_link_prompt(&text, &candidates.names()).unwrap()
}

pub fn dominos_qa_prompt(variant: PromptVariant) -> String {
    let kb = challenge_kb();
    let request = QaRequest {
        image: None,
        question: "Where can I place an online order from this store?".into(),
        knowledge: kb.knowledge_for("Q1").unwrap().to_vec(),
        entity_name: Some("Domino's Pizza".into()),
        ocr_text: Some("dominos pizzq".into()),
        variant,
    };
    build_qa_prompt(&request, &QaPromptOptions::default()).unwrap()
}

/// Golden file name and rendered prompt for every frozen prompt.
pub fn all_prompts() -> Vec<(String, String)> {
    let mut out = vec![("vistel_dominos.txt".to_string(), dominos_link_prompt())];
    for v in PromptVariant::ALL {
        out.push((format!("qa_{v}.txt"), dominos_qa_prompt(v)));
    }
    out
}

/// Textbook Wagner-Fischer with the whole (n+1) x (m+1) table.
pub fn dp_levenshtein(a: &[char], b: &[char]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut t = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in t.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in t[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = t[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            t[i][j] = sub.min(t[i - 1][j] + 1).min(t[i][j - 1] + 1);
        }
    }
    t[n][m]
}

/// Oracle ranking entry: NED as an unreduced fraction plus tie keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleHit {
    pub distance: usize,
    pub length: usize,
    pub word_match: bool,
    pub surface_len: usize,
    pub entity_id: String,
}

impl OracleHit {
    fn cmp_ned(&self, other: &Self) -> Ordering {
        // Empty-vs-empty never happens: surfaces and queries are non-empty.
        (self.distance * other.length).cmp(&(other.distance * self.length))
    }
}

impl Ord for OracleHit {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_ned(other)
            .then(self.word_match.cmp(&other.word_match))
            .then(self.surface_len.cmp(&other.surface_len))
            .then_with(|| self.entity_id.cmp(&other.entity_id))
    }
}

impl PartialOrd for OracleHit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Two-row variant of the same recurrence, for the scan oracle's volume.
pub fn row_levenshtein(a: &[char], b: &[char], prev: &mut Vec<usize>, cur: &mut Vec<usize>) -> usize {
    prev.clear();
    prev.extend(0..=b.len());
    for (i, &ca) in a.iter().enumerate() {
        cur.clear();
        cur.push(i + 1);
        for (j, &cb) in b.iter().enumerate() {
            let v = (prev[j] + usize::from(ca != cb)).min(prev[j + 1] + 1).min(cur[j] + 1);
            cur.push(v);
        }
        std::mem::swap(prev, cur);
    }
    prev[b.len()]
}

/// Exhaustive scan: scores every surface of every entity against the query
/// and its words, keeps each entity's best hit, sorts, truncates to `k`.
pub struct BruteForce {
    entities: Vec<(String, Vec<Vec<char>>)>,
}

impl BruteForce {
    pub fn new(kb: &KnowledgeBase) -> Self {
        let entities = kb
            .iter()
            .map(|e| {
                let surfaces = e
                    .surfaces()
                    .map(|s| fold(s).chars().collect::<Vec<char>>())
                    .filter(|s| !s.is_empty())
                    .collect();
                (e.id.clone(), surfaces)
            })
            .collect();
        BruteForce { entities }
    }

    pub fn top_k(&self, query: &str, k: usize) -> Vec<OracleHit> {
        let folded = fold(query);
        let mut variants: Vec<(Vec<char>, bool)> = vec![(folded.chars().collect(), false)];
        let words: Vec<&str> = folded.split(' ').collect();
        if words.len() > 1 {
            for w in words {
                variants.push((w.chars().collect(), true));
            }
        }
        let (mut prev, mut cur) = (Vec::new(), Vec::new());
        let mut best: Vec<OracleHit> = Vec::new();
        for (id, surfaces) in &self.entities {
            let mut entity_best: Option<OracleHit> = None;
            for s in surfaces {
                for (q, word) in &variants {
                    let hit = OracleHit {
                        distance: row_levenshtein(q, s, &mut prev, &mut cur),
                        length: q.len().max(s.len()),
                        word_match: *word,
                        surface_len: s.len(),
                        // Same entity throughout; filled in below.
                        entity_id: String::new(),
                    };
                    if entity_best.as_ref().is_none_or(|b| hit < *b) {
                        entity_best = Some(hit);
                    }
                }
            }
            best.extend(entity_best.map(|h| OracleHit {
                entity_id: id.clone(),
                ..h
            }));
        }
        best.sort();
        best.truncate(k);
        best
    }
}
