//! Deterministic synthetic knowledge bases, queries and evaluation splits,
//! used by tests, benchmarks and smoke runs.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::eval::{Category, DatasetRecord, Split};
use crate::kb::{render_fact, Entity, KbSplit, KnowledgeBase};
use crate::ocr::{FixtureOcr, OcrResult, TextToken};

pub type SynthRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SynthRng {
    ChaCha8Rng::seed_from_u64(seed)
}

const ASCII_LOWER: &str = "abcdefghijklmnopqrstuvwxyz";
const ASCII_MIXED: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789 '&.-";
const LATIN_EXT: &str = "àáâäçèéêëíîïñóôöúûüßøåæœ";
const GREEK: &str = "αβγδεζηθικλμνξοπρστυφχψω";
const CYRILLIC: &str = "абвгдежзийклмнопрстуфхцчшщ";
const CJK: &str = "日本語中文字漢東京大学店";
const EMOJI: &str = "🍕🏦📚🎬";

/// Character pools for random strings; each string draws from one or two.
pub const ALPHABETS: [&str; 7] = [ASCII_LOWER, ASCII_MIXED, LATIN_EXT, GREEK, CYRILLIC, CJK, EMOJI];

/// Random string of `len` characters from a mix of one or two alphabets.
/// Small pools are favoured so that pairs share characters.
pub fn random_string(rng: &mut SynthRng, len: usize) -> String {
    let a: Vec<char> = ALPHABETS.choose(rng).unwrap().chars().collect();
    let b: Vec<char> = ALPHABETS.choose(rng).unwrap().chars().collect();
    let narrow = rng.gen_bool(0.5);
    (0..len)
        .map(|_| {
            let pool = if rng.gen_bool(0.7) { &a } else { &b };
            let pool = if narrow { &pool[..pool.len().min(4)] } else { &pool[..] };
            *pool.choose(rng).unwrap()
        })
        .collect()
}

/// A pair of strings with lengths in `0..=max_len`; about half the pairs are
/// a string and a mutated copy of it.
pub fn random_pair(rng: &mut SynthRng, max_len: usize) -> (String, String) {
    let la = rng.gen_range(0..=max_len);
    let a = random_string(rng, la);
    if rng.gen_bool(0.5) && la > 0 {
        let edits = rng.gen_range(1..=4);
        let b: String = perturb(rng, &a, edits).chars().take(max_len).collect();
        (a, b)
    } else {
        let lb = rng.gen_range(0..=max_len);
        (a, random_string(rng, lb))
    }
}

/// Applies `edits` random substitutions, insertions or deletions.
pub fn perturb(rng: &mut SynthRng, s: &str, edits: usize) -> String {
    let mut chars: Vec<char> = s.chars().collect();
    for _ in 0..edits {
        let op = if chars.is_empty() { 1 } else { rng.gen_range(0..3) };
        let c = ASCII_LOWER.as_bytes()[rng.gen_range(0..26)] as char;
        match op {
            0 => {
                let i = rng.gen_range(0..chars.len());
                chars[i] = c;
            }
            1 => {
                let i = rng.gen_range(0..=chars.len());
                chars.insert(i, c);
            }
            _ => {
                let i = rng.gen_range(0..chars.len());
                chars.remove(i);
            }
        }
    }
    chars.into_iter().collect()
}

const ONSETS: [&str; 20] = [
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
    "tr", "ch",
];
const VOWELS: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ou", "ee"];
const CODAS: [&str; 8] = ["", "", "n", "r", "s", "l", "x", "nd"];
const SUFFIXES: [&str; 10] = [
    "Pizza", "Bank", "Books", "Motors", "Cafe", "Studios", "Group", "Market", "Press", "Hotel",
];
const CITIES: [&str; 12] = [
    "Ann Arbor", "Edinburgh", "Palo Alto", "Osaka", "Lyon", "Austin", "Leeds", "Porto",
    "Kraków", "Seoul", "Dublin", "Quito",
];
const INDUSTRIES: [&str; 8] = [
    "restaurant", "banking", "publishing", "retail", "automotive", "film", "hospitality",
    "software",
];
const GENRES: [&str; 6] = ["comedy", "drama", "mystery", "fantasy", "biography", "thriller"];
const GIVEN: [&str; 8] = ["Ada", "Tom", "Mei", "Omar", "Lena", "Ravi", "Sara", "Ivan"];

fn word(rng: &mut SynthRng) -> String {
    let syllables = rng.gen_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
    }
    w.push_str(CODAS.choose(rng).unwrap());
    let mut cs = w.chars();
    let first = cs.next().unwrap().to_uppercase().collect::<String>();
    first + cs.as_str()
}

/// A brand-like name of one to three words.
pub fn synthetic_name(rng: &mut SynthRng) -> String {
    let mut parts = vec![word(rng)];
    if rng.gen_bool(0.5) {
        parts.push(word(rng));
    }
    if rng.gen_bool(0.4) {
        parts.push(SUFFIXES.choose(rng).unwrap().to_string());
    }
    parts.join(" ")
}

fn acronym(name: &str) -> Option<String> {
    let words: Vec<&str> = name.split_whitespace().collect();
    (words.len() > 1).then(|| {
        words
            .iter()
            .filter_map(|w| w.chars().next())
            .flat_map(char::to_uppercase)
            .collect()
    })
}

fn alias_for(rng: &mut SynthRng, name: &str) -> String {
    match rng.gen_range(0..3) {
        0 => acronym(name).unwrap_or_else(|| format!("{name} Co")),
        1 => name.split_whitespace().next().unwrap().to_string() + "'s",
        _ => format!("{} {}", name, SUFFIXES.choose(rng).unwrap()),
    }
}

#[derive(Debug, Clone)]
pub struct KbShape {
    pub entities: usize,
    pub aliases: RangeInclusive<usize>,
    pub facts: RangeInclusive<usize>,
    pub split: KbSplit,
}

impl KbShape {
    pub fn new(entities: usize) -> Self {
        KbShape {
            entities,
            aliases: 0..=2,
            facts: 2..=4,
            split: KbSplit::Business,
        }
    }
}

fn object_for(rng: &mut SynthRng, relation: &str) -> String {
    match relation {
        "headquarters_location" | "country" => CITIES.choose(rng).unwrap().to_string(),
        "industry" => INDUSTRIES.choose(rng).unwrap().to_string(),
        "genre" => GENRES.choose(rng).unwrap().to_string(),
        "inception" | "publication_date" => rng.gen_range(1850..2024).to_string(),
        "official_website" => format!("{}.example", word(rng).to_lowercase()),
        _ => format!("{} {}", GIVEN.choose(rng).unwrap(), word(rng)),
    }
}

const RELATIONS: [&str; 7] = [
    "industry",
    "headquarters_location",
    "inception",
    "founded_by",
    "official_website",
    "genre",
    "country",
];

/// Entity ids are `S000000`, `S000001`, ...; names are unique within a
/// knowledge base, aliases may be shared.
pub fn synthetic_kb(seed: u64, shape: &KbShape) -> KnowledgeBase {
    let mut rng = rng(seed);
    let mut names = HashSet::new();
    let mut entities = Vec::with_capacity(shape.entities);
    for i in 0..shape.entities {
        let name = loop {
            let n = synthetic_name(&mut rng);
            if names.insert(n.clone()) {
                break n;
            }
        };
        let n_aliases = rng.gen_range(shape.aliases.clone());
        let mut aliases: Vec<String> = Vec::new();
        let mut tries = 0;
        while aliases.len() < n_aliases && tries < 8 {
            tries += 1;
            let a = if tries > 3 {
                format!("{name} {}", word(&mut rng))
            } else {
                alias_for(&mut rng, &name)
            };
            if a != name && !aliases.contains(&a) {
                aliases.push(a);
            }
        }
        let n_facts = rng.gen_range(shape.facts.clone());
        let mut relations = RELATIONS.to_vec();
        relations.shuffle(&mut rng);
        let facts = relations
            .iter()
            .take(n_facts)
            .map(|r| {
                let object = object_for(&mut rng, r);
                render_fact(&name, r, &object).expect("valid synthetic triplet")
            })
            .collect();
        entities.push(Entity {
            id: format!("S{i:06}"),
            name,
            aliases,
            facts,
        });
    }
    KnowledgeBase::from_entities(shape.split, entities).expect("synthetic entities are valid")
}

/// Query strings shaped like visual text: noisy surfaces, surfaces with
/// extra words, single words and unrelated strings.
pub fn synthetic_queries(seed: u64, kb: &KnowledgeBase, n: usize) -> Vec<String> {
    let mut rng = rng(seed);
    let entities: Vec<&Entity> = kb.iter().collect();
    (0..n)
        .map(|_| {
            let e = entities.choose(&mut rng).unwrap();
            let surfaces: Vec<&str> = e.surfaces().collect();
            let s = *surfaces.choose(&mut rng).unwrap();
            match rng.gen_range(0..6) {
                0 => s.to_string(),
                1 | 2 => {
                    let edits = rng.gen_range(1..=3);
                    perturb(&mut rng, s, edits)
                }
                3 => format!("{} {}", s, word(&mut rng)),
                4 => s.split_whitespace().last().unwrap().to_lowercase(),
                _ => {
                    let len = rng.gen_range(1..=20);
                    random_string(&mut rng, len)
                }
            }
        })
        .collect()
}

/// How the visual text of a synthetic image relates to its gold entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rendering {
    Exact,
    Noisy,
    WithClutter,
    Alias,
    LowConfidenceOnly,
    Empty,
}

const CLUTTER: [&str; 6] = ["OPEN", "24h", "SALE", "Welcome", "No", "Parking"];

fn tokens_for(rng: &mut SynthRng, text: &str, clutter: bool, conf: f64) -> Vec<TextToken> {
    let mut words: Vec<String> = text.split_whitespace().map(String::from).collect();
    if clutter {
        let extra = CLUTTER.choose(rng).unwrap().to_string();
        if rng.gen_bool(0.5) {
            words.insert(0, extra);
        } else {
            words.push(extra);
        }
    }
    let mut x = 10.0;
    let mut tokens: Vec<TextToken> = words
        .into_iter()
        .map(|w| {
            let width = 12.0 * w.chars().count() as f64;
            let t = TextToken {
                bbox: [x, 40.0, x + width, 64.0],
                text: w,
                confidence: conf,
            };
            x += width + 8.0;
            t
        })
        .collect();
    // Fixture order need not be reading order.
    tokens.shuffle(rng);
    tokens
}

/// A generated evaluation split with its knowledge base and OCR fixtures.
#[derive(Debug, Clone)]
pub struct SynthSplit {
    pub kb: KnowledgeBase,
    pub dataset: Vec<DatasetRecord>,
    pub ocr: Vec<OcrResult>,
}

impl SynthSplit {
    pub fn ocr_gateway(&self) -> FixtureOcr {
        let mut f = FixtureOcr::default();
        for r in &self.ocr {
            f.insert(r.clone());
        }
        f
    }

    /// OCR fixture JSONL in the loader's line format.
    pub fn ocr_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.ocr {
            let line = serde_json::json!({
                "image": r.image_id,
                "tokens": r.tokens,
                "backend": r.backend_tag,
            });
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn dataset_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.dataset {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"));
        }
        out
    }
}

fn category_for(relation: &str) -> Category {
    match relation {
        "inception" | "publication_date" => Category::Date,
        "founded_by" => Category::People,
        "headquarters_location" | "country" => Category::Location,
        "genre" => Category::Genre,
        _ => Category::OpenEnded,
    }
}

/// `n_images` images of distinct entities from a `kb_entities` knowledge
/// base, each with one to three questions drawn from the entity's facts.
pub fn synthetic_split(seed: u64, kb_entities: usize, n_images: usize, split: Split) -> SynthSplit {
    let shape = KbShape {
        split: split.kb_split(),
        ..KbShape::new(kb_entities.max(n_images))
    };
    let kb = synthetic_kb(seed, &shape);
    let mut rng = rng(seed ^ 0x5EED);
    let mut entities: Vec<&Entity> = kb.iter().collect();
    entities.shuffle(&mut rng);
    let mut dataset = Vec::new();
    let mut ocr = Vec::new();
    for (i, e) in entities.iter().take(n_images).enumerate() {
        let image = format!("img_{i:04}.jpg");
        let rendering = *[
            Rendering::Exact,
            Rendering::Noisy,
            Rendering::Noisy,
            Rendering::WithClutter,
            Rendering::Alias,
            Rendering::LowConfidenceOnly,
            Rendering::Empty,
        ]
        .choose(&mut rng)
        .unwrap();
        let tokens = match rendering {
            Rendering::Exact => tokens_for(&mut rng, &e.name, false, 0.95),
            Rendering::Noisy => {
                let edits = rng.gen_range(1..=2);
                let text = perturb(&mut rng, &e.name, edits);
                tokens_for(&mut rng, &text, false, 0.8)
            }
            Rendering::WithClutter => tokens_for(&mut rng, &e.name, true, 0.9),
            Rendering::Alias => {
                let text = e.aliases.choose(&mut rng).unwrap_or(&e.name).clone();
                tokens_for(&mut rng, &text, false, 0.9)
            }
            Rendering::LowConfidenceOnly => tokens_for(&mut rng, &e.name, false, 0.1),
            Rendering::Empty => Vec::new(),
        };
        ocr.push(OcrResult {
            image_id: image.clone(),
            tokens,
            backend_tag: "synthetic".into(),
        });
        let n_questions = rng.gen_range(1..=3).min(e.facts.len() + 1);
        for q in 0..n_questions {
            let question_id = format!("q_{i:04}_{q}");
            let record = if q == e.facts.len() || (q == 0 && rng.gen_bool(0.2)) {
                let truthful = rng.gen_bool(0.5);
                let shown = if truthful { e.name.clone() } else { synthetic_name(&mut rng) };
                DatasetRecord {
                    question_id,
                    image: image.clone(),
                    question: format!("Is this place called {shown}?"),
                    gold_answer: if truthful || shown == e.name { "yes" } else { "no" }.into(),
                    gold_supporting_fact: None,
                    gold_entity_id: e.id.clone(),
                    category: Category::Binary,
                    split,
                }
            } else {
                let fact = &e.facts[q];
                DatasetRecord {
                    question_id,
                    image: image.clone(),
                    question: format!(
                        "What is the {} of the entity in this image?",
                        fact.relation.replace('_', " ")
                    ),
                    gold_answer: fact.object.clone(),
                    gold_supporting_fact: Some(fact.sentence.clone()),
                    gold_entity_id: e.id.clone(),
                    category: category_for(&fact.relation),
                    split,
                }
            };
            dataset.push(record);
        }
    }
    SynthSplit { kb, dataset, ocr }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = synthetic_kb(7, &KbShape::new(200));
        let b = synthetic_kb(7, &KbShape::new(200));
        assert_eq!(a, b);
        assert_ne!(a, synthetic_kb(8, &KbShape::new(200)));
        assert_eq!(synthetic_queries(1, &a, 50), synthetic_queries(1, &b, 50));
        let s = synthetic_split(3, 80, 50, Split::Scene);
        let t = synthetic_split(3, 80, 50, Split::Scene);
        assert_eq!(s.dataset, t.dataset);
        assert_eq!(s.ocr, t.ocr);
    }

    #[test]
    fn split_is_consistent() {
        let s = synthetic_split(11, 120, 50, Split::Book);
        assert_eq!(s.ocr.len(), 50);
        assert!(s.dataset.len() >= 50);
        for r in &s.dataset {
            let e = s.kb.get(&r.gold_entity_id).unwrap();
            if let Some(fact) = &r.gold_supporting_fact {
                assert!(e.facts.iter().any(|f| &f.sentence == fact));
            }
            assert_eq!(r.split, Split::Book);
        }
        for o in &s.ocr {
            for t in &o.tokens {
                t.validate().unwrap();
            }
        }
        let fixture = FixtureOcr::from_reader(s.ocr_jsonl().as_bytes(), "synth", None).unwrap();
        assert_eq!(fixture.len(), 50);
        let ds = crate::eval::read_dataset(s.dataset_jsonl().as_bytes(), "synth").unwrap();
        assert_eq!(ds, s.dataset);
    }

    #[test]
    fn perturb_respects_edit_budget() {
        let mut r = rng(5);
        for _ in 0..200 {
            let len = r.gen_range(0..15);
            let s = random_string(&mut r, len);
            let edits = r.gen_range(0..4);
            let p = perturb(&mut r, &s, edits);
            assert!(crate::distance::levenshtein(&s, &p) <= edits);
        }
    }
}
