//! Approximate retrieval of candidate entities by normalized edit distance.
//!
//! Every canonical name and alias of every entity becomes a folded surface.
//! A query is scored against the surfaces as a whole string and, when it has
//! several words, once per word; an entity's score is its best
//! (query variant, surface) pair.
//!
//! Ranking key, ascending: NED, whole-query match before single-word match,
//! shorter surface, smaller entity id. The search is exact: it returns what a
//! full scan would, and only prunes surfaces whose length or character bag
//! proves they cannot enter the current top-k.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::distance::{fold, Ned, PatternMatcher};
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;

const BAG_BINS: usize = 32;
const CACHE_FORMAT: u32 = 1;

type Bag = [u8; BAG_BINS];

fn bag_of(chars: &[char]) -> Bag {
    let mut bag = [0u8; BAG_BINS];
    for &c in chars {
        let bin = ((c as u32).wrapping_mul(0x9E37_79B1) >> 27) as usize;
        bag[bin] = bag[bin].saturating_add(1);
    }
    bag
}

/// Lower bound on the edit distance from character multiset differences.
#[inline]
fn bag_bound(a: &Bag, b: &Bag) -> usize {
    let (mut more, mut fewer) = (0usize, 0usize);
    for i in 0..BAG_BINS {
        let (x, y) = (a[i] as usize, b[i] as usize);
        if x > y {
            more += x - y;
        } else {
            fewer += y - x;
        }
    }
    more.max(fewer)
}

impl Serialize for Ned {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub entity_id: String,
    /// Canonical entity name, the text shown to the linking model.
    pub name: String,
    /// Name or alias that produced the score, as written in the KB.
    pub matched_surface: String,
    pub ned: Ned,
    /// Whether the best score came from a single query word.
    #[serde(skip)]
    pub word_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub query_text: String,
    pub k: usize,
    pub items: Vec<ScoredCandidate>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn top(&self) -> Option<&ScoredCandidate> {
        self.items.first()
    }

    pub fn contains(&self, entity_id: &str) -> bool {
        self.items.iter().any(|c| c.entity_id == entity_id)
    }

    pub fn names(&self) -> Vec<&str> {
        self.items.iter().map(|c| c.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntityMeta {
    id: String,
    name: String,
    fact_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Owner {
    entity: u32,
    original: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Surface {
    folded: String,
    owners: Vec<Owner>,
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format: u32,
    kb_hash: String,
    entities: Vec<EntityMeta>,
    surfaces: Vec<Surface>,
}

/// Immutable search structure over all entity names and aliases.
#[derive(Debug, Clone)]
pub struct EntityIndex {
    kb_hash: String,
    /// Sorted by id, so entity index order is id order.
    entities: Vec<EntityMeta>,
    /// Sorted by (char length, folded text).
    surfaces: Vec<Surface>,
    chars: Vec<Box<[char]>>,
    bags: Vec<Bag>,
    /// `by_len[n]` is the surface range with char length `n`.
    by_len: Vec<(usize, usize)>,
    exact: HashMap<String, usize>,
    entity_pos: HashMap<String, u32>,
}

/// Per-entity ranking key; derives the tie rule from field order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    ned: Ned,
    word_match: bool,
    surface_len: usize,
    entity: u32,
    surface: usize,
}

struct TopK {
    k: usize,
    set: BTreeSet<Key>,
    best: HashMap<u32, Key>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            set: BTreeSet::new(),
            best: HashMap::new(),
        }
    }

    fn threshold(&self) -> Option<&Key> {
        if self.set.len() == self.k {
            self.set.last()
        } else {
            None
        }
    }

    fn offer(&mut self, key: Key) {
        if let Some(old) = self.best.get(&key.entity) {
            if key < *old {
                self.set.remove(old);
                self.set.insert(key);
                self.best.insert(key.entity, key);
            }
            return;
        }
        if let Some(t) = self.threshold() {
            if key >= *t {
                return;
            }
        }
        self.set.insert(key);
        self.best.insert(key.entity, key);
        if self.set.len() > self.k {
            let worst = self.set.pop_last().expect("non-empty");
            self.best.remove(&worst.entity);
        }
    }
}

struct Variant {
    matcher: PatternMatcher,
    bag: Bag,
    word: bool,
}

impl EntityIndex {
    pub fn build(kb: &KnowledgeBase) -> Result<Self> {
        if kb.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        let entities: Vec<EntityMeta> = kb
            .iter()
            .map(|e| EntityMeta {
                id: e.id.clone(),
                name: e.name.clone(),
                fact_count: e.facts.len(),
            })
            .collect();
        let mut by_folded: HashMap<String, Vec<Owner>> = HashMap::new();
        for (idx, e) in kb.iter().enumerate() {
            for s in e.surfaces() {
                let folded = fold(s);
                if folded.is_empty() {
                    continue;
                }
                let owners = by_folded.entry(folded).or_default();
                if !owners.iter().any(|o| o.entity == idx as u32) {
                    owners.push(Owner {
                        entity: idx as u32,
                        original: s.to_string(),
                    });
                }
            }
        }
        let surfaces: Vec<Surface> = by_folded
            .into_iter()
            .map(|(folded, mut owners)| {
                owners.sort_by_key(|o| o.entity);
                Surface { folded, owners }
            })
            .collect();
        Ok(Self::assemble(kb.content_hash(), entities, surfaces))
    }

    fn assemble(kb_hash: String, entities: Vec<EntityMeta>, mut surfaces: Vec<Surface>) -> Self {
        let mut keyed: Vec<(usize, Surface)> = surfaces
            .drain(..)
            .map(|s| (s.folded.chars().count(), s))
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.folded.cmp(&b.1.folded)));
        let max_len = keyed.last().map(|(n, _)| *n).unwrap_or(0);
        let mut by_len = vec![(0usize, 0usize); max_len + 1];
        let mut chars = Vec::with_capacity(keyed.len());
        let mut bags = Vec::with_capacity(keyed.len());
        let mut exact = HashMap::with_capacity(keyed.len());
        for (i, (n, s)) in keyed.iter().enumerate() {
            let c: Box<[char]> = s.folded.chars().collect();
            bags.push(bag_of(&c));
            chars.push(c);
            exact.insert(s.folded.clone(), i);
            let bucket = &mut by_len[*n];
            if bucket.0 == bucket.1 {
                *bucket = (i, i + 1);
            } else {
                bucket.1 = i + 1;
            }
        }
        let surfaces: Vec<Surface> = keyed.into_iter().map(|(_, s)| s).collect();
        let entity_pos = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i as u32))
            .collect();
        EntityIndex {
            kb_hash,
            entities,
            surfaces,
            chars,
            bags,
            by_len,
            exact,
            entity_pos,
        }
    }

    pub fn kb_hash(&self) -> &str {
        &self.kb_hash
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Number of distinct folded surfaces.
    pub fn surface_count(&self) -> usize {
        self.surfaces.len()
    }

    /// Entity ids owning a folded surface, ascending.
    pub fn owners_of(&self, surface: &str) -> Vec<&str> {
        self.exact
            .get(&fold(surface))
            .map(|&i| {
                self.surfaces[i]
                    .owners
                    .iter()
                    .map(|o| self.entities[o.entity as usize].id.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn entity_name(&self, entity_id: &str) -> Option<&str> {
        self.entity_pos
            .get(entity_id)
            .map(|&i| self.entities[i as usize].name.as_str())
    }

    /// Entity whose folded name or alias equals the folded text; the smallest
    /// id wins when several do.
    pub fn direct_match(&self, ocr_text: &str) -> Option<&str> {
        let i = *self.exact.get(&fold(ocr_text))?;
        self.surfaces[i]
            .owners
            .first()
            .map(|o| self.entities[o.entity as usize].id.as_str())
    }

    /// The `k` entities closest to `ocr_text`.
    pub fn candidates(&self, ocr_text: &str, k: usize) -> Result<CandidateSet> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let folded = fold(ocr_text);
        if folded.is_empty() {
            return Err(Error::NoVisualText);
        }
        let mut variants = vec![Self::variant(&folded, false)];
        let words: Vec<&str> = folded.split(' ').collect();
        if words.len() > 1 {
            let mut seen: Vec<&str> = Vec::new();
            for w in words {
                if !seen.contains(&w) {
                    seen.push(w);
                    variants.push(Self::variant(w, true));
                }
            }
        }
        let mut top = TopK::new(k);
        for v in &variants {
            self.scan_variant(v, &mut top);
        }
        Ok(CandidateSet {
            query_text: ocr_text.to_string(),
            k,
            items: top.set.iter().map(|key| self.scored(key)).collect(),
        })
    }

    /// Deterministic stand-in candidates when an image yields no text: the
    /// `k` entities with the most facts (ties by id), listed under the usual
    /// tie rule with NED 1 against the empty string.
    pub fn prior_candidates(&self, k: usize) -> CandidateSet {
        let mut order: Vec<u32> = (0..self.entities.len() as u32).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (&self.entities[a as usize], &self.entities[b as usize]);
            eb.fact_count.cmp(&ea.fact_count).then(a.cmp(&b))
        });
        order.truncate(k.max(1));
        let mut items: Vec<ScoredCandidate> = order
            .into_iter()
            .map(|i| {
                let e = &self.entities[i as usize];
                ScoredCandidate {
                    entity_id: e.id.clone(),
                    name: e.name.clone(),
                    matched_surface: e.name.clone(),
                    ned: Ned::from_parts(1, 0, 1),
                    word_match: false,
                }
            })
            .collect();
        items.sort_by(|a, b| {
            fold(&a.name)
                .chars()
                .count()
                .cmp(&fold(&b.name).chars().count())
                .then_with(|| a.entity_id.cmp(&b.entity_id))
        });
        CandidateSet {
            query_text: String::new(),
            k,
            items,
        }
    }

    fn variant(text: &str, word: bool) -> Variant {
        let chars: Vec<char> = text.chars().collect();
        Variant {
            bag: bag_of(&chars),
            matcher: PatternMatcher::new(chars),
            word,
        }
    }

    fn scan_variant(&self, v: &Variant, top: &mut TopK) {
        let n = v.matcher.len();
        let max_len = self.by_len.len().saturating_sub(1);
        // Walk lengths outward from the query length; the length-difference
        // bound grows monotonically on each side.
        let mut lower = Some(n.min(max_len));
        let mut upper = (n < max_len).then_some(n + 1);
        loop {
            let pick_lower = match (lower, upper) {
                (None, None) => break,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (Some(l), Some(u)) => n - l <= u - n,
            };
            let len = if pick_lower { lower.unwrap() } else { upper.unwrap() };
            if let Some(t) = top.threshold() {
                let lb = Ned::from_parts(n.abs_diff(len), n, len);
                if lb > t.ned {
                    if pick_lower {
                        lower = None;
                    } else {
                        upper = None;
                    }
                    continue;
                }
            }
            self.scan_bucket(v, len, top);
            if pick_lower {
                lower = len.checked_sub(1);
            } else {
                upper = (len < max_len).then_some(len + 1);
            }
        }
    }

    fn scan_bucket(&self, v: &Variant, len: usize, top: &mut TopK) {
        let (start, end) = self.by_len[len];
        let n = v.matcher.len();
        let norm = n.max(len);
        for i in start..end {
            let limit = match top.threshold() {
                Some(t) => t.ned.max_distance_within(norm),
                None => norm,
            };
            if bag_bound(&v.bag, &self.bags[i]) > limit {
                continue;
            }
            let Some(d) = v.matcher.distance_within(&self.chars[i], limit) else {
                continue;
            };
            let ned = Ned::from_parts(d, n, len);
            for owner in &self.surfaces[i].owners {
                top.offer(Key {
                    ned,
                    word_match: v.word,
                    surface_len: len,
                    entity: owner.entity,
                    surface: i,
                });
            }
        }
    }

    fn scored(&self, key: &Key) -> ScoredCandidate {
        let e = &self.entities[key.entity as usize];
        let original = self.surfaces[key.surface]
            .owners
            .iter()
            .find(|o| o.entity == key.entity)
            .map(|o| o.original.clone())
            .expect("surface owned by entity");
        ScoredCandidate {
            entity_id: e.id.clone(),
            name: e.name.clone(),
            matched_surface: original,
            ned: key.ned,
            word_match: key.word_match,
        }
    }

    /// Writes a cache file keyed by the knowledge base content hash.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CacheFile {
            format: CACHE_FORMAT,
            kb_hash: self.kb_hash.clone(),
            entities: self.entities.clone(),
            surfaces: self.surfaces.clone(),
        };
        let bytes = serde_json::to_vec(&file)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Loads a cache file; `None` when it was built from different content.
    pub fn load_cached(path: &Path, kb: &KnowledgeBase) -> Result<Option<Self>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let Ok(file) = serde_json::from_slice::<CacheFile>(&bytes) else {
            return Ok(None);
        };
        if file.format != CACHE_FORMAT || file.kb_hash != kb.content_hash() {
            return Ok(None);
        }
        Ok(Some(Self::assemble(file.kb_hash, file.entities, file.surfaces)))
    }

    /// Uses the cache when it matches `kb`, otherwise rebuilds and rewrites it.
    pub fn load_or_build(kb: &KnowledgeBase, cache: &Path) -> Result<Self> {
        if cache.exists() {
            if let Some(index) = Self::load_cached(cache, kb)? {
                return Ok(index);
            }
            tracing::info!(path = %cache.display(), "index cache stale, rebuilding");
        }
        let index = Self::build(kb)?;
        index.save(cache)?;
        Ok(index)
    }
}
