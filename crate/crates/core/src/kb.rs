//! Knowledge base ingestion and fact rendering.
//!
//! Triplets arrive as JSONL, are grouped per subject and rendered into short
//! sentences through a relation template table. The resulting
//! [`KnowledgeBase`] is immutable and can be shared across threads.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

const BUILTIN_TEMPLATES: &str = include_str!("templates.toml");

/// Which knowledge base a split draws on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KbSplit {
    Business,
    Book,
    Movie,
}

impl KbSplit {
    pub fn as_str(&self) -> &'static str {
        match self {
            KbSplit::Business => "business",
            KbSplit::Book => "book",
            KbSplit::Movie => "movie",
        }
    }
}

impl fmt::Display for KbSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KbSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "business" | "scene" => Ok(KbSplit::Business),
            "book" => Ok(KbSplit::Book),
            "movie" => Ok(KbSplit::Movie),
            other => Err(Error::invalid(format!("unknown knowledge base split `{other}`"))),
        }
    }
}

/// One raw knowledge triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject_id: String,
    pub subject_name: String,
    pub relation: String,
    pub object: String,
}

impl Triplet {
    fn validate(&self) -> std::result::Result<(), String> {
        for (field, value) in [
            ("subject_id", &self.subject_id),
            ("subject_name", &self.subject_name),
            ("relation", &self.relation),
            ("object", &self.object),
        ] {
            if value.trim().is_empty() {
                return Err(format!("field `{field}` is empty"));
            }
        }
        Ok(())
    }
}

/// A fact rendered as a short natural-language sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSentence {
    pub relation: String,
    pub object: String,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub facts: Vec<FactSentence>,
}

impl Entity {
    /// Canonical name followed by aliases.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }
}

/// Relation to sentence templates, loaded from TOML.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TemplateTable {
    fallback: String,
    #[serde(default)]
    relations: BTreeMap<String, String>,
}

impl Default for TemplateTable {
    fn default() -> Self {
        TemplateTable::from_toml_str(BUILTIN_TEMPLATES).expect("builtin template table parses")
    }
}

impl TemplateTable {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::data("template table", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.to_string()))
    }

    pub fn template_for(&self, relation: &str) -> &str {
        self.relations
            .get(relation)
            .map(String::as_str)
            .unwrap_or(&self.fallback)
    }

    pub fn render(&self, subject_name: &str, relation: &str, object: &str) -> Result<FactSentence> {
        if subject_name.trim().is_empty() || relation.trim().is_empty() || object.trim().is_empty() {
            return Err(Error::invalid(
                "fact rendering needs a subject name, relation and object",
            ));
        }
        let sentence = self
            .template_for(relation)
            .replace("{subject}", subject_name)
            .replace("{relation}", &relation.replace('_', " "))
            .replace("{object}", object);
        Ok(FactSentence {
            relation: relation.to_string(),
            object: object.to_string(),
            sentence,
        })
    }
}

/// Renders a fact with the builtin template table.
pub fn render_fact(subject_name: &str, relation: &str, object: &str) -> Result<FactSentence> {
    static TABLE: std::sync::LazyLock<TemplateTable> = std::sync::LazyLock::new(TemplateTable::default);
    TABLE.render(subject_name, relation, object)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedRecord {
    pub line: usize,
    pub reason: String,
}

/// What happened during ingestion besides the accepted triplets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub duplicates: usize,
    pub skipped: Vec<SkippedRecord>,
    /// Subject ids seen with more than one name; the first name wins.
    pub name_conflicts: Vec<String>,
}

/// Alias sidecar record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasRecord {
    pub id: String,
    pub aliases: Vec<String>,
}

/// Incremental single-writer builder behind the ingestion entry points.
#[derive(Debug)]
pub struct KbBuilder<'t> {
    split: KbSplit,
    templates: &'t TemplateTable,
    entities: BTreeMap<String, Entity>,
    seen: HashSet<(String, String, String)>,
    report: IngestReport,
}

impl<'t> KbBuilder<'t> {
    pub fn new(split: KbSplit, templates: &'t TemplateTable) -> Self {
        KbBuilder {
            split,
            templates,
            entities: BTreeMap::new(),
            seen: HashSet::new(),
            report: IngestReport::default(),
        }
    }

    pub fn push(&mut self, line: usize, triplet: Triplet) {
        if let Err(reason) = triplet.validate() {
            self.report.skipped.push(SkippedRecord { line, reason });
            return;
        }
        let key = (
            triplet.subject_id.clone(),
            triplet.relation.clone(),
            triplet.object.clone(),
        );
        if !self.seen.insert(key) {
            self.report.duplicates += 1;
            return;
        }
        let entity = self
            .entities
            .entry(triplet.subject_id.clone())
            .or_insert_with(|| Entity {
                id: triplet.subject_id.clone(),
                name: triplet.subject_name.clone(),
                aliases: Vec::new(),
                facts: Vec::new(),
            });
        if entity.name != triplet.subject_name
            && !self.report.name_conflicts.contains(&entity.id)
        {
            self.report.name_conflicts.push(entity.id.clone());
        }
        match self
            .templates
            .render(&entity.name, &triplet.relation, &triplet.object)
        {
            Ok(fact) => {
                entity.facts.push(fact);
                self.report.accepted += 1;
            }
            Err(e) => self.report.skipped.push(SkippedRecord {
                line,
                reason: e.to_string(),
            }),
        }
    }

    /// Parses and pushes one JSONL line; blank lines are ignored.
    pub fn push_line(&mut self, line: usize, text: &str) {
        if text.trim().is_empty() {
            return;
        }
        match serde_json::from_str::<Triplet>(text) {
            Ok(t) => self.push(line, t),
            Err(e) => self.report.skipped.push(SkippedRecord {
                line,
                reason: e.to_string(),
            }),
        }
    }

    pub fn add_aliases(&mut self, line: usize, record: AliasRecord) {
        let Some(entity) = self.entities.get_mut(&record.id) else {
            self.report.skipped.push(SkippedRecord {
                line,
                reason: format!("alias record for unknown entity `{}`", record.id),
            });
            return;
        };
        for alias in record.aliases {
            if alias.trim().is_empty() || alias == entity.name || entity.aliases.contains(&alias) {
                continue;
            }
            entity.aliases.push(alias);
        }
    }

    pub fn finish(self) -> Result<(KnowledgeBase, IngestReport)> {
        if self.entities.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        Ok((
            KnowledgeBase {
                split: self.split,
                entities: self.entities,
            },
            self.report,
        ))
    }
}

/// Ingests already-parsed triplets in order.
pub fn ingest_triplets<I>(
    records: I,
    split: KbSplit,
    templates: &TemplateTable,
) -> Result<(KnowledgeBase, IngestReport)>
where
    I: IntoIterator<Item = Triplet>,
{
    let mut builder = KbBuilder::new(split, templates);
    for (i, t) in records.into_iter().enumerate() {
        builder.push(i + 1, t);
    }
    builder.finish()
}

/// Ingests triplet JSONL, with an optional alias sidecar.
pub fn ingest_jsonl<R: BufRead, A: BufRead>(
    triplets: R,
    aliases: Option<A>,
    split: KbSplit,
    templates: &TemplateTable,
) -> Result<(KnowledgeBase, IngestReport)> {
    let mut builder = KbBuilder::new(split, templates);
    for (i, line) in triplets.lines().enumerate() {
        let line = line.map_err(|e| Error::data("triplet stream", e.to_string()))?;
        builder.push_line(i + 1, &line);
    }
    if let Some(aliases) = aliases {
        for (i, line) in aliases.lines().enumerate() {
            let line = line.map_err(|e| Error::data("alias stream", e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<AliasRecord>(&line) {
                Ok(rec) => builder.add_aliases(i + 1, rec),
                Err(e) => builder.report.skipped.push(SkippedRecord {
                    line: i + 1,
                    reason: format!("alias sidecar: {e}"),
                }),
            }
        }
    }
    builder.finish()
}

/// Immutable entity store for one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBase {
    split: KbSplit,
    entities: BTreeMap<String, Entity>,
}

impl KnowledgeBase {
    /// Builds a knowledge base from fully formed entities.
    pub fn from_entities<I: IntoIterator<Item = Entity>>(split: KbSplit, entities: I) -> Result<Self> {
        let mut map = BTreeMap::new();
        for e in entities {
            if e.id.trim().is_empty() || e.name.trim().is_empty() {
                return Err(Error::invalid("entity id and name must be non-empty"));
            }
            if map.contains_key(&e.id) {
                return Err(Error::invalid(format!("duplicate entity id `{}`", e.id)));
            }
            map.insert(e.id.clone(), e);
        }
        if map.is_empty() {
            return Err(Error::EmptyKnowledgeBase);
        }
        Ok(KnowledgeBase {
            split,
            entities: map,
        })
    }

    pub fn split(&self) -> KbSplit {
        self.split
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    /// Entities in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    /// Facts of an entity in stored order.
    pub fn knowledge_for(&self, entity_id: &str) -> Result<&[FactSentence]> {
        self.entities
            .get(entity_id)
            .map(|e| e.facts.as_slice())
            .ok_or_else(|| Error::NotFound(format!("entity `{entity_id}`")))
    }

    /// Writes the serialized form: one entity per line, ascending id.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in self.entities.values() {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")
                .map_err(|e| Error::io("<kb output>", e))?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Reads the serialized form written by [`write_jsonl`](Self::write_jsonl).
    pub fn read_jsonl<R: BufRead>(reader: R, split: KbSplit) -> Result<Self> {
        let mut entities = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::data("kb stream", e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entity: Entity = serde_json::from_str(&line)
                .map_err(|e| Error::data("kb stream", format!("line {}: {e}", i + 1)))?;
            if entity.facts.iter().any(|f| f.sentence.trim().is_empty()) {
                return Err(Error::data(
                    "kb stream",
                    format!("line {}: empty fact sentence", i + 1),
                ));
            }
            entities.push(entity);
        }
        KnowledgeBase::from_entities(split, entities).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::data("kb stream", m),
            other => other,
        })
    }

    /// Loads a knowledge base file, accepting either raw triplet JSONL or the
    /// serialized entity form.
    pub fn load(
        path: &Path,
        aliases: Option<&Path>,
        split: KbSplit,
        templates: &TemplateTable,
    ) -> Result<(Self, IngestReport)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        let is_triplets = serde_json::from_str::<serde_json::Value>(first)
            .ok()
            .map(|v| v.get("subject_id").is_some())
            .unwrap_or(false);
        if is_triplets {
            let alias_text = match aliases {
                Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
                None => None,
            };
            ingest_jsonl(
                text.as_bytes(),
                alias_text.as_deref().map(str::as_bytes),
                split,
                templates,
            )
            .map_err(|e| relabel(e, path))
        } else {
            let mut kb = KnowledgeBase::read_jsonl(BufReader::new(text.as_bytes()), split)
                .map_err(|e| relabel(e, path))?;
            let mut report = IngestReport {
                accepted: kb.entities.values().map(|e| e.facts.len()).sum(),
                ..IngestReport::default()
            };
            if let Some(p) = aliases {
                let alias_text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                kb.merge_aliases(&alias_text, &mut report)?;
            }
            Ok((kb, report))
        }
    }

    fn merge_aliases(&mut self, text: &str, report: &mut IngestReport) -> Result<()> {
        let mut by_id: HashMap<String, Vec<String>> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<AliasRecord>(line) {
                Ok(rec) if self.entities.contains_key(&rec.id) => {
                    by_id.entry(rec.id).or_default().extend(rec.aliases)
                }
                Ok(rec) => report.skipped.push(SkippedRecord {
                    line: i + 1,
                    reason: format!("alias record for unknown entity `{}`", rec.id),
                }),
                Err(e) => report.skipped.push(SkippedRecord {
                    line: i + 1,
                    reason: format!("alias sidecar: {e}"),
                }),
            }
        }
        for (id, aliases) in by_id {
            let entity = self.entities.get_mut(&id).expect("checked above");
            for alias in aliases {
                if !alias.trim().is_empty() && alias != entity.name && !entity.aliases.contains(&alias)
                {
                    entity.aliases.push(alias);
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the split name and serialized content.
    pub fn content_hash(&self) -> String {
        let mut bytes = self.split.as_str().as_bytes().to_vec();
        bytes.push(b'\n');
        bytes.extend_from_slice(self.to_jsonl_string().as_bytes());
        sha256_hex(&bytes)
    }
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Data { message, .. } => Error::data(path.display().to_string(), message),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(id: &str, name: &str, rel: &str, obj: &str) -> Triplet {
        Triplet {
            subject_id: id.into(),
            subject_name: name.into(),
            relation: rel.into(),
            object: obj.into(),
        }
    }

    #[test]
    fn renders_seeded_templates() {
        let s = |r, o| render_fact("Domino's Pizza", r, o).unwrap().sentence;
        assert_eq!(s("instance_of", "restaurant"), "Domino's Pizza is a restaurant.");
        assert_eq!(
            s("headquarters_location", "Ann Arbor Charter Township"),
            "Its headquarters are in Ann Arbor Charter Township."
        );
        assert_eq!(s("industry", "fast food"), "It belongs to the fast food industry.");
    }

    #[test]
    fn unknown_relation_uses_generic_pattern() {
        let f = render_fact("Domino's Pizza", "number_of_stores", "17000").unwrap();
        assert_eq!(f.sentence, "Domino's Pizza number of stores 17000.");
        assert_eq!(f.relation, "number_of_stores");
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(render_fact("", "industry", "x"), Err(Error::InvalidArgument(_))));
        assert!(matches!(render_fact("a", " ", "x"), Err(Error::InvalidArgument(_))));
        assert!(matches!(render_fact("a", "industry", ""), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn custom_table_overrides_builtin() {
        let table = TemplateTable::from_toml_str(
            "fallback = \"{subject}: {object}\"\n[relations]\ngenre = \"Genre: {object}\"\n",
        )
        .unwrap();
        assert_eq!(table.render("X", "genre", "drama").unwrap().sentence, "Genre: drama");
        assert_eq!(table.render("X", "other", "y").unwrap().sentence, "X: y");
    }

    #[test]
    fn groups_by_subject() {
        let table = TemplateTable::default();
        let (kb, report) = ingest_triplets(
            vec![
                t("Q1", "Domino's Pizza", "instance_of", "restaurant"),
                t("Q1", "Domino's Pizza", "industry", "fast food"),
                t("Q1", "Domino's Pizza", "headquarters_location", "Ann Arbor Charter Township"),
            ],
            KbSplit::Business,
            &table,
        )
        .unwrap();
        assert_eq!(kb.len(), 1);
        let facts = kb.knowledge_for("Q1").unwrap();
        assert_eq!(facts.len(), 3);
        assert_eq!(facts[1].sentence, "It belongs to the fast food industry.");
        assert_eq!(report.accepted, 3);
    }

    #[test]
    fn duplicates_are_dropped() {
        let table = TemplateTable::default();
        let dup = t("Q1", "A", "industry", "b");
        let (kb, report) =
            ingest_triplets(vec![dup.clone(), dup], KbSplit::Business, &table).unwrap();
        assert_eq!(kb.knowledge_for("Q1").unwrap().len(), 1);
        assert_eq!(report.duplicates, 1);
    }

    #[test]
    fn malformed_record_is_reported_not_fatal() {
        let input = concat!(
            r#"{"subject_id":"Q1","subject_name":"A","relation":"industry","object":"x"}"#, "\n",
            r#"{"subject_id":"Q2","subject_name":"B","object":"y"}"#, "\n",
            r#"{"subject_id":"Q2","subject_name":"B","relation":"genre","object":"z"}"#, "\n",
            r#"{"subject_id":"Q2","subject_name":"B","relation":"","object":"w"}"#, "\n",
        );
        let (kb, report) =
            ingest_jsonl(input.as_bytes(), None::<&[u8]>, KbSplit::Book, &TemplateTable::default())
                .unwrap();
        assert_eq!(kb.len(), 2);
        assert_eq!(report.skipped.len(), 2);
        assert_eq!(report.skipped[0].line, 2);
        assert_eq!(report.skipped[1].line, 4);
    }

    #[test]
    fn empty_stream_is_an_error() {
        let r = ingest_jsonl(&b""[..], None::<&[u8]>, KbSplit::Book, &TemplateTable::default());
        assert!(matches!(r, Err(Error::EmptyKnowledgeBase)));
        let r = ingest_jsonl(&b"not json\n"[..], None::<&[u8]>, KbSplit::Book, &TemplateTable::default());
        assert!(matches!(r, Err(Error::EmptyKnowledgeBase)));
    }

    #[test]
    fn knowledge_lookup() {
        let kb = KnowledgeBase::from_entities(
            KbSplit::Movie,
            vec![Entity {
                id: "m1".into(),
                name: "Heat".into(),
                aliases: vec![],
                facts: vec![],
            }],
        )
        .unwrap();
        assert!(kb.knowledge_for("m1").unwrap().is_empty());
        assert!(matches!(kb.knowledge_for("zz"), Err(Error::NotFound(_))));
    }

    #[test]
    fn alias_sidecar_attaches_and_reports_unknown_ids() {
        let triplets = r#"{"subject_id":"Q1","subject_name":"The Royal Bank of Scotland","relation":"industry","object":"banking"}"#;
        let aliases = "{\"id\":\"Q1\",\"aliases\":[\"RBS\",\"RBS\"]}\n{\"id\":\"Q9\",\"aliases\":[\"x\"]}\n";
        let (kb, report) = ingest_jsonl(
            triplets.as_bytes(),
            Some(aliases.as_bytes()),
            KbSplit::Business,
            &TemplateTable::default(),
        )
        .unwrap();
        assert_eq!(kb.get("Q1").unwrap().aliases, vec!["RBS".to_string()]);
        assert_eq!(report.skipped.len(), 1);
    }

    #[test]
    fn serialized_round_trip() {
        let (kb, _) = ingest_triplets(
            vec![
                t("b", "Beta", "genre", "drama"),
                t("a", "Alpha", "instance_of", "film"),
                t("a", "Alpha", "director", "Someone"),
            ],
            KbSplit::Movie,
            &TemplateTable::default(),
        )
        .unwrap();
        let text = kb.to_jsonl_string();
        let back = KnowledgeBase::read_jsonl(text.as_bytes(), KbSplit::Movie).unwrap();
        assert_eq!(kb, back);
        assert_eq!(kb.content_hash(), back.content_hash());
    }

    #[test]
    fn serialized_reader_rejects_duplicate_ids() {
        let line = r#"{"id":"a","name":"A","aliases":[],"facts":[]}"#;
        let text = format!("{line}\n{line}\n");
        assert!(matches!(
            KnowledgeBase::read_jsonl(text.as_bytes(), KbSplit::Book),
            Err(Error::Data { .. })
        ));
    }
}
