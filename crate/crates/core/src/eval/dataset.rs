use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KbSplit;

/// Question category; declaration order is the report column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Binary,
    Date,
    People,
    Location,
    Genre,
    OpenEnded,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Binary,
        Category::Date,
        Category::People,
        Category::Location,
        Category::Genre,
        Category::OpenEnded,
    ];

    pub fn abbreviation(&self) -> &'static str {
        match self {
            Category::Binary => "B",
            Category::Date => "D",
            Category::People => "P",
            Category::Location => "L",
            Category::Genre => "G",
            Category::OpenEnded => "OE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Scene,
    Book,
    Movie,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Scene => "scene",
            Split::Book => "book",
            Split::Movie => "movie",
        }
    }

    /// Knowledge base the split's entities live in.
    pub fn kb_split(&self) -> KbSplit {
        match self {
            Split::Scene => KbSplit::Business,
            Split::Book => KbSplit::Book,
            Split::Movie => KbSplit::Movie,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scene" => Ok(Split::Scene),
            "book" => Ok(Split::Book),
            "movie" => Ok(Split::Movie),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub question_id: String,
    pub image: String,
    pub question: String,
    pub gold_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_supporting_fact: Option<String>,
    pub gold_entity_id: String,
    pub category: Category,
    pub split: Split,
}

/// Reads dataset JSONL; ids must be unique and required text non-empty.
pub fn read_dataset<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::data(source_name, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Error::data(source_name, format!("line {}: {msg}", i + 1));
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        for (field, value) in [
            ("question_id", &rec.question_id),
            ("image", &rec.image),
            ("question", &rec.question),
            ("gold_entity_id", &rec.gold_entity_id),
        ] {
            if value.trim().is_empty() {
                return Err(at(format!("`{field}` is empty")));
            }
        }
        if !ids.insert(rec.question_id.clone()) {
            return Err(at(format!("duplicate question_id `{}`", rec.question_id)));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(std::io::BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_rejects_duplicates() {
        let line = r#"{"question_id":"q1","image":"a.jpg","question":"Where?","gold_answer":"dominos.com","gold_entity_id":"Q1","category":"open_ended","split":"scene"}"#;
        let recs = read_dataset(line.as_bytes(), "ds").unwrap();
        assert_eq!(recs[0].category, Category::OpenEnded);
        assert_eq!(recs[0].gold_supporting_fact, None);
        let twice = format!("{line}\n{line}\n");
        assert!(read_dataset(twice.as_bytes(), "ds").is_err());
        let bad = line.replace("open_ended", "trivia");
        assert!(read_dataset(bad.as_bytes(), "ds").is_err());
    }

    #[test]
    fn category_order_matches_columns() {
        let abbrevs: Vec<_> = Category::ALL.iter().map(Category::abbreviation).collect();
        assert_eq!(abbrevs, ["B", "D", "P", "L", "G", "OE"]);
        let mut sorted = Category::ALL;
        sorted.sort();
        assert_eq!(sorted, Category::ALL);
    }
}
