use std::collections::HashMap;

use super::dataset::DatasetRecord;
use crate::error::{Error, Result};
use crate::linking::LinkResult;
use crate::qa::QaOutput;

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, trim, drop trailing `.,!?`, drop one leading article, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let trimmed = lowered
        .trim()
        .trim_end_matches(['.', ',', '!', '?'])
        .trim_end();
    let mut words: Vec<&str> = trimmed.split_whitespace().collect();
    if words.len() > 1 && ARTICLES.contains(&words[0]) {
        words.remove(0);
    }
    words.join(" ")
}

/// 1 when the normalized prediction equals the normalized gold answer.
pub fn score_qa(pred: &QaOutput, gold: &DatasetRecord) -> u8 {
    u8::from(normalize_answer(&pred.answer) == normalize_answer(&gold.gold_answer))
}

/// Gold entity per image; conflicting labels for one image are an error.
pub fn gold_entities_by_image(gold: &[DatasetRecord]) -> Result<HashMap<&str, &str>> {
    let mut by_image: HashMap<&str, &str> = HashMap::new();
    for r in gold {
        match by_image.insert(&r.image, &r.gold_entity_id) {
            Some(prev) if prev != r.gold_entity_id => {
                return Err(Error::data(
                    "dataset",
                    format!("image `{}` has two gold entities: `{prev}` and `{}`", r.image, r.gold_entity_id),
                ))
            }
            _ => {}
        }
    }
    Ok(by_image)
}

/// Fraction of links that name the gold entity of their image.
pub fn recall_at_1(links: &[LinkResult], gold: &[DatasetRecord]) -> Result<f64> {
    if links.is_empty() {
        return Err(Error::invalid("recall@1 of an empty link list is undefined"));
    }
    let by_image = gold_entities_by_image(gold)?;
    let mut correct = 0usize;
    for link in links {
        let gold_id = by_image.get(link.image_id.as_str()).ok_or_else(|| {
            Error::data("dataset", format!("no gold record for image `{}`", link.image_id))
        })?;
        if link.entity_id == *gold_id {
            correct += 1;
        }
    }
    Ok(correct as f64 / links.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Ned;
    use crate::eval::dataset::{Category, Split};
    use crate::index::{CandidateSet, ScoredCandidate};
    use crate::linking::Resolution;

    fn gold(image: &str, entity: &str, answer: &str) -> DatasetRecord {
        DatasetRecord {
            question_id: format!("q-{image}"),
            image: image.into(),
            question: "?".into(),
            gold_answer: answer.into(),
            gold_supporting_fact: None,
            gold_entity_id: entity.into(),
            category: Category::OpenEnded,
            split: Split::Scene,
        }
    }

    fn link(image: &str, entity: &str, resolution: Resolution) -> LinkResult {
        LinkResult {
            image_id: image.into(),
            entity_id: entity.into(),
            resolution,
            candidates: CandidateSet {
                query_text: String::new(),
                k: 1,
                items: vec![ScoredCandidate {
                    entity_id: entity.into(),
                    name: entity.into(),
                    matched_surface: entity.into(),
                    ned: Ned::ZERO,
                    word_match: false,
                }],
            },
            raw_completion: String::new(),
        }
    }

    fn out(answer: &str) -> QaOutput {
        QaOutput {
            answer: answer.into(),
            supporting_fact: None,
            raw_completion: answer.into(),
        }
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_answer("Yes."), "yes");
        assert_eq!(normalize_answer("The Royal Bank of Scotland"), "royal bank of scotland");
        assert_eq!(normalize_answer("  1994 "), "1994");
        assert_eq!(normalize_answer("An   apple!?"), "apple");
        assert_eq!(normalize_answer("the"), "the");
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn scoring() {
        let g = gold("i", "e", "dominos.com");
        assert_eq!(score_qa(&out("dominos.com"), &g), 1);
        assert_eq!(score_qa(&out("Pizza Hut website"), &g), 0);
        assert_eq!(score_qa(&out("The 1994"), &gold("i", "e", "1994")), 1);
    }

    #[test]
    fn recall_counts_matches() {
        let g: Vec<_> = ["a", "b", "c", "d"].iter().map(|i| gold(i, &format!("E{i}"), "x")).collect();
        let links = vec![
            link("a", "Ea", Resolution::LmmExact),
            link("b", "Eb", Resolution::LmmExact),
            link("c", "Ec", Resolution::LmmFuzzy),
            link("d", "Ex", Resolution::NedFallback),
        ];
        assert_eq!(recall_at_1(&links, &g).unwrap(), 0.75);
        let wrong = vec![link("a", "Z", Resolution::NoTextFallback), link("b", "Z", Resolution::NoTextFallback)];
        assert_eq!(recall_at_1(&wrong, &g).unwrap(), 0.0);
        assert!(recall_at_1(&[], &g).is_err());
        assert!(recall_at_1(&[link("zzz", "Ea", Resolution::LmmExact)], &g).is_err());
    }

    #[test]
    fn conflicting_gold_is_rejected() {
        let g = vec![gold("a", "E1", "x"), gold("a", "E2", "y")];
        assert!(gold_entities_by_image(&g).is_err());
    }
}
