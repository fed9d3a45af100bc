mod common;

use proptest::prelude::*;
use vistext_core::eval::{gold_answer_policy, nearest_policy};
use vistext_core::lmm::MockBackend;
use vistext_core::synth::{self, KbShape};
use vistext_core::{
    evaluate_split, Category, EntityIndex, EvalConfig, EvalResources, LinkingMode, LmmGateway,
    MockPolicy, PromptVariant, Resolution, RetryPolicy,
};

use common::*;

fn staged(link: MockPolicy, answer: MockPolicy) -> LmmGateway {
    LmmGateway::new(Box::new(MockBackend::staged(link, answer)), RetryPolicy::none(), 4)
}

#[test]
fn challenge_split_end_to_end() {
    let kb = challenge_kb();
    let index = EntityIndex::build(&kb).unwrap();
    let ocr = challenge_ocr();
    let dataset = challenge_dataset();
    let gateway = staged(MockPolicy::EchoFirstCandidate, gold_answer_policy(&dataset, &kb));
    let resources = EvalResources {
        kb: &kb,
        index: &index,
        ocr: &ocr,
        gateway: &gateway,
    };
    let out = evaluate_split(&dataset, resources, &EvalConfig::default()).unwrap();
    let linked: Vec<(&str, &str)> = out
        .links
        .iter()
        .map(|l| (l.image_id.as_str(), l.entity_id.as_str()))
        .collect();
    // Echoing the first candidate picks the sauce for the HP sign.
    assert_eq!(linked, [("dominos.jpg", "Q1"), ("rbs.jpg", "Q6"), ("hp.jpg", "Q10")]);
    let r = &out.report;
    assert_eq!((r.n_items, r.n_images), (5, 3));
    assert!((r.recall_at_1 - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(r.gold_in_candidates_at_k, 1.0);
    // The gold mock still answers correctly; only the HP supporting fact is
    // not attributable to the wrongly linked entity, so it is not counted.
    assert_eq!(r.accuracy, 1.0);
    assert_eq!(r.attribution_support, 3);
    assert_eq!(r.resolution_counts.get("lmm_exact"), Some(&3));
    assert_eq!(r.per_category.keys().copied().collect::<Vec<_>>(), [
        Category::Binary,
        Category::Date,
        Category::Location,
        Category::OpenEnded
    ]);
    assert!(r.valid);
}

#[test]
fn missing_fixture_counts_as_failure() {
    let kb = challenge_kb();
    let index = EntityIndex::build(&kb).unwrap();
    let ocr = challenge_ocr();
    let mut dataset = challenge_dataset();
    dataset[4].image = "unknown.jpg".into();
    let gateway = LmmGateway::mock(MockPolicy::EchoFirstCandidate);
    let resources = EvalResources {
        kb: &kb,
        index: &index,
        ocr: &ocr,
        gateway: &gateway,
    };
    let config = EvalConfig {
        variant: PromptVariant::NoKnowledge,
        ..EvalConfig::default()
    };
    // Echo cannot answer QA prompts, so every question fails; the link for
    // the missing image fails first.
    let out = evaluate_split(&dataset, resources, &config).unwrap();
    assert_eq!(out.report.failures, 5);
    assert!(!out.report.valid);
    assert_eq!(out.report.accuracy, 0.0);
    assert!(out.failures.iter().any(|f| f.item == "c5" && f.error.contains("linking failed")));
}

#[test]
fn blank_image_uses_prior_candidates() {
    let kb = challenge_kb();
    let index = EntityIndex::build(&kb).unwrap();
    let ocr = challenge_ocr();
    let gateway = LmmGateway::mock(MockPolicy::EchoFirstCandidate);
    let linker = vistext_core::Linker::new(&index, &gateway, Default::default());
    let blank = vistext_core::ImageRef::new("blank.jpg");
    let result = vistext_core::OcrGateway::recognize(&ocr, &blank).unwrap();
    let link = linker.link(&blank, &result).unwrap();
    assert_eq!(link.resolution, Resolution::NoTextFallback);
    assert_eq!(link.entity_id, link.candidates.items[0].entity_id);
}

#[test]
fn ned_top1_and_vistel_with_nearest_mock_agree() {
    let s = synth::synthetic_split(31, 500, 80, vistext_core::Split::Movie);
    let index = EntityIndex::build(&s.kb).unwrap();
    let ocr = s.ocr_gateway();
    let gold = gold_answer_policy(&s.dataset, &s.kb);
    let run = |mode| {
        let gateway = staged(nearest_policy(&s.kb), gold.clone());
        let resources = EvalResources {
            kb: &s.kb,
            index: &index,
            ocr: &ocr,
            gateway: &gateway,
        };
        let config = EvalConfig {
            linking_mode: mode,
            ..EvalConfig::default()
        };
        evaluate_split(&s.dataset, resources, &config).unwrap()
    };
    let a = run(LinkingMode::Vistel);
    let b = run(LinkingMode::NedTop1);
    assert_eq!(a.report.metrics(), b.report.metrics());
    let ids = |o: &vistext_core::EvalOutcome| o.links.iter().map(|l| l.entity_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn small_index_matches_scan(seed in 0u64..10_000, size in 1usize..300, k in 1usize..12) {
        let kb = synth::synthetic_kb(seed, &KbShape::new(size));
        let index = EntityIndex::build(&kb).unwrap();
        let oracle = BruteForce::new(&kb);
        for q in synth::synthetic_queries(seed + 1, &kb, 20) {
            let Ok(got) = index.candidates(&q, k) else { continue };
            let got: Vec<_> = got.items.iter().map(|c| (c.entity_id.clone(), c.ned.distance(), c.ned.length())).collect();
            let want: Vec<_> = oracle.top_k(&q, k).into_iter().map(|h| (h.entity_id, h.distance, h.length)).collect();
            prop_assert_eq!(got, want, "query {:?}", q);
        }
    }
}
