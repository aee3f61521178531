//! Corpus fixture through filter, annotation, masking, pairing and DPO
//! assembly with a mock backend.

use std::sync::Arc;

use personaflow::dataset::{
    annotate_corpus, build_attribute_pairs, build_dpo_pairs, build_masked_records, corpus_stats,
    filter_by_self_disclosure, from_jsonl, masked_count, parse_corpus, to_jsonl, AnnotatedDialogue, RawDialogue,
    MASK_RANGE,
};
use personaflow::gateway::{Gateway, MockBackend};
use personaflow::prompts::{self, PromptCatalog};
use serde_json::Value;

fn corpus() -> Vec<RawDialogue> {
    parse_corpus(include_str!("../fixtures/esconv_sample.json")).unwrap()
}

/// Annotator replying with the fixture annotations of whichever dialogue
/// the prompt transcribes.
fn annotator(corpus: &[RawDialogue]) -> Arc<MockBackend> {
    let annotations: Vec<Value> = serde_json::from_str(include_str!("../fixtures/esconv_annotations.json")).unwrap();
    let openers: Vec<String> = corpus.iter().map(|d| d.dialog[0].content.clone()).collect();
    let mock = MockBackend::new();
    for (task, side) in [(prompts::ANNOTATE_SEEKER, "seeker"), (prompts::ANNOTATE_SUPPORTER, "supporter")] {
        let (annotations, openers) = (annotations.clone(), openers.clone());
        mock.respond(task, move |req, _| {
            let prompt = &req.messages.last()?.content;
            let i = openers.iter().position(|o| prompt.contains(o.as_str()))?;
            Some(annotations[i][side].to_string())
        });
    }
    mock
}

fn annotated() -> Vec<AnnotatedDialogue> {
    let corpus = corpus();
    let kept = filter_by_self_disclosure(&corpus).kept;
    let dialogues: Vec<_> = kept.iter().map(|&i| (i, corpus[i].to_history().unwrap())).collect();
    let (out, warnings) = annotate_corpus(&dialogues, &Gateway::mock(annotator(&corpus)), &PromptCatalog::builtin(), 3);
    assert!(warnings.is_empty(), "{warnings:?}");
    out
}

#[test]
fn filter_keeps_dialogues_with_more_than_two_disclosures() {
    assert_eq!(filter_by_self_disclosure(&corpus()).kept, vec![3, 4, 5]);
}

#[test]
fn annotation_follows_input_order_and_round_trips() {
    let a = annotated();
    assert_eq!(a.iter().map(|x| x.index).collect::<Vec<_>>(), vec![3, 4, 5]);
    assert_eq!(
        a.iter().map(|x| (x.seeker_persona.len(), x.supporter_persona.len())).collect::<Vec<_>>(),
        vec![(12, 13), (4, 4), (4, 5)]
    );
    assert_eq!(from_jsonl::<AnnotatedDialogue>(&to_jsonl(&a)).unwrap(), a);
    let stats = corpus_stats(&a);
    assert_eq!(stats.dialogues, 3);
    assert!((stats.avg_attributes_per_persona - 42.0 / 6.0).abs() < 1e-12);
}

#[test]
fn masked_records_respect_fraction_and_count_bounds() {
    for a in annotated() {
        let (records, warnings) = build_masked_records(&a, 100, 200);
        assert!(warnings.is_empty());
        assert_eq!(records.len(), 200);
        for r in records {
            for (fraction, full, masked) in [
                (r.mask_fraction, &a.seeker_persona, &r.masked_seeker),
                (r.supporter_mask_fraction, &a.supporter_persona, &r.masked_supporter),
            ] {
                assert!((MASK_RANGE.0..=MASK_RANGE.1).contains(&fraction));
                let n = full.len();
                let dropped = n - masked.len();
                assert!((1..n).contains(&dropped));
                assert_eq!(dropped, masked_count(n, fraction));
                assert!(masked.attributes().iter().all(|x| full.attributes().contains(x)));
            }
            assert_eq!(r.target_supporter, a.supporter_persona);
        }
    }
}

#[test]
fn attribute_pairs_stay_within_category() {
    let gateway = Gateway::mock(MockBackend::new());
    for a in annotated() {
        for p in build_attribute_pairs(&a, &gateway).unwrap() {
            assert_eq!(p.seeker_attr.category, p.supporter_attr.category);
            assert!((-1.0..=1.0).contains(&p.similarity));
        }
    }
}

#[test]
fn dpo_four_candidates_give_six_pairs() {
    let refiner = MockBackend::new();
    refiner.respond(prompts::PROFILE_REFINE, |_, choice| {
        Some(format!("Hobbies or Interests:\n- candidate hobby {choice}"))
    });
    let judge = MockBackend::new();
    judge.respond(prompts::JUDGE_DPO, |req, _| {
        let p = &req.messages[0].content;
        let a = p.split("Persona A:\n").nth(1)?.split("\n\nPersona B:").next()?;
        let b = p.split("Persona B:\n").nth(1)?.split("\n\nAnswer").next()?;
        Some(if a < b { "A" } else { "B" }.into())
    });
    let catalog = PromptCatalog::builtin();
    for a in annotated() {
        let (records, _) = build_masked_records(&a, 0, 1);
        let out = build_dpo_pairs(
            &records[0],
            &Gateway::mock(refiner.clone()),
            &Gateway::mock(judge.clone()),
            &catalog,
            4,
            0.8,
        )
        .unwrap();
        assert_eq!(out.candidate_pairs, 6);
        assert_eq!(out.pairs.len(), 6);
        assert!(out.pairs.iter().all(|p| p.chosen != p.rejected && p.dialogue == a.index));
    }
}
