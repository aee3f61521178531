//! Checks shared by the fuzz targets and the seed replay test. Each takes
//! raw bytes, must never panic on any input, and asserts round trips where
//! the format has an inverse.

use personaflow::adapter::parse_verdict;
use personaflow::dataset::{filter_by_self_disclosure, parse_corpus, parse_judgement};
use personaflow::detection::{parse_attribute_list, parse_id_list};
use personaflow::gateway::parse_cache_line;
use personaflow::persona::{parse_profile, AttributeOrigin, DialogueHistory, Persona, Role};
use personaflow::prompts::{parse_template, Segment};

fn text(data: &[u8]) -> Option<&str> {
    std::str::from_utf8(data).ok()
}

/// Parsed profiles render back to text that parses to the same persona.
pub fn profile(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(pairs) = parse_profile(s) else { return };
    let first = Persona::from_pairs(Role::Agent, AttributeOrigin::ProfileRefine, pairs.iter().map(|(c, t)| (*c, t.as_str())))
        .expect("parsed bullets are non-empty");
    let rendered = first.render_profile();
    let again = parse_profile(&rendered).expect("rendered profile parses");
    let second = Persona::from_pairs(Role::Agent, AttributeOrigin::ProfileRefine, again.iter().map(|(c, t)| (*c, t.as_str())))
        .expect("reparsed bullets are non-empty");
    assert_eq!(second.render_profile(), rendered);
}

pub fn attribute_list(data: &[u8]) {
    let Some(s) = text(data) else { return };
    if let Ok(attrs) = parse_attribute_list(s) {
        for a in attrs {
            assert!(!a.text.trim().is_empty());
        }
    }
}

pub fn verdict(data: &[u8]) {
    if let Some(s) = text(data) {
        let _ = parse_verdict(s);
    }
}

pub fn id_list(data: &[u8]) {
    if let Some(s) = text(data) {
        let _ = parse_id_list(s);
    }
}

pub fn judgement(data: &[u8]) {
    if let Some(s) = text(data) {
        let _ = parse_judgement(s);
    }
}

pub fn persona_json(data: &[u8]) {
    let Ok(p) = serde_json::from_slice::<Persona>(data) else { return };
    let json = serde_json::to_string(&p).expect("persona serializes");
    assert_eq!(serde_json::from_str::<Persona>(&json).expect("own output parses"), p);
}

pub fn conversation_jsonl(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(h) = DialogueHistory::from_jsonl(s) else { return };
    assert_eq!(DialogueHistory::from_jsonl(&h.to_jsonl()).expect("own output parses"), h);
}

pub fn esconv_corpus(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(corpus) = parse_corpus(s) else { return };
    let kept = filter_by_self_disclosure(&corpus).kept;
    assert!(kept.windows(2).all(|w| w[0] < w[1]));
    assert!(kept.iter().all(|&i| i < corpus.len()));
    for d in &corpus {
        let _ = d.to_history();
    }
}

pub fn cache_line(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let Ok(entry) = parse_cache_line(s) else { return };
    let line = serde_json::to_string(&entry).expect("entry serializes");
    assert_eq!(parse_cache_line(&line).expect("own output parses"), entry);
}

/// Segments reassemble into the original template.
pub fn prompt_template(data: &[u8]) {
    let Some(s) = text(data) else { return };
    let mut rebuilt = String::with_capacity(s.len());
    for seg in parse_template(s) {
        match seg {
            Segment::Text(t) => {
                assert!(!t.is_empty());
                rebuilt.push_str(t);
            }
            Segment::Placeholder(name) => {
                assert!(!name.is_empty());
                rebuilt.push('{');
                rebuilt.push_str(name);
                rebuilt.push('}');
            }
        }
    }
    assert_eq!(rebuilt, s);
}

/// Target name to check, for the seed replay.
pub const TARGETS: [(&str, fn(&[u8])); 10] = [
    ("parse_profile", profile),
    ("attribute_list", attribute_list),
    ("verdict", verdict),
    ("id_list", id_list),
    ("judgement", judgement),
    ("persona_json", persona_json),
    ("conversation_jsonl", conversation_jsonl),
    ("esconv_corpus", esconv_corpus),
    ("cache_line", cache_line),
    ("prompt_template", prompt_template),
];
