use serde::{Deserialize, Serialize};

use super::AnnotatedDialogue;
use crate::embed_index::cosine;
use crate::gateway::{Gateway, GatewayError};
use crate::persona::PersonaAttribute;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributePairRecord {
    pub dialogue: usize,
    pub seeker_attr: PersonaAttribute,
    pub supporter_attr: PersonaAttribute,
    pub similarity: f64,
}

/// Pairs every seeker attribute with its most similar supporter attribute
/// of the same category (first one on ties). Categories the supporter lacks
/// yield no pair. All texts are embedded in one batch.
pub fn build_attribute_pairs(annotated: &AnnotatedDialogue, gateway: &Gateway) -> Result<Vec<AttributePairRecord>, GatewayError> {
    let seeker = annotated.seeker_persona.attributes();
    let supporter = annotated.supporter_persona.attributes();
    if seeker.is_empty() || supporter.is_empty() {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = seeker.iter().chain(supporter).map(|a| a.text.clone()).collect();
    let vectors = gateway.embed(&texts)?;
    let (seeker_vecs, supporter_vecs) = vectors.split_at(seeker.len());

    let mut out = Vec::new();
    for (s, sv) in seeker.iter().zip(seeker_vecs) {
        let best = supporter
            .iter()
            .zip(supporter_vecs)
            .filter(|(p, _)| p.category == s.category)
            .map(|(p, pv)| (p, cosine(sv, pv).clamp(-1.0, 1.0)))
            .fold(None::<(&PersonaAttribute, f64)>, |best, (p, score)| match best {
                Some((_, b)) if b >= score => best,
                _ => Some((p, score)),
            });
        if let Some((p, score)) = best {
            out.push(AttributePairRecord {
                dialogue: annotated.index,
                seeker_attr: s.clone(),
                supporter_attr: p.clone(),
                similarity: score,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::persona::{AttributeOrigin, DialogueHistory, Persona, PersonaCategory, Role};

    fn annotated(seeker: &[(PersonaCategory, &str)], supporter: &[(PersonaCategory, &str)]) -> AnnotatedDialogue {
        AnnotatedDialogue {
            index: 0,
            dialogue: DialogueHistory::new(),
            seeker_persona: Persona::from_pairs(Role::User, AttributeOrigin::Annotation, seeker.iter().copied()).unwrap(),
            supporter_persona: Persona::from_pairs(Role::Agent, AttributeOrigin::Annotation, supporter.iter().copied())
                .unwrap(),
        }
    }

    #[test]
    fn singleton_category_always_pairs() {
        let a = annotated(
            &[(PersonaCategory::Age, "around 30")],
            &[(PersonaCategory::Age, "possibly around 40~50 years old")],
        );
        let pairs = build_attribute_pairs(&a, &Gateway::mock(MockBackend::new())).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].supporter_attr.text, "possibly around 40~50 years old");
    }

    #[test]
    fn missing_supporter_category_yields_nothing() {
        let a = annotated(
            &[(PersonaCategory::Gender, "male"), (PersonaCategory::Occupation, "works in IT")],
            &[(PersonaCategory::Occupation, "previously owned a small housecleaning business")],
        );
        let pairs = build_attribute_pairs(&a, &Gateway::mock(MockBackend::new())).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].seeker_attr.category, PersonaCategory::Occupation);
    }

    #[test]
    fn argmax_by_cosine() {
        let mock = MockBackend::new();
        mock.set_embedding("s", vec![1.0, 0.0]);
        mock.set_embedding("p1", vec![1.0, 0.0]);
        mock.set_embedding("p2", vec![0.6, 0.8]);
        let a = annotated(
            &[(PersonaCategory::Occupation, "s")],
            &[(PersonaCategory::Occupation, "p2"), (PersonaCategory::Occupation, "p1")],
        );
        let pairs = build_attribute_pairs(&a, &Gateway::mock(mock.clone())).unwrap();
        assert_eq!(pairs[0].supporter_attr.text, "p1");
        assert!((pairs[0].similarity - 1.0).abs() < 1e-12);
        assert_eq!(mock.embed_calls().len(), 1);
    }
}
