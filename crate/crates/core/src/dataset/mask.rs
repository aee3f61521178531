use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedDialogue, DatasetWarning};
use crate::persona::Persona;

/// Range the mask fraction is drawn from, inclusive.
pub const MASK_RANGE: (f64, f64) = (0.2, 0.6);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedProfileRecord {
    pub dialogue: usize,
    pub masked_seeker: Persona,
    pub masked_supporter: Persona,
    pub target_supporter: Persona,
    /// Fraction drawn for the seeker persona.
    pub mask_fraction: f64,
    /// Independent fraction drawn for the supporter persona.
    pub supporter_mask_fraction: f64,
    pub seed: u64,
}

/// `round_half_up(f * n)` clamped to `[1, n - 1]`. Requires `n >= 2`.
pub fn masked_count(n: usize, fraction: f64) -> usize {
    assert!(n >= 2, "masking needs at least two attributes");
    let raw = (fraction * n as f64 + 0.5).floor() as usize;
    raw.clamp(1, n - 1)
}

fn mask(persona: &Persona, rng: &mut ChaCha8Rng) -> (Persona, f64) {
    let fraction = rng.gen_range(MASK_RANGE.0..=MASK_RANGE.1);
    let n = persona.len();
    let drop = sample(rng, n, masked_count(n, fraction));
    let mut dropped = vec![false; n];
    for i in drop.iter() {
        dropped[i] = true;
    }
    let kept = persona
        .attributes()
        .iter()
        .zip(&dropped)
        .filter(|(_, d)| !**d)
        .map(|(a, _)| a.clone())
        .collect();
    let masked = Persona::from_parts(persona.owner(), kept, persona.next_id()).expect("subset of a valid persona");
    (masked, fraction)
}

/// `count` records with seeds `base_seed, base_seed + 1, ...`. Each record
/// masks the seeker and supporter personas independently.
pub fn build_masked_records(
    annotated: &AnnotatedDialogue,
    base_seed: u64,
    count: usize,
) -> (Vec<MaskedProfileRecord>, Vec<DatasetWarning>) {
    let (seeker, supporter) = (&annotated.seeker_persona, &annotated.supporter_persona);
    if seeker.len() < 2 || supporter.len() < 2 {
        let w = DatasetWarning::new(
            annotated.index,
            "mask",
            format!("persona too small to mask (seeker {}, supporter {})", seeker.len(), supporter.len()),
        );
        return (Vec::new(), vec![w]);
    }
    let records = (0..count as u64)
        .map(|j| {
            let seed = base_seed.wrapping_add(j);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (masked_seeker, mask_fraction) = mask(seeker, &mut rng);
            let (masked_supporter, supporter_mask_fraction) = mask(supporter, &mut rng);
            MaskedProfileRecord {
                dialogue: annotated.index,
                masked_seeker,
                masked_supporter,
                target_supporter: supporter.clone(),
                mask_fraction,
                supporter_mask_fraction,
                seed,
            }
        })
        .collect();
    (records, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::{AttributeOrigin, DialogueHistory, PersonaCategory, Role};

    fn persona(owner: Role, n: usize) -> Persona {
        let texts: Vec<String> = (0..n).map(|i| format!("attribute number {i}")).collect();
        Persona::from_pairs(
            owner,
            AttributeOrigin::Annotation,
            texts.iter().map(|t| (PersonaCategory::OtherExperiences, t.as_str())),
        )
        .unwrap()
    }

    fn annotated(ns: usize, np: usize) -> AnnotatedDialogue {
        AnnotatedDialogue {
            index: 0,
            dialogue: DialogueHistory::new(),
            seeker_persona: persona(Role::User, ns),
            supporter_persona: persona(Role::Agent, np),
        }
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(masked_count(10, 0.2), 2);
        assert_eq!(masked_count(10, 0.6), 6);
        assert_eq!(masked_count(5, 0.5), 3);
        assert_eq!(masked_count(5, 0.3), 2);
        assert_eq!(masked_count(2, 0.2), 1);
        assert_eq!(masked_count(2, 0.6), 1);
        assert_eq!(masked_count(3, 0.6), 2);
    }

    #[test]
    fn records_are_subsets_and_deterministic() {
        let a = annotated(10, 7);
        let (r1, w) = build_masked_records(&a, 42, 20);
        assert!(w.is_empty());
        let (r2, _) = build_masked_records(&a, 42, 20);
        assert_eq!(r1, r2);
        for r in &r1 {
            for (masked, full, f) in [
                (&r.masked_seeker, &a.seeker_persona, r.mask_fraction),
                (&r.masked_supporter, &a.supporter_persona, r.supporter_mask_fraction),
            ] {
                assert!((0.2..=0.6).contains(&f));
                assert_eq!(full.len() - masked.len(), masked_count(full.len(), f));
                assert!(masked.attributes().iter().all(|x| full.get(x.id) == Some(x)));
            }
            assert_eq!(r.target_supporter, a.supporter_persona);
        }
        assert_ne!(r1[0].masked_seeker, r1[1].masked_seeker);
    }

    #[test]
    fn small_persona_skipped() {
        let (r, w) = build_masked_records(&annotated(1, 5), 0, 3);
        assert!(r.is_empty());
        assert_eq!(w.len(), 1);
    }
}
