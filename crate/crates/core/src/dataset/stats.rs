use serde::{Deserialize, Serialize};

use super::AnnotatedDialogue;
use crate::metrics::tokenize;
use crate::persona::Persona;

/// Informational corpus summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub avg_turns: f64,
    pub avg_seeker_attributes: f64,
    pub avg_supporter_attributes: f64,
    pub avg_attributes_per_persona: f64,
    pub avg_words_per_attribute: f64,
}

fn mean(total: f64, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

pub fn corpus_stats(corpus: &[AnnotatedDialogue]) -> CorpusStats {
    let n = corpus.len();
    let personas = || corpus.iter().flat_map(|a| [&a.seeker_persona, &a.supporter_persona]);
    let attr_total: usize = personas().map(Persona::len).sum();
    let words: usize = personas()
        .flat_map(|p| p.attributes().iter())
        .map(|a| tokenize(&a.text).len())
        .sum();
    CorpusStats {
        dialogues: n,
        avg_turns: mean(corpus.iter().map(|a| a.dialogue.len() as f64).sum(), n),
        avg_seeker_attributes: mean(corpus.iter().map(|a| a.seeker_persona.len() as f64).sum(), n),
        avg_supporter_attributes: mean(corpus.iter().map(|a| a.supporter_persona.len() as f64).sum(), n),
        avg_attributes_per_persona: mean(attr_total as f64, 2 * n),
        avg_words_per_attribute: mean(words as f64, attr_total),
    }
}
