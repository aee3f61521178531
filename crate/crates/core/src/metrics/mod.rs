//! Evaluation metrics.
//!
//! IDF-weighted overlap underlies the persona metrics:
//!
//! ```text
//! IDF-O(x, y)  = Σ_{w ∈ T(x) ∩ T(y)} idf(w) / Σ_{w ∈ T(x)} idf(w)
//! A-Cover(y,P) = max_j IDF-O(y, a_j)
//! P-Cover(R,P) = IDF-O(concat(R), concat(P))
//! AA(a, P~)    = max_j IDF-O(a, a~_j)
//! PA(P, P~)    = mean_i AA(a_i, P~)
//! ```
//!
//! with `idf(w) = ln(N / df(w))` and `ln(N)` for tokens never seen in the
//! IDF corpus. The overlap is normalized by the token mass of its first
//! argument.

mod ngram;

pub use ngram::{bleu_n, distinct_n, lcs_len, ngrams, rouge_l};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::Persona;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("IDF corpus is empty")]
    EmptyCorpus,
    #[error("length mismatch: {left} candidates vs {right} references")]
    LengthMismatch { left: usize, right: usize },
    #[error("n-gram order must be >= 1")]
    InvalidOrder,
}

/// Lowercases and splits on every non-alphanumeric run.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Document frequencies over a reference corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfModel {
    doc_count: usize,
    df: BTreeMap<String, usize>,
}

impl IdfModel {
    pub fn build<I, S>(corpus: I) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut doc_count = 0;
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for doc in corpus {
            doc_count += 1;
            for token in token_set(doc.as_ref()) {
                *df.entry(token).or_default() += 1;
            }
        }
        if doc_count == 0 {
            return Err(MetricError::EmptyCorpus);
        }
        Ok(IdfModel { doc_count, df })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn df(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }

    pub fn idf(&self, token: &str) -> f64 {
        let n = self.doc_count as f64;
        match self.df.get(token) {
            Some(&df) => (n / df as f64).ln(),
            None => n.ln(),
        }
    }

    fn mass<'a>(&self, tokens: impl IntoIterator<Item = &'a String>) -> f64 {
        tokens.into_iter().map(|t| self.idf(t)).sum()
    }
}

/// IDF-weighted overlap of `x` against `y`, normalized by `x`'s token mass.
/// Zero when `x` carries no IDF mass.
pub fn idf_overlap(x: &str, y: &str, model: &IdfModel) -> f64 {
    overlap_sets(&token_set(x), &token_set(y), model)
}

fn overlap_sets(x: &BTreeSet<String>, y: &BTreeSet<String>, model: &IdfModel) -> f64 {
    let denom = model.mass(x);
    if denom <= 0.0 {
        return 0.0;
    }
    model.mass(x.intersection(y)) / denom
}

/// Attribute-level coverage of one response: best overlap against any
/// persona attribute. `0.0` for an empty persona.
pub fn a_cover(response: &str, persona: &Persona, model: &IdfModel) -> f64 {
    let response = token_set(response);
    persona
        .attributes()
        .iter()
        .map(|a| overlap_sets(&response, &token_set(&a.text), model))
        .fold(0.0, f64::max)
}

/// Profile-level coverage of a set of responses against the whole persona.
pub fn p_cover<S: AsRef<str>>(responses: &[S], persona: &Persona, model: &IdfModel) -> f64 {
    if persona.is_empty() || responses.is_empty() {
        return 0.0;
    }
    let joined_responses = responses.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    let joined_persona = persona.texts().join(" ");
    idf_overlap(&joined_responses, &joined_persona, model)
}

/// Best overlap of a single attribute text against the ground-truth persona.
pub fn attribute_alignment(attribute: &str, gt: &Persona, model: &IdfModel) -> f64 {
    let a = token_set(attribute);
    gt.attributes()
        .iter()
        .map(|g| overlap_sets(&a, &token_set(&g.text), model))
        .fold(0.0, f64::max)
}

/// Persona alignment: mean attribute alignment of `persona` against `gt`.
pub fn pa_score(persona: &Persona, gt: &Persona, model: &IdfModel) -> f64 {
    if persona.is_empty() || gt.is_empty() {
        return 0.0;
    }
    let total: f64 = persona
        .attributes()
        .iter()
        .map(|a| attribute_alignment(&a.text, gt, model))
        .sum();
    total / persona.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::{AttributeOrigin, PersonaCategory, Role};

    const LN2: f64 = std::f64::consts::LN_2;

    fn persona(texts: &[&str]) -> Persona {
        Persona::from_pairs(
            Role::Agent,
            AttributeOrigin::Initial,
            texts.iter().map(|t| (PersonaCategory::OtherExperiences, *t)),
        )
        .unwrap()
    }

    /// Every token below appears in exactly one of two documents, so each
    /// has idf ln 2.
    fn flat_model() -> IdfModel {
        IdfModel::build(["loves big dogs hates small", "are great"]).unwrap()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Hello, World!  it's 3pm"), ["hello", "world", "it", "s", "3pm"]);
        assert!(tokenize(" ,.; ").is_empty());
        let once = tokenize("A-b c");
        assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn idf_hand_values() {
        let m = IdfModel::build(["a b", "a c"]).unwrap();
        assert_eq!(m.idf("a"), 0.0);
        assert!((m.idf("b") - LN2).abs() < 1e-12);
        assert!((m.idf("c") - 0.6931).abs() < 1e-4);
        assert!((m.idf("z") - LN2).abs() < 1e-12);
        assert_eq!(IdfModel::build(Vec::<String>::new()), Err(MetricError::EmptyCorpus));
    }

    #[test]
    fn idf_overlap_cases() {
        let m = flat_model();
        assert_eq!(idf_overlap("loves big dogs", "loves big dogs", &m), 1.0);
        assert_eq!(idf_overlap("loves big", "are great", &m), 0.0);
        assert!((idf_overlap("loves big dogs", "dogs are great", &m) - 1.0 / 3.0).abs() < 1e-12);
        // zero-mass first argument
        let m = IdfModel::build(["a", "a"]).unwrap();
        assert_eq!(idf_overlap("a", "a", &m), 0.0);
    }

    #[test]
    fn a_cover_takes_max() {
        let m = IdfModel::build(["w", "x", "y", "z"]).unwrap();
        let p = persona(&["w", "x y z"]);
        assert!((a_cover("w x y z", &p, &m) - 0.75).abs() < 1e-12);
        assert_eq!(a_cover("w", &persona(&["w"]), &m), 1.0);
        assert_eq!(a_cover("q", &p, &m), 0.0);
        assert_eq!(a_cover("w", &Persona::new(Role::Agent), &m), 0.0);
    }

    #[test]
    fn p_cover_hand_fixture() {
        let m = IdfModel::build(["alpha", "beta", "gamma", "delta"]).unwrap();
        let p = persona(&["alpha", "gamma"]);
        assert!((p_cover(&["alpha beta", "gamma delta"], &p, &m) - 0.5).abs() < 1e-12);
        assert_eq!(p_cover(&["alpha"], &persona(&["alpha"]), &m), 1.0);
        assert_eq!(p_cover(&["zeta"], &p, &m), 0.0);
        assert_eq!(p_cover(&["alpha"], &Persona::new(Role::Agent), &m), 0.0);
    }

    #[test]
    fn pa_score_hand_fixture() {
        let m = flat_model();
        let gt = persona(&["loves big dogs", "dogs are great"]);
        let p = persona(&["loves big dogs", "hates small dogs"]);
        assert!((pa_score(&p, &gt, &m) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(pa_score(&gt, &gt, &m), 1.0);
        assert_eq!(pa_score(&persona(&["zebra"]), &gt, &m), 0.0);
        assert_eq!(pa_score(&Persona::new(Role::Agent), &gt, &m), 0.0);
        assert_eq!(pa_score(&p, &Persona::new(Role::Agent), &m), 0.0);
    }
}
