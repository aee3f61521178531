//! Hand-computed metric values.

use personaflow::metrics::{a_cover, bleu_n, distinct_n, idf_overlap, p_cover, pa_score, rouge_l, IdfModel};
use personaflow::persona::{AttributeOrigin, Persona, PersonaCategory, Role};

const LN2: f64 = std::f64::consts::LN_2;

fn persona(texts: &[&str]) -> Persona {
    Persona::from_pairs(
        Role::Agent,
        AttributeOrigin::Annotation,
        texts.iter().map(|t| (PersonaCategory::OtherExperiences, *t)),
    )
    .unwrap()
}

fn near(got: f64, want: f64) {
    assert!((got - want).abs() < 1e-4, "got {got}, want {want}");
}

#[test]
fn idf_table() {
    let m = IdfModel::build(["a b", "a c"]).unwrap();
    near(m.idf("a"), 0.0);
    near(m.idf("b"), LN2);
    near(m.idf("c"), LN2);
    near(m.idf("z"), LN2);
    assert!(IdfModel::build(Vec::<String>::new()).is_err());
}

#[test]
fn idf_overlap_one_third() {
    let m = IdfModel::build(["loves big dogs", "zzz"]).unwrap();
    near(idf_overlap("loves big dogs", "dogs are great", &m), 1.0 / 3.0);
    near(idf_overlap("loves big dogs", "loves big dogs", &m), 1.0);
    near(idf_overlap("loves", "zzz", &m), 0.0);
}

#[test]
fn a_cover_takes_max() {
    let m = IdfModel::build(["a b c d", "q"]).unwrap();
    near(a_cover("a b c d", &persona(&["a"]), &m), 0.25);
    near(a_cover("a b c d", &persona(&["a b c"]), &m), 0.75);
    near(a_cover("a b c d", &persona(&["a", "a b c"]), &m), 0.75);
    near(a_cover("a b c d", &Persona::new(Role::Agent), &m), 0.0);
}

#[test]
fn p_cover_half() {
    let m = IdfModel::build(["a b c d", "q"]).unwrap();
    near(p_cover(&["a b", "c d"], &persona(&["a", "b"]), &m), 0.5);
    near(p_cover(&["a"], &persona(&["a"]), &m), 1.0);
}

#[test]
fn pa_two_thirds() {
    let m = IdfModel::build(["loves big dogs", "cats"]).unwrap();
    near(pa_score(&persona(&["loves big dogs", "cats"]), &persona(&["dogs are great", "cats"]), &m), 2.0 / 3.0);
}

#[test]
fn distinct_bigrams() {
    near(distinct_n(&["the cat sat the cat"], 2).unwrap(), 0.75);
    near(distinct_n(&["a a a"], 1).unwrap(), 1.0 / 3.0);
}

#[test]
fn bleu_brevity() {
    near(bleu_n(&["the cat"], &["the cat sat"], 1).unwrap(), 0.6065);
    near(bleu_n(&["x y"], &["a b"], 1).unwrap(), 0.0);
    assert!(bleu_n(&["a"], &["a", "b"], 1).is_err());
}

#[test]
fn rouge_l_point_eight() {
    near(rouge_l("a b c", "a c"), 0.8);
}
