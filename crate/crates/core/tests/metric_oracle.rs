//! Library metrics against frozen values from tools/metric_oracle.py and
//! against a brute-force oracle written here without the library helpers.

use std::time::Instant;

use personaflow::metrics::{a_cover, bleu_n, distinct_n, p_cover, pa_score, rouge_l, IdfModel};
use personaflow::persona::{AttributeOrigin, Persona, PersonaCategory, Role};
use serde::Deserialize;

const TOL: f64 = 1e-9;

#[derive(Deserialize)]
struct Corpus {
    idf_corpus: Vec<String>,
    groups: Vec<Group>,
    corpus_distinct: Vec<f64>,
    corpus_bleu: Vec<f64>,
}

#[derive(Deserialize)]
struct Group {
    persona: Vec<String>,
    gt: Vec<String>,
    items: Vec<Item>,
    p_cover: f64,
    pa: f64,
    distinct: Vec<f64>,
    bleu: Vec<f64>,
}

#[derive(Deserialize)]
struct Item {
    response: String,
    reference: String,
    a_cover: f64,
    rouge_l: f64,
}

fn load() -> Corpus {
    serde_json::from_str(include_str!("../fixtures/metric_corpus.json")).unwrap()
}

fn persona(texts: &[String]) -> Persona {
    Persona::from_pairs(
        Role::Agent,
        AttributeOrigin::Annotation,
        texts.iter().map(|t| (PersonaCategory::OtherExperiences, t.as_str())),
    )
    .unwrap()
}

mod oracle {
    // Quadratic scans, String keys and recursion throughout.
    use std::collections::HashMap;

    pub fn tokens(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = String::new();
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                cur.extend(ch.to_lowercase());
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out
    }

    fn uniq(text: &str) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for t in tokens(text) {
            if !v.contains(&t) {
                v.push(t);
            }
        }
        v
    }

    pub fn idf(docs: &[String], w: &str) -> f64 {
        let n = docs.len() as f64;
        let df = docs.iter().filter(|d| tokens(d).iter().any(|t| t == w)).count();
        if df == 0 {
            n.ln()
        } else {
            (n / df as f64).ln()
        }
    }

    pub fn overlap(x: &str, y: &str, docs: &[String]) -> f64 {
        let ys = uniq(y);
        let mut num = 0.0;
        let mut den = 0.0;
        for w in uniq(x) {
            let v = idf(docs, &w);
            den += v;
            if ys.contains(&w) {
                num += v;
            }
        }
        if den <= 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn a_cover(r: &str, persona: &[String], docs: &[String]) -> f64 {
        persona.iter().map(|a| overlap(r, a, docs)).fold(0.0, f64::max)
    }

    pub fn p_cover(rs: &[String], persona: &[String], docs: &[String]) -> f64 {
        if rs.is_empty() || persona.is_empty() {
            return 0.0;
        }
        overlap(&rs.join(" "), &persona.join(" "), docs)
    }

    pub fn pa(persona: &[String], gt: &[String], docs: &[String]) -> f64 {
        if persona.is_empty() || gt.is_empty() {
            return 0.0;
        }
        persona.iter().map(|a| a_cover(a, gt, docs)).sum::<f64>() / persona.len() as f64
    }

    fn grams(text: &str, n: usize) -> Vec<String> {
        let t = tokens(text);
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].join("\u{1}")).collect()
    }

    pub fn distinct(texts: &[String], n: usize) -> f64 {
        let all: Vec<String> = texts.iter().flat_map(|t| grams(t, n)).collect();
        if all.is_empty() {
            return 0.0;
        }
        let mut seen: Vec<&String> = Vec::new();
        for g in &all {
            if !seen.contains(&g) {
                seen.push(g);
            }
        }
        seen.len() as f64 / all.len() as f64
    }

    pub fn bleu(cands: &[String], refs: &[String], order: usize) -> f64 {
        let (mut cl, mut rl) = (0usize, 0usize);
        let mut logs = 0.0;
        for c in cands {
            cl += tokens(c).len();
        }
        for r in refs {
            rl += tokens(r).len();
        }
        if cl == 0 {
            return 0.0;
        }
        for n in 1..=order {
            let (mut m, mut t) = (0usize, 0usize);
            for (c, r) in cands.iter().zip(refs) {
                let mut rc: HashMap<String, usize> = HashMap::new();
                for g in grams(r, n) {
                    *rc.entry(g).or_default() += 1;
                }
                let cg = grams(c, n);
                for g in &cg {
                    t += 1;
                    if let Some(k) = rc.get_mut(g) {
                        if *k > 0 {
                            *k -= 1;
                            m += 1;
                        }
                    }
                }
            }
            let p = if m == 0 {
                if n == 1 {
                    return 0.0;
                }
                1.0 / (t as f64 + 1.0)
            } else {
                m as f64 / t as f64
            };
            logs += p.ln();
        }
        (1.0 - rl as f64 / cl as f64).min(0.0).exp() * (logs / order as f64).exp()
    }

    fn lcs(a: &[String], b: &[String], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return 0;
        }
        if let Some(v) = memo.get(&(a.len(), b.len())) {
            return *v;
        }
        let v = if a[0] == b[0] {
            1 + lcs(&a[1..], &b[1..], memo)
        } else {
            lcs(&a[1..], b, memo).max(lcs(a, &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), v);
        v
    }

    pub fn rouge_l(c: &str, r: &str) -> f64 {
        let (ct, rt) = (tokens(c), tokens(r));
        let k = lcs(&ct, &rt, &mut HashMap::new()) as f64;
        if k == 0.0 {
            return 0.0;
        }
        let (p, q) = (k / ct.len() as f64, k / rt.len() as f64);
        2.0 * p * q / (p + q)
    }
}

fn close(label: &str, got: f64, want: f64) {
    assert!((got - want).abs() <= TOL, "{label}: got {got}, want {want}");
}

#[test]
fn library_matches_frozen_and_brute_force_oracles() {
    let start = Instant::now();
    let corpus = load();
    let docs = &corpus.idf_corpus;
    let model = IdfModel::build(docs).unwrap();
    let pairs: usize = corpus.groups.iter().map(|g| g.items.len()).sum();
    assert!(pairs >= 50);

    let mut all_r = Vec::new();
    let mut all_ref = Vec::new();
    for (gi, g) in corpus.groups.iter().enumerate() {
        let p = persona(&g.persona);
        let gt = persona(&g.gt);
        let rs: Vec<String> = g.items.iter().map(|i| i.response.clone()).collect();
        let refs: Vec<String> = g.items.iter().map(|i| i.reference.clone()).collect();
        for (ii, it) in g.items.iter().enumerate() {
            let label = format!("group {gi} item {ii}");
            let lib = a_cover(&it.response, &p, &model);
            close(&format!("{label} a_cover/frozen"), lib, it.a_cover);
            close(&format!("{label} a_cover/oracle"), lib, oracle::a_cover(&it.response, &g.persona, docs));
            let lib = rouge_l(&it.response, &it.reference);
            close(&format!("{label} rouge_l/frozen"), lib, it.rouge_l);
            close(&format!("{label} rouge_l/oracle"), lib, oracle::rouge_l(&it.response, &it.reference));
        }
        let lib = p_cover(&rs, &p, &model);
        close(&format!("group {gi} p_cover/frozen"), lib, g.p_cover);
        close(&format!("group {gi} p_cover/oracle"), lib, oracle::p_cover(&rs, &g.persona, docs));
        let lib = pa_score(&p, &gt, &model);
        close(&format!("group {gi} pa/frozen"), lib, g.pa);
        close(&format!("group {gi} pa/oracle"), lib, oracle::pa(&g.persona, &g.gt, docs));
        for n in 1..=3 {
            let lib = distinct_n(&rs, n).unwrap();
            close(&format!("group {gi} distinct-{n}/frozen"), lib, g.distinct[n - 1]);
            close(&format!("group {gi} distinct-{n}/oracle"), lib, oracle::distinct(&rs, n));
            let lib = bleu_n(&rs, &refs, n).unwrap();
            close(&format!("group {gi} bleu-{n}/frozen"), lib, g.bleu[n - 1]);
            close(&format!("group {gi} bleu-{n}/oracle"), lib, oracle::bleu(&rs, &refs, n));
        }
        all_r.extend(rs);
        all_ref.extend(refs);
    }
    for n in 1..=3 {
        let lib = distinct_n(&all_r, n).unwrap();
        close(&format!("corpus distinct-{n}"), lib, corpus.corpus_distinct[n - 1]);
        close(&format!("corpus distinct-{n}/oracle"), lib, oracle::distinct(&all_r, n));
        let lib = bleu_n(&all_r, &all_ref, n).unwrap();
        close(&format!("corpus bleu-{n}"), lib, corpus.corpus_bleu[n - 1]);
        close(&format!("corpus bleu-{n}/oracle"), lib, oracle::bleu(&all_r, &all_ref, n));
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}
