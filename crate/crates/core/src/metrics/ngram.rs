use std::collections::{HashMap, HashSet};

use super::{tokenize, MetricError};

pub fn ngrams(tokens: &[String], n: usize) -> Vec<&[String]> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).collect()
}

/// Distinct-n: unique n-grams over total n-grams, pooled across texts.
/// N-grams never span two texts.
pub fn distinct_n<S: AsRef<str>>(texts: &[S], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::InvalidOrder);
    }
    let tokenized: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t.as_ref())).collect();
    let mut total = 0usize;
    let mut unique: HashSet<&[String]> = HashSet::new();
    for tokens in &tokenized {
        for gram in ngrams(tokens, n) {
            total += 1;
            unique.insert(gram);
        }
    }
    Ok(if total == 0 { 0.0 } else { unique.len() as f64 / total as f64 })
}

fn counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    for gram in ngrams(tokens, n) {
        *out.entry(gram).or_insert(0) += 1;
    }
    out
}

/// Corpus-level BLEU with uniform weights over orders `1..=max_order`.
///
/// Modified precisions are clipped per sentence and pooled over the corpus.
/// An order >= 2 with zero matches is smoothed to `(0 + 1) / (total + 1)`.
/// Brevity penalty is `exp(min(0, 1 - ref_len / cand_len))`.
pub fn bleu_n<S: AsRef<str>, R: AsRef<str>>(candidates: &[S], references: &[R], max_order: usize) -> Result<f64, MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if max_order == 0 {
        return Err(MetricError::InvalidOrder);
    }
    let mut matched = vec![0usize; max_order];
    let mut total = vec![0usize; max_order];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        let cand = tokenize(cand.as_ref());
        let reference = tokenize(reference.as_ref());
        cand_len += cand.len();
        ref_len += reference.len();
        for order in 1..=max_order {
            let ref_counts = counts(&reference, order);
            for (gram, count) in counts(&cand, order) {
                matched[order - 1] += count.min(ref_counts.get(gram).copied().unwrap_or(0));
                total[order - 1] += count;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for order in 0..max_order {
        let precision = if matched[order] == 0 {
            if order == 0 {
                return Ok(0.0);
            }
            1.0 / (total[order] as f64 + 1.0)
        } else {
            matched[order] as f64 / total[order] as f64
        };
        log_sum += precision.ln();
    }
    let brevity = (1.0 - ref_len as f64 / cand_len as f64).min(0.0).exp();
    Ok(brevity * (log_sum / max_order as f64).exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 over tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    let lcs = lcs_len(&cand, &reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_hand_values() {
        assert!((distinct_n(&["a a a"], 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&["the cat sat the cat"], 2).unwrap(), 0.75);
        assert_eq!(distinct_n(&["one two three"], 1).unwrap(), 1.0);
        assert_eq!(distinct_n(&["one"], 2).unwrap(), 0.0);
        assert_eq!(distinct_n(&["x"], 0), Err(MetricError::InvalidOrder));
        // grams do not cross text boundaries
        assert_eq!(distinct_n(&["a b", "a b"], 2).unwrap(), 0.5);
    }

    #[test]
    fn bleu_hand_values() {
        for n in 1..=3 {
            assert!((bleu_n(&["the cat sat on the mat"], &["the cat sat on the mat"], n).unwrap() - 1.0).abs() < 1e-12);
        }
        assert_eq!(bleu_n(&["dog"], &["the cat"], 1).unwrap(), 0.0);
        let short = bleu_n(&["the cat"], &["the cat sat"], 1).unwrap();
        assert!((short - (-0.5f64).exp()).abs() < 1e-12);
        assert!((short - 0.6065).abs() < 1e-4);
        assert!(bleu_n(&["a"], &["a", "b"], 1).is_err());
    }

    #[test]
    fn bleu_smoothing_on_zero_higher_order() {
        // unigrams all match, no bigram matches: p1 = 1, p2 = 1/(2+1)
        let v = bleu_n(&["b a c"], &["a b c"], 2).unwrap();
        assert!((v - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rouge_hand_values() {
        assert_eq!(rouge_l("a b c", "a b c"), 1.0);
        assert_eq!(rouge_l("a b", "c d"), 0.0);
        assert!((rouge_l("a b c", "a c") - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l("", "a"), 0.0);
    }
}
