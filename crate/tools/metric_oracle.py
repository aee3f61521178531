"""Independent reference implementation of the evaluation metrics.

Regenerates crates/core/fixtures/metric_corpus.json: a seeded corpus of
response/reference/persona items plus the values computed here. The Rust
test suite compares the library against these frozen numbers.
"""
import json
import math
import random
import sys
from collections import Counter

WORDS = """i you we they my your feel tired work job boss debt money friend friends
family mother father sister brother home house city move moved lonely anxious calm
run running walk dog cat cook cooking sleep night nights shift nurse teacher engineer
it software business small cleaning retired school college degree study studying
hope plan plans change career divorced married single kids child children stress
lost layoffs accident insomnia meditate journal garden café résumé 2020 30 3am""".split()

PERSONA_POOL = [
    "works in IT", "possibly around 30 years old", "facing debts", "freelancer",
    "previously owned a small housecleaning business", "supportive", "understanding",
    "retired nurse", "runs every morning", "lives in Ohio", "recently divorced",
    "single parent of two kids", "studying accounting online", "keeps a journal",
    "lost a job during layoffs", "meditates before bed", "moved to the city in 2020",
    "works night shifts", "has a dog", "cooks on Sundays", "anxious", "calm",
    "hopes to change careers", "dropped out of college", "café owner", "updates résumé often",
]


def tokenize(text):
    out, cur = [], []
    for ch in text:
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur).lower())
            cur = []
    if cur:
        out.append("".join(cur).lower())
    return out


class Idf:
    def __init__(self, docs):
        self.n = len(docs)
        self.sets = [set(tokenize(d)) for d in docs]

    def idf(self, w):
        df = sum(1 for s in self.sets if w in s)
        return math.log(self.n / df) if df else math.log(self.n)


def overlap(x, y, m):
    xs, ys = set(tokenize(x)), set(tokenize(y))
    den = sum(m.idf(w) for w in xs)
    if den <= 0:
        return 0.0
    return sum(m.idf(w) for w in xs if w in ys) / den


def a_cover(resp, persona, m):
    return max([overlap(resp, a, m) for a in persona], default=0.0)


def p_cover(resps, persona, m):
    if not persona or not resps:
        return 0.0
    return overlap(" ".join(resps), " ".join(persona), m)


def pa(persona, gt, m):
    if not persona or not gt:
        return 0.0
    return sum(max(overlap(a, g, m) for g in gt) for a in persona) / len(persona)


def grams(toks, n):
    return [tuple(toks[i:i + n]) for i in range(len(toks) - n + 1)]


def distinct(texts, n):
    allg = [g for t in texts for g in grams(tokenize(t), n)]
    return len(set(allg)) / len(allg) if allg else 0.0


def bleu(cands, refs, order):
    matched, total = [0] * order, [0] * order
    cl = rl = 0
    for c, r in zip(cands, refs):
        ct, rt = tokenize(c), tokenize(r)
        cl += len(ct)
        rl += len(rt)
        for n in range(1, order + 1):
            cc, rc = Counter(grams(ct, n)), Counter(grams(rt, n))
            for g, k in cc.items():
                matched[n - 1] += min(k, rc[g])
                total[n - 1] += k
    if cl == 0:
        return 0.0
    logs = 0.0
    for i in range(order):
        if matched[i] == 0:
            if i == 0:
                return 0.0
            p = 1.0 / (total[i] + 1)
        else:
            p = matched[i] / total[i]
        logs += math.log(p)
    bp = math.exp(min(0.0, 1 - rl / cl))
    return bp * math.exp(logs / order)


def lcs(a, b):
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) - 1, -1, -1):
        for j in range(len(b) - 1, -1, -1):
            table[i][j] = table[i + 1][j + 1] + 1 if a[i] == b[j] else max(table[i + 1][j], table[i][j + 1])
    return table[0][0]


def rouge_l(c, r):
    ct, rt = tokenize(c), tokenize(r)
    k = lcs(ct, rt)
    if k == 0:
        return 0.0
    p, q = k / len(ct), k / len(rt)
    return 2 * p * q / (p + q)


def sentence(rng, persona):
    words = [rng.choice(WORDS) for _ in range(rng.randint(0, 12))]
    if persona and rng.random() < 0.6:
        words.insert(rng.randint(0, len(words)), rng.choice(persona))
    sep = rng.choice([" ", " ", ", ", "! ", "... "])
    return sep.join(words)


def main(path):
    rng = random.Random(20241017)
    groups = []
    for g in range(12):
        persona = rng.sample(PERSONA_POOL, rng.randint(0 if g == 0 else 1, 5))
        gt = rng.sample(PERSONA_POOL, rng.randint(1, 5))
        items = [{"response": sentence(rng, persona), "reference": sentence(rng, gt)} for _ in range(5)]
        groups.append({"persona": persona, "gt": gt, "items": items})
    groups[1]["items"][0]["response"] = ""
    groups[2]["items"][0] = {"response": "Works in IT!", "reference": "works   in it"}
    m = Idf(PERSONA_POOL)
    for grp in groups:
        resps = [it["response"] for it in grp["items"]]
        refs = [it["reference"] for it in grp["items"]]
        for it in grp["items"]:
            it["a_cover"] = a_cover(it["response"], grp["persona"], m)
            it["rouge_l"] = rouge_l(it["response"], it["reference"])
        grp["p_cover"] = p_cover(resps, grp["persona"], m)
        grp["pa"] = pa(grp["persona"], grp["gt"], m)
        grp["distinct"] = [distinct(resps, n) for n in (1, 2, 3)]
        grp["bleu"] = [bleu(resps, refs, n) for n in (1, 2, 3)]
    all_resps = [it["response"] for g in groups for it in g["items"]]
    all_refs = [it["reference"] for g in groups for it in g["items"]]
    out = {
        "idf_corpus": PERSONA_POOL,
        "groups": groups,
        "corpus_distinct": [distinct(all_resps, n) for n in (1, 2, 3)],
        "corpus_bleu": [bleu(all_resps, all_refs, n) for n in (1, 2, 3)],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(out, f, ensure_ascii=False, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main(sys.argv[1])
