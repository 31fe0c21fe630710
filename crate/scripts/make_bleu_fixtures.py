#!/usr/bin/env python3
"""Reference BLEU used to freeze the fixture expectations.

Corpus-level BLEU-4 with clipped modified n-gram precision, add-one
smoothing on orders above unigram, and the standard brevity penalty,
reported on a 0..100 scale with one reference per hypothesis. Run once;
the output JSON is committed at crates/defmod/tests/fixtures/bleu_cases.json.
"""

import json
import math
import sys
from collections import Counter
from pathlib import Path


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hyps, refs, max_n=4):
    assert len(hyps) == len(refs)
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    for hyp, ref in zip(hyps, refs):
        for n in range(1, max_n + 1):
            hgrams = ngrams(hyp, n)
            rgrams = ngrams(ref, n)
            matched[n - 1] += sum(min(c, rgrams[g]) for g, c in hgrams.items())
            total[n - 1] += sum(hgrams.values())
    if total[0] == 0 or matched[0] == 0:
        return 0.0
    log_p = math.log(matched[0] / total[0])
    for n in range(2, max_n + 1):
        log_p += math.log((matched[n - 1] + 1.0) / (total[n - 1] + 1.0))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p / max_n)


PAIRS = [
    # exact match
    ("the cat sat on the mat", "the cat sat on the mat"),
    # one substitution
    ("the cat sat on a mat", "the cat sat on the mat"),
    # word order scrambled
    ("mat the on sat cat the", "the cat sat on the mat"),
    # short hypothesis, brevity penalty active
    ("the cat sat on", "the cat sat on the mat tonight"),
    # long hypothesis, no penalty
    ("the small cat sat on the mat near the door", "the cat sat on the mat"),
    # repeated tokens testing clipping
    ("the the the the cat cat", "the cat sat on the mat"),
    # partial 4-gram overlap
    ("a quick brown fox jumps over", "the quick brown fox jumps over a dog"),
    # no overlap at all
    ("alpha beta gamma delta", "one two three four"),
    # single shared unigram
    ("alpha beta gamma mat", "the cat sat on the mat"),
    # definitions-flavored output
    ("a person who is very important", "a person who is very important"),
    ("a person who is important", "a person who is very important"),
    ("a celestial object seen at night", "a small circle of light in the sky"),
    ("an act of restraining someone", "an act of restraining someone or something"),
    ("a piece of text written to be printed", "a piece of writing printed on paper"),
    ("the upper part of a human body", "the upper part of the human body"),
    ("the chief of an organization", "the chief part of an organization institution etc"),
    ("a written version of a book", "a written or printed version of a book"),
    ("not able to be seen", "not able to be seen clearly"),
    ("cause to be unable to think", "cause to be unable to think clearly"),
    ("a name for a person or thing", "a name for a person or thing that is not genuine"),
]
# keep exactly 20
PAIRS = PAIRS[:20]


def main():
    out = {"pairs": [], "corpus_expected": None}
    hyps, refs = [], []
    for hyp_s, ref_s in PAIRS:
        hyp, ref = hyp_s.split(), ref_s.split()
        hyps.append(hyp)
        refs.append(ref)
        out["pairs"].append({
            "hyp": hyp,
            "ref": ref,
            "expected": corpus_bleu([hyp], [ref]),
        })
    out["corpus_expected"] = corpus_bleu(hyps, refs)
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(
        __file__).resolve().parents[1] / "crates/defmod/tests/fixtures/bleu_cases.json"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps(out, indent=1) + "\n")
    print(f"wrote {len(out['pairs'])} pairs to {dest}")


if __name__ == "__main__":
    main()
