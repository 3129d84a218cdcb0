#!/usr/bin/env python3
"""Regenerates the bundled sample data under data/.

    python3 tools/gen_data.py [--out data]

Outputs are deterministic: a fixed seed drives every draw.
"""

import argparse
import math
import random
from pathlib import Path

ADJECTIVES = {"awful": 0, "bad": 1, "okay": 2, "good": 3, "great": 4}
NEGATED = {0: 3, 1: 3, 2: 1, 3: 1, 4: 1}
SUBJECTS = [
    (("the", "DT"), ("movie", "NN")),
    (("the", "DT"), ("food", "NN")),
    (("this", "DT"), ("phone", "NN")),
    (("amobee", "NNP"),),
    (("the", "DT"), ("show", "NN")),
]


def leaf(token, cat, label, entity=False):
    return f"({label}#{cat}#{int(entity)} {token})"


def node(cat, label, left, right, entity=False):
    return f"({label}#{cat}#{int(entity)} {left} {right})"


def toy_tree(subject, adjective, negated):
    entity = subject[0][0] == "amobee"
    if len(subject) == 1:
        np_ = leaf(subject[0][0], subject[0][1], 2, entity)
    else:
        np_ = node("NP", 2, leaf(*subject[0], 2), leaf(*subject[1], 2))
    value = ADJECTIVES[adjective]
    adj = leaf(adjective, "JJ", value)
    if negated:
        value = NEGATED[value]
        adj = node("ADJP", value, leaf("not", "RB", 2), adj)
    vp = node("VP", value, leaf("is", "VBZ", 2), adj)
    return node("S", value, np_, vp, entity)


def toy_treebank():
    rng = random.Random(7)
    combos = [(s, a, n) for s in range(len(SUBJECTS)) for a in ADJECTIVES for n in (False, True)]
    rng.shuffle(combos)
    return [toy_tree(SUBJECTS[s], a, n) for s, a, n in combos[:20]]


ENTITIES = ["amobee", "apple", "tesla", "netflix", "starbucks", "nike", "uber", "spotify"]
WORDS = {
    0: ["terrible", "awful", "worst", "hate"],
    1: ["bad", "meh", "slow", "annoying"],
    2: ["today", "update", "news", "store"],
    3: ["good", "nice", "solid", "like"],
    4: ["amazing", "awesome", "best", "love"],
}
FLAGS = ["in_subject", "in_object", "pos_adjective", "neg_adjective", "negation", "quotation", "perfect_progressive"]


def softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [v / s for v in e]


def base_dist(rng, gold, sharpness, noise):
    return softmax([-sharpness * abs(c - gold) + rng.gauss(0.0, noise) for c in range(5)])


def tweet(rng, gold, entity):
    words = [rng.choice(WORDS[gold]), rng.choice(WORDS[2])]
    rng.shuffle(words)
    flags = []
    if rng.random() < 0.5:
        text = f"{entity.capitalize()} {words[0]} {words[1]}"
        flags.append("in_subject")
    else:
        text = f"{words[0]} {words[1]} with @{entity}"
        flags.append("in_object")
    if rng.random() < (0.6 if gold >= 3 else 0.15):
        flags.append("pos_adjective")
    if rng.random() < (0.6 if gold <= 1 else 0.15):
        flags.append("neg_adjective")
    if rng.random() < 0.15:
        text = "not " + text
        flags.append("negation")
    if rng.random() < 0.1:
        text = f'"{text}"'
        flags.append("quotation")
    if rng.random() < 0.1:
        text += " http://t.co/x"
    return text, [f for f in FLAGS if f in flags]


def split_rows(rng, n, offset, shift):
    rows = []
    for i in range(n):
        entity = ENTITIES[i % len(ENTITIES)]
        lean = (ENTITIES.index(entity) % 5) - 2
        gold = max(0, min(4, round(2 + 0.6 * lean + shift + rng.gauss(0.0, 1.1))))
        text, flags = tweet(rng, gold, entity)
        dists = [base_dist(rng, gold, s, n_) for s, n_ in ((0.6, 1.2), (0.4, 1.5), (0.8, 2.0))]
        rows.append((f"t{offset + i:04d}", entity, gold, text, flags, dists))
    return rows


def fmt(p):
    return "\t".join(repr(v) for v in p)


def write_split(out, name, rows):
    with open(out / f"{name}.tsv", "w") as f:
        for rid, entity, gold, text, flags, _ in rows:
            f.write(f"{rid}\t{entity}\t{gold - 2}\t{text}\t{','.join(flags)}\n")
    for m in range(3):
        with open(out / f"{name}_model{m + 1}.tsv", "w") as f:
            for rid, *_, dists in rows:
                f.write(f"{rid}\t{fmt(dists[m])}\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "toy_treebank.txt").write_text("\n".join(toy_treebank()) + "\n")

    syn = out / "synthetic"
    syn.mkdir(exist_ok=True)
    rng = random.Random(2017)
    write_split(syn, "train", split_rows(rng, 140, 0, 0.0))
    write_split(syn, "test", split_rows(rng, 60, 140, 0.5))


if __name__ == "__main__":
    main()
