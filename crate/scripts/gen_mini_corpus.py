#!/usr/bin/env python3
"""Generate the bundled mini sentiment corpus and its manifest.

Reviews are assembled from short templates with sentiment-bearing and
neutral vocabulary. A small fraction of reviews mix in words of the other
polarity, and a few labels are flipped, so the task is learnable but not
separable. Output is deterministic for a given seed.
"""

import argparse
import json
import random
from collections import Counter
from pathlib import Path

POSITIVE = [
    "wonderful", "moving", "brilliant", "charming", "delightful", "gripping",
    "funny", "heartfelt", "beautiful", "clever", "superb", "engaging",
    "touching", "stunning", "memorable", "fresh", "witty", "powerful",
    "excellent", "joyful", "tender", "smart", "lovely", "inspired",
]
NEGATIVE = [
    "boring", "dull", "clumsy", "tedious", "awful", "bland", "messy",
    "pointless", "lifeless", "predictable", "shallow", "tiresome", "weak",
    "forgettable", "silly", "painful", "flat", "overlong", "hollow",
    "confused", "stale", "dreary", "lazy", "grating",
]
SUBJECTS = [
    "the film", "this movie", "the plot", "the script", "the cast", "the lead",
    "the ending", "the soundtrack", "the direction", "the dialogue",
    "the pacing", "the story", "the acting", "the camera work",
]
NEUTRAL = [
    "really", "quite", "mostly", "often", "at times", "overall", "somehow",
    "frankly", "again", "still", "honestly", "throughout",
]
TEMPLATES = [
    "{s} is {n} {a}",
    "{s} feels {a} and {b}",
    "{n} {a} work from {s}",
    "i found {s} {a}",
    "{s} was {a} , {n} {b}",
    "what a {a} experience , {s} is {b}",
    "{s} turns out {n} {a}",
]


def review(rng, label, mix_rate):
    own, other = (POSITIVE, NEGATIVE) if label == 1 else (NEGATIVE, POSITIVE)
    parts = []
    for _ in range(rng.randint(1, 3)):
        pool_b = other if rng.random() < mix_rate else own
        parts.append(
            rng.choice(TEMPLATES).format(
                s=rng.choice(SUBJECTS),
                n=rng.choice(NEUTRAL),
                a=rng.choice(own),
                b=rng.choice(pool_b),
            )
        )
    if rng.random() < mix_rate:
        parts.append("but " + rng.choice(SUBJECTS) + " is " + rng.choice(other))
    text = " . ".join(parts)
    return text[0].upper() + text[1:] + "."


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--seed", type=int, default=20240517)
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=400)
    ap.add_argument("--mix-rate", type=float, default=0.3)
    ap.add_argument("--label-noise", type=float, default=0.05)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    rows = []
    for split, n in (("train", args.train), ("test", args.test)):
        for i in range(n):
            label = i % 2
            text = review(rng, label, args.mix_rate)
            if rng.random() < args.label_noise:
                label = 1 - label
            rows.append({"text": text, "label": label, "split": split})
    rng.shuffle(rows)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = out / "mini_sentiment.jsonl"
    with corpus.open("w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, sort_keys=True) + "\n")

    counts = Counter((r["split"], r["label"]) for r in rows)
    manifest = {
        "file": corpus.name,
        "format": "jsonl",
        "seed": args.seed,
        "records": len(rows),
        "train": args.train,
        "test": args.test,
        "train_positive": counts[("train", 1)],
        "train_negative": counts[("train", 0)],
        "test_positive": counts[("test", 1)],
        "test_negative": counts[("test", 0)],
        "mix_rate": args.mix_rate,
        "label_noise": args.label_noise,
    }
    (out / "mini_sentiment.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
