#!/usr/bin/env python3
"""Regenerates the committed golden files with independent tooling.

mapping.tsv: expected answer for every shipped (domain, salt, key), from
hashlib.md5. Keys are re-derived here from the key-generation rule rather
than read from the Rust code.

stats_fixture.json: paired-sample statistics from scipy.
"""
import hashlib
import json
import math
import os
import sys

from scipy import stats

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "precept", "goldens")

DOMAINS = {
    "logistics": (
        ["ASIA", "EURO", "AMER", "INTL", "FAST", "ECON", "SAFE", "BULK"],
        4,
        ["ningbo", "hamburg", "rotterdam", "singapore"],
    ),
    "booking": (
        ["CANCEL", "RISK", "INTL", "ASIA", "EURO", "AUDIT", "FAST", "ECON", "BULK", "COST", "REDEYE", "LAYOVER", "GROUP"],
        17,
        ["fl-103", "fl-111", "fl-117"],
    ),
    "integration": (
        ["AUTH", "SECURE", "AUDIT", "HIPAA", "EURO", "SPEED", "COST", "BULK", "WEBHOOK", "SYNC"],
        6,
        ["salesforce-backup", "hubspot-v2"],
    ),
}
N = 5
SALTS = [0, 1]


def prefix(text):
    return int(hashlib.md5(text.encode()).hexdigest()[:8], 16)


def keys(domain, vocab, count, start, avoid):
    seen = set(avoid)
    out = []
    for i in range(start, start + count):
        retry = 0
        while True:
            tag = str(i) if retry == 0 else f"{i}#{retry}"
            ranked = sorted((prefix(f"keygen:{domain}:{tag}:{t}"), t) for t in vocab)
            key = "+".join(sorted(t for _, t in ranked[:N]))
            if key not in seen:
                seen.add(key)
                out.append(key)
                break
            retry += 1
    return out


def mapping():
    rows = []
    for domain, (vocab, e, valid) in DOMAINS.items():
        unique = keys(domain, vocab, e, 0, [])
        holdout = keys(domain, vocab, e, e, unique)
        for salt in SALTS:
            for key in unique + holdout:
                rows.append((domain, salt, key, valid[prefix(f"{salt}:{key}") % len(valid)]))
    with open(os.path.join(OUT, "mapping.tsv"), "w") as f:
        f.write("domain\tsalt\tkey\texpected\n")
        for r in rows:
            f.write("\t".join(map(str, r)) + "\n")


def fixture():
    a = [1.0, 0.75, 1.0, 1.0, 0.5, 1.0, 0.75, 1.0, 1.0, 0.75]
    b = [0.5, 0.25, 0.75, 0.5, 0.25, 0.5, 0.5, 0.75, 0.25, 0.5]
    n = len(a)
    t, p = stats.ttest_rel(a, b)
    sa, sb = stats.tstd(a), stats.tstd(b)
    pooled = math.sqrt(((n - 1) * sa**2 + (n - 1) * sb**2) / (2 * n - 2))
    d = (sum(a) / n - sum(b) / n) / pooled
    ci = stats.t.ppf(0.975, n - 1) * sa / math.sqrt(n)
    data = {
        "a": a,
        "b": b,
        "t": float(t),
        "p": float(p),
        "cohens_d": d,
        "ci95_halfwidth_a": float(ci),
        "t_critical": {str(df): float(stats.t.ppf(0.975, df)) for df in (8, 9, 29)},
    }
    with open(os.path.join(OUT, "stats_fixture.json"), "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    os.makedirs(OUT, exist_ok=True)
    mapping()
    fixture()
    sys.exit(0)
