"""Offline stand-in for the census income table.

Rows mimic the raw CSV layout (strings for categories, numbers for the
rest) so that the synthetic data goes through the same ingestion path as
a real file. Group membership shifts both the features and the label
rate, so an unconstrained classifier is clearly unfair.
"""
from __future__ import annotations

import numpy as np

HEADER = [
    "age", "education-num", "hours-per-week", "capital-gain", "fnlwgt",
    "workclass", "occupation", "relationship", "sex", "income",
]
WORKCLASS = ["Private", "Self-emp", "Gov", "Other"]
OCCUPATION = ["Exec", "Craft", "Sales", "Service", "Clerical", "Tech"]
SINGLE = ["Not-in-family", "Own-child", "Unmarried"]


def surrogate_rows(n: int = 20_000, seed: int = 0) -> list[list[str]]:
    """``n`` rows with ``sex`` as the protected column and ``income`` as the label."""
    rng = np.random.default_rng(seed)
    male = rng.random(n) < 0.67
    # latent earning potential; the group enters directly and through occupation
    latent = rng.normal(size=n) + 1.0 * male
    occ_logits = np.stack([0.6 * latent + (0.5 if j in (0, 1, 5) else -0.3) * male for j in range(len(OCCUPATION))], 1)
    occ_logits += rng.gumbel(size=occ_logits.shape)
    occupation = occ_logits.argmax(axis=1)
    age = np.clip(38 + 8 * latent + rng.normal(0, 10, n), 17, 90).round()
    edu = np.clip(10 + 1.5 * latent + rng.normal(0, 2, n), 1, 16).round()
    hours = np.clip(40 + 4 * latent + 4 * male + rng.normal(0, 10, n), 1, 99).round()
    gain = np.where(rng.random(n) < 0.08 + 0.05 * (latent > 1), np.exp(rng.normal(8, 1, n)), 0.0).round()
    fnlwgt = rng.integers(20_000, 500_000, n)
    workclass = rng.choice(len(WORKCLASS), size=n, p=[0.7, 0.1, 0.13, 0.07])
    # marriage is reported as Husband/Wife, a strong proxy for the group
    married = rng.random(n) < 1.0 / (1.0 + np.exp(-(0.5 * latent + np.where(male, 0.3, -1.2))))
    single = rng.integers(0, len(SINGLE), n)
    score = (
        -3.4 + 1.8 * latent + 0.25 * (edu - 10) + 0.02 * (hours - 40) + 0.6 * (gain > 0)
        + 0.5 * np.isin(occupation, (0, 5)) + 0.5 * male + 1.2 * married
    )
    income = rng.random(n) < 1.0 / (1.0 + np.exp(-score))
    rows = []
    for i in range(n):
        rows.append([
            str(int(age[i])),
            str(int(edu[i])),
            str(int(hours[i])),
            str(int(gain[i])),
            str(int(fnlwgt[i])),
            WORKCLASS[workclass[i]],
            OCCUPATION[occupation[i]],
            ("Husband" if male[i] else "Wife") if married[i] else SINGLE[single[i]],
            "Male" if male[i] else "Female",
            ">50K" if income[i] else "<=50K",
        ])
    return rows
