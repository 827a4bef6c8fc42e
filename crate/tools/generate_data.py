#!/usr/bin/env python3
"""Generate the bundled stand-in datasets.

The original studies used two public tabular datasets that are not shipped
here. This script synthesizes statistical stand-ins with the same shape,
class balance, feature names, and (for the blood panel) approximately the
same label point-biserial correlations, so the pipeline's behavior and the
bundled experiment results stay representative. Regenerate with:

    python3 tools/generate_data.py

Deterministic: fixed RNG seed, fixed row order.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "data"

# ---------------------------------------------------------------- blood ---

# Class-conditional moments (healthy, cancer): mean, std per feature, on a
# log scale for the strictly positive, skewed biomarkers.
BLOOD_SPEC = {
    # name: (healthy_mean, healthy_sd, cancer_mean, cancer_sd, lognormal)
    "Age": (58.0, 19.0, 57.0, 13.5, False),
    "BMI": (28.3, 5.4, 27.0, 4.6, False),
    "Glucose": (88.2, 8.8, 106.0, 26.6, False),
    "Insulin": (1.80, 0.55, 2.02, 0.72, True),
    "Leptin": (3.00, 0.70, 3.05, 0.73, True),
    "Adiponectin": (2.20, 0.55, 2.15, 0.60, True),
    "Resistin": (2.30, 0.38, 2.57, 0.58, True),
    "MCP.1": (6.10, 0.55, 6.25, 0.60, True),
}
N_HEALTHY, N_CANCER = 53, 63


def gen_blood(rng: np.random.Generator) -> str:
    rows = []
    for label, n in (("Healthy", N_HEALTHY), ("Cancerous", N_CANCER)):
        cols = {}
        for name, (mh, sh, mc, sc, logn) in BLOOD_SPEC.items():
            m, s = (mh, sh) if label == "Healthy" else (mc, sc)
            v = rng.normal(m, s, size=n)
            if logn:
                v = np.exp(v)
            cols[name] = v
        cols["Age"] = np.clip(np.round(cols["Age"]), 24, 89)
        cols["BMI"] = np.clip(cols["BMI"], 16.0, 40.0)
        cols["Glucose"] = np.clip(np.round(cols["Glucose"]), 60, 201)
        cols["HOMA"] = cols["Glucose"] * cols["Insulin"] / 405.0
        for i in range(n):
            rows.append((label, cols))
        # materialize per-row tuples
        rows[-n:] = [
            (
                label,
                [cols[f][i] for f in FEATURES],
            )
            for i in range(n)
        ]
    order = rng.permutation(len(rows))
    # Keep a healthy row first so downstream label ids are stable
    # (labels are assigned in first-appearance order).
    first_healthy = next(i for i in order if rows[i][0] == "Healthy")
    order = [first_healthy] + [i for i in order if i != first_healthy]
    lines = [",".join(FEATURES + ["Classification"])]
    for i in order:
        label, vals = rows[i]
        cells = []
        for name, v in zip(FEATURES, vals):
            if name in ("Age", "Glucose"):
                cells.append(f"{v:.0f}")
            else:
                cells.append(f"{v:.6f}")
        lines.append(",".join(cells + [label]))
    return "\n".join(lines) + "\n"


FEATURES = [
    "Age",
    "BMI",
    "Glucose",
    "Insulin",
    "HOMA",
    "Leptin",
    "Adiponectin",
    "Resistin",
    "MCP.1",
]

# ------------------------------------------------------------------ EIT ---

EIT_FEATURES = ["I0", "PA500", "HFS", "DA", "AREA", "A/DA", "MAX IP", "DR", "P"]
EIT_COUNTS = {"car": 21, "fad": 15, "mas": 18, "gla": 16, "con": 14, "adi": 22}

# Log-scale class centers per feature, loosely shaped after published
# impedance-spectroscopy summaries: carcinoma has low I0 but high phase
# angle / spectral area; connective and adipose sit far away with huge I0.
EIT_CENTERS = {
    #        I0    PA500  HFS    DA    AREA  A/DA  MAXIP  DR    P
    "car": (5.55, -2.40, -2.67, 3.78, 6.31, 2.45, 3.25, 3.65, 5.82),
    "fad": (5.60, -3.10, -3.00, 3.00, 4.60, 1.60, 2.50, 2.80, 5.70),
    "mas": (5.75, -2.85, -2.85, 3.25, 5.10, 1.90, 2.70, 3.05, 5.85),
    "gla": (5.65, -2.95, -2.75, 3.15, 4.95, 1.80, 2.65, 3.00, 5.80),
    "con": (7.00, -3.60, -3.40, 4.40, 6.20, 1.80, 3.40, 4.30, 7.10),
    "adi": (7.60, -4.10, -3.80, 4.90, 6.90, 2.00, 3.80, 4.80, 7.70),
}
EIT_SD = (0.45, 0.40, 0.45, 0.50, 0.70, 0.50, 0.55, 0.50, 0.45)


def gen_eit(rng: np.random.Generator) -> str:
    rows = []
    for cls, n in EIT_COUNTS.items():
        centers = EIT_CENTERS[cls]
        for _ in range(n):
            vals = [
                float(np.exp(rng.normal(c, s)))
                for c, s in zip(centers, EIT_SD)
            ]
            rows.append((cls, vals))
    order = rng.permutation(len(rows))
    lines = [",".join(EIT_FEATURES + ["Class"])]
    for i in order:
        cls, vals = rows[i]
        lines.append(",".join(f"{v:.6f}" for v in vals) + f",{cls}")
    return "\n".join(lines) + "\n"


def main() -> None:
    OUT.mkdir(exist_ok=True)
    rng = np.random.default_rng(20260823)
    (OUT / "blood_biomarkers.csv").write_text(gen_blood(rng))
    (OUT / "eit_breast_tissue.csv").write_text(gen_eit(rng))
    # Quick self-check: label correlations for the blood panel.
    import csv

    with open(OUT / "blood_biomarkers.csv") as f:
        reader = list(csv.DictReader(f))
    y = np.array([1.0 if r["Classification"] == "Cancerous" else 0.0 for r in reader])
    for name in ("Glucose", "Insulin", "HOMA", "Resistin"):
        x = np.array([float(r[name]) for r in reader])
        r = np.corrcoef(x, y)[0, 1]
        print(f"label corr {name}: {r:+.3f}")
    print(f"blood rows: {len(reader)} (cancer {int(y.sum())})")


if __name__ == "__main__":
    main()
