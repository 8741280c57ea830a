"""Writes the synthetic end-to-end fixture: 200 rows from two 6-d Gaussians,
a logistic model fitted to them, and the matching schema."""

import argparse
import json
from pathlib import Path

import numpy as np

SEPARATION = np.array([2.0, 1.5, 1.0, 0.5, 0.25, 0.1])
NAMES = [f"x{j + 1}" for j in range(6)]


def fit_logistic(x, y, l2=1e-2, iters=50):
    """Newton's method on the mean log loss with a small ridge term."""
    a = np.hstack([x, np.ones((len(x), 1))])
    w = np.zeros(a.shape[1])
    reg = l2 * np.eye(a.shape[1])
    reg[-1, -1] = 0.0
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-a @ w))
        grad = a.T @ (p - y) / len(y) + reg @ w
        hess = (a.T * (p * (1.0 - p))) @ a / len(y) + reg
        w -= np.linalg.solve(hess, grad)
    return w[:-1], w[-1]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="tests/fixtures/synthetic")
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(args.seed)
    x0 = rng.normal(0.0, 1.0, size=(100, 6))
    x1 = rng.normal(SEPARATION, 1.0, size=(100, 6))
    x = np.round(np.vstack([x0, x1]), 4)
    y = np.concatenate([np.zeros(100), np.ones(100)])

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    w, b = fit_logistic((x - mean) / std, y)

    schema = {
        "features": [{"name": n, "kind": "numeric"} for n in NAMES],
        "label": {"name": "y", "classes": ["0", "1"]},
    }
    model = {
        "kind": "logistic",
        "weights": [round(float(v), 6) for v in w],
        "bias": round(float(b), 6),
        "threshold": 0.5,
        "preprocess": {
            "features": [
                {"name": n, "kind": "numeric", "mean": round(float(m), 6), "std": round(float(s), 6)}
                for n, m, s in zip(NAMES, mean, std)
            ]
        },
    }
    (out / "schema.json").write_text(json.dumps(schema, indent=2) + "\n")
    (out / "model.json").write_text(json.dumps(model, indent=2) + "\n")
    with open(out / "factuals.csv", "w") as f:
        f.write(",".join(NAMES + ["y"]) + "\n")
        for row, label in zip(x, y):
            f.write(",".join(f"{v:.4f}" for v in row) + f",{int(label)}\n")


if __name__ == "__main__":
    main()
