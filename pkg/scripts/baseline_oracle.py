"""Offline reference classifiers on the shipped synthetic benchmarks.

Trains scikit-learn models on the full labeled source set and scores them on
the target set. These numbers are the independent reference points frozen
into tests/test_data.py and tests/test_engine.py.

    python scripts/baseline_oracle.py
"""
import argparse

from sklearn.linear_model import LogisticRegression
from sklearn.svm import SVC

from crodobo.data import gen_two_moons_shift


def score(model, src, tgt):
    model.fit(src.features, src.labels)
    return model.score(src.features, src.labels), model.score(tgt.features, tgt.labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cases = {
        "moons rot45 noise0.2": dict(rotation_deg=45.0),
        "moons rot0 (no shift)": dict(rotation_deg=0.0),
    }
    for name, kw in cases.items():
        src, tgt = gen_two_moons_shift(2000, 2000, noise_sd=0.2, seed=args.seed, **kw)
        for label, model in [("logistic", LogisticRegression()),
                             ("svm-rbf", SVC(C=1.0, gamma="scale"))]:
            s, t = score(model, src, tgt)
            print(f"{name:24s} {label:9s} source={s:.4f} target={t:.4f}")


if __name__ == "__main__":
    main()
