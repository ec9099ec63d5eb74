"""End-to-end check of the pcause_py extension.

Uses an installed `pcause_py` when present (e.g. after `maturin develop`);
otherwise loads the library built by `cargo build -p pcause-python`.
"""

import csv
import importlib
import math
import os
import random
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load_module():
    try:
        return importlib.import_module("pcause_py")
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libpcause_py.so"
        if lib.exists():
            tmp = Path(tempfile.mkdtemp())
            shutil.copy(lib, tmp / "pcause_py.so")
            sys.path.insert(0, str(tmp))
            return importlib.import_module("pcause_py")
    sys.exit("pcause_py not found; run `cargo build -p pcause-python` first")


def write_data(path, n=3000, seed=1):
    rng = random.Random(seed)
    expit = lambda t: 1.0 / (1.0 + math.exp(-t))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["y", "a", "age", "score"])
        for _ in range(n):
            age, score = rng.uniform(0, 10), rng.gauss(0, 1)
            a = int(rng.random() < expit(0.3 * score))
            y1 = rng.random() < expit(0.2 + 0.5 * score)
            y0 = y1 and rng.random() < expit(-0.5 + 0.1 * age)
            w.writerow([int(y1 if a else y0), a, round(age, 3), round(score, 4)])


def main():
    pc = load_module()
    with tempfile.TemporaryDirectory() as d:
        data = os.path.join(d, "data.csv")
        write_data(data)

        fit = pc.estimate(data, "y", "a", ["age", "score"], nuisance="logistic", seed=3)
        assert fit.covariate_names == ["age", "score"]
        assert len(fit.beta) == 3 and all(math.isfinite(b) for b in fit.beta)
        print(fit.coefficient_table())

        point, lo, hi = fit.predict([5.0, 0.0])
        assert 0.0 <= lo <= point <= hi <= 1.0, (lo, point, hi)
        print(f"PC at age 5, score 0: {point:.3f} ({lo:.3f}, {hi:.3f}); odds {pc.odds(point):.2f}")

        again = pc.Fit.from_json(fit.to_json())
        assert again.predict([5.0, 0.0]) == (point, lo, hi)

        ranking = pc.select(
            data, "y", "a", ["age", "score"],
            [("full", "logistic", None), ("flat", "logistic", [])],
            nuisance="logistic",
        )
        assert {r[0] for r in ranking} == {"full", "flat"}
        print("selection:", ranking)

        report = pc.simulate(
            'sample_sizes = [1500]\nreplications = 2\neval_points = 50\nregimes = ["oracle"]\n', seed=5
        )
        assert report.splitlines()[0] == "n,estimator,regime,bias,rmse,coverage,J,dropped"
        assert report == pc.simulate(
            'sample_sizes = [1500]\nreplications = 2\neval_points = 50\nregimes = ["oracle"]\n', seed=5
        )

        try:
            pc.estimate(data, "y", "a", ["missing"])
        except ValueError as e:
            assert "missing" in str(e)
        else:
            raise AssertionError("unknown column accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
