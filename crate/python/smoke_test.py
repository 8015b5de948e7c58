"""Smoke test for the gridptr_py extension.

Build and install first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/gridptr-*.whl

Then run `python python/smoke_test.py`.
"""

import math
import sys
import tempfile
from pathlib import Path

import gridptr_py as g


def check(name, cond):
    print(f"{'ok  ' if cond else 'FAIL'} {name}")
    return cond


def main():
    results = []
    results.append(check("levenshtein", g.levenshtein("kitten", "sitting") == 3))
    results.append(check("nls", abs(g.nls("50p", "50") - 2 / 3) < 1e-9))
    results.append(check("nls threshold", g.nls("abc", "xyz", 0.5) == 0.0))
    results.append(check("best_nls", g.best_nls("Stop", ["go", "stop"]) == 1.0))
    answers = ["stop"] * 2 + [f"x{i}" for i in range(8)]
    results.append(check("vqa_accuracy", abs(g.vqa_accuracy("stop", answers) - 2 / 3) < 1e-12))
    results.append(check("cells_for_box", g.cells_for_box(0.0, 0.0, 0.5, 0.5, 2) == [(0, 0)]))
    picks = g.ensemble_select([("q1", "a", 0.9, "b", 0.1), ("q2", "a", 0.37, "b", 0.1)])
    results.append(check("ensemble", [p[2] for p in picks] == ["classifier", "pointer"]))

    try:
        g.cells_for_box(0.5, 0.0, 0.2, 1.0, 19)
        results.append(check("bad box rejected", False))
    except ValueError:
        results.append(check("bad box rejected", True))

    with tempfile.TemporaryDirectory() as tmp:
        dataset, features = g.synthesize(tmp, seed=42, count=12)
        model = g.Model("stacked", seed=0)
        curve = model.train(dataset, features, epochs=3)
        results.append(check("train", len(curve) == 3 and all(0.0 <= a <= 1.0 for a in curve)))
        ckpt = str(Path(tmp) / "m.ckpt")
        model.save(ckpt)
        loaded = g.Model.load(ckpt)
        preds = loaded.predict(dataset, features)
        results.append(check("predict count", len(preds) == 12))
        p = preds[0]
        flat = [v for row in p.attention for v in row]
        results.append(
            check(
                "attention map",
                p.grid == 19 and len(flat) == 361 and all(0.0 < v < 1.0 and math.isfinite(v) for v in flat),
            )
        )
        results.append(check("argmax", flat[p.argmax_cell[0] * 19 + p.argmax_cell[1]] == max(flat)))
        print(p)

    print(f"{sum(results)}/{len(results)} checks passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
