"""Smoke test for the forge_py extension module.

Build and install first:
    pip install --no-build-isolation ./crates/py
then run:
    python python/smoke_test.py
"""

import math
import sys
import tempfile
from pathlib import Path

import forge_py


def check(cond, what):
    if not cond:
        print(f"FAIL {what}")
        sys.exit(1)
    print(f"ok   {what}")


def main():
    plan = forge_py.plan_grid(2048, 1536, 500)
    check((plan["rows"], plan["cols"]) == (4, 5), "2048x1536 at 500 px gives a 4x5 grid")
    check(plan["origins"][4] == (1548, 0), "last column is anchored to the right edge")

    t = forge_py.Thresholds()
    check(t.classify(0.05, 0.5, 0.5) == "reject_dark", "dark patch rejected")
    check(t.classify(0.5, 0.6, 0.03) == "reject_blank", "flat patch rejected")
    check(t.classify(0.5, 0.6, 0.08) == "needs_review", "borderline contrast sent to review")
    check(t.classify(0.5, 0.6, 0.30) == "keep", "textured patch kept")
    try:
        forge_py.Thresholds(review_band=0.5)
        check(False, "invalid thresholds rejected")
    except ValueError:
        check(True, "invalid thresholds rejected")

    losses = [0.604, 0.674, 0.447, 0.523, 0.68, 0.573, 0.498, 0.76, 0.748, 0.44]
    accs = [84.799, 82.400, 88.800, 85.600, 83.999, 83.200, 86.799, 84.399, 83.600, 86.799]
    s = forge_py.fold_stats(losses, accs)
    check(f"{s['average_accuracy']:.3f}" == "85.040", "fold mean accuracy 85.040")
    check(f"{s['std_accuracy']:.3f}" == "1.861", "fold accuracy std 1.861")

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        labels = forge_py.generate_corpus(str(tmp / "corpus"), images_per_class=2, seed=1)
        ids = forge_py.patch_directory(str(tmp / "corpus" / "images"), str(tmp / "patches"), 100)
        check(len(ids) == 10 * 30, "10 images cut into 30 patches each")
        manifest = forge_py.build_manifest(str(tmp / "patches"), labels)
        counts = forge_py.filter_manifest(manifest, str(tmp / "patches"))
        check(counts.get("reject_dark", 0) > 0 and counts.get("keep", 0) > 0, f"filter verdicts {counts}")
        stats = forge_py.patch_stats(str(tmp / "patches" / f"{ids[0]}.png"))
        check(0.0 <= stats["mean"] <= 1.0, "patch statistics on the luminance scale")

        split = forge_py.holdout_split(manifest, "76.5,13.5,10", seed=3)
        n = sum(len(v) for v in split.values())
        check(n == counts["keep"], "split covers every kept patch")
        folds = forge_py.kfold_plan(manifest, k=3, seed=3)
        tests = sorted(i for f in folds for i in f["test"])
        check(len(tests) == len(set(tests)) == n, "k-fold test parts partition the kept patches")

        model = forge_py.Model(seed=0)
        probs = model.predict([str(tmp / "patches" / f"{i}.png") for i in split["test"][:4]])
        check(len(probs) == 4 and all(abs(sum(p) - 1.0) < 1e-5 for p in probs), "predictions are distributions")
        model.save(str(tmp / "m.ckpt"))
        again = forge_py.Model.load(str(tmp / "m.ckpt")).predict([str(tmp / "patches" / f"{split['test'][0]}.png")])
        check(all(math.isclose(a, b, abs_tol=1e-7) for a, b in zip(again[0], probs[0])), "checkpoint round trip")

    print("all checks passed")


if __name__ == "__main__":
    main()
