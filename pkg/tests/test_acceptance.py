"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible with ``pytest -s`` or in
the summary of ``pytest -v -rA``) and then asserts the same condition.  Run just
this file with ``pytest tests/test_acceptance.py -s``.
"""

import json
import struct
import time
from pathlib import Path

import pytest

from pinet import blocks as B
from pinet import verification as V
from pinet.cli import main
from pinet.train import read_metrics_csv

RECIPES = Path(__file__).resolve().parents[1] / "recipes"


def report(capsys, label, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {label}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Run each recipe at most once per session and remember where it landed."""
    root = tmp_path_factory.mktemp("acceptance")
    done = {}

    def get(name, out=None):
        key = (name, out)
        if key not in done:
            target = root / (out or name)
            start = time.perf_counter()
            code = main(["train", str(RECIPES / f"{name}.json"), "--quiet", "--output-dir", str(target)])
            elapsed = time.perf_counter() - start
            summary = json.loads((target / "summary.json").read_text())
            done[key] = (code, summary, elapsed, target)
        return done[key]

    return get


def timed(fn, **kw):
    start = time.perf_counter()
    sec = fn(**kw)
    return sec, time.perf_counter() - start


def test_criterion_1_oracle_equivalence_grid(capsys):
    sec, t = timed(V.oracle_grid, seeds=5, tolerance=1e-9, points=200)
    bad = [c.line() for c in sec.checks if not c.passed]
    ok = sec.passed and t < 60
    report(capsys, 1, ok, f"{len(sec.checks) - len(bad)}/{len(sec.checks)} fits within 1e-9 in {t:.1f}s (limit 60s)"
           + (f"; first failure {bad[0]}" if bad else ""))


def test_criterion_2_degree_law(capsys):
    sec, t = timed(V.degree_law, block_degrees=(1, 2, 3), max_blocks=3, max_total=8, seeds=5)
    bad = [c.line() for c in sec.checks if not c.passed]
    ok = sec.passed and t < 30
    report(capsys, 2, ok, f"{len(sec.checks) - len(bad)}/{len(sec.checks)} probed degrees exact in {t:.1f}s (limit 30s)"
           + (f"; first failure {bad[0]}" if bad else ""))


def test_criterion_3_gradient_correctness(capsys):
    sec, t = timed(V.grad_checks, instances=100, seed=0, tolerance=1e-5, abs_floor=1e-8)
    bad = [c.line() for c in sec.checks if not c.passed]
    ok = sec.passed and len(sec.checks) == 100 and t < 60
    report(capsys, 3, ok, f"{len(sec.checks) - len(bad)}/{len(sec.checks)} instances below 1e-5 in {t:.1f}s (limit 60s)"
           + (f"; first failure {bad[0]}" if bad else ""))


def _final(summary, key):
    return summary.get("final", {}).get(key)


def test_criterion_4a_xor(capsys, runs):
    c2, s2, t2, _ = runs("xor")
    c1, s1, t1, _ = runs("xor-linear")
    acc2, acc1 = _final(s2, "train_accuracy"), _final(s1, "train_accuracy")
    ok = c2 == 0 and c1 == 0 and acc2 == 1.0 and acc1 <= 0.75 and max(t1, t2) < 60
    report(capsys, "4a", ok, f"XOR N=2 train acc {acc2} ({t2:.1f}s), N=1 control {acc1} ({t1:.1f}s)")


def test_criterion_4b_circles(capsys, runs):
    c2, s2, t2, _ = runs("circles")
    c1, s1, t1, _ = runs("circles-linear")
    acc2, acc1 = _final(s2, "eval_accuracy"), _final(s1, "eval_accuracy")
    ok = c2 == 0 and c1 == 0 and acc2 >= 0.99 and acc1 <= 0.60 and max(t1, t2) < 60
    report(capsys, "4b", ok, f"circles N=2 test acc {acc2} ({t2:.1f}s), N=1 control {acc1} ({t1:.1f}s)")


def test_criterion_4c_quadratic(capsys, runs):
    code, s, t, _ = runs("quadratic")
    mse = _final(s, "train_loss")
    ok = code == 0 and mse is not None and mse < 1e-6 and t < 60
    report(capsys, "4c", ok, f"quadratic regression MSE {mse:.3e} ({t:.1f}s)")


def _pinned(name):
    exp = json.loads((RECIPES / f"{name}.json").read_text())["expect"]["eval_accuracy"]
    return exp["pinned"], exp["tolerance"]


def test_criterion_5a_mnist_binary(capsys, runs):
    code, s, t, _ = runs("mnist-binary")
    acc = _final(s, "eval_accuracy")
    pin, tol = _pinned("mnist-binary")
    ok = code == 0 and acc >= 0.98 and abs(acc - pin) <= tol and t <= 900
    report(capsys, "5a", ok, f"MNIST 0-vs-1 test acc {acc:.4f} (pinned {pin} +/- {tol}) in {t:.0f}s (limit 900s)")


def test_criterion_5b_mnist_10class(capsys, runs):
    code, s, t, _ = runs("mnist-10class")
    acc = _final(s, "eval_accuracy")
    pin, tol = _pinned("mnist-10class")
    ok = code == 0 and acc >= 0.92 and abs(acc - pin) <= tol and t <= 900 and s["total_degree"] == 4
    report(capsys, "5b", ok, f"MNIST 10-class test acc {acc:.4f} (pinned {pin} +/- {tol}) in {t:.0f}s (limit 900s)")


def test_criterion_6_parameter_economy(capsys):
    spec = B.PolyBlockSpec(B.CCP, 3, input_dim=64, output_dim=64, rank=64)
    ours = B.param_count(spec)
    dense = B.dense_param_count(64, 64, 3)
    ok = ours == 16448 and dense == 17043520 and ours * 100 < dense
    report(capsys, 6, ok, f"CCP d=o=k=64 N=3 has {ours} parameters vs dense {dense} ({100 * ours / dense:.3f}%)")


def test_criterion_7_determinism(capsys, runs):
    names = ["xor", "xor-linear", "circles", "circles-linear", "quadratic", "mnist-binary", "mnist-10class"]
    same = []
    for name in names:
        _, _, _, first = runs(name)
        code = main(["train", str(first / "config.resolved.json"), "--quiet", "--output-dir", str(first) + "-rerun"])
        rerun = Path(str(first) + "-rerun")
        same.append(code in (0, 1) and (rerun / "metrics.csv").read_bytes() == (first / "metrics.csv").read_bytes())
    ok = all(same)
    report(capsys, 7, ok, f"{sum(same)}/{len(names)} recipes reproduce metrics.csv bit-identically from the resolved config")


def test_criterion_8_mutation_sensitivity(capsys, runs):
    _, _, _, out = runs("quadratic")
    ckpt = out / "model.pinet"
    clean = main(["verify", "--checkpoint", str(ckpt), "--output-dir", str(out / "verify-clean")])
    raw = bytearray(ckpt.read_bytes())
    payload = 16 + struct.unpack_from("<I", raw, 12)[0]
    raw[payload + 3] ^= 0x01  # one byte of the first stored parameter
    mutated = out / "mutated.pinet"
    mutated.write_bytes(bytes(raw))
    code = main(["verify", "--checkpoint", str(mutated), "--output-dir", str(out / "verify-mutated")])
    capsys.readouterr()
    ok = clean == 0 and code == 1
    report(capsys, 8, ok, f"verify exits {clean} on the saved checkpoint and {code} after a one-byte flip")
