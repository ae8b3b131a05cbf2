"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL``/``SKIP`` line; the lines are also
collected in an "acceptance criteria" section at the end of the pytest run.
The expensive pipeline (default config on the synthetic benchmark) is run once
per session through the CLI and shared.
"""
import csv
import json
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest
import yaml

from advclaim.attacks import AttackConfig, bim, fgsm, pgd, random_noise_attack
from advclaim.attribution import global_importance, mc_shapley
from advclaim.cli import main
from advclaim.data import Dataset, SynthConfig, synth_generate
from advclaim.ganrl import DiscriminatorNet, GeneratorNet
from advclaim.metrics import accuracy_exact, asr_exact, confusion, f1_exact
from advclaim.models import BiRecurrentModel, fit_on_dataset, load_model
from advclaim.numkit import Rng, rel_error

pytestmark = pytest.mark.slow

FD_STEP = 1e-6
BENCH = {"synth": {"n_samples": 1000, "n_features": 12, "class_separation": 2.0}}


def _timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Default config on the synthetic benchmark (seed 7), run through the CLI."""
    root = tmp_path_factory.mktemp("acceptance")
    cfg = root / "bench.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 7, "dataset": BENCH}))
    out = root / "out"
    base = ["--config", str(cfg), "--out", str(out)]
    codes, times = {}, {}
    for label, argv in [
        ("prepare", ["prepare"]),
        ("train", ["train"]),
        ("attack_birecurrent", ["attack", "--model", "birecurrent"]),
        ("gan_gbt_level", ["gan-attack", "--model", "gbt_level"]),
        ("gan_birecurrent", ["gan-attack", "--model", "birecurrent"]),
    ]:
        codes[label], times[label] = _timed(main, argv + base)
    return {"out": out, "codes": codes, "times": times}


def _sampled_fd(f, theta, idx, h=FD_STEP):
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        old = theta[i]
        theta[i] = old + h
        up = f()
        theta[i] = old - h
        down = f()
        theta[i] = old
        out[k] = (up - down) / (2 * h)
    return out


def _sampled_error(full, idx, fd):
    # norm-scaled like rel_error, but against the whole tensor's gradient scale
    a = full.reshape(-1)[idx]
    scale = max(np.max(np.abs(full)), np.max(np.abs(fd)))
    return float(np.max(np.abs(a - fd)) / scale) if scale > 0 else 0.0


def _row_bce(model, xr, yr):
    logit = float(model.logits(xr[None, :])[0])
    return float(np.logaddexp(0.0, logit) - yr * logit)


def test_criterion_1_gradients(criterion):
    t0 = time.perf_counter()
    worst = {"recurrent": 0.0, "generator": 0.0, "discriminator": 0.0}
    rng = Rng(101)
    for inst in range(10):
        # recurrent model at the default width: all input coordinates, sampled parameter coordinates
        model = BiRecurrentModel(12, seed=inst, dropout_rate=0.0)
        x = rng.uniform((4, 12))
        y = (rng.uniform(4) < 0.5).astype(float)
        _, grads = model.loss_and_grads(x, y)
        for name, p in model.params.items():
            flat = p.reshape(-1)
            idx = rng.choice(flat.size, min(flat.size, 25), replace=False)
            fd = _sampled_fd(lambda: model.loss_and_grads(x, y)[0], flat, idx)
            worst["recurrent"] = max(worst["recurrent"], _sampled_error(grads[name], idx, fd))
        gx = model.input_gradient(x, y)
        for row in range(4):
            xr = x[row].copy()
            fd = _sampled_fd(lambda: _row_bce(model, xr, y[row]), xr, np.arange(12))
            worst["recurrent"] = max(worst["recurrent"], rel_error(gx[row], fd))

        # both adversarial networks at their default widths
        for kind in ("generator", "discriminator"):
            if kind == "generator":
                net = GeneratorNet(64, 12, seed=inst)
                inp = rng.normal((4, 64))
            else:
                net = DiscriminatorNet(12, seed=inst)
                inp = rng.uniform((4, 12))
            proj = rng.normal((4, net.out_dim))
            out, cache = net.forward(inp)
            pgrads, dx = net.backward(cache, proj * out * (1 - out))
            loss = lambda: float(np.sum(proj * net(inp)))
            for p, g in zip(net.params, pgrads):
                flat = p.reshape(-1)
                idx = rng.choice(flat.size, min(flat.size, 10), replace=False)
                worst[kind] = max(worst[kind], _sampled_error(g, idx, _sampled_fd(loss, flat, idx)))
            flat_in = inp.reshape(-1)
            idx = rng.choice(flat_in.size, 24, replace=False)
            worst[kind] = max(worst[kind], _sampled_error(dx, idx, _sampled_fd(loss, flat_in, idx)))
    elapsed = time.perf_counter() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and elapsed < 30
    detail = ", ".join(f"{k} max rel err {v:.2e}" for k, v in worst.items()) + f"; {elapsed:.1f}s (< 30s)"
    criterion("1 gradient correctness", ok, detail)


def test_criterion_2_attack_invariants(criterion, bench, recurrent):
    t0 = time.perf_counter()
    x, y = bench.test
    assert x.shape[0] == 200
    failures = []
    for eps in (0.05, 0.25, 0.5):
        iterates = {}
        runs = {}
        for name, fn, cfg in [
            ("fgsm", fgsm, AttackConfig(eps)),
            ("bim", bim, AttackConfig(eps)),
            ("pgd", pgd, AttackConfig(eps)),
            ("pgd_rs", pgd, AttackConfig(eps, random_start=True, seed=3)),
            ("noise", random_noise_attack, AttackConfig(eps, max_iters=30, seed=3)),
            ("noise_batch", random_noise_attack, AttackConfig(eps, max_iters=30, seed=3, acceptance="batch")),
        ]:
            seen = iterates.setdefault(name, [])
            if fn in (bim, pgd):
                runs[name] = fn(recurrent, x, y, cfg, observer=lambda a, s=seen: s.append(a))
            else:
                runs[name] = fn(recurrent, x, y, cfg)
            for a in seen + [runs[name].adversarial]:
                if np.max(np.abs(a - x)) > eps + 1e-9:
                    failures.append(f"{name} eps={eps} budget")
                if a.min() < 0 or a.max() > 1:
                    failures.append(f"{name} eps={eps} range")
        one = bim(recurrent, x, y, AttackConfig(eps, steps=1, step_size=eps)).adversarial
        if one.tobytes() != runs["fgsm"].adversarial.tobytes():
            failures.append(f"bim(1, eps) != fgsm at eps={eps}")
        if runs["pgd"].adversarial.tobytes() != runs["bim"].adversarial.tobytes():
            failures.append(f"pgd != bim at eps={eps}")
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    detail = (f"200 samples x eps {{0.05, 0.25, 0.5}}, budget/range/degeneracies "
              f"{'hold' if not failures else failures[:3]}; {elapsed:.1f}s (< 60s)")
    criterion("2 attack invariants", ok, detail)


def _sweep_accuracies(path):
    with open(path) as fh:
        return [float(r["accuracy"]) for r in csv.DictReader(fh)]


def test_criterion_3_attack_effectiveness(criterion, pipeline):
    out = pipeline["out"]
    doc = json.loads((out / "reports" / "table2_birecurrent.json").read_text())
    rows = {r["attack"]: r for r in doc["attack_rows"]}
    clean = rows["baseline"]["accuracy_after"]
    pgd_acc = rows["pgd"]["accuracy_after"]
    grid = _sweep_accuracies(out / "attacks" / "birecurrent__pgd.csv")
    monotone = all(b <= a + 0.03 for a, b in zip(grid, grid[1:]))
    elapsed = pipeline["times"]["attack_birecurrent"]
    ok = (pipeline["codes"]["attack_birecurrent"] == 0 and clean >= 0.85 and clean - pgd_acc >= 0.30
          and monotone and len(grid) == 10 and elapsed < 300)
    detail = (f"clean {clean:.3f} (>= 0.85), PGD(0.5) {pgd_acc:.3f} (drop {clean - pgd_acc:.3f} >= 0.30), "
              f"grid {[round(v, 3) for v in grid]} monotone within +0.03: {monotone}; "
              f"attack command {elapsed:.0f}s (< 300s)")
    criterion("3 attack effectiveness", ok, detail)


def test_criterion_4_gan_rl_attack(criterion, pipeline):
    out = pipeline["out"]
    parts, ok = [], True
    for target in ("gbt_level", "birecurrent"):
        code = pipeline["codes"][f"gan_{target}"]
        elapsed = pipeline["times"][f"gan_{target}"]
        doc = json.loads((out / "reports" / f"gan_attack_{target}.json").read_text())
        row = doc["attack_rows"][0]
        audit = doc["extra"]["query_audit"]
        score_only = set(audit["rows_by_kind"]) == {"score"}
        improving = row["mean_reward_last_10pct"] >= row["mean_reward_first_10pct"]
        good = (code == 0 and row["asr_sample_rate"] >= 0.95 and row["accuracy_after"] <= 0.05
                and audit["parameter_accesses"] == 0 and score_only and audit["queries"] > 0
                and improving and elapsed < 600)
        ok = ok and good
        parts.append(f"{target}: ASR {row['asr_sample_rate']:.3f} (batch_all {row['asr_batch_all']:.2f}), "
                     f"acc {row['accuracy_after']:.3f}, {audit['queries']} score queries, "
                     f"param accesses {audit['parameter_accesses']}, reward {row['mean_reward_first_10pct']:.2f}"
                     f"->{row['mean_reward_last_10pct']:.2f}, {elapsed:.0f}s")
    criterion("4 GAN/RL gray-box attack", ok, "; ".join(parts))


def _recount(labels, preds):
    tp = fp = tn = fn = 0
    for a, b in zip(labels, preds):
        tp += a == 1 and b == 1
        fp += a == 0 and b == 1
        tn += a == 0 and b == 0
        fn += a == 1 and b == 0
    return tp, fp, tn, fn


def test_criterion_5_metric_oracle(criterion, pipeline):
    rng = Rng(555)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        labels = [int(v) for v in rng.integers(0, 2, n)]
        preds = [int(v) for v in rng.integers(0, 2, n)]
        tp, fp, tn, fn = _recount(labels, preds)
        c = confusion(labels, preds)
        mismatches += accuracy_exact(c) != Fraction(tp + tn, n)
        if 2 * tp + fp + fn:
            mismatches += f1_exact(c) != Fraction(2 * tp, 2 * tp + fp + fn)
        batches = [[int(v) for v in rng.integers(0, 2, 8)] for _ in range(int(rng.integers(1, 12)))]
        flat = [v for b in batches for v in b]
        mismatches += asr_exact(batches) != Fraction(flat.count(0), len(flat))
        mismatches += asr_exact(batches, "batch_all") != Fraction(sum(all(v == 0 for v in b) for b in batches),
                                                                  len(batches))
    identity = []
    for path in sorted((pipeline["out"] / "reports").glob("gan_attack_*.json")):
        row = json.loads(path.read_text())["attack_rows"][0]
        identity.append(row["asr_identity_holds"] and row["asr_sample_rate"] == 1 - row["accuracy_after"])
    ok = mismatches == 0 and len(identity) == 2 and all(identity)
    criterion("5 metric oracle equivalence", ok,
              f"1000 random configurations, {mismatches} mismatches; ASR = 1 - accuracy on "
              f"{sum(identity)}/{len(identity)} gan-attack reports")


def test_criterion_6_model_zoo(criterion, pipeline):
    out = pipeline["out"]
    rows = json.loads((out / "reports" / "table1.json").read_text())["model_rows"]
    acc = {r["model"]: r["accuracy"] for r in rows}
    ds = Dataset.load(out / "snapshot" / "dataset.json")
    knn, _ = load_model(out / "models" / "knn.json")
    xq = ds.test[0][:100]
    oracle = []
    for q in xq:
        order = sorted(range(knn.x.shape[0]), key=lambda i: (float(np.sqrt(np.sum((q - knn.x[i]) ** 2))), i))
        oracle.append(sum(int(knn.y[i]) for i in order[:knn.k]) / knn.k)
    knn_match = np.array_equal(knn.predict_proba(xq), np.array(oracle))
    gap = abs(acc["gbt_level"] - acc["gbt_leaf"])
    ok = (pipeline["codes"]["train"] == 0 and len(acc) == 5 and all(v >= 0.80 for v in acc.values())
          and gap <= 0.05 and knn_match)
    criterion("6 model zoo", ok,
              ", ".join(f"{k} {v:.3f}" for k, v in sorted(acc.items()))
              + f"; boosted gap {gap:.3f} (<= 0.05); KNN == brute-force oracle on 100 queries: {knn_match}")


def test_criterion_7_attribution(criterion, pipeline):
    w = np.array([1.5, -2.0, 0.7, 3.0, -0.4])
    x = np.array([0.8, 0.1, 0.5, 0.9, 0.3])
    mu = np.array([0.2, 0.6, 0.4, 0.3, 0.7])
    res = mc_shapley(lambda v: np.atleast_2d(v) @ w + 0.1, x, mu[None, :], n_permutations=2000, seed=7)
    closed = w * (x - mu)
    lin_err = float(np.max(np.abs(res.values - closed) / np.abs(closed)))

    out = pipeline["out"]
    ds = Dataset.load(out / "snapshot" / "dataset.json")
    gbt, _ = load_model(out / "models" / "gbt_level.json")
    x_train, _ = ds.train
    bg = x_train[Rng(7).choice(x_train.shape[0], 50)]
    eff_ratio = 0.0
    for i, row in enumerate(ds.test[0][:5]):
        r = mc_shapley(gbt, row, bg, n_permutations=200, seed=i)
        eff_ratio = max(eff_ratio, abs(r.efficiency_gap()) / max(r.efficiency_se, 1e-300))

    one = synth_generate(SynthConfig(n_samples=400, n_features=6, class_separation=4.0, informative=1, seed=7))
    ranking = global_importance(fit_on_dataset("gbt_level", one, n_trees=30), one, n_explained=10,
                                n_permutations=50, seed=7)
    ok = lin_err <= 0.05 and eff_ratio <= 3.0 and ranking[0][0] == "f0"
    criterion("7 attribution", ok,
              f"linear max rel err {lin_err:.4f} (<= 0.05); efficiency gap <= {eff_ratio:.2f} SE (<= 3); "
              f"single informative feature ranked first: {ranking[0][0]}")


PAPER_TABLE1 = {
    "birecurrent": (0.750, 0.419),
    "gbt_level": (0.825, 0.819),
    "gbt_leaf": (0.820, 0.818),
    "knn": (0.700, 0.651),
    "margin": (0.745, 0.636),
}


def test_criterion_8_reference_data(criterion, tmp_path):
    path = os.environ.get("ADVCLAIM_CLAIMS_CSV")
    if not path or not Path(path).is_file():
        criterion.skip("8 reference-data reproduction", "claims CSV not supplied (set ADVCLAIM_CLAIMS_CSV)")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    drop = [h for h in header if h.startswith("_c")]
    cfg = tmp_path / "ref.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 7, "dataset": {"csv": {"path": path, "drop_columns": drop}},
                                   "explain": {"models": ["gbt_level"]}}))
    out = tmp_path / "out"
    base = ["--config", str(cfg), "--out", str(out)]
    codes = [main([c] + base) for c in ("prepare", "train", "explain")]
    ds = Dataset.load(out / "snapshot" / "dataset.json")
    rows = {r["model"]: r for r in json.loads((out / "reports" / "table1.json").read_text())["model_rows"]}
    parts, ok = [f"{ds.features.shape[0]}x{ds.features.shape[1]}"], codes == [0, 0, 0]
    ok = ok and ds.features.shape == (1000, 38)
    for name, (pa, pf) in PAPER_TABLE1.items():
        a, f = rows[name]["accuracy"], rows[name]["f1"]
        good = abs(a - pa) <= 0.08 and isinstance(f, float) and abs(f - pf) <= 0.08
        ok = ok and good
        parts.append(f"{name} acc {a:.3f}/{pa} f1 {f}/{pf}")
    with open(out / "explain" / "gbt_level_importance.csv") as fh:
        top3 = [r["feature"] for r in csv.DictReader(fh)][:3]
    ok = ok and "incident_severity" in top3
    parts.append(f"top3 {top3}")
    criterion("8 reference-data reproduction", ok, "; ".join(parts))


DETERMINISM = {
    "seed": 7,
    "dataset": {"synth": {"n_samples": 300, "n_features": 8, "class_separation": 2.0}},
    "models": {"birecurrent": {"epochs": 2, "hidden_size": 32}, "gbt_level": {"n_trees": 20},
               "gbt_leaf": {"n_trees": 20}, "knn": {"k": 5}, "margin": {"epochs": 100}},
    "attacks": {"params": {"random_noise": {"max_iters": 10}}},
    "ganrl": {"pretrain_epochs": 2, "eval_batches": 10, "rl": {"episodes": 5, "horizon": 4}},
    "explain": {"n_explained": 5, "n_permutations": 20},
}


def test_criterion_9_determinism(criterion, tmp_path):
    cfg = tmp_path / "det.yaml"
    cfg.write_text(yaml.safe_dump(DETERMINISM))
    trees = []
    for run in ("a", "b"):
        out = tmp_path / run
        codes = [main([c, "--config", str(cfg), "--out", str(out)])
                 for c in ("prepare", "train", "attack", "gan-attack", "eval", "explain")]
        assert codes == [0] * 6, codes
        trees.append({p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()})
    a, b = trees
    differing = sorted(str(k) for k in a if a[k] != b.get(k))
    same_files = set(a) == set(b)
    n_reports = sum(1 for k in a if k.parts[0] in ("reports", "attacks", "explain"))
    ok = same_files and not differing
    criterion("9 determinism", ok,
              f"{len(a)} artifacts ({n_reports} report files) across 6 commands, "
              f"byte-identical: {not differing}" + (f" (differ: {differing[:5]})" if differing else ""))
