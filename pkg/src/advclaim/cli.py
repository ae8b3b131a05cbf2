"""``advclaim`` command line: prepare, train, attack, gan-attack, eval, explain.

Every command reads the same YAML config and works inside one output
directory with a fixed layout::

    <out>/snapshot/dataset.json
    <out>/models/<name>.json
    <out>/attacks/<model>__<attack>.csv
    <out>/ganrl/<target>/{generator.json,traces.jsonl,generated.csv}
    <out>/explain/<model>_importance.csv
    <out>/reports/*.json, *.csv

Exit codes: 0 success, 1 partial failure (or ``--verify`` mismatch),
2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import metrics as M
from .attacks import ATTACKS, GRADIENT_ATTACKS, AttackConfig, sweep, write_sweep_csv
from .attribution import global_importance, write_importance_csv
from .config import ConfigError, ExperimentConfig, load_config
from .data import Dataset, IngestionError, SchemaError, SynthConfig, build_dataset, decode_rows, load_csv, synth_generate
from .ganrl import (
    DiscriminatorNet,
    GanDivergence,
    GeneratorNet,
    QueryBudgetExceeded,
    RlConfig,
    attach_target_as_surrogate,
    evaluate_generator,
    pretrain_gan,
    rl_refine,
    write_trace_jsonl,
)
from .models import HashMismatch, NotDifferentiable, fit_on_dataset, load_model, save_model

log = logging.getLogger("advclaim")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
LAYOUT = ("snapshot", "models", "attacks", "ganrl", "explain", "reports")


class PartialFailure(Exception):
    """Some units of work failed; artifacts for the rest were written."""

    def __init__(self, msg: str, written: list[Path]):
        super().__init__(msg)
        self.written = written


class Refusal(Exception):
    """The command refuses to run on inconsistent inputs."""


# helpers -------------------------------------------------------------------

def _dump_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def _timestamp() -> str | None:
    # wall-clock time would break byte-identical re-runs; opt in via SOURCE_DATE_EPOCH
    return os.environ.get("SOURCE_DATE_EPOCH")


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed}


def _snapshot_path(out: Path) -> Path:
    return out / "snapshot" / "dataset.json"


def _load_snapshot(out: Path) -> tuple[Dataset, str]:
    path = _snapshot_path(out)
    if not path.is_file():
        raise FileNotFoundError(f"snapshot not found: {path} (run `advclaim prepare` first)")
    ds = Dataset.load(path)
    return ds, ds.content_hash()


def _model_names(out: Path, cfg: ExperimentConfig, only: str | None) -> list[str]:
    if only:
        return [only]
    return [n for n in cfg.models.enabled() if (out / "models" / f"{n}.json").is_file()]


def _load(out: Path, name: str, ds_hash: str, allow_mismatch: bool):
    path = out / "models" / f"{name}.json"
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    try:
        return load_model(path, ds_hash, allow_mismatch)
    except HashMismatch as exc:
        raise Refusal(f"{exc} (pass --allow-mismatch to override)") from None


@contextmanager
def _locked(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(f"output directory {out} is locked by another run ({lock})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        for d in LAYOUT:
            (out / d).mkdir(exist_ok=True)
        yield
    finally:
        lock.unlink(missing_ok=True)


# commands ------------------------------------------------------------------

def cmd_prepare(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    src = cfg.dataset
    if src.synth is not None:
        s = src.synth
        ds = synth_generate(SynthConfig(s.n_samples, s.n_features, s.class_separation, s.fraud_fraction,
                                        cfg.seed, s.informative), src.ratios)
    else:
        c = src.csv
        raw = load_csv(c.path, c.label_column, c.drop_columns)
        ds = build_dataset(raw, c.kinds or None, src.ratios, cfg.seed)
    path = _snapshot_path(out)
    digest = ds.save(path, extra={"provenance": _provenance(cfg)})
    log.info("snapshot %s: %d rows x %d features, hash %s", path, *ds.features.shape, digest[:12])
    return [path]


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    ds, ds_hash = _load_snapshot(out)
    x_test, y_test = ds.test
    written, rows, failures = [], [], []
    for name, hyper in cfg.models.enabled().items():
        if args.model and name != args.model:
            continue
        try:
            model = fit_on_dataset(name, ds, seed=cfg.seed, **hyper)
        except Exception as exc:  # isolate per-model failures
            log.error("training %s failed: %s", name, exc)
            failures.append(name)
            rows.append({"model": name, "accuracy": None, "f1": M.NA, "error": f"{type(exc).__name__}: {exc}"})
            continue
        path = out / "models" / f"{name}.json"
        save_model(model, path, ds_hash, cfg.seed, name, extra={"provenance": _provenance(cfg)})
        written.append(path)
        ev = M.evaluate(y_test, model.predict_label(x_test))
        rows.append({"model": name, "accuracy": ev["accuracy"], "f1": ev["f1"], "confusion": ev["confusion"]})
        log.info("%s: accuracy %.3f f1 %s", name, ev["accuracy"], ev["f1"])
    report = M.MetricsReport("table1", ds_hash, cfg.digest(), {"global": cfg.seed}, model_rows=rows,
                             timestamp=_timestamp())
    written += [out / "reports" / "table1.json", out / "reports" / "table1.csv"]
    M.emit_report(report, written[-2], written[-1])
    if failures:
        raise PartialFailure(f"training failed for {failures}", written)
    return written


def _attack_config(cfg: ExperimentConfig, name: str, eps: float) -> AttackConfig:
    p = cfg.attacks.params.get(name)
    kw = p.model_dump() if p is not None else {}
    return AttackConfig(epsilon=eps, seed=cfg.seed, **kw)


def cmd_attack(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    ds, ds_hash = _load_snapshot(out)
    x, y = ds.test
    written: list[Path] = []
    names = _model_names(out, cfg, args.model)
    if not names:
        raise FileNotFoundError(f"no trained models under {out / 'models'}")
    eps_report = cfg.attacks.report_epsilon
    for name in names:
        model, _ = _load(out, name, ds_hash, args.allow_mismatch)
        clean_acc = float(np.mean(model.predict_label(x) == y))
        rows = [{"model": name, "attack": "baseline", "epsilon": 0.0, "accuracy_after": clean_acc,
                 "status": "ok", "reason": None}]
        for attack in cfg.attacks.names:
            base = _attack_config(cfg, attack, cfg.attacks.grid[0])
            points = sweep(model, attack, cfg.attacks.grid, x, y, base)
            path = out / "attacks" / f"{name}__{attack}.csv"
            write_sweep_csv(points, path)
            written.append(path)
            row = {"model": name, "attack": attack, "epsilon": eps_report, "accuracy_after": None,
                   "status": "ok", "reason": None}
            try:
                res = ATTACKS[attack](model, x, y, _attack_config(cfg, attack, eps_report))
                row["accuracy_after"] = res.accuracy_after
                row["flip_rate"] = res.flip_rate
            except NotDifferentiable as exc:
                row.update(status=M.NA, reason=f"NotDifferentiable: {exc}")
            rows.append(row)
        report = M.MetricsReport("table2", ds_hash, cfg.digest(), {"global": cfg.seed}, attack_rows=rows,
                                 extra={"grid": cfg.attacks.grid, "gradient_attacks": list(GRADIENT_ATTACKS)},
                                 timestamp=_timestamp())
        jp, cp = out / "reports" / f"table2_{name}.json", out / "reports" / f"table2_{name}.csv"
        M.emit_report(report, jp, cp)
        written += [jp, cp]
    return written


def _pretrained_generator(cfg: ExperimentConfig, ds: Dataset, out: Path) -> tuple[GeneratorNet, dict]:
    g = cfg.ganrl
    x_train, _ = ds.train
    gen = GeneratorNet(g.rl.latent_dim, ds.n_features, seed=cfg.seed + 1)
    disc = DiscriminatorNet(ds.n_features, seed=cfg.seed + 2)
    hist = pretrain_gan(gen, disc, x_train, epochs=g.pretrain_epochs, seed=cfg.seed + 3,
                        non_saturating=g.non_saturating, lr=g.pretrain_lr, beta1=g.pretrain_beta1)
    summary = {
        "steps": len(hist.disc_loss),
        "final_disc_loss": hist.disc_loss[-1] if hist.disc_loss else None,
        "final_gen_loss": hist.gen_loss[-1] if hist.gen_loss else None,
        "final_d_real": hist.d_real[-1] if hist.d_real else None,
        "final_d_fake": hist.d_fake[-1] if hist.d_fake else None,
    }
    return gen, summary


def cmd_gan_attack(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    ds, ds_hash = _load_snapshot(out)
    g = cfg.ganrl
    targets = [args.model] if args.model else g.targets
    written: list[Path] = []
    base_gen, pre_summary = _pretrained_generator(cfg, ds, out)
    pre_path = _dump_json(out / "ganrl" / "generator_pretrained.json",
                          {"generator": base_gen.to_dict(), "pretraining": pre_summary, **_provenance(cfg)})
    written.append(pre_path)
    x_train, y_train = ds.train
    failures = []
    for name in targets:
        model, _ = _load(out, name, ds_hash, args.allow_mismatch)
        gen = GeneratorNet.from_dict(base_gen.to_dict())
        handle = attach_target_as_surrogate(model, max_queries=g.rl.max_queries)
        rl_kw = g.rl.model_dump(exclude={"max_queries"})
        rl_cfg = RlConfig(seed=cfg.seed + 4, **rl_kw)
        tdir = out / "ganrl" / name
        tdir.mkdir(parents=True, exist_ok=True)
        status = "ok"
        try:
            gen, traces = rl_refine(gen, handle, rl_cfg, anchors=x_train[y_train == 1])
        except QueryBudgetExceeded as exc:
            traces, status = exc.traces, f"budget exhausted: {exc}"
            failures.append(name)
        trace_path = tdir / "traces.jsonl"
        write_trace_jsonl(traces, trace_path)
        gen_path = _dump_json(tdir / "generator.json", {"generator": gen.to_dict(), "target": name,
                                                        "status": status, **_provenance(cfg)})
        written += [trace_path, gen_path]
        if status != "ok":
            continue
        ev, records = evaluate_generator(gen, attach_target_as_surrogate(model), g.eval_batches, rl_cfg.batch,
                                         seed=cfg.seed + 5, target_label=rl_cfg.target_label)
        intent = 1 - rl_cfg.target_label
        flat = [v for b in ev.batch_labels for v in b]
        conf = M.confusion([intent] * len(flat), flat)
        asr_sample = M.asr_exact(ev.batch_labels, "sample_rate", rl_cfg.target_label)
        identity = asr_sample == 1 - M.accuracy_exact(conf)
        if not identity:
            raise AssertionError("sample-rate ASR != 1 - detector accuracy on generated batches")
        audit = handle.audit()
        gen_csv = tdir / "generated.csv"
        decoded = decode_rows(records, ds.meta)
        with gen_csv.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(ds.feature_names)
            for rec in decoded:
                w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in rec.values()])
        rewards = [t.mean_reward for t in traces]
        k = max(1, len(rewards) // 10)
        row = {
            "model": name, "attack": "gan_rl", "epsilon": None,
            "asr": float(asr_sample),
            "asr_sample_rate": float(asr_sample),
            "asr_batch_all": M.asr(ev.batch_labels, "batch_all", rl_cfg.target_label),
            "asr_mode": cfg.metrics.asr_mode,
            "accuracy_after": M.accuracy(conf),
            "asr_identity_holds": bool(identity),
            "episodes": len(traces),
            "mean_reward_first_10pct": float(np.mean(rewards[:k])) if rewards else None,
            "mean_reward_last_10pct": float(np.mean(rewards[-k:])) if rewards else None,
        }
        report = M.MetricsReport("gan_attack", ds_hash, cfg.digest(), {"global": cfg.seed, "rl": rl_cfg.seed},
                                 attack_rows=[row], timestamp=_timestamp(),
                                 extra={"query_audit": audit, "pretraining": pre_summary,
                                        "generated_rows": len(decoded)})
        jp = out / "reports" / f"gan_attack_{name}.json"
        M.emit_report(report, jp)
        written += [gen_csv, jp]
        log.info("%s: ASR %.3f (batch_all %.3f), %d queries", name, row["asr"], row["asr_batch_all"],
                 audit["queries"])
    if failures:
        raise PartialFailure(f"gan attack incomplete for {failures}", written)
    return written


def cmd_eval(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    ds, ds_hash = _load_snapshot(out)
    rows = []
    for split_name in ("val", "test"):
        x, y = ds.part(split_name)
        if y.size == 0:
            continue
        for name in _model_names(out, cfg, args.model):
            model, _ = _load(out, name, ds_hash, args.allow_mismatch)
            ev = M.evaluate(y, model.predict_label(x))
            rows.append({"model": name, "split": split_name, "accuracy": ev["accuracy"], "f1": ev["f1"],
                         "confusion": ev["confusion"]})
    report = M.MetricsReport("eval", ds_hash, cfg.digest(), {"global": cfg.seed}, model_rows=rows,
                             timestamp=_timestamp())
    jp, cp = out / "reports" / "eval.json", out / "reports" / "eval.csv"
    M.emit_report(report, jp, cp)
    return [jp, cp]


def cmd_explain(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    ds, ds_hash = _load_snapshot(out)
    e = cfg.explain
    names = [args.model] if args.model else e.models
    top_k = args.top_k if args.top_k is not None else e.top_k
    written = []
    for name in names:
        model, _ = _load(out, name, ds_hash, args.allow_mismatch)
        n_exp = min(e.n_explained, ds.split["test"].size)
        ranking = global_importance(model, ds, n_exp, e.n_permutations, cfg.seed, e.background_size)
        path = out / "explain" / f"{name}_importance.csv"
        write_importance_csv(ranking, path, top_k)
        written.append(path)
    return written


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "attack": cmd_attack,
    "gan-attack": cmd_gan_attack,
    "eval": cmd_eval,
    "explain": cmd_explain,
}


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _verify(cfg: ExperimentConfig, out: Path, args) -> list[str]:
    """Re-run the command in a scratch copy of ``out`` and list files whose bytes differ."""
    with tempfile.TemporaryDirectory() as tmp:
        scratch = Path(tmp) / "out"
        shutil.copytree(out, scratch, ignore=shutil.ignore_patterns(".lock"))
        try:
            produced = COMMANDS[args.command](cfg, scratch, args)
        except PartialFailure as exc:
            produced = exc.written
        mismatches = []
        for p in produced:
            rel = p.relative_to(scratch)
            orig = out / rel
            if not orig.is_file() or _sha(orig) != _sha(p):
                mismatches.append(str(rel))
        return mismatches


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="advclaim", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
    ap.add_argument("--out", required=True, help="experiment output directory")
    ap.add_argument("--seed", type=int, help="override the config's global seed")
    ap.add_argument("--allow-mismatch", action="store_true",
                    help="use models whose dataset hash differs from the snapshot")
    ap.add_argument("--model", help="restrict to one model name")
    ap.add_argument("--top-k", type=int, help="explain: rows to keep in the importance CSV")
    ap.add_argument("--verify", action="store_true",
                    help="re-derive this command's artifacts in a scratch copy and compare hashes")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.seed)
    except ConfigError as exc:
        print(f"advclaim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        if args.verify:
            bad = _verify(cfg, out, args)
            if bad:
                print("advclaim: verify mismatch: " + ", ".join(bad), file=sys.stderr)
                return EXIT_PARTIAL
            print("advclaim: verify ok")
            return EXIT_OK
        with _locked(out):
            COMMANDS[args.command](cfg, out, args)
    except (PartialFailure, GanDivergence) as exc:
        print(f"advclaim: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    except (Refusal, SchemaError) as exc:
        print(f"advclaim: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IngestionError) as exc:
        print(f"advclaim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
