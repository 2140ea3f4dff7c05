"""``pinet`` command-line entry point.

Subcommands::

    pinet train CONFIG [--output-dir DIR] [--seed S] [--set KEY=VALUE ...]
    pinet verify [CONFIG] [--checkpoint PATH ...] [--output-dir DIR]
    pinet expand CHECKPOINT [--order N] [--budget B] [--atol A] [--kv PATH] [--out PATH]
    pinet degree CHECKPOINT [--max-degree D] [--seed S] [--require-match]

Configs are JSON files (see ``docs/formats.md``). Relative data paths are
resolved against the config file's directory; a relative ``output_dir`` is
resolved against ``$PINET_OUTPUT_ROOT`` when set, otherwise the working
directory. Every train/verify run writes ``config.resolved.json`` (all
defaults filled in, all paths absolute) next to its outputs, and that file
re-runs the same experiment.

Exit codes: 0 success, 1 verification failure / divergence / unmet
expectation, 2 usage or config error, 3 IO error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import blocks as B
from . import data as D
from . import oracle as O
from . import verification as V
from .checkpoint import CheckpointError, atomic_write_bytes, load_checkpoint, save_checkpoint
from .train import ConfigError, TrainConfig, TrainingDiverged, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "PINET_OUTPUT_ROOT"

TRAIN_KEYS = ("command", "seed", "output_dir", "model", "data", "train", "expect", "description")
VERIFY_KEYS = ("command", "seed", "output_dir", "oracle_grid", "degree_law", "grad_check", "checkpoints",
               "description")
EXPECT_BOUNDS = ("min", "max", "pinned", "tolerance")

VERIFY_DEFAULTS = {
    "oracle_grid": {"variants": list(B.VARIANTS), "input_dims": [1, 2, 3], "ranks": [1, 2, 4],
                    "output_dims": [1, 2], "bias_dims": [1, 2], "orders": [1, 2, 3], "seeds": 5,
                    "tolerance": O.FIT_TOL, "points": O.HOLDOUT_POINTS},
    "degree_law": {"block_degrees": [1, 2, 3], "max_blocks": 3, "max_total": 8, "seeds": 5,
                   "tolerance": O.PROBE_TOL},
    "grad_check": {"instances": 100, "step": 1e-6, "tolerance": 1e-5, "abs_floor": 1e-8},
}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _config_error(key: str, message: str) -> CliError:
    return CliError(EXIT_USAGE, f"config error: {key}: {message}")


# -- config handling ---------------------------------------------------------------------------


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_USAGE, f"config error: {path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    if not isinstance(cfg, dict):
        raise _config_error("<root>", "config must be a JSON object")
    return cfg


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``a.b.c=VALUE``; VALUE is parsed as JSON, falling back to a plain string."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise CliError(EXIT_USAGE, f"--set expects KEY=VALUE, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise _config_error(key, "cannot set a field inside a non-object value")
    node[parts[-1]] = value


def _check_keys(section: dict, allowed, prefix: str) -> None:
    for key in section:
        if key not in allowed:
            raise _config_error(f"{prefix}{key}", "unknown option")


def _int(value, key: str, minimum: int | None = None) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise _config_error(key, f"must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise _config_error(key, f"must be >= {minimum}, got {value}")
    return value


def output_dir(value, config_key: str = "output_dir") -> Path:
    if not isinstance(value, str) or not value:
        raise _config_error(config_key, f"must be a non-empty path string, got {value!r}")
    p = Path(value).expanduser()
    if not p.is_absolute():
        root = os.environ.get(OUTPUT_ROOT_ENV)
        p = Path(root) / p if root else Path.cwd() / p
    return p.resolve()


def _abs_path(value, base: Path, key: str) -> str:
    if not isinstance(value, str) or not value:
        raise _config_error(key, f"must be a path string, got {value!r}")
    p = Path(value).expanduser()
    return str((p if p.is_absolute() else base / p).resolve())


def resolve_model(model, key: str = "model") -> dict:
    if not isinstance(model, dict):
        raise _config_error(key, "must be an object with 'blocks'")
    _check_keys(model, ("blocks", "init"), f"{key}.")
    init = model.get("init", "normal")
    if init not in B.INIT_SCHEMES:
        raise _config_error(f"{key}.init", f"must be one of {B.INIT_SCHEMES}, got {init!r}")
    blocks = model.get("blocks")
    if not isinstance(blocks, list) or not blocks:
        raise _config_error(f"{key}.blocks", "must be a non-empty list of block specs")
    specs = []
    for i, b in enumerate(blocks):
        bkey = f"{key}.blocks[{i}]"
        if not isinstance(b, dict):
            raise _config_error(bkey, "must be an object")
        fields = set(B.PolyBlockSpec.__dataclass_fields__)
        for name in b:
            if name not in fields:
                raise _config_error(f"{bkey}.{name}", "unknown block field")
        try:
            specs.append(B.PolyBlockSpec(**b))
        except (B.SpecError, TypeError) as exc:
            raise _config_error(bkey, str(exc)) from None
    for i in range(len(specs) - 1):
        if specs[i].output_dim != specs[i + 1].input_dim:
            raise _config_error(
                f"{key}.blocks[{i + 1}].input_dim",
                f"block {i} outputs {specs[i].output_dim} values, block {i + 1} expects {specs[i + 1].input_dim}",
            )
    return {"init": init, "blocks": [s.to_dict() for s in specs]}


def _resolve_source(src, base: Path, key: str) -> dict:
    if not isinstance(src, dict):
        raise _config_error(key, "must be an object")
    kind = src.get("source")
    if kind == "synthetic":
        _check_keys(src, ("source", "kind", "n", "params"), f"{key}.")
        if src.get("kind") not in D.SYNTHETIC_KINDS:
            raise _config_error(f"{key}.kind", f"must be one of {D.SYNTHETIC_KINDS}, got {src.get('kind')!r}")
        params = src.get("params", {})
        if not isinstance(params, dict):
            raise _config_error(f"{key}.params", "must be an object")
        return {"source": "synthetic", "kind": src["kind"], "n": _int(src.get("n"), f"{key}.n", 1),
                "params": params}
    if kind == "idx":
        _check_keys(src, ("source", "images", "labels", "classes"), f"{key}.")
        classes = src.get("classes")
        if classes is not None and (not isinstance(classes, list) or not classes
                                    or not all(isinstance(c, int) and not isinstance(c, bool) for c in classes)):
            raise _config_error(f"{key}.classes", "must be a non-empty list of integer class ids or null")
        return {"source": "idx", "images": _abs_path(src.get("images"), base, f"{key}.images"),
                "labels": _abs_path(src.get("labels"), base, f"{key}.labels"), "classes": classes}
    if kind == "csv":
        _check_keys(src, ("source", "path", "label_columns", "task", "feature_columns", "classes"), f"{key}.")
        task = src.get("task", "classification")
        if task not in ("classification", "regression"):
            raise _config_error(f"{key}.task", f"must be classification or regression, got {task!r}")
        return {"source": "csv", "path": _abs_path(src.get("path"), base, f"{key}.path"),
                "label_columns": src.get("label_columns", ["label"]), "task": task,
                "feature_columns": src.get("feature_columns"), "classes": src.get("classes")}
    raise _config_error(f"{key}.source", f"must be one of synthetic, idx, csv; got {kind!r}")


def resolve_data(data, base: Path) -> dict:
    if not isinstance(data, dict):
        raise _config_error("data", "must be an object")
    if "train" in data:
        _check_keys(data, ("train", "eval"), "data.")
        out = {"train": _resolve_source(data["train"], base, "data.train")}
        out["eval"] = None if data.get("eval") is None else _resolve_source(data["eval"], base, "data.eval")
        return out
    split = data.get("split", [1.0, 0.0, 0.0])
    rest = {k: v for k, v in data.items() if k != "split"}
    out = _resolve_source(rest, base, "data")
    if (not isinstance(split, list) or len(split) != 3
            or not all(isinstance(f, (int, float)) and not isinstance(f, bool) and f >= 0 for f in split)
            or abs(sum(split) - 1.0) > 1e-9):
        raise _config_error("data.split", f"must be three non-negative fractions summing to 1, got {split!r}")
    out["split"] = [float(f) for f in split]
    return out


def resolve_expect(expect) -> dict:
    if expect is None:
        return {}
    if not isinstance(expect, dict):
        raise _config_error("expect", "must be an object")
    for metric, bounds in expect.items():
        key = f"expect.{metric}"
        if metric not in ("train_loss", "train_accuracy", "eval_loss", "eval_accuracy"):
            raise _config_error(key, "expectations apply to train_loss, train_accuracy, eval_loss or eval_accuracy")
        if not isinstance(bounds, dict):
            raise _config_error(key, "must be an object with min/max/pinned/tolerance")
        _check_keys(bounds, EXPECT_BOUNDS, f"{key}.")
        for b, v in bounds.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise _config_error(f"{key}.{b}", f"must be a number, got {v!r}")
        if ("pinned" in bounds) != ("tolerance" in bounds):
            raise _config_error(key, "pinned and tolerance must be given together")
    return expect


def resolve_train_config(cfg: dict, config_path: Path, overrides: argparse.Namespace | None = None) -> dict:
    cfg = copy.deepcopy(cfg)
    for assignment in getattr(overrides, "set", None) or []:
        apply_override(cfg, assignment)
    if overrides is not None and overrides.seed is not None:
        cfg["seed"] = overrides.seed
    if overrides is not None and overrides.output_dir is not None:
        cfg["output_dir"] = overrides.output_dir
    _check_keys(cfg, TRAIN_KEYS, "")
    if cfg.get("command", "train") != "train":
        raise _config_error("command", f"this is a {cfg['command']!r} config, not a train config")
    base = config_path.resolve().parent
    seed = _int(cfg.get("seed", 0), "seed")
    tcfg = cfg.get("train", {})
    if not isinstance(tcfg, dict):
        raise _config_error("train", "must be an object")
    if "seed" in tcfg:
        raise _config_error("train.seed", "the run seed lives at the top level ('seed')")
    try:
        tc = TrainConfig.from_dict({**tcfg, "seed": seed})
    except ConfigError as exc:
        raise _config_error(f"train.{exc.key}", str(exc).split(": ", 1)[1]) from None
    except TypeError as exc:
        raise _config_error("train", str(exc)) from None
    tdict = tc.to_dict()
    del tdict["seed"]
    return {
        "command": "train",
        "description": cfg.get("description", ""),
        "seed": seed,
        "output_dir": str(output_dir(cfg.get("output_dir", f"runs/{config_path.stem}"))),
        "model": resolve_model(cfg.get("model")),
        "data": resolve_data(cfg.get("data"), base),
        "train": tdict,
        "expect": resolve_expect(cfg.get("expect")),
    }


# -- data loading -----------------------------------------------------------------------------


def load_source(src: dict, seed: int) -> D.Dataset:
    try:
        if src["source"] == "synthetic":
            return D.make_synthetic(src["kind"], src["n"], seed, src["params"])
        if src["source"] == "idx":
            return D.load_idx_dataset(src["images"], src["labels"], src["classes"])
        schema = D.CsvSchema(src["label_columns"], src["task"], src["feature_columns"], src["classes"])
        return D.load_csv(src["path"], schema)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read data: {exc.filename or ''}: {exc.strerror or exc}") from None
    except D.DataFormatError as exc:
        raise CliError(EXIT_IO, f"malformed data file: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise _config_error("data", str(exc)) from None


def load_datasets(data: dict, seed: int) -> tuple[D.Dataset, D.Dataset | None]:
    if "train" in data:
        train_ds = load_source(data["train"], seed)
        eval_ds = None if data["eval"] is None else load_source(data["eval"], seed)
        return train_ds, eval_ds
    ds = load_source(data, seed)
    tr, _val, te = D.split(ds, data["split"], seed)
    if tr is None:
        raise _config_error("data.split", "the training part is empty")
    return tr, te


# -- train ---------------------------------------------------------------------------------------


def check_expectations(expect: dict, final: dict) -> list[str]:
    """Human-readable failures for each unmet bound; empty when all hold."""
    failures = []
    for metric, bounds in expect.items():
        value = final.get(metric)
        if value is None:
            failures.append(f"{metric}: no value recorded")
            continue
        if "min" in bounds and not value >= bounds["min"]:
            failures.append(f"{metric} = {value!r} is below the minimum {bounds['min']!r}")
        if "max" in bounds and not value <= bounds["max"]:
            failures.append(f"{metric} = {value!r} is above the maximum {bounds['max']!r}")
        if "pinned" in bounds and not abs(value - bounds["pinned"]) <= bounds["tolerance"]:
            failures.append(f"{metric} = {value!r} is outside {bounds['pinned']!r} +/- {bounds['tolerance']!r}")
    return failures


def _write_json(path: Path, obj) -> None:
    atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def cmd_train(args) -> int:
    config_path = Path(args.config)
    resolved = resolve_train_config(read_config(config_path), config_path, args)
    out = Path(resolved["output_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.resolved.json", resolved)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {out}: {exc.strerror or exc}") from None
    seed = resolved["seed"]
    train_ds, eval_ds = load_datasets(resolved["data"], seed)
    try:
        net = B.make_net([B.spec_from_dict(b) for b in resolved["model"]["blocks"]], seed=seed,
                         scheme=resolved["model"]["init"])
    except (B.SpecError, ValueError) as exc:
        raise _config_error("model", str(exc)) from None
    if train_ds.input_dim != net.input_dim or train_ds.output_dim != net.output_dim:
        raise _config_error(
            "model.blocks",
            f"network maps {net.input_dim}->{net.output_dim} but the data is {train_ds.input_dim}->{train_ds.output_dim}",
        )
    tc = TrainConfig.from_dict({**resolved["train"], "seed": seed})

    def progress(row):
        if not args.quiet:
            parts = [f"epoch {row['epoch']}/{tc.epochs}", f"loss {row['train_loss']:.4g}"]
            if row["train_accuracy"] is not None:
                parts.append(f"acc {row['train_accuracy']:.4f}")
            if row["eval_accuracy"] is not None:
                parts.append(f"eval acc {row['eval_accuracy']:.4f}")
            elif row["eval_loss"] is not None:
                parts.append(f"eval loss {row['eval_loss']:.4g}")
            print("  ".join(parts), file=sys.stderr)

    start = time.perf_counter()
    try:
        net, log = train(net, train_ds, tc, eval_data=eval_ds, checkpoint_dir=out / "checkpoints",
                         log_fn=progress)
    except TrainingDiverged as exc:
        _write_json(out / "summary.json", {"status": "diverged", "epoch": exc.epoch, "message": str(exc)})
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_FAIL
    final = dict(log.last)
    failures = check_expectations(resolved["expect"], final)
    summary = {
        "status": "ok" if not failures else "expectations-unmet",
        "final": final,
        "expectation_failures": failures,
        "param_count": net.param_count(),
        "total_degree": net.total_degree,
        "is_polynomial": net.is_polynomial,
        "train_samples": len(train_ds),
        "eval_samples": None if eval_ds is None else len(eval_ds),
    }
    try:
        save_checkpoint(out / "model.pinet", net, {"seed": seed, "epochs": tc.epochs})
        log.write(out)
        atomic_write_bytes(out / "timing.csv", (log.timing_csv().rstrip("\n")
                                                + f"\ntotal,{time.perf_counter() - start:.6f}\n").encode())
        _write_json(out / "summary.json", summary)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write outputs to {out}: {exc.strerror or exc}") from None
    print(f"wrote {out}")
    for key in ("train_loss", "train_accuracy", "eval_loss", "eval_accuracy"):
        if final.get(key) is not None:
            print(f"{key}: {final[key]!r}")
    for f in failures:
        print(f"expectation failed: {f}", file=sys.stderr)
    return EXIT_FAIL if failures else EXIT_OK


# -- verify -------------------------------------------------------------------------------------


def _section_options(cfg: dict, name: str) -> dict | None:
    value = cfg.get(name, VERIFY_DEFAULTS[name])
    if value is None or value is False:
        return None
    if value is True:
        value = {}
    if not isinstance(value, dict):
        raise _config_error(name, "must be an object, true, or null")
    _check_keys(value, VERIFY_DEFAULTS[name], f"{name}.")
    return {**VERIFY_DEFAULTS[name], **value}


def resolve_verify_config(cfg: dict, config_path: Path | None, args) -> dict:
    cfg = copy.deepcopy(cfg)
    for assignment in getattr(args, "set", None) or []:
        apply_override(cfg, assignment)
    if args.output_dir is not None:
        cfg["output_dir"] = args.output_dir
    _check_keys(cfg, VERIFY_KEYS, "")
    if cfg.get("command", "verify") != "verify":
        raise _config_error("command", f"this is a {cfg['command']!r} config, not a verify config")
    base = config_path.resolve().parent if config_path else Path.cwd()
    ckpts = cfg.get("checkpoints", [])
    if not isinstance(ckpts, list):
        raise _config_error("checkpoints", "must be a list of paths")
    ckpts = [_abs_path(p, base, f"checkpoints[{i}]") for i, p in enumerate(ckpts)]
    ckpts += [str(Path(p).resolve()) for p in args.checkpoint or []]
    resolved = {"command": "verify", "description": cfg.get("description", ""),
                "seed": _int(cfg.get("seed", 0), "seed"),
                "output_dir": str(output_dir(cfg.get("output_dir", "runs/verify"))),
                "checkpoints": ckpts}
    for name in VERIFY_DEFAULTS:
        resolved[name] = _section_options(cfg, name)
    return resolved


def run_verify(resolved: dict) -> list[V.Section]:
    seed = resolved["seed"]
    sections = []
    if resolved["oracle_grid"]:
        o = resolved["oracle_grid"]
        sections.append(V.oracle_grid(o["variants"], o["input_dims"], o["ranks"], o["output_dims"],
                                      o["bias_dims"], o["orders"], o["seeds"], o["tolerance"], o["points"]))
    if resolved["degree_law"]:
        o = resolved["degree_law"]
        sections.append(V.degree_law(o["block_degrees"], o["max_blocks"], o["max_total"], o["seeds"],
                                     o["tolerance"]))
    if resolved["grad_check"]:
        o = resolved["grad_check"]
        sections.append(V.grad_checks(o["instances"], seed, o["step"], o["tolerance"], o["abs_floor"]))
    for path in resolved["checkpoints"]:
        try:
            ckpt = load_checkpoint(path, strict=False)
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
        except (CheckpointError, ValueError, KeyError) as exc:
            sec = V.Section(f"checkpoint {path}")
            sec.checks.append(V.Check("decode", False, str(exc)))
            sections.append(sec)
            continue
        sections.append(V.checkpoint_checks(ckpt, path, seed))
    return sections


def verify_report(sections: list[V.Section]) -> str:
    lines = []
    for sec in sections:
        lines.append(sec.summary())
        lines += [f"  {c.line()}" for c in sec.checks]
    ok = all(s.passed for s in sections)
    lines.append(f"OVERALL {'PASS' if ok else 'FAIL'}: {sum(s.passed for s in sections)}/{len(sections)} sections")
    return "\n".join(lines) + "\n"


def cmd_verify(args) -> int:
    if args.config:
        config_path = Path(args.config)
        cfg = read_config(config_path)
    else:
        config_path, cfg = None, {}
        if args.checkpoint:  # checkpoint-only run
            cfg = {name: None for name in VERIFY_DEFAULTS}
    if args.quick:
        for name in VERIFY_DEFAULTS:
            cfg.setdefault(name, VERIFY_DEFAULTS[name])
        cfg["oracle_grid"] = cfg["oracle_grid"] and {**cfg["oracle_grid"], "seeds": 1}
        cfg["degree_law"] = cfg["degree_law"] and {**cfg["degree_law"], "seeds": 1}
        cfg["grad_check"] = cfg["grad_check"] and {**cfg["grad_check"], "instances": 16}
    resolved = resolve_verify_config(cfg, config_path, args)
    out = Path(resolved["output_dir"])
    sections = run_verify(resolved)
    report = verify_report(sections)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "config.resolved.json", resolved)
        atomic_write_bytes(out / "verify_report.txt", report.encode())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write to {out}: {exc.strerror or exc}") from None
    for sec in sections:
        print(sec.summary())
        if args.verbose or not sec.passed:
            for c in sec.checks:
                if args.verbose or not c.passed:
                    print(f"  {c.line()}")
    print(f"report: {out / 'verify_report.txt'}")
    return EXIT_OK if all(s.passed for s in sections) else EXIT_FAIL


# -- expand / degree --------------------------------------------------------------------------------


def _load_for_inspection(path):
    try:
        return load_checkpoint(path, strict=True)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {exc.strerror or exc}") from None
    except (CheckpointError, ValueError, KeyError) as exc:
        raise CliError(EXIT_IO, f"unreadable checkpoint {path}: {exc}") from None


def format_coefficient(c: float) -> str:
    return f"{c:.12g}"


def expand_report(path: str, fit: O.FitResult, atol: float, polynomial: bool) -> tuple[str, str]:
    """Text report and key-value file for a fitted dense expansion."""
    p = fit.poly
    text = [f"expansion of {path}",
            f"input_dim {p.input_dim}  output_dim {p.output_dim}  order {p.order}  "
            f"basis_size {O.basis_size(p.input_dim, p.order)}",
            f"residual {fit.residual:.3e}  condition {fit.condition:.3e}  atol {atol:g}"]
    if not polynomial:
        text.append("note: the network has stabilizers or activations; coefficients are a least-squares approximation")
    kv = ["format=pinet-expand-1", f"input_dim={p.input_dim}", f"output_dim={p.output_dim}",
          f"order={p.order}", f"basis_size={O.basis_size(p.input_dim, p.order)}",
          f"residual={fit.residual!r}", f"condition={fit.condition!r}", f"atol={atol!r}",
          f"polynomial={'yes' if polynomial else 'no'}"]
    for j in range(p.output_dim):
        text.append(f"output {j}:")
        terms = p.terms(j, atol)
        if not terms:
            text.append("  (all coefficients below atol)")
        for e, c in terms:
            name = O.monomial_name(e)
            text.append(f"  {name}: {format_coefficient(c)}")
            kv.append(f"output.{j}.term.{name}={c!r}")
    return "\n".join(text) + "\n", "\n".join(kv) + "\n"


def cmd_expand(args) -> int:
    ckpt = _load_for_inspection(args.checkpoint)
    net = ckpt.net
    order = net.total_degree if args.order is None else args.order
    if order < 1:
        raise CliError(EXIT_USAGE, f"--order must be positive, got {order}")
    try:
        with np.errstate(all="ignore"):
            fit = O.fit_dense(V.net_fn(net), net.input_dim, net.output_dim, order, seed=args.seed,
                              budget=args.budget)
    except O.BudgetExceeded as exc:
        print(f"refusing to expand: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except O.IllConditioned as exc:
        print(f"expansion failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    text, kv = expand_report(args.checkpoint, fit, args.atol, net.is_polynomial)
    sys.stdout.write(text)
    try:
        if args.out:
            atomic_write_bytes(Path(args.out), text.encode())
        if args.kv:
            atomic_write_bytes(Path(args.kv), kv.encode())
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write report: {exc.strerror or exc}") from None
    if net.is_polynomial and not fit.residual < O.FIT_TOL:
        print(f"warning: residual {fit.residual:.3e} exceeds {O.FIT_TOL:g}; order {order} may be too low",
              file=sys.stderr)
    return EXIT_OK


def cmd_degree(args) -> int:
    ckpt = _load_for_inspection(args.checkpoint)
    net = ckpt.net
    with np.errstate(all="ignore"):
        probe = O.probe_degree(V.net_fn(net), net.input_dim, seed=args.seed, max_degree=args.max_degree)
    for j, d in enumerate(probe.per_output):
        print(f"output {j}: {O.EXCEEDS_MAX if d is None else d}")
    print(f"max: {probe}")
    print(f"declared total_degree: {net.total_degree}")
    match = probe.degree == net.total_degree
    print(f"match: {'yes' if match else 'no'}")
    if not net.is_polynomial:
        print("non-polynomial: stabilizer or activation enabled")
    elif probe.exceeds:
        print("non-polynomial: probe found no vanishing difference")
    return EXIT_FAIL if args.require_match and not match else EXIT_OK


# -- entry point ------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinet", description="Polynomial network experiments and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network from a JSON recipe")
    p.add_argument("config")
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config field by dotted path, e.g. train.lr=0.05 (repeatable)")
    p.add_argument("--quiet", action="store_true", help="no per-epoch progress on stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="run the invariant battery and/or check checkpoints")
    p.add_argument("config", nargs="?")
    p.add_argument("--checkpoint", action="append", help="also verify this checkpoint (repeatable)")
    p.add_argument("--output-dir", help="override output_dir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--quick", action="store_true", help="one seed per grid cell, 16 gradient instances")
    p.add_argument("-v", "--verbose", action="store_true", help="print every check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("expand", help="print dense monomial coefficients of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--order", type=int, help="expansion order (default: declared total degree)")
    p.add_argument("--budget", type=int, default=O.DEFAULT_BUDGET, help="maximum basis size")
    p.add_argument("--atol", type=float, default=O.FIT_TOL, help="hide coefficients with |c| <= atol")
    p.add_argument("--seed", type=int, default=0, help="sampling seed for the fit")
    p.add_argument("--kv", help="also write the key-value report here")
    p.add_argument("--out", help="also write the text report here")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("degree", help="probe the realized polynomial degree of a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--max-degree", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require-match", action="store_true", help="exit 1 when the probe disagrees with total_degree")
    p.set_defaults(func=cmd_degree)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"pinet {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except OSError as exc:
        print(f"pinet {args.command}: IO error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
