"""Experiment orchestration: one validated config in, one run directory out.

A run directory contains the resolved config copy, the seed and build
identifier, generated dataset files (when the dataset is inline), the
model checkpoint, the run report, the loss trace, and per-order MSE curve
CSVs.  All randomness descends from the single run seed through fixed
SeedSequence spawns (data, model init, training, evaluation), so
re-running from the stored config reproduces every deterministic output
byte for byte.
"""

from __future__ import annotations

import itertools
import json
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_model, save_model
from .config import config_hash, resolve_config, validate_config
from .coupling import (MultiScaleFlow, build_multiscale_flow,
                       depth_forward_order, multiscale_depth_order)
from .datasets import Dataset, gen_synthetic_gaussian, gen_toy_hierarchical, \
    load_dataset, save_dataset
from .evaluation import make_run_report, save_curve_csv, save_report
from .flows import FlowModel, build_lu_flow, build_qr_flow
from .nested_dropout import GeometricSchedule, NestedDropoutConfig, as_order, \
    identity_order, reversed_order
from .optim import TrainConfig, train
from .pca import pca_fit, pca_mse


def derive_seeds(seed: int) -> dict:
    """Child integer seeds for each phase, all descending from the run seed."""
    children = np.random.SeedSequence(seed).spawn(4)
    names = ("data", "init", "train", "eval")
    return {name: int(c.generate_state(1, dtype=np.uint64)[0])
            for name, c in zip(names, children)}


def get_dataset(cfg: dict, data_seed: int) -> Dataset:
    spec = cfg["dataset"]
    if "path" in spec:
        path = Path(spec["path"])
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {path}")
        return load_dataset(path)
    if spec["generator"] == "synthetic-gaussian":
        return gen_synthetic_gaussian(spec["n_train"], spec["n_test"], data_seed)
    return gen_toy_hierarchical(spec["dim"], spec["n"], data_seed)


def build_model(cfg: dict, dim: int, init_seed: int) -> FlowModel:
    spec = cfg["model"]
    rng = np.random.default_rng(init_seed)
    kind = spec["kind"]
    if kind == "qr-linear":
        return build_qr_flow(dim, rng, spec.get("n_householder"),
                             offset=spec.get("offset", False))
    if kind == "lu-linear":
        return build_lu_flow(dim, rng, offset=spec.get("offset", False))
    return build_multiscale_flow(dim, spec["levels"], spec["couplings_per_level"],
                                 rng, spec["hidden_width"],
                                 spec["log_scale_bound"])


def resolve_order(name_or_list, model: FlowModel, eval_seed: int) -> np.ndarray:
    """Turn an order name (or explicit index list) into a permutation for
    this model."""
    k = model.dim
    if isinstance(name_or_list, str):
        if name_or_list == "identity":
            return identity_order(k)
        if name_or_list == "reversed":
            return reversed_order(k)
        if name_or_list == "random":
            return np.random.default_rng(eval_seed).permutation(k).astype(np.int64)
        if name_or_list in ("depth-reversed", "depth-forward"):
            if not isinstance(model, MultiScaleFlow):
                raise ValueError(
                    f"order {name_or_list!r} needs a multi-scale model, "
                    f"got {model.transforms[0].kind if model.transforms else 'empty'}")
            return multiscale_depth_order(model) if name_or_list == "depth-reversed" \
                else depth_forward_order(model)
        raise ValueError(f"unknown order name {name_or_list!r}")
    return as_order(name_or_list, k)


def order_label(name_or_list) -> str:
    return name_or_list if isinstance(name_or_list, str) else "explicit"


def default_train_order_name(cfg: dict) -> str:
    if cfg["model"]["kind"] == "coupling-multiscale":
        return "depth-reversed"
    return "identity"


def make_train_config(cfg: dict, model: FlowModel) -> tuple[TrainConfig, str]:
    """TrainConfig plus the name of the drop order used for training."""
    t = cfg["train"]
    nd_spec = cfg.get("nd")
    nd = None
    order_name = default_train_order_name(cfg)
    if nd_spec is not None:
        order_spec = nd_spec.get("order", order_name)
        order_name = order_label(order_spec)
        seeds = derive_seeds(cfg["seed"])
        nd = NestedDropoutConfig(
            lam=nd_spec["lambda"],
            schedule=GeometricSchedule(p=nd_spec["p"], K=model.dim),
            drop_order=resolve_order(order_spec, model, seeds["eval"]),
        )
    return TrainConfig(iterations=t["iterations"], batch_size=t["batch_size"],
                       lr_initial=t["lr_initial"],
                       lr_schedule=t["lr_schedule"], nd=nd), order_name


def build_identifier() -> dict:
    ident = {"package": "nestedflow", "version": __version__}
    try:
        head = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=10)
        if head.returncode == 0:
            ident["git_commit"] = head.stdout.strip()
    except OSError:
        pass
    return ident


def _prepare_run_dir(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)
        f.write("\n")
    with open(out_dir / "run.json", "w") as f:
        json.dump({"seed": cfg["seed"], "config_hash": config_hash(cfg),
                   "build": build_identifier()}, f, indent=1)
        f.write("\n")


def default_output_dir(cfg: dict) -> Path:
    return Path("runs") / f"{config_hash(cfg)[:10]}-s{cfg['seed']}"


def run_generate(cfg: dict, out_dir=None) -> Path:
    """Write the configured dataset (CSV + sidecar) into the run directory."""
    cfg = resolve_config(validate_config(cfg))
    out_dir = Path(out_dir or cfg.get("output_dir") or default_output_dir(cfg))
    seeds = derive_seeds(cfg["seed"])
    data = get_dataset(cfg, seeds["data"])
    _prepare_run_dir(cfg, out_dir)
    path = out_dir / "dataset.csv"
    save_dataset(data, path)
    return path


def dataset_notes(data: Dataset) -> dict:
    notes = {
        "generator": data.provenance.get("generator"),
        "seed": data.provenance.get("seed"),
    }
    if notes["generator"] == "toy-hierarchical":
        notes["substitute_for"] = "image-scale multi-scale experiments"
    return notes


def run_train(cfg: dict, out_dir=None):
    """Full training run: dataset, model, training, evaluation, artifacts.

    Returns (RunReport, run directory).
    """
    cfg = resolve_config(validate_config(cfg))
    out_dir = Path(out_dir or cfg.get("output_dir") or default_output_dir(cfg))
    seeds = derive_seeds(cfg["seed"])
    data = get_dataset(cfg, seeds["data"])
    model = build_model(cfg, data.dim, seeds["init"])
    train_cfg, order_name = make_train_config(cfg, model)
    _prepare_run_dir(cfg, out_dir)
    if "path" not in cfg["dataset"]:
        save_dataset(data, out_dir / "dataset.csv")

    started = time.perf_counter()
    result = train(model, data, train_cfg, np.random.default_rng(seeds["train"]))
    train_seconds = time.perf_counter() - started

    eval_split = "test" if data.has_split("test") else "train"
    primary_order = resolve_order(
        train_cfg.nd.drop_order if train_cfg.nd is not None else order_name,
        model, seeds["eval"])
    extra = {}
    for spec in cfg.get("eval", {}).get("orders", []):
        label = order_label(spec)
        if label != order_name:
            extra[label] = resolve_order(spec, model, seeds["eval"])
    started = time.perf_counter()
    report = make_run_report(
        model, data, primary_order,
        config_hash=config_hash(cfg), seed=cfg["seed"], split=eval_split,
        extra_orders=extra,
        notes={
            "mode": "nested-dropout" if train_cfg.nd is not None else "baseline",
            "train_order": order_name,
            "dataset": dataset_notes(data),
        },
    )
    eval_seconds = time.perf_counter() - started
    report = _with_timing(report, {
        "train_seconds": result.seconds,
        "train_seconds_per_step": result.seconds_per_step,
        "eval_seconds": eval_seconds,
        "total_seconds": train_seconds + eval_seconds,
    })

    save_model(model, out_dir / "checkpoint.json", rng_seed=cfg["seed"])
    result.trace.save_csv(out_dir / "trace.csv")
    save_report(report, out_dir / "report.json")
    save_curve_csv(out_dir / f"mse_curve_{order_name}.csv", report.mse_curve)
    for label, entry in report.curves.items():
        save_curve_csv(out_dir / f"mse_curve_{label}.csv", entry["mse"])
    return report, out_dir


def _with_timing(report, wall_clock: dict):
    from dataclasses import replace
    return replace(report, wall_clock=wall_clock)


def run_eval(cfg: dict, checkpoint_path=None, out_dir=None):
    """Evaluate a stored checkpoint (or, without one, the PCA oracle) on the
    configured dataset."""
    cfg = resolve_config(validate_config(cfg))
    out_dir = Path(out_dir or cfg.get("output_dir") or default_output_dir(cfg))
    seeds = derive_seeds(cfg["seed"])
    data = get_dataset(cfg, seeds["data"])
    eval_split = "test" if data.has_split("test") else "train"
    _prepare_run_dir(cfg, out_dir)

    if checkpoint_path is None:
        return _run_pca_oracle(cfg, data, eval_split, out_dir)

    model = load_model(checkpoint_path)
    if model.dim != data.dim:
        raise ValueError(
            f"checkpoint dimension {model.dim} does not match dataset "
            f"dimension {data.dim}")
    order_specs = cfg.get("eval", {}).get("orders") or ["identity"]
    primary = order_specs[0]
    extra = {order_label(s): resolve_order(s, model, seeds["eval"])
             for s in order_specs[1:]}
    report = make_run_report(
        model, data, resolve_order(primary, model, seeds["eval"]),
        config_hash=config_hash(cfg), seed=cfg["seed"], split=eval_split,
        extra_orders=extra,
        notes={"mode": "eval", "checkpoint": str(checkpoint_path),
               "dataset": dataset_notes(data)},
    )
    save_report(report, out_dir / "report.json")
    save_curve_csv(out_dir / f"mse_curve_{order_label(primary)}.csv",
                   report.mse_curve)
    for label, entry in report.curves.items():
        save_curve_csv(out_dir / f"mse_curve_{label}.csv", entry["mse"])
    return report, out_dir


def _run_pca_oracle(cfg: dict, data: Dataset, eval_split: str, out_dir: Path):
    """Baseline evaluation without a flow: fit PCA on the train split and
    report its reconstruction curve on the eval split."""
    fit = pca_fit(data.get_split("train"))
    x = data.get_split(eval_split)
    curve = [pca_mse(fit, x, k) for k in range(1, data.dim + 1)]
    doc = {
        "results": {
            "mode": "pca-oracle",
            "split": eval_split,
            "mse_curve": curve,
            "eigenvalues": fit.eigenvalues.tolist(),
            "config_hash": config_hash(cfg),
            "seed": cfg["seed"],
            "dataset": dataset_notes(data),
        },
        "timing": {},
    }
    with open(out_dir / "report.json", "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    save_curve_csv(out_dir / "mse_curve_pca.csv", curve)
    return doc, out_dir


def apply_override(cfg: dict, dotted: str, value) -> None:
    """Set config key "a.b.c" to value, creating intermediate objects."""
    node = cfg
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _sweep_child(payload):
    cfg, out_dir = payload
    report, _ = run_train(cfg, out_dir)
    results = {
        "test_ll_nats": report.test_ll_nats,
        "mse_curve": report.mse_curve.tolist(),
    }
    return results


def worker_count() -> int:
    raw = os.environ.get("NESTEDFLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"NESTEDFLOW_THREADS must be an integer, got {raw!r}")


def run_sweep(sweep_cfg: dict, out_dir=None) -> Path:
    """One training run per (grid point, seed); failures are recorded in the
    aggregate table and do not stop the sweep."""
    from .config import SWEEP_SCHEMA
    validate_config(sweep_cfg, SWEEP_SCHEMA)
    base = sweep_cfg["base"]
    grid = sweep_cfg["grid"]
    seeds = sweep_cfg.get("seeds", [base.get("seed", 0)])
    out_dir = Path(out_dir or sweep_cfg.get("output_dir") or "runs/sweep")
    out_dir.mkdir(parents=True, exist_ok=True)

    keys = sorted(grid)
    jobs = []
    for values in itertools.product(*(grid[k] for k in keys)):
        for seed in seeds:
            cfg = json.loads(json.dumps(base))
            for k, v in zip(keys, values):
                apply_override(cfg, k, v)
            cfg["seed"] = int(seed)
            cfg.pop("output_dir", None)
            tag = "_".join(f"{k.split('.')[-1]}={v}" for k, v in zip(keys, values))
            jobs.append((dict(zip(keys, values)), seed, cfg,
                         out_dir / f"{tag}_s{seed}"))

    rows = []
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_try_sweep_child,
                                     [(cfg, child_dir) for _, _, cfg, child_dir in jobs]))
    else:
        outcomes = [_try_sweep_child((cfg, child_dir))
                    for _, _, cfg, child_dir in jobs]
    for (params, seed, _, child_dir), outcome in zip(jobs, outcomes):
        row = {**{k: params[k] for k in keys}, "seed": seed,
               "run_dir": str(child_dir)}
        if "error" in outcome:
            row.update(status="failed", error=outcome["error"])
        else:
            curve = outcome["mse_curve"]
            row.update(status="ok", test_ll_nats=outcome["test_ll_nats"],
                       mse_1=curve[0], mse_2=curve[1] if len(curve) > 1 else "")
        rows.append(row)

    columns = keys + ["seed", "status", "test_ll_nats", "mse_1", "mse_2",
                      "error", "run_dir"]
    with open(out_dir / "aggregate.csv", "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(str(row.get(c, "")) for c in columns) + "\n")
    return out_dir


def _try_sweep_child(payload):
    try:
        return _sweep_child(payload)
    except Exception as e:  # recorded, sweep continues
        # keep the aggregate CSV one-cell-per-column
        flat = f"{type(e).__name__}: {e}".replace(",", ";").replace("\n", " ")
        return {"error": flat}
