"""Command-line harness: synth / train / eval / ablate / diagnose /
export-relations.

Every run writes a manifest (config snapshot, seed list, input hash, output
names) so results can be reproduced bit-for-bit. Exit codes: 0 success,
1 runtime failure, 2 usage error. STF_DRAN_THREADS caps how many seeds
train concurrently.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics
from .config import ABLATIONS, ALPHA_BETA, DranConfig
from .data import ShiftSpec, SplitSpec, load_csv, save_csv, split_windows, \
    synth_generate
from .model import dran_forward
from .tensor import softmax
from .training import TrainingAborted, evaluate, load_checkpoint, \
    save_checkpoint, train_on_windows

VARIANTS = ("full",) + ABLATIONS


class UsageError(ValueError):
    """Bad semantic arguments (out-of-range index, malformed spec)."""


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-for-bit."""

    config: dict
    data: str
    seeds: list[int]
    input_sha256: str
    outputs: list[str] = field(default_factory=list)
    variants: list[str] | None = None

    def write(self, path) -> None:
        payload = {k: v for k, v in asdict(self).items() if v is not None}
        _write_json(path, payload)

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(**{k: raw[k] for k in ("config", "data", "seeds",
                                          "input_sha256", "outputs")},
                   variants=raw.get("variants"))


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_hash(data_path, cfg: DranConfig) -> str:
    h = hashlib.sha256()
    h.update(_sha256_file(data_path).encode())
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def parse_shift(text: str, trend: float) -> ShiftSpec:
    """Grammar: 'none' | 'mean:J@T' | 'var:F@T' | 'mean:J+var:F@T'."""
    if text in ("none", ""):
        return ShiftSpec(trend_scale=trend)
    if "@" not in text:
        raise UsageError(f"shift spec {text!r} needs '@<step>'")
    body, _, at = text.rpartition("@")
    try:
        step = int(at)
    except ValueError:
        raise UsageError(f"shift step {at!r} is not an integer") from None
    mean_jump, var_factor = 0.0, 1.0
    for part in body.split("+"):
        kind, _, val = part.partition(":")
        try:
            num = float(val)
        except ValueError:
            raise UsageError(f"bad shift component {part!r}") from None
        if kind == "mean":
            mean_jump = num
        elif kind == "var":
            var_factor = num
        else:
            raise UsageError(f"unknown shift kind {kind!r} (mean/var)")
    return ShiftSpec(trend_scale=trend, shift_at=step,
                     mean_jump=mean_jump, var_factor=var_factor)


def cmd_synth(args) -> int:
    spec = parse_shift(args.shift, args.trend)
    panel = synth_generate(args.nodes, args.steps, spec, args.seed,
                           n_features=args.features, period=args.period,
                           amplitude=args.amplitude, noise_std=args.noise,
                           diffusion=args.diffusion, stride=args.stride)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "panel.csv"
    save_csv(panel, csv_path)
    spec.to_json(out / "shift.json", extra={
        "nodes": args.nodes, "steps": args.steps, "seed": args.seed,
        "features": args.features, "period": args.period,
        "amplitude": args.amplitude, "noise_std": args.noise,
        "diffusion": args.diffusion, "stride": args.stride,
    })
    print(f"wrote {csv_path} ({args.steps}x{args.nodes}x{args.features}) "
          f"and {out / 'shift.json'}")
    return 0


# ---------------------------------------------------------------------------
# train / ablate
# ---------------------------------------------------------------------------

def _load_run_spec(args):
    """Merge config file / manifest with CLI overrides.

    Returns (cfg, data_path, seeds).
    """
    raw = {}
    if args.manifest:
        man = RunManifest.read(args.manifest)
        raw = dict(man.config)
        raw["data"] = man.data
        raw["seeds"] = man.seeds
    elif args.config:
        with open(args.config) as fh:
            raw = json.load(fh)

    data_path = args.data or raw.get("data")
    if not data_path:
        raise UsageError("no data path given (--data or config 'data')")
    seeds = raw.get("seeds", [31])
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]

    if args.dataset:
        if args.dataset.lower() not in ALPHA_BETA:
            raise UsageError(f"unknown dataset {args.dataset!r}; "
                             f"known: {sorted(ALPHA_BETA)}")
        raw["alpha"], raw["beta"] = ALPHA_BETA[args.dataset.lower()]
    for name in ("epochs", "batch", "lr", "alpha", "beta", "keep_frac"):
        val = getattr(args, name, None)
        if val is not None:
            raw[name] = val
    if getattr(args, "ablate", None):
        if args.ablate not in ABLATIONS:
            raise UsageError(f"unknown ablation {args.ablate!r}; "
                             f"choose from {ABLATIONS}")
        for k in ABLATIONS:
            raw[k] = k == args.ablate

    try:
        cfg = DranConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None
    return cfg, data_path, sorted(seeds)


def _seed_worker(windows, cfg, seed, out_dir, tag):
    run_cfg = cfg.replace(seed=seed)
    result = train_on_windows(windows, run_cfg)
    metrics = evaluate(windows["test"], result.params, run_cfg)
    prefix = f"{tag}_" if tag else ""
    ckpt = out_dir / f"{prefix}ckpt_seed{seed}.bin"
    save_checkpoint(ckpt, run_cfg, result.params)
    result.report.to_json(out_dir / f"{prefix}report_seed{seed}.json")
    result.report.to_csv(out_dir / f"{prefix}report_seed{seed}.csv")
    # wall time stays in the per-seed report; the aggregate must be
    # byte-identical across reruns of the same manifest
    return {"seed": seed, "mae": metrics["mae"], "mape": metrics["mape"],
            "best_epoch": result.report.best_epoch,
            "checkpoint": ckpt.name}


def _run_seeds(windows, cfg, seeds, out_dir, tag=""):
    threads = max(1, int(os.environ.get("STF_DRAN_THREADS", "1")))
    if threads == 1 or len(seeds) == 1:
        return [_seed_worker(windows, cfg, s, out_dir, tag) for s in seeds]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        futs = {s: pool.submit(_seed_worker, windows, cfg, s, out_dir, tag)
                for s in seeds}
        return [futs[s].result() for s in seeds]  # deterministic order


def _aggregate(rows):
    maes = [r["mae"] for r in rows]
    mapes = [r["mape"] for r in rows]
    return {
        "runs": rows,
        "mae_mean": float(np.mean(maes)),
        "mae_std": float(np.std(maes)),
        "mape_mean": float(np.mean(mapes)),
        "mape_std": float(np.std(mapes)),
    }


def _prepare(cfg, data_path):
    panel = load_csv(data_path)
    split = SplitSpec(cfg.train_frac, cfg.val_frac, cfg.test_frac)
    return split_windows(panel, cfg.L, cfg.H, split)


def cmd_train(args) -> int:
    cfg, data_path, seeds = _load_run_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    windows = _prepare(cfg, data_path)

    rows = _run_seeds(windows, cfg, seeds, out)
    agg = _aggregate(rows)
    if args.ablate:
        agg["variant"] = args.ablate
    _write_json(out / "aggregate.json", agg)
    RunManifest(
        config=cfg.to_dict(), data=str(data_path), seeds=seeds,
        input_sha256=_input_hash(data_path, cfg),
        outputs=sorted(p.name for p in out.iterdir()
                       if p.name != "run_manifest.json"),
    ).write(out / "run_manifest.json")
    print(f"test MAE {agg['mae_mean']:.4f} +- {agg['mae_std']:.4f} "
          f"over seeds {seeds}")
    return 0


def cmd_ablate(args) -> int:
    cfg, data_path, seeds = _load_run_spec(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    windows = _prepare(cfg, data_path)

    table = {}
    for variant in VARIANTS:
        rows = _run_seeds(windows, cfg.ablated(variant), seeds, out, variant)
        table[variant] = _aggregate(rows)
        print(f"{variant:8s} mae {table[variant]['mae_mean']:.4f} "
              f"+- {table[variant]['mae_std']:.4f}")

    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variant", "seed", "mae", "mape"])
        for variant in VARIANTS:
            for r in table[variant]["runs"]:
                w.writerow([variant, r["seed"], repr(r["mae"]),
                            repr(r["mape"])])
            w.writerow([variant, "mean", repr(table[variant]["mae_mean"]),
                        repr(table[variant]["mape_mean"])])
    _write_json(out / "ablation.json", table)
    RunManifest(
        config=cfg.to_dict(), data=str(data_path), seeds=seeds,
        input_sha256=_input_hash(data_path, cfg),
        outputs=sorted(p.name for p in out.iterdir()
                       if p.name != "run_manifest.json"),
        variants=list(VARIANTS),
    ).write(out / "run_manifest.json")
    return 0


# ---------------------------------------------------------------------------
# eval / diagnose / export-relations
# ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    cfg, params = load_checkpoint(args.checkpoint)
    windows = _prepare(cfg, args.data)
    if args.split not in windows:
        raise UsageError(f"unknown split {args.split!r}")
    metrics = evaluate(windows[args.split], params, cfg)
    payload = {"split": args.split, **metrics}
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        _write_json(args.out, payload)
    return 0


def _write_matrix(path, matrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(matrix):
            w.writerow([repr(float(x)) for x in row])


def cmd_diagnose(args) -> int:
    panel = load_csv(args.data)

    def parse_window(text):
        lo, _, hi = text.partition(":")
        try:
            return int(lo), int(hi)
        except ValueError:
            raise UsageError(f"window {text!r} must be 'lo:hi'") from None

    wa, wb = parse_window(args.window_a), parse_window(args.window_b)
    try:
        verdict = diagnostics.detect_shift(panel, args.node, wa, wb,
                                           h=args.h, delta=args.delta,
                                           grid_size=args.grid)
    except (IndexError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, (lo, hi) in (("a", wa), ("b", wb)):
        seg = panel.values.data[lo:hi, args.node, :].reshape(-1)
        est = diagnostics.kde(seg, h=args.h, grid_size=args.grid)
        with open(out / f"density_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["grid", "density"])
            for g, d in zip(est.grid, est.density):
                w.writerow([repr(float(g)), repr(float(d))])
    _write_json(out / "verdict.json", {"kl": verdict.kl,
                                       "delta": verdict.delta,
                                       "shifted": verdict.shifted})
    print(f"kl={verdict.kl:.6f} delta={verdict.delta} "
          f"shifted={verdict.shifted}")
    return 0


def cmd_export_relations(args) -> int:
    cfg, params = load_checkpoint(args.checkpoint)
    windows = _prepare(cfg, args.data)
    wset = windows[args.split]
    if not len(wset):
        raise UsageError(f"split {args.split!r} has no windows")
    if not 0 <= args.window < len(wset):
        raise UsageError(f"window index {args.window} out of range "
                         f"(0..{len(wset) - 1})")
    if not 0 <= args.time_step < cfg.L:
        raise UsageError(f"time step {args.time_step} out of range "
                         f"(0..{cfg.L - 1})")
    if not 0 <= args.head < cfg.heads:
        raise UsageError(f"head {args.head} out of range (0..{cfg.heads - 1})")

    # locate the batch containing the requested window
    batch = None
    offset = args.window
    for b in wset.batches(cfg.batch):
        if offset < len(b):
            batch = b
            break
        offset -= len(b)

    res = dran_forward(batch, params, cfg, rng=None, sample=False)
    relations = res.inter["relations"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if relations.a_dy is not None:
        weights = softmax(relations.a_dy, axis=-1).data
        _write_matrix(out / "a_dy.csv",
                      weights[offset, args.head, args.time_step])
        written.append("a_dy.csv")
    if relations.a_st is not None:
        _write_matrix(out / "a_st.csv", relations.a_st.data[args.time_step])
        written.append("a_st.csv")
    if not written:
        raise UsageError("checkpoint variant exports no relation matrices")
    print(f"wrote {', '.join(written)} to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dran",
        description="Spatio-temporal forecasting with distribution and "
                    "relation adaptation.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic shifted panel")
    sp.add_argument("--nodes", type=int, required=True)
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--shift", default="none",
                    help="none | mean:J@T | var:F@T | mean:J+var:F@T")
    sp.add_argument("--trend", type=float, default=0.0)
    sp.add_argument("--seed", type=int, default=31)
    sp.add_argument("--features", type=int, default=1)
    sp.add_argument("--period", type=int, default=24)
    sp.add_argument("--amplitude", type=float, default=1.0)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--diffusion", type=float, default=0.2)
    sp.add_argument("--stride", type=int, default=1)
    sp.add_argument("--out", default=".")
    sp.set_defaults(fn=cmd_synth)

    def add_run_args(p):
        p.add_argument("--config", help="JSON config (DranConfig fields, "
                                        "plus 'data' and 'seeds')")
        p.add_argument("--manifest", help="re-run a written run_manifest.json")
        p.add_argument("--data", help="panel CSV (overrides config)")
        p.add_argument("--seeds", help="comma-separated seed list")
        p.add_argument("--dataset", help="named (alpha, beta) selection: "
                                         + ", ".join(sorted(ALPHA_BETA)))
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--keep_frac", type=float)
        p.add_argument("--out", default="runs")

    tp = sub.add_parser("train", help="train one variant over seeds")
    add_run_args(tp)
    tp.add_argument("--ablate", help=f"train a single ablation: {ABLATIONS}")
    tp.set_defaults(fn=cmd_train)

    abp = sub.add_parser("ablate", help="train all six variants over seeds")
    add_run_args(abp)
    abp.set_defaults(fn=cmd_ablate, ablate=None)

    ep = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    ep.add_argument("--checkpoint", required=True)
    ep.add_argument("--data", required=True)
    ep.add_argument("--split", default="test")
    ep.add_argument("--out")
    ep.set_defaults(fn=cmd_eval)

    dp = sub.add_parser("diagnose", help="density estimates and shift verdict")
    dp.add_argument("--data", required=True)
    dp.add_argument("--node", type=int, required=True)
    dp.add_argument("--window-a", required=True, help="lo:hi row range")
    dp.add_argument("--window-b", required=True, help="lo:hi row range")
    dp.add_argument("--h", type=float, default=0.1)
    dp.add_argument("--delta", type=float, default=0.1)
    dp.add_argument("--grid", type=int, default=512)
    dp.add_argument("--out", default="diagnose")
    dp.set_defaults(fn=cmd_diagnose)

    xp = sub.add_parser("export-relations",
                        help="dump dynamic/static relation matrices as CSV")
    xp.add_argument("--checkpoint", required=True)
    xp.add_argument("--data", required=True)
    xp.add_argument("--split", default="test")
    xp.add_argument("--window", type=int, default=0)
    xp.add_argument("--time-step", type=int, default=0)
    xp.add_argument("--head", type=int, default=0)
    xp.add_argument("--out", default="relations")
    xp.set_defaults(fn=cmd_export_relations)

    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingAborted, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
