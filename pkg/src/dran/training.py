"""Training loop, evaluation, checkpointing, and run reports.

All randomness derives from the config seed through named SeedSequence
children (parameter init, epoch shuffling, latent sampling), so a (data,
config) pair fully determines the loss trajectory and the final weights.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from . import tensor as T
from .config import DranConfig
from .data import SeriesPanel, SplitSpec, WindowSet, split_windows
from .model import batch_loss, dran_forward, init_params
from .optim import AdamState, adam_step
from .params import DranParams


class TrainingAborted(RuntimeError):
    """Raised when the loss stops being finite; carries the coordinates."""


@dataclass
class TrainReport:
    seed: int
    epochs: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    best_epoch: int = -1
    best_val_mae: float = float("inf")

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"seed": self.seed, "wall_time": self.wall_time,
                       "best_epoch": self.best_epoch,
                       "best_val_mae": self.best_val_mae,
                       "epochs": self.epochs}, fh, indent=2)
            fh.write("\n")

    def to_csv(self, path) -> None:
        cols = ["epoch", "pred", "rec", "kl", "total", "val_mae"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in self.epochs:
                w.writerow([row.get(c, "") for c in cols])


@dataclass
class TrainResult:
    params: DranParams          # weights of the best-validation epoch
    final_params: DranParams    # weights after the last step
    report: TrainReport


def _rngs(seed: int):
    init_ss, shuffle_ss, sample_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init_ss), np.random.default_rng(shuffle_ss),
            np.random.default_rng(sample_ss))


def train_on_windows(windows: dict[str, WindowSet],
                     cfg: DranConfig) -> TrainResult:
    """Optimize on the train split, tracking best validation forecast MAE."""
    rng_init, rng_shuffle, rng_sample = _rngs(cfg.seed)
    params = init_params(cfg, rng_init)
    state = AdamState(params, lr=cfg.lr)
    report = TrainReport(seed=cfg.seed)
    best = params.copy()

    train_set = windows["train"]
    val_set = windows.get("val")
    t0 = time.perf_counter()
    with T.unchecked():
        for epoch in range(cfg.epochs):
            order = rng_shuffle.permutation(len(train_set))
            sums: dict[str, float] = {}
            n_batches = 0
            for bi, batch in enumerate(train_set.batches(cfg.batch, order)):
                loss, comps, _ = batch_loss(batch, params, cfg, rng_sample)
                if not np.isfinite(comps["total"]):
                    raise TrainingAborted(
                        f"non-finite loss at epoch {epoch}, batch {bi}")
                loss.backward()
                adam_step(params, state, cfg.clip_norm)
                for k, v in comps.items():
                    sums[k] = sums.get(k, 0.0) + v
                n_batches += 1

            row = {"epoch": epoch}
            row.update({k: v / n_batches for k, v in sums.items()})
            due = (epoch % cfg.val_every == 0) or epoch == cfg.epochs - 1
            if val_set is not None and len(val_set) and due:
                row["val_mae"] = evaluate(val_set, params, cfg)["mae"]
                if row["val_mae"] < report.best_val_mae:
                    report.best_val_mae = row["val_mae"]
                    report.best_epoch = epoch
                    best = params.copy()
            report.epochs.append(row)

    if report.best_epoch < 0:  # no validation split: keep the final weights
        best = params.copy()
    report.wall_time = time.perf_counter() - t0
    return TrainResult(params=best, final_params=params, report=report)


def train(panel: SeriesPanel, cfg: DranConfig) -> TrainResult:
    split = SplitSpec(cfg.train_frac, cfg.val_frac, cfg.test_frac)
    return train_on_windows(split_windows(panel, cfg.L, cfg.H, split), cfg)


def predict(window_set: WindowSet, params: DranParams,
            cfg: DranConfig) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic forecasts (latent mean, no sampling) for a whole split."""
    preds, targets = [], []
    with T.no_grad(), T.unchecked():
        for batch in window_set.batches(cfg.batch):
            res = dran_forward(batch, params, cfg, rng=None, sample=False)
            preds.append(res.forecast.data)
            targets.append(batch.horizon.data)
    return np.concatenate(preds), np.concatenate(targets)


def evaluate(window_set: WindowSet, params: DranParams,
             cfg: DranConfig) -> dict[str, float]:
    pred, target = predict(window_set, params, cfg)
    out = {"mae": diagnostics.mae(pred, target)}
    try:
        out["mape"] = diagnostics.mape(pred, target)
    except ValueError:
        out["mape"] = float("nan")  # every target under the floor
    return out


# ---------------------------------------------------------------------------
# checkpoints: JSON header (config + parameter manifest) + raw float64 blobs
# ---------------------------------------------------------------------------

_MAGIC = b"DRANCKPT"


def save_checkpoint(path, cfg: DranConfig, params: DranParams) -> None:
    header = {
        "config": cfg.to_dict(),
        "params": [{"path": p, "shape": list(t.shape)}
                   for p, t in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data).tobytes())


def load_checkpoint(path) -> tuple[DranConfig, DranParams]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode())
        cfg = DranConfig.from_dict(header["config"])
        params = DranParams()
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(n * 8)
            if len(buf) != n * 8:
                raise ValueError(f"{path}: truncated checkpoint")
            params.add(entry["path"],
                       np.frombuffer(buf, dtype=np.float64).reshape(shape).copy())
    return cfg, params
