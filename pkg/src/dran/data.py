"""Dataset ingestion, windowing, chronological splits, synthetic generation.

Panels are dense (time x node x feature) blocks. CSV layout:
``timestamp,node_id,f0..f{D-1}`` with one row per (timestamp, node) pair.
The synthetic generator produces a seasonal ring-diffusion process whose
trend slopes and mid-series mean/variance regime change are controlled by
a ShiftSpec, so later windows measurably differ in distribution from
earlier ones.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class SeriesPanel:
    """Dense observations: values [T, N, D], integer timestamps, node ids."""

    values: Tensor
    timestamps: np.ndarray
    node_ids: list[str]

    def __post_init__(self):
        t, n, d = self.values.shape
        if n < 1 or d < 1:
            raise ValueError(f"panel needs N >= 1 and D >= 1, got {self.values.shape}")
        if len(self.timestamps) != t:
            raise ValueError("timestamps length does not match values")
        if len(self.node_ids) != n:
            raise ValueError("node_ids length does not match values")
        diffs = np.diff(self.timestamps)
        if len(diffs) and not (diffs > 0).all():
            raise ValueError("timestamps must be strictly increasing")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    @property
    def n_features(self) -> int:
        return self.values.shape[2]


@dataclass
class SplitSpec:
    """Chronological train/val/test fractions; must sum to 1."""

    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2

    def __post_init__(self):
        for f in (self.train_frac, self.val_frac, self.test_frac):
            if not 0.0 < f < 1.0:
                raise ValueError("split fractions must lie in (0, 1)")
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")

    def boundaries(self, T: int) -> dict[str, tuple[int, int]]:
        n_train = int(math.floor(self.train_frac * T))
        n_val = int(math.floor(self.val_frac * T))
        return {
            "train": (0, n_train),
            "val": (n_train, n_train + n_val),
            "test": (n_train + n_val, T),
        }


@dataclass
class WindowBatch:
    """Paired lookback [B, L, N, D] and horizon [B, H, N, D] blocks."""

    lookback: Tensor
    horizon: Tensor
    start_indices: np.ndarray  # global row index of each horizon start

    def __len__(self) -> int:
        return self.lookback.shape[0]


class WindowSet:
    """All windows of one split, stacked for fast batch assembly."""

    def __init__(self, lookback: np.ndarray, horizon: np.ndarray,
                 starts: np.ndarray):
        self.lookback = lookback
        self.horizon = horizon
        self.starts = starts

    def __len__(self) -> int:
        return self.lookback.shape[0]

    def batches(self, batch: int, order: np.ndarray | None = None):
        """Yield WindowBatch objects; a final partial batch is kept."""
        idx = np.arange(len(self)) if order is None else np.asarray(order)
        for lo in range(0, len(idx), batch):
            sel = idx[lo:lo + batch]
            yield WindowBatch(Tensor(self.lookback[sel]),
                              Tensor(self.horizon[sel]),
                              self.starts[sel])


def extract_windows(panel: SeriesPanel, L: int, H: int,
                    start: int, stop: int) -> WindowSet:
    """Every window whose lookback and horizon lie inside [start, stop)."""
    if L < 1 or H < 1:
        raise ValueError("L and H must be >= 1")
    values = panel.values.data
    starts = np.arange(start + L, stop - H + 1, dtype=np.int64)
    if len(starts) == 0:
        n, d = panel.n_nodes, panel.n_features
        return WindowSet(np.empty((0, L, n, d)), np.empty((0, H, n, d)), starts)
    look = np.stack([values[s - L:s] for s in starts])
    hor = np.stack([values[s:s + H] for s in starts])
    return WindowSet(look, hor, starts)


def split_windows(panel: SeriesPanel, L: int, H: int,
                  split: SplitSpec) -> dict[str, WindowSet]:
    """Window each chronological split; windows never cross boundaries."""
    out = {}
    for name, (lo, hi) in split.boundaries(panel.T).items():
        if L + H > hi - lo:
            raise ValueError(
                f"split {name!r} has {hi - lo} rows, too short for L+H={L + H}")
        out[name] = extract_windows(panel, L, H, lo, hi)
    return out


def make_windows(panel: SeriesPanel, L: int, H: int, split: SplitSpec,
                 batch: int) -> dict[str, list[WindowBatch]]:
    """Batched windows per split, in chronological order."""
    return {name: list(ws.batches(batch))
            for name, ws in split_windows(panel, L, H, split).items()}


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def load_csv(path, schema: dict | None = None) -> SeriesPanel:
    """Read a dense panel CSV.

    schema may rename the role columns, e.g. {"timestamp": "ts",
    "node_id": "sensor"}; remaining columns are features in file order.
    """
    schema = schema or {}
    ts_col = schema.get("timestamp", "timestamp")
    node_col = schema.get("node_id", "node_id")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if ts_col not in header or node_col not in header:
            raise ValueError(f"{path}: header must contain "
                             f"{ts_col!r} and {node_col!r}, got {header}")
        ti = header.index(ts_col)
        ni = header.index(node_col)
        feat_idx = [i for i in range(len(header)) if i not in (ti, ni)]
        if not feat_idx:
            raise ValueError(f"{path}: no feature columns")

        cells: dict[tuple[int, str], list[float]] = {}
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {rownum}: expected "
                                 f"{len(header)} columns, got {len(row)}")
            try:
                ts = int(row[ti])
            except ValueError:
                raise ValueError(f"{path}: row {rownum}: bad timestamp "
                                 f"{row[ti]!r}") from None
            node = row[ni]
            feats = []
            for i in feat_idx:
                if row[i] == "":
                    raise ValueError(f"{path}: row {rownum}: missing value "
                                     f"in column {header[i]!r}")
                try:
                    feats.append(float(row[i]))
                except ValueError:
                    raise ValueError(f"{path}: row {rownum}: non-numeric "
                                     f"value {row[i]!r}") from None
            key = (ts, node)
            if key in cells:
                raise ValueError(f"{path}: row {rownum}: duplicate entry for "
                                 f"timestamp {ts}, node {node!r}")
            cells[key] = feats

    timestamps = sorted({k[0] for k in cells})
    node_ids = sorted({k[1] for k in cells})
    if len(cells) != len(timestamps) * len(node_ids):
        missing = [(t, n) for t in timestamps for n in node_ids
                   if (t, n) not in cells]
        raise ValueError(f"{path}: panel is not dense; first missing cell "
                         f"(timestamp={missing[0][0]}, node={missing[0][1]!r})")

    d = len(feat_idx)
    values = np.empty((len(timestamps), len(node_ids), d))
    for a, t in enumerate(timestamps):
        for b, n in enumerate(node_ids):
            values[a, b] = cells[(t, n)]
    return SeriesPanel(Tensor(values), np.asarray(timestamps, dtype=np.int64),
                       node_ids)


def save_csv(panel: SeriesPanel, path) -> None:
    """Write a panel; float cells use repr so a reload is bit-exact."""
    d = panel.n_features
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "node_id"] + [f"f{i}" for i in range(d)])
        vals = panel.values.data
        for a, ts in enumerate(panel.timestamps):
            for b, node in enumerate(panel.node_ids):
                writer.writerow([int(ts), node] + [repr(float(x))
                                                   for x in vals[a, b]])


# ---------------------------------------------------------------------------
# Synthetic non-stationary generator
# ---------------------------------------------------------------------------

@dataclass
class ShiftSpec:
    """Distribution-shift controls for the synthetic generator.

    trend_scale spreads per-node linear slopes around zero; at step
    shift_at (None disables) the process mean jumps by mean_jump and the
    noise variance is multiplied by var_factor.
    """

    trend_scale: float = 0.0
    shift_at: int | None = None
    mean_jump: float = 0.0
    var_factor: float = 1.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ShiftSpec":
        return cls(**{k: d[k] for k in
                      ("trend_scale", "shift_at", "mean_jump", "var_factor")
                      if k in d})

    def to_json(self, path, extra: dict | None = None) -> None:
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


def synth_generate(n_nodes: int, T: int, shift: ShiftSpec, seed: int, *,
                   n_features: int = 1, period: int = 24, amplitude: float = 1.0,
                   amplitude_spread: float = 0.0, noise_std: float = 0.1,
                   diffusion: float = 0.2, stride: int = 1) -> SeriesPanel:
    """Seasonal + trend + ring-diffusion + noise panel with optional shift.

    Each node's value at step t adds the diffusion-weighted mean of its two
    ring neighbours at t-1. The recurrence is warmed up before step 0 so the
    emitted series carries no startup transient. amplitude_spread grades the
    seasonal amplitude linearly across nodes, making node scales
    heterogeneous; stride subsamples the underlying process (stride=1 emits
    every step).
    """
    if n_nodes < 2:
        raise ValueError("synth_generate requires n_nodes >= 2")
    if not 0.0 <= diffusion < 1.0:
        raise ValueError("diffusion must lie in [0, 1)")

    rng = np.random.default_rng(seed)
    burn = 4 * period
    total = burn + T * stride
    n, d = n_nodes, n_features

    phases = 2.0 * np.pi * np.arange(n) / n
    feat_phase = 0.5 * np.pi * np.arange(d) / max(d, 1)
    node_amp = amplitude * (1.0 + amplitude_spread
                            * (np.arange(n) / max(n - 1, 1) - 0.5))
    if n > 1:
        slopes = shift.trend_scale * (np.arange(n) - (n - 1) / 2) / (n - 1)
    else:
        slopes = np.zeros(1)

    t_axis = np.arange(-burn, T * stride)  # absolute step index, 0 = first emitted
    seasonal = node_amp[None, :, None] * np.sin(
        2.0 * np.pi * t_axis[:, None, None] / period
        + phases[None, :, None] + feat_phase[None, None, :])
    base = seasonal + slopes[None, :, None] * t_axis[:, None, None]

    noise = rng.normal(size=(total, n, d)) * noise_std
    if shift.shift_at is not None:
        cut = burn + shift.shift_at * stride
        base[cut:] += shift.mean_jump
        noise[cut:] *= math.sqrt(shift.var_factor)

    values = np.empty((total, n, d))
    prev = np.zeros((n, d))
    left = np.arange(-1, n - 1)
    right = np.arange(1, n + 1) % n
    for t in range(total):
        values[t] = base[t] + diffusion * 0.5 * (prev[left] + prev[right]) + noise[t]
        prev = values[t]

    emitted = values[burn::stride][:T]
    return SeriesPanel(Tensor(emitted), np.arange(T, dtype=np.int64),
                       [f"n{i}" for i in range(n)])
