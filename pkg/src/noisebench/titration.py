"""Observation-noise injection, chronological splitting, and windowing.

The clean series is split 0.7/0.2/0.1 in time, iid Gaussian observation
noise of known standard deviation is layered on top (independent sub-streams
per split), and each split is cut into (context, target) windows that never
straddle a split boundary.  Every window keeps its pre-noise target so the
injected noise can be recovered exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import Trajectory
from .rngs import stream

__all__ = [
    "DEFAULT_SIGMAS",
    "SPLIT_FRACTIONS",
    "TitrationLevel",
    "WindowSet",
    "SizingError",
    "inject_noise",
    "split_bounds",
    "split_and_window",
    "titrate",
    "write_windows",
    "read_windows",
]

DEFAULT_SIGMAS = (0.0, 0.25, 1.0, 2.0)
SPLIT_FRACTIONS = (0.7, 0.2, 0.1)
SPLITS = ("train", "val", "test")


class SizingError(ValueError):
    """Series too short for the requested window geometry."""


@dataclass(frozen=True)
class TitrationLevel:
    """One rung of the noise ladder: injected std (state units) and its seed."""

    sigma_inj: float
    noise_seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.sigma_inj) or self.sigma_inj < 0:
            raise ValueError(f"sigma_inj must be finite and >= 0, got {self.sigma_inj}")


@dataclass
class WindowSet:
    """Forecasting instances for one split at one noise level.

    targets - clean_targets equals the injected noise exactly.
    """

    contexts: np.ndarray        # (n, L, dim)
    targets: np.ndarray         # (n, H, dim)
    clean_targets: np.ndarray   # (n, H, dim)
    split: str
    L: int
    H: int
    sigma: float = 0.0
    window_ids: list = field(default_factory=list)
    start_indices: np.ndarray = None  # context start index in the source series

    def __len__(self):
        return self.contexts.shape[0]

    @property
    def dim(self) -> int:
        return self.contexts.shape[2]


def _series(x) -> np.ndarray:
    values = x.values if isinstance(x, Trajectory) else np.asarray(x, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    return values


def inject_noise(traj, level: TitrationLevel):
    """Add iid N(0, sigma_inj^2) noise to every entry; returns (noisy, clean).

    Deterministic given ``level.noise_seed``; at sigma 0 the output is
    bitwise equal to the input.
    """
    clean = _series(traj)
    if level.sigma_inj == 0.0:
        return clean.copy(), clean
    rng = stream(level.noise_seed, "noise")
    noisy = clean + level.sigma_inj * rng.standard_normal(clean.shape)
    return noisy, clean


def split_bounds(n: int) -> tuple:
    """Chronological 0.7/0.2/0.1 boundaries: [0, b1), [b1, b2), [b2, n)."""
    b1 = int(np.floor(SPLIT_FRACTIONS[0] * n))
    b2 = int(np.floor((SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]) * n))
    return b1, b2


def _cut(noisy, clean, a, b, L, H, stride, split, sigma, id_prefix):
    seg_len = b - a
    if seg_len < L + H:
        need = L + H
        raise SizingError(
            f"split {split!r} has {seg_len} points but windows need at least "
            f"L+H = {need}; provide a series of roughly >= {int(np.ceil(need / 0.1))} points")
    starts = np.arange(a, b - L - H + 1, stride)
    ctx = np.stack([noisy[s:s + L] for s in starts])
    tgt = np.stack([noisy[s + L:s + L + H] for s in starts])
    cln = np.stack([clean[s + L:s + L + H] for s in starts])
    ids = [f"{id_prefix}{split}-{i:05d}" for i in range(len(starts))]
    return WindowSet(contexts=ctx, targets=tgt, clean_targets=cln, split=split,
                     L=L, H=H, sigma=sigma, window_ids=ids, start_indices=starts)


def split_and_window(series, L: int, H: int, stride: int = 1, clean=None,
                     sigma: float = 0.0, id_prefix: str = ""):
    """Split chronologically and window each split; returns (train, val, test).

    ``series`` is what forecasters observe; ``clean`` (default: ``series``)
    supplies the pre-noise targets.  Windows are contiguous ``L``-point
    contexts followed by ``H``-point targets, advancing by ``stride``, and
    never cross a split boundary.
    """
    noisy = _series(series)
    clean_arr = noisy if clean is None else _series(clean)
    if noisy.shape != clean_arr.shape:
        raise ValueError("series and clean series must have identical shape")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    n = noisy.shape[0]
    b1, b2 = split_bounds(n)
    out = []
    for split, (a, b) in zip(SPLITS, ((0, b1), (b1, b2), (b2, n))):
        out.append(_cut(noisy, clean_arr, a, b, L, H, stride, split, sigma, id_prefix))
    return tuple(out)


def titrate(traj, level: TitrationLevel, L: int, H: int, stride: int,
            id_prefix: str = ""):
    """Full titration of one trajectory at one noise level.

    Noise is injected after splitting: train/val/test share sigma but draw
    from independent sub-streams of ``level.noise_seed``, so e.g. the test
    noise does not depend on the train segment length.
    """
    clean = _series(traj)
    n = clean.shape[0]
    b1, b2 = split_bounds(n)
    noisy = clean.copy()
    if level.sigma_inj > 0.0:
        for idx, (a, b) in enumerate(((0, b1), (b1, b2), (b2, n))):
            rng = stream(level.noise_seed, "noise", idx)
            noisy[a:b] += level.sigma_inj * rng.standard_normal(noisy[a:b].shape)
    return split_and_window(noisy, L, H, stride, clean=clean,
                            sigma=level.sigma_inj, id_prefix=id_prefix)


def merge_window_sets(sets) -> WindowSet:
    """Concatenate window sets from the same split/geometry (e.g. several
    noise realizations)."""
    sets = list(sets)
    first = sets[0]
    for ws in sets[1:]:
        if (ws.split, ws.L, ws.H, ws.sigma) != (first.split, first.L, first.H, first.sigma):
            raise ValueError("window sets differ in split, geometry, or sigma")
    return WindowSet(
        contexts=np.concatenate([ws.contexts for ws in sets]),
        targets=np.concatenate([ws.targets for ws in sets]),
        clean_targets=np.concatenate([ws.clean_targets for ws in sets]),
        split=first.split, L=first.L, H=first.H, sigma=first.sigma,
        window_ids=[wid for ws in sets for wid in ws.window_ids],
        start_indices=np.concatenate([ws.start_indices for ws in sets]),
    )


def write_windows(path: str, window_sets, extra: Optional[dict] = None) -> None:
    """Write window sets as JSON lines, one record per window.

    Record fields: v, window_id, split, sigma, context, target, clean_target
    (all values full double precision).
    """
    with open(path, "w", encoding="utf-8") as fh:
        for ws in window_sets:
            for i in range(len(ws)):
                rec = {
                    "v": 1,
                    "window_id": ws.window_ids[i],
                    "split": ws.split,
                    "sigma": ws.sigma,
                    "context": ws.contexts[i].tolist(),
                    "target": ws.targets[i].tolist(),
                    "clean_target": ws.clean_targets[i].tolist(),
                }
                if extra:
                    rec.update(extra)
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_windows(path: str) -> dict:
    """Read a JSONL window file; returns {split: WindowSet}."""
    by_split = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            by_split.setdefault(rec["split"], []).append(rec)
    out = {}
    for split, recs in by_split.items():
        ctx = np.asarray([r["context"] for r in recs], dtype=float)
        tgt = np.asarray([r["target"] for r in recs], dtype=float)
        cln = np.asarray([r["clean_target"] for r in recs], dtype=float)
        out[split] = WindowSet(
            contexts=ctx, targets=tgt, clean_targets=cln, split=split,
            L=ctx.shape[1], H=tgt.shape[1], sigma=float(recs[0]["sigma"]),
            window_ids=[r["window_id"] for r in recs],
            start_indices=np.arange(len(recs)),
        )
    return out
