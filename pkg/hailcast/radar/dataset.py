"""
Dataset Builder

Turns simulated sequences into history/future windows, splits them into
train/val/test, and stores them on disk:

    <root>/manifest.json
    <root>/{train,val,test}/window_%06d.fgt     # [(N + M) x H x W]

Window ids are global across splits so file names never collide.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog

from hailcast.config import Settings
from hailcast.core.errors import ConfigurationError, EmptyResultError, EvaluationError
from hailcast.core.rng import derive_rng
from hailcast.core.tensor_io import read_array, write_array
from hailcast.radar.simulator import RadarSequence, generate_sequence

logger = structlog.get_logger(__name__)

SPLITS = ("train", "val", "test")
WINDOW_FILE = "window_{:06d}.fgt"
MANIFEST = "manifest.json"


@dataclass
class Window:
    """One history/forecast window cut from a sequence."""
    history: np.ndarray  # [N x H x W]
    future: np.ndarray  # [M x H x W]
    start: int = 0

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.history, self.future], axis=0)


@dataclass
class DatasetSplit:
    """Disjoint window-id lists per split."""
    train: list[int] = field(default_factory=list)
    val: list[int] = field(default_factory=list)
    test: list[int] = field(default_factory=list)

    def as_dict(self) -> dict[str, list[int]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def extract_windows(seq: RadarSequence, n: int, m: int, stride: int) -> list[Window]:
    """
    Slide a window of N history + M future frames over the sequence.

    Windows come back in temporal order. ``stride = n + m`` gives
    non-overlapping windows.
    """
    if n < 1 or m < 1 or stride < 1:
        raise ConfigurationError("n, m and stride must be >= 1", n=n, m=m, stride=stride)
    length = n + m
    if length > seq.n_frames:
        raise EmptyResultError(
            f"insufficient frames: need {length}, sequence has {seq.n_frames}",
            frames=seq.n_frames,
            window=length,
        )
    windows = []
    for start in range(0, seq.n_frames - length + 1, stride):
        windows.append(
            Window(
                history=seq.frames[start : start + n].copy(),
                future=seq.frames[start + n : start + length].copy(),
                start=start,
            )
        )
    return windows


def split_dataset(
    n_windows: int,
    ratios: tuple[float, float, float] = (0.64, 0.16, 0.20),
    seed: int = 0,
) -> DatasetSplit:
    """
    Shuffle window ids into disjoint train/val/test lists.

    Val and test receive floor(n * ratio) ids; every remaining id goes to
    train. Each list is returned sorted.
    """
    if n_windows < 3:
        raise ConfigurationError("need at least 3 windows to split", n_windows=n_windows)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError("split ratios must be three nonnegative values summing to 1")

    # The epsilon absorbs representation error such as 10000 * 0.16.
    n_val = math.floor(n_windows * ratios[1] + 1e-9)
    n_test = math.floor(n_windows * ratios[2] + 1e-9)
    n_train = n_windows - n_val - n_test

    order = derive_rng(seed, "split").permutation(n_windows)
    return DatasetSplit(
        train=sorted(int(i) for i in order[:n_train]),
        val=sorted(int(i) for i in order[n_train : n_train + n_val]),
        test=sorted(int(i) for i in order[n_train + n_val :]),
    )


def build_dataset(settings: Settings, root: Path | None = None) -> Path:
    """
    Generate sequences, cut windows, split them and write the tree.

    Returns:
        The dataset root directory
    """
    root = Path(root or settings.dataset_dir)
    n, m, stride = settings.history_steps, settings.forecast_steps, settings.effective_stride

    windows: list[np.ndarray] = []
    for i in range(settings.n_sequences):
        seq = generate_sequence(
            seed=settings.seed,
            frames=settings.frames,
            height=settings.height,
            width=settings.width,
            n_cells=settings.n_cells,
            noise_std=settings.noise_std,
            frame_interval_minutes=settings.frame_interval_minutes,
            max_speed=settings.max_speed,
            stream=i,
        )
        windows.extend(w.stacked() for w in extract_windows(seq, n, m, stride))

    split = split_dataset(len(windows), settings.split_ratios, settings.seed)
    for name, ids in split.as_dict().items():
        for wid in ids:
            write_array(root / name / WINDOW_FILE.format(wid), windows[wid])

    manifest: dict[str, Any] = {
        "seed": settings.seed,
        "geometry": {
            "height": settings.height,
            "width": settings.width,
            "frames": settings.frames,
            "n_sequences": settings.n_sequences,
            "n_cells": settings.n_cells,
            "noise_std": settings.noise_std,
            "frame_interval_minutes": settings.frame_interval_minutes,
            "patch": settings.patch,
        },
        "N": n,
        "M": m,
        "stride": stride,
        "split_ratios": list(settings.split_ratios),
        "n_windows": len(windows),
        "splits": split.as_dict(),
    }
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST).write_bytes(
        orjson.dumps(manifest, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
    )

    train, val, test = split.sizes()
    logger.info(
        "Dataset written",
        root=str(root),
        n_windows=len(windows),
        train=train,
        val=val,
        test=test,
    )
    return root


class RadarDataset:
    """
    Read-side view of a dataset directory.

    Windows are loaded lazily and cached.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST
        if not manifest_path.exists():
            raise EvaluationError(
                f"No dataset manifest at {manifest_path}", missing=[str(manifest_path)]
            )
        self.manifest: dict[str, Any] = orjson.loads(manifest_path.read_bytes())
        self.history_steps: int = self.manifest["N"]
        self.forecast_steps: int = self.manifest["M"]
        self.splits: dict[str, list[int]] = self.manifest["splits"]
        self._cache: dict[int, np.ndarray] = {}
        self._split_of = {wid: name for name, ids in self.splits.items() for wid in ids}

    @property
    def geometry(self) -> dict[str, Any]:
        return self.manifest["geometry"]

    def ids(self, split: str) -> list[int]:
        if split not in SPLITS:
            raise ConfigurationError(f"Unknown split {split!r}", allowed=list(SPLITS))
        return list(self.splits[split])

    def path(self, window_id: int) -> Path:
        return self.root / self._split_of[window_id] / WINDOW_FILE.format(window_id)

    def window(self, window_id: int) -> Window:
        if window_id not in self._cache:
            self._cache[window_id] = read_array(self.path(window_id))
        stacked = self._cache[window_id]
        n = self.history_steps
        return Window(history=stacked[:n], future=stacked[n:])
