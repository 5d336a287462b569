"""Synthetic long-range tasks and on-disk feature datasets.

Every sample is a pure function of (task seed, split, index): the generator
is re-seeded per sample from that tuple, so splits are disjoint streams by
construction and any sample can be regenerated bit-for-bit in isolation.

Tasks:
  * delayed-class: the label is written once, early, as a +scale bump on one
    channel of a single token at a random position in the first quarter of
    the sequence; everything else is unit Gaussian noise. Any model that only
    sees the tail of the sequence can do no better than chance, so accuracy
    above chance certifies long-range retrieval. Labels round-robin over
    ``index % n_classes``, which keeps every split balanced to within one
    sample per class.
  * long-majority: the label is the majority sign of channel 0 over the
    first ``window`` tokens (window >= half the sequence); exact ties are
    resolved by redrawing the whole sample from the same stream.

Generators emit float64; consumers cast to the run precision when batching.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import stf

__all__ = ["SyntheticTask", "SPLIT_IDS", "sample_rng", "gen_delayed_class",
           "gen_long_majority", "SyntheticDataset", "FeatureDataset",
           "load_features", "write_manifest"]

SPLIT_IDS = {"train": 0, "val": 1, "test": 2}


@dataclass
class SyntheticTask:
    kind: str = "delayed-class"     # "delayed-class" | "long-majority"
    length: int = 1024
    d_in: int = 64
    n_classes: int = 4
    # 6 sigma keeps the spike separable from the max over ~L/4 noise draws
    # (at 3 sigma the optimal position-blind detector tops out near 55%)
    signal_scale: float = 6.0
    window: int | None = None       # long-majority; defaults to length // 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("delayed-class", "long-majority"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "delayed-class":
            if self.n_classes > self.d_in:
                raise ValueError(f"need d_in >= n_classes to embed the signal, "
                                 f"got d_in={self.d_in}, n_classes={self.n_classes}")
            if self.length < 4:
                raise ValueError("delayed-class needs length >= 4")
        if self.kind == "long-majority":
            w = self.window if self.window is not None else self.length // 2
            if not self.length // 2 <= w <= self.length:
                raise ValueError(f"window must lie in [length/2, length], got {w}")

    @property
    def classes(self) -> int:
        return self.n_classes if self.kind == "delayed-class" else 2


def sample_rng(task_seed: int, split: str, index: int) -> np.random.Generator:
    if split not in SPLIT_IDS:
        raise ValueError(f"unknown split {split!r}; expected one of {sorted(SPLIT_IDS)}")
    return np.random.default_rng([task_seed, SPLIT_IDS[split], index])


def gen_delayed_class(task: SyntheticTask, split: str, index: int):
    """One sample: (tokens (L, D) float64, label int)."""
    rng = sample_rng(task.seed, split, index)
    label = index % task.n_classes
    x = rng.standard_normal((task.length, task.d_in))
    pos = int(rng.integers(0, task.length // 4))
    x[pos, label] += task.signal_scale
    return x, label


def gen_long_majority(task: SyntheticTask, split: str, index: int):
    """One sample: (tokens (L, D) float64, label in {0, 1})."""
    rng = sample_rng(task.seed, split, index)
    window = task.window if task.window is not None else task.length // 2
    while True:
        x = rng.standard_normal((task.length, task.d_in))
        positives = int((x[:window, 0] > 0).sum())
        if 2 * positives != window:  # tie: redraw from the same stream
            return x, int(2 * positives > window)


_GENERATORS = {"delayed-class": gen_delayed_class,
               "long-majority": gen_long_majority}


class SyntheticDataset:
    """Index -> (token grid (L, 1, 1, D) float64, label). Samples are
    generated on demand; nothing is cached."""

    def __init__(self, task: SyntheticTask, split: str, n: int):
        if split not in SPLIT_IDS:
            raise ValueError(f"unknown split {split!r}")
        self.task = task
        self.split = split
        self.n = int(n)
        self._gen = _GENERATORS[task.kind]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index: int):
        if not 0 <= index < self.n:
            raise IndexError(index)
        x, y = self._gen(self.task, self.split, index)
        return x.reshape(self.task.length, 1, 1, self.task.d_in), y

    def raw(self, index: int):
        """The flat (L, D) sample, for probes and oracles."""
        return self._gen(self.task, self.split, index)


# ---------------------------------------------------------------------------
# feature files: a manifest naming one tensor file per sample

def write_manifest(path, shape, entries) -> None:
    """Write a manifest: a shape declaration line then path<TAB>label lines."""
    lines = ["shape\t" + ",".join(str(s) for s in shape)]
    lines += [f"{rel}\t{label}" for rel, label in entries]
    Path(path).write_text("\n".join(lines) + "\n")


class FeatureDataset:
    """Lazily loads per-sample token grids named by a manifest.

    Manifest format, tab-separated, '#' comments allowed:

        shape<TAB>T,H,W,D
        relative/path.stf<TAB>label
        ...

    An empty file is a valid empty dataset. Each loaded tensor must match the
    declared shape; mismatches raise with the offending file named.
    """

    def __init__(self, manifest_path):
        self.manifest_path = Path(manifest_path)
        base = self.manifest_path.parent
        self.shape: tuple | None = None
        self.entries: list[tuple[Path, int]] = []
        for lineno, line in enumerate(self.manifest_path.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{self.manifest_path}:{lineno}: expected two "
                                 f"tab-separated fields, got {line!r}")
            key, value = parts
            if key == "shape":
                if self.shape is not None:
                    raise ValueError(f"{self.manifest_path}:{lineno}: duplicate shape line")
                self.shape = tuple(int(v) for v in value.split(","))
                continue
            if self.shape is None:
                raise ValueError(f"{self.manifest_path}:{lineno}: shape line must "
                                 f"come before sample entries")
            self.entries.append((base / key, int(value)))

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, index: int):
        path, label = self.entries[index]
        arr = stf.load_stf(path)
        if arr.shape != self.shape:
            raise ValueError(f"{path}: tensor shape {arr.shape} does not match "
                             f"manifest-declared shape {self.shape}")
        return arr, label


def load_features(manifest_path) -> FeatureDataset:
    return FeatureDataset(manifest_path)
