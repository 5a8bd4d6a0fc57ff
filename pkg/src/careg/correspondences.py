"""Point correspondences between a slave and a master image."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class CorrespondenceSet:
    """Paired points; row ``k`` of ``slave`` corresponds to row ``k`` of ``master``.

    Coordinates are (x, y) in pixels.  ``scores`` lie in [0, 1].
    """

    slave: np.ndarray
    master: np.ndarray
    scores: np.ndarray = None
    source: str = "sift"
    # optional provenance indices into the descriptor lists that produced the pairs
    slave_index: np.ndarray = field(default=None, repr=False)
    master_index: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.slave = np.asarray(self.slave, dtype=np.float64).reshape(-1, 2)
        self.master = np.asarray(self.master, dtype=np.float64).reshape(-1, 2)
        if len(self.slave) != len(self.master):
            raise ValueError("slave and master point counts differ")
        if self.scores is None:
            self.scores = np.ones(len(self.slave))
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if len(self.scores) != len(self.slave):
            raise ValueError("score count differs from pair count")
        if not (np.all(np.isfinite(self.slave)) and np.all(np.isfinite(self.master))):
            raise ValueError("non-finite coordinates")
        if np.any((self.scores < 0) | (self.scores > 1)):
            raise ValueError("scores must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.slave)

    def subset(self, keep, source: str | None = None) -> "CorrespondenceSet":
        keep = np.asarray(keep)
        return CorrespondenceSet(
            self.slave[keep], self.master[keep], self.scores[keep],
            source=source or self.source,
            slave_index=None if self.slave_index is None else self.slave_index[keep],
            master_index=None if self.master_index is None else self.master_index[keep],
        )

    def to_csv(self, path) -> None:
        lines = ["xs,ys,xm,ym,score"]
        for row in np.column_stack([self.slave, self.master, self.scores]):
            lines.append(",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, source: str = "sift") -> "CorrespondenceSet":
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("xs"):
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
            rows.append([float(p) for p in parts])
        data = np.array(rows, dtype=np.float64).reshape(-1, 5)
        return cls(data[:, 0:2], data[:, 2:4], data[:, 4], source=source)
