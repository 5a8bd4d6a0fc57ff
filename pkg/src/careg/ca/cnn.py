"""Discrete-time cellular neural network (CNN) cells.

Each cell follows ``dx/dt = -x + A*y + B*u + z`` with the piecewise-linear
output ``y = clip(x, -1, 1)``, integrated by one forward-Euler step of size
``dt``.  Templates are applied as 3x3 correlations with zero-flux
(edge-replicating) boundaries.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

PAYLOAD_LEN = 20  # A (9) + B (9) + z + dt


class Gene:
    """Feedback template ``A``, control template ``B``, bias ``z`` and step ``dt``."""

    __slots__ = ("A", "B", "z", "dt")

    def __init__(self, A, B, z: float = 0.0, dt: float = 1.0):
        self.A = np.array(A, dtype=np.float64).reshape(3, 3)
        self.B = np.array(B, dtype=np.float64).reshape(3, 3)
        self.z = float(z)
        self.dt = float(dt)
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B)) and np.isfinite(self.z)):
            raise ValueError("gene entries must be finite")
        if not 0 < self.dt <= 1:
            raise ValueError(f"dt must lie in (0, 1], got {self.dt}")

    @classmethod
    def from_payload(cls, payload) -> "Gene":
        p = np.asarray(payload, dtype=np.float64)
        if p.shape != (PAYLOAD_LEN,):
            raise ValueError(f"payload must have {PAYLOAD_LEN} entries")
        return cls(p[:9], p[9:18], p[18], p[19])

    @classmethod
    def from_hex(cls, text: str) -> "Gene":
        raw = bytes.fromhex(text)
        if len(raw) != 8 * PAYLOAD_LEN:
            raise ValueError(f"gene payload must be {16 * PAYLOAD_LEN} hex digits")
        return cls.from_payload(struct.unpack(f">{PAYLOAD_LEN}d", raw))

    def payload(self) -> np.ndarray:
        return np.concatenate([self.A.ravel(), self.B.ravel(), [self.z, self.dt]])

    def to_hex(self) -> str:
        return struct.pack(f">{PAYLOAD_LEN}d", *self.payload()).hex()

    @property
    def rule_id(self) -> str:
        return hashlib.sha1(self.to_hex().encode("ascii")).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, Gene) and np.array_equal(self.payload(), other.payload())

    def __hash__(self):
        return hash(self.to_hex())

    def __repr__(self):
        return f"Gene(rule_id={self.rule_id}, z={self.z:.3g}, dt={self.dt:.3g})"


def decay_gene(z: float = -1.0, dt: float = 1.0) -> Gene:
    return Gene(np.zeros(9), np.zeros(9), z, dt)


def identity_gene(dt: float = 1.0) -> Gene:
    """Bistable cell (A centre 1): saturated states are fixed points."""
    A = np.zeros((3, 3))
    A[1, 1] = 1.0
    return Gene(A, np.zeros(9), 0.0, dt)


def majority_gene(dt: float = 1.0) -> Gene:
    """Every cell adopts the sign of its 3x3 neighbourhood sum (denoising)."""
    return Gene(np.ones((3, 3)), np.zeros(9), 0.0, dt)


def edge_gene() -> Gene:
    """Classic binary edge-detection template: marks object pixels with a background neighbour."""
    A = np.zeros((3, 3))
    A[1, 1] = 2.0
    B = -np.ones((3, 3))
    B[1, 1] = 8.0
    return Gene(A, B, -1.0, 1.0)


@dataclass
class CAState:
    x: np.ndarray
    threshold: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2:
            raise ValueError("CA state must be 2-D")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("CA state must be finite")

    @classmethod
    def from_mask(cls, mask, threshold: float = 0.0) -> "CAState":
        return cls(np.where(np.asarray(mask, dtype=bool), 1.0, -1.0), threshold)

    @property
    def shape(self):
        return self.x.shape

    def output(self) -> np.ndarray:
        return np.clip(self.x, -1.0, 1.0)

    def mask(self) -> np.ndarray:
        return self.x > self.threshold


def _template(field: np.ndarray, t: np.ndarray) -> np.ndarray:
    if not t.any():
        return np.zeros_like(field)
    return ndimage.correlate(field, t, mode="nearest")


def cnn_step(s: CAState, g: Gene, u) -> CAState:
    """One synchronous forward-Euler update of every cell."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != s.shape:
        raise ValueError(f"input shape {u.shape} differs from state shape {s.shape}")
    y = s.output()
    # x + dt*(-x + f) written so that dt=1 yields f exactly
    f = _template(y, g.A) + _template(u, g.B) + g.z
    return CAState((1.0 - g.dt) * s.x + g.dt * f, s.threshold)


class Evolution(NamedTuple):
    mask: np.ndarray
    converged: bool
    steps: int
    state: CAState


def evolve_to_segmentation(seed: CAState, g: Gene, u, max_steps: int = 50,
                           patience: int = 3) -> Evolution:
    """Iterate until the binarised output is unchanged for ``patience`` steps."""
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    u = np.asarray(u, dtype=np.float64)
    state = seed
    mask = state.mask()
    still = 0
    for step in range(1, max_steps + 1):
        state = cnn_step(state, g, u)
        new = state.mask()
        still = still + 1 if np.array_equal(new, mask) else 0
        mask = new
        if still >= patience:
            return Evolution(mask, True, step, state)
    return Evolution(mask, False, max_steps, state)
