"""Multiple-attractor cellular automata over the additive rules 90 and 150.

Cell ``i`` of an ``n``-cell register updates as
``x[i-1] ^ x[i+1]`` (rule 90) or ``x[i-1] ^ x[i] ^ x[i+1]`` (rule 150)
with null boundaries.  States are held as Python ints, bit ``i`` = cell ``i``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

RULES = (90, 150)


@dataclass(frozen=True)
class MACAConfig:
    n: int
    rule_vector: tuple[int, ...]
    depth: int
    pef_positions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "rule_vector", tuple(int(r) for r in self.rule_vector))
        object.__setattr__(self, "pef_positions", tuple(int(p) for p in self.pef_positions))
        if self.n < 1 or len(self.rule_vector) != self.n:
            raise ValueError("rule_vector length must equal n >= 1")
        if any(r not in RULES for r in self.rule_vector):
            raise ValueError("rules must be 90 or 150")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        pos = self.pef_positions
        if len(set(pos)) != len(pos) or any(not 0 <= p < self.n for p in pos):
            raise ValueError("pef_positions must be distinct indices < n")
        if len(pos) > self.n:
            raise ValueError("m must not exceed n")

    @property
    def m(self) -> int:
        return len(self.pef_positions)

    @property
    def full(self) -> int:
        return (1 << self.n) - 1

    @property
    def mask150(self) -> int:
        return sum(1 << i for i, r in enumerate(self.rule_vector) if r == 150)


def to_int(bits: Sequence[int]) -> int:
    return sum((int(b) & 1) << i for i, b in enumerate(bits))


def to_bits(state: int, n: int) -> tuple[int, ...]:
    return tuple((state >> i) & 1 for i in range(n))


def step(state: int, cfg: MACAConfig) -> int:
    return ((state << 1) ^ (state >> 1) ^ (state & cfg.mask150)) & cfg.full


class Attractor(NamedTuple):
    state: int
    kind: str  # "fixed", "cycle" or "depth"
    steps: int


def run_to_attractor(pattern, cfg: MACAConfig) -> Attractor:
    """Iterate up to ``depth`` steps; stop at a fixed point or the first repeated state."""
    state = pattern if isinstance(pattern, int) else to_int(pattern)
    seen = {state}
    for t in range(1, cfg.depth + 1):
        nxt = step(state, cfg)
        if nxt == state:
            return Attractor(state, "fixed", t - 1)
        if nxt in seen:
            return Attractor(nxt, "cycle", t)
        seen.add(nxt)
        state = nxt
    return Attractor(state, "depth", cfg.depth)


def pef_bits(state: int, positions: Sequence[int]) -> tuple[int, ...]:
    return tuple((state >> p) & 1 for p in positions)


def maca_classify(pattern, cfg: MACAConfig, db) -> tuple[str, tuple[int, ...]]:
    """Run the pattern to its attractor and look its PEF bits up in ``db``."""
    bits = pattern if isinstance(pattern, int) else list(pattern)
    if not isinstance(bits, int) and len(bits) != cfg.n:
        raise ValueError(f"pattern length {len(bits)} != n={cfg.n}")
    if len(db) == 0:
        raise ValueError("rule DB is empty")
    sig = pef_bits(run_to_attractor(bits, cfg).state, cfg.pef_positions)
    label = db.label_for(sig)
    return (label if label is not None else "unknown"), sig


# ---------------------------------------------------------------------------
# Design helpers
# ---------------------------------------------------------------------------

def transition_matrix(cfg: MACAConfig) -> np.ndarray:
    """GF(2) characteristic matrix T with next = T @ state (mod 2)."""
    T = np.zeros((cfg.n, cfg.n), dtype=np.uint8)
    for i, r in enumerate(cfg.rule_vector):
        if i > 0:
            T[i, i - 1] = 1
        if i < cfg.n - 1:
            T[i, i + 1] = 1
        if r == 150:
            T[i, i] = 1
    return T


def attractor_basins(cfg: MACAConfig) -> dict[int, int]:
    """Map every state of the register to its attractor representative."""
    return {s: run_to_attractor(s, cfg).state for s in range(1 << cfg.n)}


def find_pef_positions(attractors: Sequence[int], n: int, m: int | None = None) -> tuple[int, ...] | None:
    """Lexicographically first ``m`` bit positions at which the attractor
    representatives show all ``2**m`` patterns (pseudo-exhaustive).

    ``m`` defaults to the largest value the number of attractors allows.
    """
    attractors = sorted(set(attractors))
    if m is None:
        m = min(n, len(attractors).bit_length() - 1)
    if m < 1 or len(attractors) < 2 ** m:
        return None
    for pos in itertools.combinations(range(n), m):
        if len({pef_bits(a, pos) for a in attractors}) == 2 ** m:
            return pos
    return None


def design_maca(n: int = 8, rng_seed: int = 0, m: int = 3, depth: int | None = None,
                max_tries: int = 2000) -> MACAConfig:
    """Seeded random search for a {90,150} rule vector with ``m`` PEF positions.

    A null-boundary {90,150} register has at most two fixed points, so cyclic
    attractors (represented by their first repeated state) are admitted.
    """
    if n > 16:
        raise ValueError("exhaustive design limited to n <= 16")
    if not 1 <= m <= n:
        raise ValueError("need 1 <= m <= n")
    depth = n if depth is None else depth
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_tries):
        rules = tuple(int(r) for r in rng.choice(RULES, size=n))
        probe = MACAConfig(n, rules, depth, ())
        pos = find_pef_positions(attractor_basins(probe).values(), n, m)
        if pos is not None:
            return MACAConfig(n, rules, depth, pos)
    raise RuntimeError(f"no MACA found for n={n}, m={m} after {max_tries} tries")
