"""Communication topology, per-subsystem dropout distributions and sampling.

Patterns are stored on the sender side: ``pattern(i)`` is the set of
subsystems that actually receive subsystem ``i``'s message.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PMF_TOL = 1e-12


def chain_topology(N, d) -> list[frozenset]:
    """Receivers ``{j : |i - j| <= d}`` of every node in an ``N``-node chain.

    This is the column support of the ``d``-th power of the tridiagonal
    adjacency matrix.
    """
    if N < 1 or d < 0:
        raise ValueError(f"need N >= 1 and d >= 0, got N={N}, d={d}")
    return [frozenset(range(max(0, i - d), min(N, i + d + 1))) for i in range(N)]


def _mirror(sets):
    N = len(sets)
    out = [set() for _ in range(N)]
    for i, s in enumerate(sets):
        for j in s:
            out[j].add(i)
    return [frozenset(s) for s in out]


@dataclass(frozen=True)
class CommTopology:
    """Maximal and guaranteed receiver sets; incoming sets are derived."""

    out_max: tuple[frozenset, ...]
    out_min: tuple[frozenset, ...]

    def __post_init__(self):
        out_max = tuple(frozenset(s) for s in self.out_max)
        out_min = tuple(frozenset(s) for s in self.out_min)
        if len(out_max) != len(out_min):
            raise ValueError("out_max and out_min must have one entry per subsystem")
        N = len(out_max)
        for i in range(N):
            if i not in out_min[i]:
                raise ValueError(f"self-link of subsystem {i} must be guaranteed")
            if not out_min[i] <= out_max[i]:
                raise ValueError(f"out_min({i}) is not contained in out_max({i})")
            if not out_max[i] <= frozenset(range(N)):
                raise ValueError(f"out_max({i}) names unknown subsystems")
        object.__setattr__(self, "out_max", out_max)
        object.__setattr__(self, "out_min", out_min)

    @classmethod
    def chain(cls, N, d_max, d_min):
        return cls(tuple(chain_topology(N, d_max)), tuple(chain_topology(N, d_min)))

    @property
    def N(self) -> int:
        return len(self.out_max)

    @property
    def in_max(self):
        return tuple(_mirror(self.out_max))

    @property
    def in_min(self):
        return tuple(_mirror(self.out_min))


@dataclass(frozen=True)
class DropoutDistribution:
    """Per-subsystem pmf over receiver sets.

    ``support[i]`` is a tuple of ``(pattern, probability)`` pairs.  Draws are
    independent across subsystems and across time.
    """

    topology: CommTopology
    support: tuple[tuple[tuple[frozenset, float], ...], ...]

    def __post_init__(self):
        topo = self.topology
        if len(self.support) != topo.N:
            raise ValueError(f"need one pmf per subsystem ({topo.N}), got {len(self.support)}")
        clean = []
        for i, entries in enumerate(self.support):
            pats = [frozenset(s) for s, _ in entries]
            probs = [float(q) for _, q in entries]
            if not pats:
                raise ValueError(f"empty pmf for subsystem {i}")
            if len(set(pats)) != len(pats):
                raise ValueError(f"duplicate patterns in pmf of subsystem {i}")
            if any(q < 0.0 or q > 1.0 for q in probs):
                raise ValueError(f"probabilities of subsystem {i} must lie in [0, 1]")
            if abs(sum(probs) - 1.0) > PMF_TOL:
                raise ValueError(f"pmf of subsystem {i} sums to {sum(probs)!r}")
            for s in pats:
                if not (topo.out_min[i] <= s <= topo.out_max[i]):
                    raise ValueError(f"pattern {sorted(s)} of subsystem {i} violates topology bounds")
            clean.append(tuple(zip(pats, probs)))
        object.__setattr__(self, "support", tuple(clean))

    @property
    def N(self) -> int:
        return self.topology.N

    def patterns(self, i) -> list[frozenset]:
        return [s for s, _ in self.support[i]]

    def probabilities(self, i) -> np.ndarray:
        return np.array([q for _, q in self.support[i]])

    def index_of(self, i, pattern) -> int:
        return self.patterns(i).index(frozenset(pattern))

    def is_deterministic(self) -> bool:
        return all(len(s) == 1 for s in self.support)


@dataclass(frozen=True)
class DropoutPattern:
    """One realized communication round: receiver set of every subsystem."""

    receivers: tuple[frozenset, ...]
    topology: CommTopology | None = None

    def __post_init__(self):
        recv = tuple(frozenset(s) for s in self.receivers)
        object.__setattr__(self, "receivers", recv)
        topo = self.topology
        if topo is None:
            return
        if len(recv) != topo.N:
            raise ValueError(f"pattern has {len(recv)} receiver sets, topology has {topo.N} nodes")
        for i, s in enumerate(recv):
            if not topo.out_min[i] <= s <= topo.out_max[i]:
                raise ValueError(f"receivers of subsystem {i} violate out_min <= V <= out_max: {sorted(s)}")

    def dropped(self, i) -> frozenset:
        if self.topology is None:
            raise ValueError("dropped sets need the topology")
        return self.topology.out_max[i] - self.receivers[i]


def uniform_d_distribution(N, d_values, d_min=None) -> DropoutDistribution:
    """Each node draws its hop radius uniformly from ``d_values``.

    Coinciding patterns (possible near the chain ends for large radii) are
    merged and their probabilities added.
    """
    d_values = sorted(set(int(d) for d in d_values))
    if not d_values:
        raise ValueError("d_values must be nonempty")
    if d_min is None:
        d_min = d_values[0]
    if d_min > d_values[0]:
        raise ValueError(f"d_min={d_min} exceeds the smallest radius {d_values[0]}")
    topo = CommTopology.chain(N, d_values[-1], d_min)
    per_d = {d: chain_topology(N, d) for d in d_values}
    q = 1.0 / len(d_values)
    support = []
    for i in range(N):
        acc: dict[frozenset, float] = {}
        for d in d_values:
            s = per_d[d][i]
            acc[s] = acc.get(s, 0.0) + q
        # sort by size so the nesting order of the chain is preserved
        support.append(tuple(sorted(acc.items(), key=lambda e: (len(e[0]), sorted(e[0])))))
    return DropoutDistribution(topo, tuple(support))


def full_distribution(topology: CommTopology) -> DropoutDistribution:
    """Degenerate pmf: every link in ``out_max`` always delivers."""
    return DropoutDistribution(topology, tuple(((s, 1.0),) for s in topology.out_max))


def enumerate_joint_support(dist: DropoutDistribution, i) -> list[tuple[frozenset, float]]:
    """Subsystem ``i``'s pmf support with strictly positive probabilities."""
    return [(s, q) for s, q in dist.support[i] if q > 0.0]


def _cdfs(dist):
    out = []
    for i in range(dist.N):
        c = np.cumsum(dist.probabilities(i))
        c[-1] = np.inf
        out.append(c)
    return out


def sample_pattern_indices(dist: DropoutDistribution, rng: np.random.Generator, steps) -> np.ndarray:
    """Support indices for ``steps`` rounds, shape (steps, N).

    Consumes ``steps * N`` uniforms, row-major, so it draws the same stream
    as ``steps`` successive calls of :func:`sample_pattern`.
    """
    u = rng.random((steps, dist.N))
    idx = np.empty((steps, dist.N), dtype=np.int64)
    for i, c in enumerate(_cdfs(dist)):
        idx[:, i] = np.searchsorted(c, u[:, i], side="right")
    return idx


def sample_pattern(dist: DropoutDistribution, rng: np.random.Generator) -> DropoutPattern:
    idx = sample_pattern_indices(dist, rng, 1)[0]
    return pattern_from_indices(dist, idx)


def pattern_from_indices(dist: DropoutDistribution, idx: Sequence[int]) -> DropoutPattern:
    return DropoutPattern(
        tuple(dist.support[i][int(k)][0] for i, k in enumerate(idx)), dist.topology
    )


def round_robin_indices(dist: DropoutDistribution, steps, offset=0) -> np.ndarray:
    """Deterministic adversarial schedule cycling every node through its support.

    Node ``i`` uses support entry ``(t + i + offset) mod |support_i|`` at
    step ``t``, so neighbours are out of phase.
    """
    sizes = np.array([len(s) for s in dist.support])
    t = np.arange(steps)[:, None]
    return (t + np.arange(dist.N)[None, :] + offset) % sizes[None, :]
