"""Distributed controller implementation with dropouts, closed-loop rollouts
and cost bookkeeping.

Every subsystem broadcasts its disturbance estimate once per step together
with the FIR-weighted column it selected.  A receiver that misses the
message loses that estimate's contribution at every lag, so the column
applied to ``w_hat_b[i]`` is fixed by the pattern sensed at its birth time
``b``.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dropout import DropoutDistribution, DropoutPattern, sample_pattern_indices
from .errors import DivergenceError
from .synthesis import ControllerBank

OVERFLOW_GUARD = 1e12
MODES = ("offline", "online")


class ColumnSelector:
    """Looks up (and caches) the column stacks applied under a pattern."""

    def __init__(self, bank: ControllerBank, mode):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "offline" and not bank.offline:
            raise ValueError("bank has no offline columns")
        if mode == "online" and not bank.online:
            raise ValueError("bank has no online columns")
        self.bank = bank
        self.mode = mode
        self.sys = bank.sys
        self._cache = {}

    def column(self, i, pattern):
        key = (i, frozenset(pattern))
        if key not in self._cache:
            col = self.bank.column(i, pattern, self.mode)
            # rows outside the pattern never reach their receivers
            xm = self.sys.state_mask(pattern)
            um = self.sys.input_mask(pattern)
            self._cache[key] = (
                np.where(xm[None, :, None], col.phiX, 0.0),
                np.where(um[None, :, None], col.phiU, 0.0),
            )
        return self._cache[key]

    def assemble(self, receivers: Sequence[frozenset]):
        """Whole-system stacks (T, n, n) and (T, p, n) for one birth time."""
        parts = [self.column(i, S) for i, S in enumerate(receivers)]
        return (np.concatenate([px for px, _ in parts], axis=2),
                np.concatenate([pu for _, pu in parts], axis=2))

    def check_coverage(self, dist: DropoutDistribution):
        for i in range(dist.N):
            for S in dist.patterns(i):
                self.column(i, S)


@dataclass
class RuntimeState:
    """Last ``T - 1`` estimates with the column stacks tagged at their birth."""

    T: int
    t: int = 0
    buffer: deque = field(default_factory=deque)  # newest first: (w_hat, effX, effU, tag)

    def __post_init__(self):
        self.buffer = deque(self.buffer, maxlen=max(self.T - 1, 0))


def controller_step(state: RuntimeState, x, pattern: DropoutPattern, selector: ColumnSelector):
    """One exchange round of the distributed controller.

    ``state`` is advanced in place and also returned.  Returns
    ``(u, w_hat, state)``.
    """
    x = np.asarray(x, dtype=float)
    x_hat = np.zeros_like(x)
    for lag, (w_b, effX, _, _) in enumerate(state.buffer, start=1):
        x_hat += effX[lag] @ w_b
    w_hat = x - x_hat
    effX, effU = selector.assemble(pattern.receivers)
    u = effU[0] @ w_hat
    for lag, (w_b, _, effU_b, _) in enumerate(state.buffer, start=1):
        u += effU_b[lag] @ w_b
    if state.T > 1:
        state.buffer.appendleft((w_hat, effX, effU, pattern.receivers))
    state.t += 1
    return u, w_hat, state


@dataclass
class Trace:
    x: np.ndarray  # (T_sim + 1, n)
    u: np.ndarray  # (T_sim + 1, p)
    w_hat: np.ndarray
    w: np.ndarray  # process noise actually injected
    patterns: np.ndarray  # (T_sim + 1, N) support indices
    cost: np.ndarray  # x'x + u'u per step

    @property
    def total_cost(self) -> float:
        return float(self.cost.sum())

    @property
    def moving_average(self) -> np.ndarray:
        return np.cumsum(self.cost) / np.arange(1, len(self.cost) + 1)


def noise_rng(seed):
    return np.random.default_rng([int(seed), 0])


def dropout_rng(seed):
    return np.random.default_rng([int(seed), 1])


def rollout(bank: ControllerBank, mode, dist: DropoutDistribution | None = None, sigma=1.0, T_sim=100,
            noise_seed=0, dropout_seed=0, x0=None, schedule=None, guard=OVERFLOW_GUARD) -> Trace:
    """Closed-loop simulation of ``x+ = A x + B u + w`` from ``x0`` (default 0).

    Patterns are drawn from ``dist`` (default: the bank's distribution)
    unless an explicit ``schedule`` of support indices, shape
    (T_sim + 1, N), is given.  Noise and patterns come from separate
    streams, so two modes run with the same seeds see identical ``w`` and
    identical patterns.
    """
    sys = bank.sys
    dist = bank.dist if dist is None else dist
    if sigma < 0 or T_sim < 1:
        raise ValueError("need sigma >= 0 and T_sim >= 1")
    steps = T_sim + 1
    w = sigma * noise_rng(noise_seed).standard_normal((steps, sys.n))
    if schedule is None:
        idx = sample_pattern_indices(dist, dropout_rng(dropout_seed), steps)
    else:
        idx = np.asarray(schedule, dtype=np.int64)
        if idx.shape != (steps, dist.N):
            raise ValueError(f"schedule must have shape {(steps, dist.N)}, got {idx.shape}")

    selector = ColumnSelector(bank, mode)
    supports = [dist.patterns(i) for i in range(dist.N)]
    state = RuntimeState(bank.T)
    xs = np.zeros((steps, sys.n))
    us = np.zeros((steps, sys.p))
    wh = np.zeros((steps, sys.n))
    x = np.zeros(sys.n) if x0 is None else np.array(x0, dtype=float)
    for t in range(steps):
        if not np.all(np.abs(x) <= guard):
            raise DivergenceError(f"state left the overflow guard {guard:g} at step {t}", step=t)
        pattern = DropoutPattern(tuple(supports[i][k] for i, k in enumerate(idx[t])), dist.topology)
        u, w_hat, state = controller_step(state, x, pattern, selector)
        xs[t], us[t], wh[t] = x, u, w_hat
        x = sys.A @ x + sys.B @ u + w[t]
    cost = np.einsum("ti,ti->t", xs, xs) + np.einsum("ti,ti->t", us, us)
    return Trace(xs, us, wh, w, idx, cost)


@dataclass
class CostMetrics:
    per_step: np.ndarray  # (seeds, T_sim + 1)
    mean_per_step: np.ndarray
    totals: np.ndarray  # per seed
    moving_average: np.ndarray

    @property
    def mean_total(self) -> float:
        return float(self.totals.mean())


def cost_metrics(traces) -> CostMetrics:
    """Per-step cost, totals and the running mean of the cross-seed average."""
    if isinstance(traces, Trace):
        traces = [traces]
    if not traces:
        raise ValueError("need at least one trace")
    C = np.stack([tr.cost for tr in traces])
    mean = C.mean(axis=0)
    M = np.cumsum(mean) / np.arange(1, C.shape[1] + 1)
    return CostMetrics(C, mean, C.sum(axis=1), M)


def fmt(v) -> str:
    return format(float(v), ".17g")


def write_trace_csv(trace: Trace, path):
    path = Path(path)
    n, p, N = trace.x.shape[1], trace.u.shape[1], trace.patterns.shape[1]
    header = (["t"] + [f"x_{j + 1}" for j in range(n)] + [f"u_{j + 1}" for j in range(p)]
              + ["C"] + [f"pattern_{i + 1}" for i in range(N)])
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for t in range(len(trace.cost)):
            wr.writerow([t] + [fmt(v) for v in trace.x[t]] + [fmt(v) for v in trace.u[t]]
                        + [fmt(trace.cost[t])] + [int(k) for k in trace.patterns[t]])


def read_trace_csv(path):
    """Parse a trace CSV back into arrays ``(x, u, C, patterns)``."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xi = [k for k, h in enumerate(header) if h.startswith("x_")]
    ui = [k for k, h in enumerate(header) if h.startswith("u_")]
    pi = [k for k, h in enumerate(header) if h.startswith("pattern_")]
    ci = header.index("C")
    x = np.array([[float(r[k]) for k in xi] for r in body])
    u = np.array([[float(r[k]) for k in ui] for r in body])
    C = np.array([float(r[ci]) for r in body])
    pats = np.array([[int(r[k]) for k in pi] for r in body])
    return x, u, C, pats
