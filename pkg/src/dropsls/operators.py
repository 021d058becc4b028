"""FIR system responses, achievability residuals and the norms used to
certify and score them.

Conventions
-----------
A response with horizon ``T`` is stored as a stack of ``T`` blocks with
shape ``(T, rows, cols)``.  Array index ``k`` holds the lag-``k`` block
``Phi[k+1]`` in one-based notation, so ``PhiX[0]`` is the identity.
Residual blocks ``delta[k]`` are strictly causal: index ``k`` acts at lag
``k + 1``.  Subsystems, states and inputs are all indexed from zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CertificationError, DimensionError

Partition = tuple[tuple[int, int], ...]


def _check_partition(partition, size, label) -> Partition:
    parts = tuple((int(a), int(b)) for a, b in partition)
    pos = 0
    for i, (a, b) in enumerate(parts):
        if a != pos or b <= a:
            raise DimensionError(
                f"{label} partition block {i} = [{a}, {b}) is not contiguous "
                f"with the previous block (expected start {pos})"
            )
        pos = b
    if pos != size:
        raise DimensionError(f"{label} partition covers {pos} indices, expected {size}")
    return parts


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Block-partitioned dynamics ``x+ = A x + B u + w`` of ``N`` subsystems.

    Partitions are half-open index ranges ``(start, stop)`` per subsystem.
    """

    A: np.ndarray
    B: np.ndarray
    state_partition: Partition
    input_partition: Partition

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if B.ndim != 2 or B.shape[0] != A.shape[0]:
            raise DimensionError(f"B must have {A.shape[0]} rows, got shape {B.shape}")
        sp = _check_partition(self.state_partition, A.shape[0], "state")
        ip = _check_partition(self.input_partition, B.shape[1], "input")
        if len(sp) != len(ip):
            raise DimensionError(
                f"state partition has {len(sp)} blocks but input partition has {len(ip)}"
            )
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "state_partition", sp)
        object.__setattr__(self, "input_partition", ip)

    @classmethod
    def scalar_subsystems(cls, A, B):
        """One state and one input per subsystem (``B`` must be square)."""
        A = np.asarray(A, dtype=float)
        n = A.shape[0]
        parts = tuple((i, i + 1) for i in range(n))
        return cls(A, B, parts, parts)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def N(self) -> int:
        return len(self.state_partition)

    def state_block(self, i) -> slice:
        a, b = self.state_partition[i]
        return slice(a, b)

    def input_block(self, i) -> slice:
        a, b = self.input_partition[i]
        return slice(a, b)

    def block_width(self, i) -> int:
        a, b = self.state_partition[i]
        return b - a

    def state_mask(self, subsystems: Iterable[int]) -> np.ndarray:
        mask = np.zeros(self.n, dtype=bool)
        for j in subsystems:
            mask[self.state_block(j)] = True
        return mask

    def input_mask(self, subsystems: Iterable[int]) -> np.ndarray:
        mask = np.zeros(self.p, dtype=bool)
        for j in subsystems:
            mask[self.input_block(j)] = True
        return mask

    def identity_column(self, i) -> np.ndarray:
        """Block column of the ``n x n`` identity owned by subsystem ``i``."""
        return np.eye(self.n)[:, self.state_block(i)]


@dataclass(frozen=True, eq=False)
class FirResponse:
    """Whole-system FIR responses ``PhiX`` (T, n, n) and ``PhiU`` (T, p, n)."""

    PhiX: np.ndarray
    PhiU: np.ndarray

    def __post_init__(self):
        PhiX = np.asarray(self.PhiX, dtype=float)
        PhiU = np.asarray(self.PhiU, dtype=float)
        if PhiX.ndim != 3 or PhiX.shape[1] != PhiX.shape[2] or PhiX.shape[0] < 1:
            raise DimensionError(f"PhiX must have shape (T, n, n), got {PhiX.shape}")
        if PhiU.ndim != 3 or PhiU.shape[0] != PhiX.shape[0] or PhiU.shape[2] != PhiX.shape[1]:
            raise DimensionError(f"PhiU must have shape (T, p, n), got {PhiU.shape}")
        if not np.array_equal(PhiX[0], np.eye(PhiX.shape[1])):
            raise DimensionError("PhiX[1] must be the identity")
        if not (np.all(np.isfinite(PhiX)) and np.all(np.isfinite(PhiU))):
            raise ValueError("response blocks must be finite")
        object.__setattr__(self, "PhiX", PhiX)
        object.__setattr__(self, "PhiU", PhiU)

    @property
    def T(self) -> int:
        return self.PhiX.shape[0]

    def column(self, sys: SystemModel, i, support=None) -> "ColumnResponse":
        sl = sys.state_block(i)
        if support is None:
            support = range(sys.N)
        return ColumnResponse(i, self.PhiX[:, :, sl], self.PhiU[:, :, sl], frozenset(support))

    @classmethod
    def from_columns(cls, sys: SystemModel, columns: Sequence["ColumnResponse"]):
        T = columns[0].T
        PhiX = np.zeros((T, sys.n, sys.n))
        PhiU = np.zeros((T, sys.p, sys.n))
        for col in columns:
            if col.T != T:
                raise DimensionError(f"column {col.owner} has horizon {col.T}, expected {T}")
            sl = sys.state_block(col.owner)
            PhiX[:, :, sl] = col.phiX
            PhiU[:, :, sl] = col.phiU
        return cls(PhiX, PhiU)


@dataclass(frozen=True, eq=False)
class ColumnResponse:
    """The block column of subsystem ``owner``: phiX (T, n, n_i), phiU (T, p, n_i).

    ``support`` lists the subsystems whose rows may be nonzero.  Shape and
    support checks against a specific system happen in
    :func:`check_column`, since the column does not carry its system.
    """

    owner: int
    phiX: np.ndarray
    phiU: np.ndarray
    support: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        phiX = np.asarray(self.phiX, dtype=float)
        phiU = np.asarray(self.phiU, dtype=float)
        if phiX.ndim != 3 or phiU.ndim != 3:
            raise DimensionError("column blocks must be 3-d stacks (T, rows, cols)")
        if phiX.shape[0] != phiU.shape[0] or phiX.shape[2] != phiU.shape[2]:
            raise DimensionError(
                f"phiX {phiX.shape} and phiU {phiU.shape} disagree on horizon or width"
            )
        object.__setattr__(self, "phiX", phiX)
        object.__setattr__(self, "phiU", phiU)
        object.__setattr__(self, "support", frozenset(int(j) for j in self.support))

    @property
    def T(self) -> int:
        return self.phiX.shape[0]


@dataclass(frozen=True, eq=False)
class ResidualColumn:
    """Residual blocks ``delta`` (T, n, n_i) of subsystem ``owner``'s column."""

    owner: int
    delta: np.ndarray

    @property
    def T(self) -> int:
        return self.delta.shape[0]


def check_column(col: ColumnResponse, sys: SystemModel, require_identity=True):
    """Validate shapes, the identity first block and the declared support."""
    i = col.owner
    if not 0 <= i < sys.N:
        raise DimensionError(f"column owner {i} outside 0..{sys.N - 1}")
    ni = sys.block_width(i)
    if col.phiX.shape[1:] != (sys.n, ni):
        raise DimensionError(
            f"phiX blocks of column {i} have shape {col.phiX.shape[1:]}, expected {(sys.n, ni)}"
        )
    if col.phiU.shape[1:] != (sys.p, ni):
        raise DimensionError(
            f"phiU blocks of column {i} have shape {col.phiU.shape[1:]}, expected {(sys.p, ni)}"
        )
    if require_identity and not np.array_equal(col.phiX[0], sys.identity_column(i)):
        raise DimensionError(f"phiX[1] of column {i} is not the identity block column")
    if col.support:
        xo = ~sys.state_mask(col.support)
        uo = ~sys.input_mask(col.support)
        if np.any(col.phiX[:, xo, :]) or np.any(col.phiU[:, uo, :]):
            raise ValueError(f"column {i} has nonzero rows outside its support")


def project(col: ColumnResponse, sys: SystemModel, pattern) -> ColumnResponse:
    """Zero every row that belongs to a subsystem outside ``pattern``."""
    pattern = frozenset(pattern)
    xm = sys.state_mask(pattern)
    um = sys.input_mask(pattern)
    phiX = np.where(xm[None, :, None], col.phiX, 0.0)
    phiU = np.where(um[None, :, None], col.phiU, 0.0)
    support = (col.support & pattern) if col.support else pattern
    return ColumnResponse(col.owner, phiX, phiU, support)


def residual_blocks(phiX, phiU, A, B) -> np.ndarray:
    """``delta[k] = phiX[k+1] - A phiX[k] - B phiU[k]`` with ``phiX[T+1] = 0``."""
    delta = -(np.einsum("ab,kbc->kac", A, phiX) + np.einsum("ab,kbc->kac", B, phiU))
    delta[:-1] += phiX[1:]
    return delta


def achievability_residual(col: ColumnResponse, sys: SystemModel) -> ResidualColumn:
    """Residual of the column against the dynamics; all-zero means achievable."""
    check_column(col, sys)
    return ResidualColumn(col.owner, residual_blocks(col.phiX, col.phiU, sys.A, sys.B))


def fir_residual(resp: FirResponse, sys: SystemModel) -> np.ndarray:
    if resp.PhiX.shape[1] != sys.n or resp.PhiU.shape[1] != sys.p:
        raise DimensionError("response dimensions do not match the system")
    return residual_blocks(resp.PhiX, resp.PhiU, sys.A, sys.B)


def l1_norm_blocks(blocks) -> float:
    """Max over scalar columns of the absolute sum over all lags and rows."""
    blocks = np.asarray(blocks, dtype=float)
    if blocks.size == 0:
        return 0.0
    return float(np.abs(blocks).sum(axis=(0, 1)).max())


def l1_column_norm(res: ResidualColumn) -> float:
    return l1_norm_blocks(res.delta)


def assemble_delta(columns: Sequence[ResidualColumn], sys: SystemModel) -> np.ndarray:
    """Stack per-subsystem residual columns into the full (T, n, n) operator."""
    T = columns[0].T
    delta = np.zeros((T, sys.n, sys.n))
    seen = set()
    for res in columns:
        if res.T != T:
            raise DimensionError(f"residual {res.owner} has horizon {res.T}, expected {T}")
        sl = sys.state_block(res.owner)
        if res.delta.shape[1:] != (sys.n, sl.stop - sl.start):
            raise DimensionError(f"residual {res.owner} has block shape {res.delta.shape[1:]}")
        delta[:, :, sl] = res.delta
        seen.add(res.owner)
    if len(seen) != sys.N:
        raise DimensionError(f"residual columns cover {sorted(seen)}, need all {sys.N}")
    return delta


def norm_2to1_blocks(blocks) -> float:
    """Max over scalar columns of the Frobenius norm of that column's lags."""
    blocks = np.asarray(blocks, dtype=float)
    return float(np.sqrt((blocks ** 2).sum(axis=(0, 1)).max()))


def weighted_stack(phiX, phiU, Qh, Rh) -> np.ndarray:
    """Blocks of ``[Qh phiX; Rh phiU]`` stacked along the row axis."""
    return np.concatenate(
        [np.einsum("ab,kbc->kac", Qh, phiX), np.einsum("ab,kbc->kac", Rh, phiU)], axis=1
    )


def norm_2to1(col: ColumnResponse, Qh, Rh) -> float:
    """Induced l1 -> l2 norm of the weighted column.

    For a time-invariant FIR operator the worst unit-l1 input is a single
    impulse, so this is the largest per-scalar-column Frobenius norm.
    """
    return norm_2to1_blocks(weighted_stack(col.phiX, col.phiU, Qh, Rh))


def column_frobenius(col: ColumnResponse, Qh, Rh) -> float:
    """Frobenius norm of the whole weighted block column."""
    return float(np.linalg.norm(weighted_stack(col.phiX, col.phiU, Qh, Rh)))


def h2_norm_fir(resp: FirResponse, Qh, Rh) -> float:
    return float(np.linalg.norm(weighted_stack(resp.PhiX, resp.PhiU, Qh, Rh)))


def convolve_causal(blocks, seq, lag0=False) -> np.ndarray:
    """Apply an FIR operator to a sequence ``seq`` of shape (L, cols).

    With ``lag0=False`` block ``k`` acts at lag ``k + 1`` (strictly causal),
    otherwise at lag ``k``.  The output keeps the input length.
    """
    blocks = np.asarray(blocks, dtype=float)
    seq = np.asarray(seq, dtype=float)
    L = seq.shape[0]
    out = np.zeros((L, blocks.shape[1]))
    shift = 0 if lag0 else 1
    for k in range(blocks.shape[0]):
        lag = k + shift
        if lag >= L:
            break
        out[lag:] += seq[: L - lag] @ blocks[k].T
    return out


def neumann_tail_bound(lam, K) -> float:
    """l1 bound on the tail dropped by truncating the series at order ``K``."""
    return lam ** (K + 1) / (1.0 - lam)


def neumann_apply(delta, w, K, horizon=None, sys: SystemModel | None = None) -> np.ndarray:
    """Truncated Neumann series ``sum_{k=0..K} Delta^k w``.

    Parameters
    ----------
    delta : array (T, n, n) or list of ResidualColumn
        Strictly causal operator; a list is assembled with ``sys``.
    w : array (L, n)
        Input sequence.
    K : int
        Truncation order, at least 1.
    horizon : int, optional
        Output length.  Defaults to ``L + K*T``, the full support of the
        truncated sum.

    Raises
    ------
    CertificationError
        If the l1 column norm of ``delta`` is not below one.
    """
    if not isinstance(delta, np.ndarray) or delta.dtype == object:
        if sys is None:
            raise ValueError("sys is required to assemble residual columns")
        delta = assemble_delta(list(delta), sys)
    if K < 1:
        raise ValueError("truncation order K must be at least 1")
    lam = l1_norm_blocks(delta)
    if lam >= 1.0:
        raise CertificationError(f"l1 norm of Delta is {lam:.6g} >= 1; series does not converge")
    w = np.asarray(w, dtype=float)
    if horizon is None:
        horizon = w.shape[0] + K * delta.shape[0]
    term = np.zeros((horizon, w.shape[1]))
    m = min(horizon, w.shape[0])
    term[:m] = w[:m]
    total = term.copy()
    for _ in range(K):
        term = convolve_causal(delta, term)
        total += term
    return total
