"""Per-column robust synthesis, the shared lambda search, offline and online
controller banks, and small-gain certification of those banks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .column_program import ColumnProgram, compile_column, conic_data
from .dropout import CommTopology, DropoutDistribution, enumerate_joint_support
from .errors import CertificationError, ConvergenceError, InfeasibleError
from .operators import (
    ColumnResponse,
    SystemModel,
    achievability_residual,
    column_frobenius,
    l1_column_norm,
    project,
)

log = logging.getLogger(__name__)

LAMBDA_CAP = 1.0 - 1e-6
CERT_LIMIT = 1.0 - 1e-9
FEASIBILITY_MARGIN = 1e-6


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-9
    kkt_tol: float = 1e-6
    max_iter: int = 200


@dataclass(frozen=True, eq=False)
class ColumnProblem:
    """One subsystem's program: objective patterns with weights, constraint
    patterns whose projections must have residual at most ``lam``."""

    owner: int
    sys: SystemModel
    objective: tuple
    constraints: tuple
    Qh: np.ndarray
    Rh: np.ndarray
    T: int
    lam: float
    base_support: frozenset

    def __post_init__(self):
        object.__setattr__(self, "objective", tuple((frozenset(s), float(f)) for s, f in self.objective))
        object.__setattr__(self, "constraints", tuple(frozenset(s) for s in self.constraints))
        object.__setattr__(self, "base_support", frozenset(self.base_support))
        if not self.constraints:
            raise ValueError("constraint family must be nonempty")
        if not self.objective:
            raise ValueError("objective family must be nonempty")
        for s in self.constraints:
            if self.owner not in s:
                raise ValueError(f"constraint pattern {sorted(s)} drops the self-link of {self.owner}")

    def compile(self) -> ColumnProgram:
        return compile_column(
            self.sys, self.owner, self.objective, self.constraints,
            self.base_support, self.Qh, self.Rh, self.T,
        )

    def with_lambda(self, lam) -> "ColumnProblem":
        return ColumnProblem(
            self.owner, self.sys, self.objective, self.constraints,
            self.Qh, self.Rh, self.T, lam, self.base_support,
        )


@dataclass
class SolveReport:
    status: str
    objective: float
    lam: float
    iterations: int
    primal_residual: float
    dual_residual: float
    gap: float
    cone_violation: float

    @property
    def kkt(self) -> float:
        return max(self.primal_residual, self.dual_residual, self.gap, self.cone_violation)


def _cones(cones):
    out = []
    for kind, dim in cones:
        out.append(clarabel.NonnegativeConeT(dim) if kind == "nonneg" else clarabel.SecondOrderConeT(dim))
    return out


def _cone_violation(v, cones):
    worst = 0.0
    off = 0
    for kind, dim in cones:
        seg = v[off: off + dim]
        if kind == "nonneg":
            worst = max(worst, float(-seg.min(initial=0.0)))
        else:
            worst = max(worst, float(np.linalg.norm(seg[1:]) - seg[0]))
        off += dim
    return worst


def kkt_certificate(q, A, b, cones, x, s, y):
    """Absolute KKT residuals of ``min q'x : Ax + s = b, s in K`` at (x, s, y)."""
    primal = float(np.abs(A @ x + s - b).max(initial=0.0))
    dual = float(np.abs(A.T @ y + q).max(initial=0.0))
    gap = abs(float(q @ x + b @ y))
    cone = max(_cone_violation(s, cones), _cone_violation(y, cones))
    return primal, dual, gap, cone


def column_cost(col: ColumnResponse, sys: SystemModel, objective, Qh, Rh) -> float:
    """Probability-weighted Frobenius cost of the pattern projections."""
    return float(sum(f * column_frobenius(project(col, sys, S), Qh, Rh) for S, f in objective))


def worst_projected_residual(col: ColumnResponse, sys: SystemModel, patterns):
    """Largest l1 residual over pattern projections and the pattern attaining it."""
    worst, arg = -1.0, None
    for S in patterns:
        r = l1_column_norm(achievability_residual(project(col, sys, S), sys))
        if r > worst:
            worst, arg = r, S
    return worst, arg


def min_residual(prog: ColumnProgram) -> float:
    """Smallest lambda for which the program is feasible (an LP)."""
    m = prog.n_free
    blocks = prog.con_blocks
    n_abs = sum(C.shape[0] for C, _, _ in blocks)
    nvar = m + n_abs + 1
    rows, rhs = [], []
    off = m
    for C, b, groups in blocks:
        r = C.shape[0]
        I = sp.csr_matrix((np.ones(r), (np.arange(r), off + np.arange(r))), shape=(r, nvar))
        Cz = sp.hstack([C, sp.csr_matrix((r, nvar - m))])
        rows += [Cz - I, -Cz - I]
        rhs += [-b, b]
        for g in np.unique(groups):
            idx = off + np.nonzero(groups == g)[0]
            data = np.concatenate([np.ones(len(idx)), [-1.0]])
            cols = np.concatenate([idx, [nvar - 1]])
            rows.append(sp.csr_matrix((data, (np.zeros(len(cols), dtype=int), cols)), shape=(1, nvar)))
            rhs.append(np.zeros(1))
        off += r
    c = np.zeros(nvar)
    c[-1] = 1.0
    bounds = [(None, None)] * m + [(0, None)] * (n_abs + 1)
    res = linprog(c, A_ub=sp.vstack(rows, format="csr"), b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"feasibility LP failed: {res.message}")
    return float(res.x[-1])


def solve_column(prob: ColumnProblem, program: ColumnProgram | None = None,
                 settings: SolverSettings = SolverSettings()):
    """Solve one column program; returns ``(ColumnResponse, SolveReport)``.

    Raises
    ------
    InfeasibleError
        When no column meets the residual budget ``prob.lam``.
    ConvergenceError
        When the interior-point iterations stop without a KKT certificate
        below ``settings.kkt_tol``.
    """
    if not 0.0 < prob.lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {prob.lam}")
    prog = program if program is not None else prob.compile()
    lam = min(prob.lam, LAMBDA_CAP)
    q, A, b, cones = conic_data(prog, lam)
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_gap_abs = st.tol_gap_rel = st.tol_feas = settings.tol
    st.max_iter = settings.max_iter
    P = sp.csc_matrix((len(q), len(q)))
    sol = clarabel.DefaultSolver(P, q, A, b, _cones(cones), st).solve()
    status = str(sol.status)
    if "Infeasible" in status:
        raise InfeasibleError(
            f"column {prob.owner} infeasible at lambda={lam:.6g}", where=(prob.owner, None)
        )
    x, s, y = (np.asarray(v) for v in (sol.x, sol.s, sol.z))
    primal, dual, gap, cone = kkt_certificate(q, A, b, cones, x, s, y)

    phiX, phiU = prog.unpack(x[: prog.n_free])
    col = ColumnResponse(prob.owner, phiX, phiU, prob.base_support)
    achieved, _ = worst_projected_residual(col, prob.sys, prob.constraints)
    report = SolveReport(
        status=status,
        objective=column_cost(col, prob.sys, prob.objective, prob.Qh, prob.Rh),
        lam=achieved,
        iterations=int(sol.iterations),
        primal_residual=primal,
        dual_residual=dual,
        gap=gap,
        cone_violation=cone,
    )
    if report.kkt > settings.kkt_tol:
        raise ConvergenceError(
            f"column {prob.owner}: KKT residual {report.kkt:.3g} above {settings.kkt_tol:g} "
            f"(status {status})", report,
        )
    return col, report


# ---------------------------------------------------------------- lambda search

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class LambdaSearch:
    lam: float
    objective: float
    trace: list = field(default_factory=list)  # (lam, per-subsystem g, objective), in call order


def search_lambda(evaluate: Callable[[float], Sequence[float]], n, interval=(0.01, 0.99),
                  tol=1e-3) -> LambdaSearch:
    """Minimize ``n / (1 - lam) * max_i g_i(lam)`` over ``interval``.

    ``evaluate`` returns the per-subsystem optima ``g_i(lam)`` and may raise
    :class:`InfeasibleError`.  Feasibility is monotone in ``lam``, so an
    infeasible left end is first moved to the feasibility boundary by
    bisection; a golden-section search then runs on the feasible part.
    The ``max`` is the consensus step.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not 0.0 < lo < hi < 1.0:
        raise ValueError(f"lambda interval must satisfy 0 < lo < hi < 1, got {interval}")
    trace = []
    cache = {}

    def J(lam):
        if lam not in cache:
            g = list(evaluate(lam))
            val = n / (1.0 - lam) * max(g)
            trace.append((lam, g, val))
            cache[lam] = val
        return cache[lam]

    try:
        J(hi)
    except InfeasibleError as exc:
        raise InfeasibleError(f"infeasible on the whole lambda interval {interval}", where=exc.where) from exc
    try:
        J(lo)
    except InfeasibleError:
        a, b = lo, hi  # a infeasible, b feasible
        while b - a > tol / 10.0:
            mid = 0.5 * (a + b)
            try:
                J(mid)
                b = mid
            except InfeasibleError:
                a = mid
        lo = b

    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    while b - a > tol:
        if J(c) <= J(d):
            b, d = d, c
            c = b - GOLDEN * (b - a)
        else:
            a, c = c, d
            d = a + GOLDEN * (b - a)
    best = min(cache, key=lambda lam: (cache[lam], lam))
    return LambdaSearch(best, cache[best], trace)


@dataclass
class GroupResult:
    lam: float
    bound: float
    columns: dict  # key -> ColumnResponse
    reports: dict  # key -> SolveReport
    g: list
    trace: list


def bisect_lambda(groups, n=None, interval=(0.01, 0.99), tol=1e-3,
                  settings: SolverSettings = SolverSettings()) -> GroupResult:
    """Shared-lambda search over all subsystems' column programs.

    ``groups[i]`` is a list of ``(key, weight, ColumnProblem)``; subsystem
    ``i``'s value is the weighted sum of its programs' optima.  The smallest
    feasible lambda is found exactly by an LP per program, so the search
    only visits feasible points.
    """
    flat = [(gi, key, w, prob) for gi, grp in enumerate(groups) for key, w, prob in grp]
    if not flat:
        raise ValueError("no column problems given")
    sys = flat[0][3].sys
    n = sys.n if n is None else n
    programs = {key: prob.compile() for _, key, _, prob in flat}

    floor = {key: min_residual(programs[key]) for _, key, _, _ in flat}
    worst_key = max(floor, key=floor.get)
    lam_feas = floor[worst_key] + FEASIBILITY_MARGIN
    lo, hi = interval
    if lam_feas >= hi:
        raise InfeasibleError(
            f"program {worst_key} needs lambda >= {floor[worst_key]:.6g}, above the search limit {hi}",
            where=worst_key, min_residual=floor[worst_key],
        )
    lo = max(lo, lam_feas)

    solved = {}

    def evaluate(lam):
        g = [0.0] * len(groups)
        out = {}
        for gi, key, w, prob in flat:
            col, rep = solve_column(prob.with_lambda(lam), programs[key], settings)
            out[key] = (col, rep)
            g[gi] += w * rep.objective
        solved[lam] = out
        return g

    res = search_lambda(evaluate, n, (lo, hi), tol)
    best = solved[res.lam]
    g_best = next(g for lam, g, _ in res.trace if lam == res.lam)
    log.info("lambda* = %.6f, bound = %.6g after %d evaluations", res.lam, res.objective, len(res.trace))
    return GroupResult(
        lam=res.lam,
        bound=res.objective,
        columns={k: v[0] for k, v in best.items()},
        reports={k: v[1] for k, v in best.items()},
        g=g_best,
        trace=res.trace,
    )


# ---------------------------------------------------------------- banks

@dataclass
class ControllerBank:
    """Synthesized columns plus the data needed to recertify them.

    ``offline`` maps subsystem -> column, ``online`` maps
    ``(subsystem, pattern)`` -> column; a bank normally fills one of them.
    """

    sys: SystemModel
    dist: DropoutDistribution
    T: int
    offline: dict = field(default_factory=dict)
    online: dict = field(default_factory=dict)
    lam: float = float("nan")
    bound: float = float("nan")
    worst_residual: float = float("nan")
    certified: bool = False
    search: GroupResult | None = field(default=None, repr=False)

    @property
    def mode(self) -> str:
        if self.offline and self.online:
            return "both"
        return "offline" if self.offline else "online"

    def column(self, i, pattern, mode) -> ColumnResponse:
        """The column applied to subsystem ``i``'s estimate under ``pattern``."""
        pattern = frozenset(pattern)
        if mode == "offline":
            return project(self.offline[i], self.sys, pattern)
        try:
            return self.online[(i, pattern)]
        except KeyError:
            raise KeyError(f"online bank has no column for subsystem {i}, pattern {sorted(pattern)}") from None


class Certificate(NamedTuple):
    certified: bool
    worst_residual: float
    worst_key: tuple | None


def certify_bank(bank: ControllerBank) -> Certificate:
    """Recompute every stored column's l1 residual from scratch.

    Offline columns are checked under every pattern projection of their
    subsystem; online columns under their own pattern.
    """
    if not bank.offline and not bank.online:
        raise ValueError("empty bank")
    worst, key = -1.0, None
    for i, col in sorted(bank.offline.items()):
        for S in bank.dist.patterns(i):
            r = l1_column_norm(achievability_residual(project(col, bank.sys, S), bank.sys))
            if r > worst:
                worst, key = r, (i, S)
    for (i, S), col in bank.online.items():
        r = l1_column_norm(achievability_residual(project(col, bank.sys, S), bank.sys))
        if r > worst:
            worst, key = r, (i, S)
    return Certificate(bool(worst <= CERT_LIMIT), worst, key)


def _certify_or_raise(bank):
    cert = certify_bank(bank)
    bank.worst_residual = cert.worst_residual
    bank.certified = cert.certified
    if not cert.certified:
        i, S = cert.worst_key
        raise CertificationError(
            f"column of subsystem {i} under pattern {sorted(S)} has residual {cert.worst_residual:.6g} >= 1"
        )
    return bank


def _name_infeasible(exc, problems_by_key):
    key = exc.where
    if key in problems_by_key:
        prob = problems_by_key[key]
        worst, arg = -1.0, None
        for S in prob.constraints:
            r = min_residual(compile_column(prob.sys, prob.owner, prob.objective, (S,),
                                            prob.base_support, prob.Qh, prob.Rh, prob.T))
            if r > worst:
                worst, arg = r, S
        return InfeasibleError(
            f"subsystem {prob.owner}: pattern {sorted(arg)} needs lambda >= {worst:.6g}",
            where=(prob.owner, arg), min_residual=worst,
        )
    return exc


def synthesize_offline(sys: SystemModel, topo: CommTopology, dist: DropoutDistribution, Qh, Rh, T,
                       interval=(0.01, 0.99), tol=1e-3,
                       settings: SolverSettings = SolverSettings()) -> ControllerBank:
    """One column per subsystem, certified under every pattern projection."""
    groups, by_key = [], {}
    for i in range(sys.N):
        sup = enumerate_joint_support(dist, i)
        prob = ColumnProblem(i, sys, sup, [S for S, _ in sup], Qh, Rh, T, interval[0], topo.out_max[i])
        groups.append([(i, 1.0, prob)])
        by_key[i] = prob
    try:
        res = bisect_lambda(groups, sys.n, interval, tol, settings)
    except InfeasibleError as exc:
        raise _name_infeasible(exc, by_key) from exc
    bank = ControllerBank(sys, dist, T, offline=dict(res.columns), lam=res.lam, bound=res.bound, search=res)
    return _certify_or_raise(bank)


def synthesize_online_bank(sys: SystemModel, topo: CommTopology, dist: DropoutDistribution, Qh, Rh, T,
                           interval=(0.01, 0.99), tol=1e-3,
                           settings: SolverSettings = SolverSettings()) -> ControllerBank:
    """One column per (subsystem, pattern), each supported on its pattern.

    Subsystem ``i``'s consensus value is the pmf-weighted cost of its
    pattern columns, so the search trades off the expected switched cost.
    """
    groups, by_key = [], {}
    for i in range(sys.N):
        grp = []
        for S, f in enumerate_joint_support(dist, i):
            prob = ColumnProblem(i, sys, [(S, 1.0)], [S], Qh, Rh, T, interval[0], S)
            grp.append(((i, S), f, prob))
            by_key[(i, S)] = prob
        groups.append(grp)
    try:
        res = bisect_lambda(groups, sys.n, interval, tol, settings)
    except InfeasibleError as exc:
        raise _name_infeasible(exc, by_key) from exc
    bank = ControllerBank(sys, dist, T, online=dict(res.columns), lam=res.lam, bound=res.bound, search=res)
    return _certify_or_raise(bank)
