"""Sparse conic form of the per-column robust synthesis program.

One subsystem's column is optimized over the free rows of
``phiX[2..T]`` and ``phiU[1..T]`` that fall inside the base support.  For a
pattern ``S`` the projected column keeps rows of subsystems in ``S``; its
residual must have l1 column norm at most ``lam`` and its weighted
Frobenius norm enters the objective with the pattern's probability.

The program handed to the interior-point backend is

    min  sum_S f_S t_S
    s.t. (t_S, W_S z + a_S) in SOC                  for objective patterns
         -s <= C_S z + b_S <= s, sum_group s <= lam  for constraint patterns
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .operators import SystemModel


@dataclass
class ColumnProgram:
    owner: int
    n_free: int
    x_index: np.ndarray  # flat positions of the free phiX entries
    u_index: np.ndarray
    phi0: np.ndarray  # flat phiX with the identity block, zeros elsewhere
    weights: np.ndarray  # objective pattern probabilities
    obj_blocks: list = field(default_factory=list)  # (W_S, a_S) per objective pattern
    con_blocks: list = field(default_factory=list)  # (C_S, b_S, group labels) per constraint pattern
    shape_x: tuple = ()
    shape_u: tuple = ()

    def unpack(self, z):
        phiX = self.phi0.copy()
        phiX[self.x_index] = z[: len(self.x_index)]
        phiU = np.zeros(int(np.prod(self.shape_u)))
        phiU[self.u_index] = z[len(self.x_index):]
        return phiX.reshape(self.shape_x), phiU.reshape(self.shape_u)

    def pack(self, phiX, phiU):
        return np.concatenate([np.ravel(phiX)[self.x_index], np.ravel(phiU)[self.u_index]])

    def l1_groups(self):
        """Yield ``(C, b, rows)`` per scalar residual column of every constraint pattern."""
        for C, b, groups in self.con_blocks:
            for g in np.unique(groups):
                rows = np.nonzero(groups == g)[0]
                yield C, b, rows


def _row_mask(mask, T, ni):
    return np.tile(np.repeat(mask, ni), T)


def _prune(M, c):
    M = sp.csr_matrix(M)
    keep = (np.diff(M.indptr) > 0) | (c != 0)
    return M[keep], c[keep], keep


def compile_column(sys: SystemModel, owner, objective, constraints, base_support, Qh, Rh, T) -> ColumnProgram:
    """Build the lambda-independent sparse data of one column program."""
    n, p = sys.n, sys.p
    sl = sys.state_block(owner)
    ni = sl.stop - sl.start
    I_ni = sp.identity(ni, format="csr")
    I_T = sp.identity(T, format="csr")

    xfull = np.arange(T * n * ni).reshape(T, n, ni)
    ufull = np.arange(T * p * ni).reshape(T, p, ni)
    base = frozenset(base_support)
    xb = sys.state_mask(base)
    ub = sys.input_mask(base)
    x_index = xfull[1:, xb, :].ravel()
    u_index = ufull[:, ub, :].ravel()
    mx, mu = len(x_index), len(u_index)

    Ex = sp.csr_matrix((np.ones(mx), (x_index, np.arange(mx))), shape=(T * n * ni, mx))
    Eu = sp.csr_matrix((np.ones(mu), (u_index, np.arange(mu))), shape=(T * p * ni, mu))

    phi0 = np.zeros((T, n, ni))
    phi0[0] = sys.identity_column(owner)
    phi0 = phi0.ravel()

    shift = sp.eye(T, k=1, format="csr")
    Dx = sp.kron(shift, sp.identity(n * ni)) - sp.kron(I_T, sp.kron(sp.csr_matrix(sys.A), I_ni))
    Qk = sp.kron(I_T, sp.kron(sp.csr_matrix(Qh), I_ni))
    Rk = sp.kron(I_T, sp.kron(sp.csr_matrix(Rh), I_ni))
    Bk = sp.kron(I_T, sp.kron(sp.csr_matrix(sys.B), I_ni))

    prog = ColumnProgram(
        owner=owner,
        n_free=mx + mu,
        x_index=x_index,
        u_index=u_index,
        phi0=phi0,
        weights=np.array([float(f) for _, f in objective]),
        shape_x=(T, n, ni),
        shape_u=(T, p, ni),
    )

    for S, _ in objective:
        Px = sp.diags(_row_mask(sys.state_mask(S), T, ni).astype(float))
        Pu = sp.diags(_row_mask(sys.input_mask(S), T, ni).astype(float))
        W = sp.bmat([[Qk @ Px @ Ex, None], [None, Rk @ Pu @ Eu]])
        a = np.concatenate([Qk @ (Px @ phi0), np.zeros(T * p * ni)])
        W, a, _ = _prune(W, a)
        prog.obj_blocks.append((W, a))

    col_label = np.tile(np.arange(ni), T * n)
    for S in constraints:
        Px = sp.diags(_row_mask(sys.state_mask(S), T, ni).astype(float))
        Pu = sp.diags(_row_mask(sys.input_mask(S), T, ni).astype(float))
        C = sp.hstack([Dx @ Px @ Ex, -(Bk @ Pu @ Eu)])
        b = Dx @ (Px @ phi0)
        C, b, keep = _prune(C, b)
        prog.con_blocks.append((C, b, col_label[keep]))
    return prog


def conic_data(prog: ColumnProgram, lam):
    """Assemble ``(q, A, b, cones)`` for the Clarabel standard form.

    Variable order is ``[z, t, s]``; returns the cone list as
    ``[("nonneg", k), ("soc", d), ...]``.
    """
    m = prog.n_free
    n_obj = len(prog.obj_blocks)
    n_abs = sum(C.shape[0] for C, _, _ in prog.con_blocks)
    nvar = m + n_obj + n_abs

    rows_A, rows_b = [], []
    off = m + n_obj
    group_rows = []
    for C, b, groups in prog.con_blocks:
        r = C.shape[0]
        S_sel = sp.csr_matrix((np.ones(r), (np.arange(r), off + np.arange(r))), shape=(r, nvar))
        Cz = sp.hstack([C, sp.csr_matrix((r, nvar - m))])
        rows_A += [Cz - S_sel, -Cz - S_sel]
        rows_b += [-b, b]
        for g in np.unique(groups):
            idx = off + np.nonzero(groups == g)[0]
            group_rows.append(sp.csr_matrix((np.ones(len(idx)), (np.zeros(len(idx), dtype=int), idx)), shape=(1, nvar)))
        off += r
    n_lin = 2 * n_abs + len(group_rows)
    rows_A += group_rows
    rows_b.append(np.full(len(group_rows), float(lam)))

    cones = [("nonneg", n_lin)]
    for s_idx, (W, a) in enumerate(prog.obj_blocks):
        r = W.shape[0]
        t_row = sp.csr_matrix(([-1.0], ([0], [m + s_idx])), shape=(1, nvar))
        Wz = sp.hstack([-W, sp.csr_matrix((r, nvar - m))])
        rows_A += [t_row, Wz]
        rows_b += [np.zeros(1), a]
        cones.append(("soc", r + 1))

    A = sp.vstack(rows_A, format="csc")
    bvec = np.concatenate(rows_b)
    q = np.zeros(nvar)
    q[m: m + n_obj] = prog.weights
    return q, A, bvec, cones
