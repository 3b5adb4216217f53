"""Matrix-free linear solves, explicit assembly, and Newton iteration.

The Krylov drivers only ever call the operator handle's matvec, so they work
at any resolution; explicit matrices exist for inspection, direct oracles,
and Schur-complement checks and are guarded by a DoF cap.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .errors import ConfigurationError, ResourceCapError
from .mesh import mortar_topology
from .operators import FieldVector

__all__ = [
    "SolveReport",
    "ExplicitMatrix",
    "assemble_explicit",
    "schur_eliminate",
    "solve_linear",
    "solve_newton",
    "DEFAULT_ASSEMBLY_CAP",
]

DEFAULT_ASSEMBLY_CAP = 20000

_PRIMAL_ORDER = (
    "primal variables; variable-major, then element index, grid points "
    "first-axis-fastest"
)
_FULL_ORDER = (
    "auxiliary block then primal block; within each: variable-major, then "
    "element index, grid points first-axis-fastest"
)


@dataclass
class SolveReport:
    """Outcome of one linear or nonlinear solve."""

    iterations: int
    residual_norm: float  # relative to the right-hand side (or absolute if rhs = 0)
    converged: bool
    wall_time: float
    residual_history: list = field(default_factory=list)


@dataclass
class ExplicitMatrix:
    """Assembled operator with a record of its DoF ordering."""

    matrix: scipy.sparse.csr_matrix
    ordering: str

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def write(self, path) -> None:
        """Plain-text coordinate export.

        Header "rows cols nnz", then one "row col value" triple per line with
        1-based indices, row-major, full double precision.
        """
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as f:
            f.write(f"{self.n_rows} {self.n_cols} {coo.nnz}\n")
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                f.write(f"{r + 1} {c + 1} {v:.17e}\n")


def _element_color_groups(mesh):
    """Group elements so same-group members share no neighbor.

    Columns of the operator rooted in one element only reach its face
    neighbors, so elements at graph distance >= 3 can share one batched
    unit-vector application.
    """
    n = len(mesh.elements)
    nbrs = [set() for _ in range(n)]
    for mortar in mortar_topology(mesh).mortars:
        a, b = (s.element for s in mortar.sides)
        if a != b:
            nbrs[a].add(b)
            nbrs[b].add(a)
    colors = []
    for k in range(n):
        ball = set(nbrs[k])
        for m in nbrs[k]:
            ball |= nbrs[m]
        ball.discard(k)
        used = {colors[m] for m in ball if m < k}
        c = 0
        while c in used:
            c += 1
        colors.append(c)
    groups = [[] for _ in range(max(colors) + 1 if colors else 0)]
    for k, c in enumerate(colors):
        groups[c].append(k)
    return groups, nbrs


def assemble_explicit(
    handle, include_auxiliary: bool = False, cap: int = DEFAULT_ASSEMBLY_CAP
) -> ExplicitMatrix:
    """Column-by-column assembly of the handle's linear(ized) action."""
    if not handle.is_linearized and not handle.system.linear:
        raise ConfigurationError(
            "assemble",
            "assembling a nonlinear operator requires a linearization point",
        )
    lin = handle if handle.is_linearized else handle.linearized_at()
    mesh = handle.mesh
    sizes = [el.n_points for el in mesh.elements]
    total = sum(sizes)
    offsets = np.concatenate([[0], np.cumsum(sizes)])[:-1]
    n_aux = handle.n_auxiliary_dofs if include_auxiliary else 0
    n = n_aux + handle.n_primal_dofs
    if n > cap:
        raise ResourceCapError(
            f"operator has {n} DoFs, above the assembly cap {cap}"
        )

    groups, nbrs = _element_color_groups(mesh)
    rows_out, cols_out, vals_out = [], [], []

    def scatter(res_blocks, k, col):
        """Store the nonzero column entries near element k."""
        for m in sorted({k} | nbrs[k]):
            base = 0
            for block in res_blocks:
                arr = block.arrays[m]
                for c2 in range(arr.shape[0]):
                    vals = arr[c2].ravel(order="F")
                    nz = np.flatnonzero(vals)
                    if nz.size:
                        rows_out.append(base + c2 * total + offsets[m] + nz)
                        cols_out.append(np.full(nz.size, col))
                        vals_out.append(vals[nz])
                base += block.n_components * total

    blocks = []  # (is_auxiliary, component, column base offset)
    if include_auxiliary:
        blocks += [(True, c) for c in range(handle.system.n_auxiliary)]
    blocks += [(False, c) for c in range(handle.system.n_primal)]

    for group in groups:
        for is_aux, c in blocks:
            block_base = (0 if is_aux else n_aux) + c * total
            for p in range(max(sizes[k] for k in group)):
                members = [k for k in group if sizes[k] > p]
                if not members:
                    continue
                u = lin.zero_primal()
                v = (
                    FieldVector.zeros(mesh, handle.system.n_auxiliary)
                    if include_auxiliary
                    else None
                )
                target = v if is_aux else u
                for k in members:
                    idx = np.unravel_index(
                        p, mesh.elements[k].grid_shape, order="F"
                    )
                    target.arrays[k][(c, *idx)] = 1.0
                if include_auxiliary:
                    rv, ru = lin.apply_full(v, u)
                    res_blocks = (rv, ru)
                else:
                    res_blocks = (lin.apply(u),)
                for k in members:
                    scatter(res_blocks, k, block_base + offsets[k] + p)

    if rows_out:
        mat = scipy.sparse.coo_matrix(
            (
                np.concatenate(vals_out),
                (np.concatenate(rows_out), np.concatenate(cols_out)),
            ),
            shape=(n, n),
        ).tocsr()
    else:
        mat = scipy.sparse.csr_matrix((n, n))
    mat.sort_indices()
    return ExplicitMatrix(mat, _FULL_ORDER if include_auxiliary else _PRIMAL_ORDER)


def schur_eliminate(full: ExplicitMatrix, n_auxiliary: int) -> ExplicitMatrix:
    """Primal-block Schur complement A_uu - A_uv A_vv^-1 A_vu."""
    n = full.n_rows
    if not 0 < n_auxiliary < n:
        raise ValueError(f"auxiliary block size {n_auxiliary} out of range")
    a = full.matrix.tocsc()
    na = n_auxiliary
    avv = a[:na, :na]
    avu = a[:na, na:]
    auv = a[na:, :na]
    auu = a[na:, na:]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.sparse.linalg.MatrixRankWarning)
        x = scipy.sparse.linalg.spsolve(avv, avu)
    if not scipy.sparse.issparse(x):
        x = scipy.sparse.csc_matrix(np.atleast_2d(x).reshape(na, n - na))
    if not np.all(np.isfinite(x.toarray() if scipy.sparse.issparse(x) else x)):
        raise FloatingPointError("auxiliary diagonal block is singular")
    s = scipy.sparse.csr_matrix(auu - auv @ x)
    s.sort_indices()
    return ExplicitMatrix(s, _PRIMAL_ORDER)


# -- Krylov drivers ----------------------------------------------------


def _gmres(matvec, b, tol, max_iter, restart, precond):
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    history = [1.0]  # zero initial guess
    total = 0
    rel = 1.0
    while total < max_iter:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        rel = beta / bnorm
        if rel <= tol:
            return x, total, history, True
        m = min(restart, max_iter - total)
        v = np.empty((m + 1, b.size))
        v[0] = r / beta
        h = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        j_done = 0
        for j in range(m):
            w = matvec(precond(v[j]))
            for i in range(j + 1):
                h[i, j] = v[i] @ w
                w -= h[i, j] * v[i]
            h[j + 1, j] = np.linalg.norm(w)
            if h[j + 1, j] > 0.0:
                v[j + 1] = w / h[j + 1, j]
            for i in range(j):
                t = cs[i] * h[i, j] + sn[i] * h[i + 1, j]
                h[i + 1, j] = -sn[i] * h[i, j] + cs[i] * h[i + 1, j]
                h[i, j] = t
            denom = np.hypot(h[j, j], h[j + 1, j])
            cs[j], sn[j] = h[j, j] / denom, h[j + 1, j] / denom
            h[j, j] = denom
            h[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            j_done = j + 1
            rel = abs(g[j + 1]) / bnorm
            history.append(rel)
            if rel <= tol:
                break
        y = scipy.linalg.solve_triangular(
            h[:j_done, :j_done], g[:j_done], lower=False
        )
        x = x + precond(v[:j_done].T @ y)
        if rel <= tol:
            true_rel = np.linalg.norm(b - matvec(x)) / bnorm
            if true_rel <= tol:
                return x, total, history, True
    return x, total, history, False


def _cg(matvec, b, tol, max_iter):
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = r @ r
    history = [np.sqrt(rr) / bnorm]
    for it in range(1, max_iter + 1):
        ap = matvec(p)
        pap = p @ ap
        if pap <= 0.0:
            # lost positive definiteness; report what we have
            return x, it - 1, history, False
        alpha = rr / pap
        x += alpha * p
        r -= alpha * ap
        rr_new = r @ r
        rel = np.sqrt(rr_new) / bnorm
        history.append(rel)
        if rel <= tol:
            true_rel = np.linalg.norm(b - matvec(x)) / bnorm
            if true_rel <= tol:
                return x, it, history, True
            rel = true_rel
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x, max_iter, history, False


def solve_linear(
    handle,
    rhs,
    method: str = "gmres",
    tol: float = 1e-10,
    max_iter: int = 10000,
    restart: int = 50,
    preconditioner=None,
):
    """Iterative solve of handle(u) = rhs, matrix-free.

    For non-linearized handles of linear systems the inhomogeneous boundary
    contribution handle(0) is moved to the right-hand side, so the returned
    field satisfies the affine equation. Non-convergence is reported, not
    raised.
    """
    if method == "cg":
        if handle.form != "strong-weak" or not handle.system.symmetric_eligible:
            raise ConfigurationError(
                "solver.method",
                "cg requires the strong-weak form of a symmetry-eligible system",
            )
    elif method != "gmres":
        raise ConfigurationError("solver.method", f"unknown method {method!r}")
    if not handle.is_linearized and not handle.system.linear:
        raise ConfigurationError(
            "solver.method",
            "nonlinear operators need solve_newton or a linearization point",
        )

    t0 = time.perf_counter()
    b = rhs.to_flat() if isinstance(rhs, FieldVector) else (
        np.asarray(rhs, dtype=float).ravel().copy()
    )
    lin = handle if handle.is_linearized else handle.linearized_at()
    if not handle.is_linearized:
        b = b - handle.matvec(np.zeros_like(b))

    def wrap(x):
        return FieldVector.from_flat(handle.mesh, handle.system.n_primal, x)

    if np.linalg.norm(b) == 0.0:
        return wrap(np.zeros_like(b)), SolveReport(
            0, 0.0, True, time.perf_counter() - t0, [0.0]
        )
    precond = preconditioner if preconditioner is not None else (lambda x: x)
    if method == "cg":
        x, its, history, ok = _cg(lin.matvec, b, tol, max_iter)
    else:
        x, its, history, ok = _gmres(
            lin.matvec, b, tol, max_iter, restart, precond
        )
    final = np.linalg.norm(b - lin.matvec(x)) / np.linalg.norm(b)
    return wrap(x), SolveReport(
        its, final, ok and final <= tol, time.perf_counter() - t0, history
    )


def solve_newton(
    handle,
    rhs,
    tol: float = 1e-10,
    max_iter: int = 30,
    inner: Optional[dict] = None,
    initial_guess: Optional[FieldVector] = None,
):
    """Newton-Raphson on handle(u) = rhs with a matrix-free inner solve.

    The Jacobian at each iterate is the handle linearized there. No damping:
    initial guesses are the caller's responsibility. Three consecutive
    residual increases abort with a failure report.
    """
    params = {"method": "gmres", "tol": 1e-12, "max_iter": 10000, "restart": 50}
    if inner:
        params.update(inner)
    t0 = time.perf_counter()
    b = rhs.to_flat() if isinstance(rhs, FieldVector) else (
        np.asarray(rhs, dtype=float).ravel()
    )
    scale = np.linalg.norm(b)
    if scale == 0.0:
        scale = 1.0  # fall back to absolute residuals
    u = initial_guess.copy() if initial_guess is not None else handle.zero_primal()
    res = b - handle.apply(u).to_flat()
    rel = np.linalg.norm(res) / scale
    history = [rel]
    growth = 0
    its = 0
    while rel > tol and its < max_iter:
        jac = handle.linearized_at(u)
        du, _ = solve_linear(
            jac,
            FieldVector.from_flat(handle.mesh, handle.system.n_primal, res),
            **params,
        )
        u = u + du
        its += 1
        res = b - handle.apply(u).to_flat()
        new_rel = np.linalg.norm(res) / scale
        history.append(new_rel)
        if new_rel >= rel:
            growth += 1
            if growth >= 3:
                rel = new_rel
                break
        else:
            growth = 0
        rel = new_rel
    return u, SolveReport(
        its, rel, rel <= tol, time.perf_counter() - t0, history
    )
