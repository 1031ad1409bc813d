"""Revised simplex for ``min c'x  s.t.  Ax = b, x >= 0``.

Sparse LU of the basis with product-form updates and periodic
refactorisation; Dantzig pricing that falls back to Bland's rule after a run
of degenerate pivots. Phase 1 uses one artificial column per row. Because a
simplex method always stops at a vertex, an LP whose vertices are all 0/1
comes back integral, which is the property the pruning code depends on.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LPStallError, SolverError

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class Tolerances:
    feas_tol: float = 1e-8
    opt_tol: float = 1e-8
    pivot_tol: float = 1e-9
    fix_tol: float = 1e-9  # reduced cost above which a column leaves the optimal face


@dataclass(frozen=True, eq=False)
class StandardLP:
    A: sp.csc_matrix
    b: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        A = sp.csc_matrix(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float).ravel()
        c = np.asarray(self.cost, dtype=float).ravel()
        if A.shape != (b.shape[0], c.shape[0]):
            raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}, c {c.shape}")
        if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "cost", c)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def with_cost(self, cost) -> "StandardLP":
        return StandardLP(self.A, self.b, cost)


@dataclass
class LPSolution:
    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    objective: float = float("nan")
    basis: np.ndarray | None = None
    iterations: int = 0
    phase1_iterations: int = 0
    warm_started: bool = False
    fallback: str | None = None
    used_bland: bool = False
    stages: list = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def kkt_residuals(self, lp: StandardLP) -> dict[str, float]:
        d = lp.cost - lp.A.T @ self.y
        return {
            "primal": float(np.max(np.abs(lp.A @ self.x - lp.b), initial=0.0)),
            "bound": float(max(0.0, -np.min(self.x, initial=0.0))),
            "dual": float(max(0.0, -np.min(d, initial=0.0))),
            "complementarity": float(np.max(np.abs(self.x * d), initial=0.0)),
            "gap": float(abs(lp.cost @ self.x - lp.b @ self.y)),
        }


class _Singular(Exception):
    pass


class _Factor:
    """Sparse LU of a basis matrix followed by product-form eta updates."""

    def __init__(self, B: sp.csc_matrix):
        self.m = B.shape[0]
        self.lu = None
        if self.m:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", spla.MatrixRankWarning)
                    self.lu = spla.splu(B, permc_spec="COLAMD")
            except RuntimeError as exc:  # exactly singular
                raise _Singular() from exc
            diag = np.abs(self.lu.U.diagonal())
            if diag.min() <= 1e-11 * max(1.0, diag.max()):
                raise _Singular()
        self.etas: list[tuple[int, np.ndarray]] = []

    def ftran(self, v: np.ndarray) -> np.ndarray:
        """B^{-1} v."""
        x = self.lu.solve(np.asarray(v, dtype=float)) if self.m else np.zeros(0)
        for r, alpha in self.etas:
            xr = x[r] / alpha[r]
            x -= xr * alpha
            x[r] = xr
        return x

    def btran(self, v: np.ndarray) -> np.ndarray:
        """v' B^{-1}, returned as a vector."""
        u = np.array(v, dtype=float)
        for r, alpha in reversed(self.etas):
            ur = u[r]
            u[r] = 0.0
            u[r] = (ur - alpha @ u) / alpha[r]
        return self.lu.solve(u, trans="T") if self.m else u

    def update(self, r: int, alpha: np.ndarray) -> None:
        self.etas.append((r, alpha))


class _Engine:
    """Simplex state over the augmented matrix ``[A | diag(sign b)]``."""

    refactor_every = 64

    def __init__(self, lp: StandardLP, tol: Tolerances, max_iter: int | None, bland_after: int | None):
        self.lp = lp
        self.tol = tol
        m, n = lp.m, lp.n
        self.m, self.n = m, n
        self.sign = np.where(lp.b >= 0, 1.0, -1.0)
        self.A = sp.hstack([lp.A, sp.diags(self.sign, format="csc")], format="csc")
        self.AT = self.A.T.tocsr()
        self.b = lp.b
        self.max_iter = max_iter if max_iter is not None else 50 * (m + n) + 1000
        self.bland_after = bland_after if bland_after is not None else max(50, m)
        self.iterations = 0
        self.used_bland = False
        self.basis = None
        self.F: _Factor | None = None
        self.xB = None

    # basis handling ----------------------------------------------------
    def column(self, j: int) -> np.ndarray:
        A = self.A
        col = np.zeros(self.m)
        lo, hi = A.indptr[j], A.indptr[j + 1]
        col[A.indices[lo:hi]] = A.data[lo:hi]
        return col

    def factor(self, basis: np.ndarray) -> None:
        basis = np.array(basis, dtype=np.int64)
        self.F = _Factor(sp.csc_matrix(self.A[:, basis]))
        self.basis = basis
        self.xB = self.F.ftran(self.b)

    def start_artificial(self) -> None:
        self.factor(np.arange(self.n, self.n + self.m, dtype=np.int64))

    def duals(self, cost_full: np.ndarray) -> np.ndarray:
        return self.F.btran(cost_full[self.basis])

    def _pivot(self, r: int, q: int, alpha: np.ndarray) -> None:
        theta = self.xB[r] / alpha[r]
        self.xB -= theta * alpha
        self.xB[r] = theta
        self.F.update(r, alpha)
        self.basis[r] = q

    # main loop ---------------------------------------------------------
    def optimize(self, cost_full: np.ndarray, allowed: np.ndarray) -> str:
        tol = self.tol
        bland = False
        streak = 0
        since_refactor = 0
        iters = 0
        while True:
            y = self.duals(cost_full)
            d = cost_full - self.AT @ y
            d[self.basis] = 0.0
            d[~allowed] = np.inf
            if bland:
                cand = np.flatnonzero(d < -tol.opt_tol)
                q = int(cand[0]) if cand.size else -1
            else:
                q = int(np.argmin(d))
                if d[q] >= -tol.opt_tol:
                    q = -1
            if q < 0:
                if since_refactor == 0:
                    return OPTIMAL
                # confirm on a fresh factorisation before declaring optimality
                self.factor(self.basis)
                np.maximum(self.xB, 0.0, out=self.xB, where=self.xB > -tol.feas_tol)
                since_refactor = 0
                continue

            alpha = self.F.ftran(self.column(q))
            mask = alpha > tol.pivot_tol
            if not mask.any():
                return UNBOUNDED
            rows = np.flatnonzero(mask)
            ratios = np.maximum(self.xB[rows], 0.0) / alpha[rows]
            theta = ratios.min()
            ties = rows[ratios <= theta + 1e-12]
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(alpha[ties])])
            if self.xB[r] < 0:
                self.xB[r] = 0.0
            self._pivot(r, q, alpha)
            iters += 1
            self.iterations += 1
            since_refactor += 1

            streak = streak + 1 if theta <= 1e-12 else 0
            if not bland and streak >= self.bland_after:
                log.debug("switching to Bland's rule after %d degenerate pivots", streak)
                bland = True
                self.used_bland = True
            if iters >= self.max_iter:
                if bland:
                    raise LPStallError(
                        f"simplex stalled after {iters} pivots under Bland's rule (cycling/degeneracy)"
                    )
                bland = True
                self.used_bland = True
                iters = 0
            if since_refactor >= self.refactor_every:
                self.factor(self.basis)
                np.maximum(self.xB, 0.0, out=self.xB, where=self.xB > -self.tol.feas_tol)
                since_refactor = 0

    def drive_out_artificials(self) -> None:
        """Replace artificials sitting at zero by structural columns where possible."""
        n = self.n
        for r in range(self.m):
            if self.basis[r] < n:
                continue
            e = np.zeros(self.m)
            e[r] = 1.0
            row = self.AT[:n] @ self.F.btran(e)
            row[self.basis[self.basis < n]] = 0.0
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-7:
                self._pivot(r, j, self.F.ftran(self.column(j)))
        self.factor(self.basis)

    def solution(self, cost: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        full = np.zeros(self.n + self.m)
        full[self.basis] = self.xB
        x = full[: self.n].copy()
        x[(x < 0) & (x > -self.tol.feas_tol)] = 0.0
        y = self.duals(np.concatenate([cost, np.zeros(self.m)]))
        return x, y


def _phase2_mask(engine: _Engine) -> np.ndarray:
    allowed = np.zeros(engine.n + engine.m, dtype=bool)
    allowed[: engine.n] = True
    return allowed


def _finish(engine: _Engine, lp: StandardLP, status: str, **kw) -> LPSolution:
    if status != OPTIMAL:
        return LPSolution(status=status, iterations=engine.iterations, used_bland=engine.used_bland, **kw)
    x, y = engine.solution(lp.cost)
    if np.any(engine.xB < -10 * engine.tol.feas_tol):
        raise SolverError(f"basis lost primal feasibility (min x_B = {engine.xB.min():.3e})")
    return LPSolution(
        status=OPTIMAL,
        x=x,
        y=y,
        objective=float(lp.cost @ x),
        basis=engine.basis.copy(),
        iterations=engine.iterations,
        used_bland=engine.used_bland,
        **kw,
    )


def _cold(lp: StandardLP, tol: Tolerances, max_iter, bland_after) -> tuple[_Engine, str, int]:
    engine = _Engine(lp, tol, max_iter, bland_after)
    engine.start_artificial()
    c1 = np.concatenate([np.zeros(lp.n), np.ones(lp.m)])
    everything = np.ones(lp.n + lp.m, dtype=bool)
    engine.optimize(c1, everything)
    phase1 = engine.iterations
    infeas = float(c1[engine.basis] @ engine.xB)
    if infeas > tol.feas_tol * (1.0 + np.abs(lp.b).sum()):
        return engine, INFEASIBLE, phase1
    engine.drive_out_artificials()
    status = engine.optimize(np.concatenate([lp.cost, np.zeros(lp.m)]), _phase2_mask(engine))
    return engine, status, phase1


def solve(lp: StandardLP, tol: Tolerances = Tolerances(), max_iter: int | None = None, bland_after: int | None = None) -> LPSolution:
    """Two-phase revised simplex."""
    engine, status, phase1 = _cold(lp, tol, max_iter, bland_after)
    return _finish(engine, lp, status, phase1_iterations=phase1)


def _try_warm(lp, basis, tol, max_iter, bland_after) -> tuple[_Engine | None, str | None]:
    basis = np.asarray(basis, dtype=np.int64)
    if basis.shape != (lp.m,) or len(np.unique(basis)) != lp.m or basis.min(initial=0) < 0 or basis.max(initial=0) >= lp.n + lp.m:
        return None, "malformed_basis"
    engine = _Engine(lp, tol, max_iter, bland_after)
    try:
        engine.factor(basis)
    except _Singular:
        return None, "singular_basis"
    if np.any(engine.xB < -tol.feas_tol):
        return None, "infeasible_basis"
    art = engine.basis >= lp.n
    if np.any(engine.xB[art] > tol.feas_tol):
        return None, "infeasible_basis"
    np.maximum(engine.xB, 0.0, out=engine.xB)
    return engine, None


def warm_start_solve(
    lp: StandardLP,
    basis: Sequence[int],
    tol: Tolerances = Tolerances(),
    max_iter: int | None = None,
    bland_after: int | None = None,
) -> LPSolution:
    """Phase 2 from a given basis; falls back to a cold start if unusable.

    Basis entries ``>= lp.n`` denote the artificial column of row
    ``entry - lp.n`` (only meaningful at value zero, e.g. redundant rows).
    """
    engine, reason = _try_warm(lp, basis, tol, max_iter, bland_after)
    if engine is None:
        log.debug("warm start rejected (%s); cold start", reason)
        sol = solve(lp, tol, max_iter, bland_after)
        sol.fallback = reason
        return sol
    status = engine.optimize(np.concatenate([lp.cost, np.zeros(lp.m)]), _phase2_mask(engine))
    return _finish(engine, lp, status, warm_started=True)


def solve_lexicographic(
    lp: StandardLP,
    objectives: Sequence[np.ndarray],
    basis: Sequence[int] | None = None,
    tol: Tolerances = Tolerances(),
    max_iter: int | None = None,
    bland_after: int | None = None,
) -> LPSolution:
    """Optimise ``objectives[0]``, then each later objective over the optimal face.

    After each stage every column whose reduced cost exceeds ``tol.fix_tol``
    is barred, which restricts later stages to the optimal face of the
    earlier ones. The reported ``objective`` and duals ``y`` belong to the
    first objective; ``lp.cost`` is ignored.
    """
    objectives = [np.asarray(c, dtype=float) for c in objectives]
    primary = lp.with_cost(objectives[0])
    fallback = None
    engine = None
    if basis is not None:
        engine, fallback = _try_warm(primary, basis, tol, max_iter, bland_after)
    phase1 = 0
    if engine is None:
        engine, status, phase1 = _cold(primary, tol, max_iter, bland_after)
    else:
        status = engine.optimize(np.concatenate([objectives[0], np.zeros(lp.m)]), _phase2_mask(engine))
    if status != OPTIMAL:
        return _finish(engine, primary, status, phase1_iterations=phase1, fallback=fallback)
    _, y1 = engine.solution(objectives[0])
    allowed = _phase2_mask(engine)
    stages = [engine.iterations]
    prev_c = objectives[0]
    for c in objectives[1:]:
        cfull = np.concatenate([prev_c, np.zeros(lp.m)])
        y = engine.duals(cfull)
        d = cfull - engine.AT @ y
        d[engine.basis] = 0.0
        allowed &= d <= tol.fix_tol
        status = engine.optimize(np.concatenate([c, np.zeros(lp.m)]), allowed)
        if status != OPTIMAL:
            raise SolverError(f"secondary stage ended {status}; the optimal face should be bounded")
        stages.append(engine.iterations - sum(stages))
        prev_c = c
    sol = _finish(engine, primary, OPTIMAL, phase1_iterations=phase1, warm_started=basis is not None and fallback is None, fallback=fallback)
    sol.y = y1
    sol.stages = stages
    return sol


def format_lp(lp: StandardLP, names: Sequence[str] | None = None) -> str:
    """CPLEX-LP style text with fixed-point coefficients (12 significant digits)."""
    names = list(names) if names is not None else [f"x{j}" for j in range(lp.n)]

    def num(v: float) -> str:
        return np.format_float_positional(v, precision=12, unique=False, fractional=False, trim="-")

    def expr(coefs, idx) -> str:
        parts = []
        for v, j in zip(coefs, idx):
            if v == 0:
                continue
            sign = "-" if v < 0 else "+"
            parts.append(f"{sign} {num(abs(v))} {names[j]}")
        s = " ".join(parts) if parts else "0"
        return s[2:] if s.startswith("+ ") else s

    lines = ["Minimize", " obj: " + expr(lp.cost, range(lp.n)), "Subject To"]
    A = lp.A.tocsr()
    for r in range(lp.m):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        lines.append(f" c{r}: {expr(A.data[lo:hi], A.indices[lo:hi])} = {num(lp.b[r])}")
    lines.append("End")
    return "\n".join(lines) + "\n"
