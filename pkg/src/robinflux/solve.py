"""Deterministic Jacobi-preconditioned conjugate gradients.

Reductions go through numpy's pairwise summation rather than BLAS ``dot`` so
results do not depend on the number of BLAS threads.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

__all__ = ["IndefiniteSystem", "NonConvergence", "SolveReport", "SolverConfig", "cg", "cg_solve"]


class NonConvergence(RuntimeError):
    """Iteration cap reached before the residual target."""

    def __init__(self, report: "SolveReport"):
        super().__init__(f"CG did not converge in {report.iterations} iterations "
                         f"(relative residual {report.residual:.3e})")
        self.report = report


class IndefiniteSystem(RuntimeError):
    """A search direction of nonpositive curvature was met."""


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-10
    max_iter: int | None = None
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def iteration_cap(self, unknowns: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return int(20 * math.sqrt(unknowns)) + 1000


@dataclass
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    converged: bool = True
    energy: list = field(default_factory=list, repr=False)

    def to_dict(self):
        d = asdict(self)
        d.pop("energy")
        return d


def _dot(u, v):
    return float(np.add.reduce(u * v))


def cg(A, b, config: SolverConfig | None = None, x0=None):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Returns ``(x, report)``. ``report.energy`` holds the CG energy
    ``x.A x / 2 - b.x`` after every iteration; it is nonincreasing in exact
    arithmetic whatever the preconditioner.
    """
    config = config or SolverConfig()
    A = sp.csr_matrix(A) if not sp.issparse(A) else A.tocsr()
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side has non-finite entries")
    n = len(b)
    t0 = time.perf_counter()
    bnorm = math.sqrt(_dot(b, b))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0 and x0 is None:
        return x, SolveReport(0, 0.0, time.perf_counter() - t0, True, [0.0])

    if config.preconditioner == "jacobi":
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise IndefiniteSystem("nonpositive diagonal entry")
        inv_diag = 1.0 / diag
    else:
        inv_diag = None

    r = b - A @ x
    z = r * inv_diag if inv_diag is not None else r.copy()
    p = z.copy()
    rz = _dot(r, z)
    energy = 0.5 * _dot(x, b - r) - _dot(b, x)
    history = [energy]
    cap = config.iteration_cap(n)
    target = config.rel_tol * bnorm
    rnorm = math.sqrt(_dot(r, r))
    it = 0
    while rnorm > target:
        if it >= cap:
            report = SolveReport(it, rnorm / bnorm, time.perf_counter() - t0, False, history)
            raise NonConvergence(report)
        Ap = A @ p
        curv = _dot(p, Ap)
        if curv <= 0.0:
            raise IndefiniteSystem(f"nonpositive curvature {curv:.3e} at iteration {it}")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        energy -= 0.5 * alpha * rz
        history.append(energy)
        it += 1
        rnorm = math.sqrt(_dot(r, r))
        z = r * inv_diag if inv_diag is not None else r
        rz_new = _dot(r, z)
        p *= rz_new / rz
        p += z
        rz = rz_new
    report = SolveReport(it, rnorm / bnorm if bnorm else 0.0, time.perf_counter() - t0, True, history)
    logger.debug("cg: n=%d iterations=%d residual=%.2e", n, it, report.residual)
    return x, report


def cg_solve(system, rhs, config: SolverConfig | None = None):
    """Solve a :class:`~robinflux.discretize.LinearSystem` for a full-length right-hand side.

    Pinned cells keep their prescribed values; the free block is solved by
    :func:`cg`. Returns ``(field, report)`` with ``field`` over all cells.
    """
    b = system.reduced_rhs(rhs)
    x, report = cg(system.reduced, b, config)
    return system.expand(x), report
