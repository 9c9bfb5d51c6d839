"""Finite-volume operators for -Laplace with Robin, Neumann or Dirichlet data.

Two-point fluxes between face-adjacent interior cells give the stiffness
``L`` with off-diagonal ``-h^(n-2)``. The Robin term lives on boundary faces:
``M`` is diagonal with the boundary-measure weight owned by each cell, so the
weak form ``b(u, v) = u.(L + a M).v`` is the discrete counterpart of
``int grad u . grad v + a int u v dsigma``. The boundary trace of a field is
the value of the owning cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .geometry import BoundaryMeasure, GridDomain

__all__ = [
    "LinearSystem",
    "assemble_boundary_mass",
    "assemble_stiffness",
    "constrained_system",
    "dirichlet_system",
    "indicator_boundary_rhs",
    "lung_constraint",
    "point_source_rhs",
    "read_triplets",
    "robin_system",
    "trace",
    "write_triplets",
]


def assemble_stiffness(domain: GridDomain) -> sp.csr_matrix:
    """Symmetric M-matrix of face-neighbour couplings, cached on the domain."""
    if "stiffness" in domain.cache:
        return domain.cache["stiffness"]
    n = domain.n_cells
    w = domain.h ** (domain.dim - 2)
    rows, cols = [], []
    for axis in range(domain.dim):
        nb = domain.cells.copy()
        nb[:, axis] += 1
        j = domain.cell_id[tuple(nb.T)]
        i = np.flatnonzero(j >= 0)
        rows.append(i)
        cols.append(j[i])
    i = np.concatenate(rows)
    j = np.concatenate(cols)
    degree = np.bincount(i, minlength=n) + np.bincount(j, minlength=n)
    r = np.concatenate([i, j, np.arange(n)])
    c = np.concatenate([j, i, np.arange(n)])
    v = np.concatenate([np.full(2 * len(i), -w), w * degree.astype(float)])
    L = sp.csr_matrix((v, (r, c)), shape=(n, n))
    L.sum_duplicates()
    L.sort_indices()
    domain.cache["stiffness"] = L
    return L


def boundary_mass_diagonal(domain: GridDomain, sigma: BoundaryMeasure) -> np.ndarray:
    if len(sigma.weights) != domain.n_faces:
        raise ValueError("boundary measure does not match the domain faces")
    return np.bincount(domain.face_owner, weights=sigma.weights, minlength=domain.n_cells)


def assemble_boundary_mass(domain: GridDomain, sigma: BoundaryMeasure) -> sp.dia_matrix:
    """Diagonal matrix of boundary weight owned by each cell."""
    return sp.diags(boundary_mass_diagonal(domain, sigma)).tocsr()


def trace(domain: GridDomain, u) -> np.ndarray:
    """Boundary trace of a cell field (value of each face's owner)."""
    return np.asarray(u)[domain.face_owner]


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``operator`` over all cells with some cells pinned to fixed values.

    ``reduced`` is the free-by-free block; the couplings to pinned cells are
    moved to the right-hand side by :meth:`reduced_rhs`.
    """

    operator: sp.csr_matrix
    a: float | None
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pinned_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    spd_certificate: float | None = None

    def __post_init__(self):
        n = self.operator.shape[0]
        pinned = np.asarray(self.pinned, dtype=np.int64)
        order = np.argsort(pinned, kind="stable")
        object.__setattr__(self, "pinned", pinned[order])
        object.__setattr__(self, "pinned_values",
                           np.broadcast_to(np.asarray(self.pinned_values, dtype=float), pinned.shape)[order].copy())
        is_free = np.ones(n, dtype=bool)
        is_free[self.pinned] = False
        free = np.flatnonzero(is_free)
        object.__setattr__(self, "free", free)
        A = self.operator
        object.__setattr__(self, "reduced", A[free][:, free].tocsr())
        object.__setattr__(self, "coupling", A[free][:, self.pinned].tocsr())

    @property
    def size(self) -> int:
        return self.operator.shape[0]

    def reduced_rhs(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        b = rhs[self.free]
        if len(self.pinned):
            b = b - self.coupling @ self.pinned_values
        return b

    def expand(self, x_free) -> np.ndarray:
        u = np.empty(self.size)
        u[self.free] = x_free
        u[self.pinned] = self.pinned_values
        return u


def _rayleigh_certificate(A, samples=4, seed=0) -> float:
    """Smallest Rayleigh quotient over the constant vector and seeded random vectors."""
    n = A.shape[0]
    if n == 0:
        return np.inf
    rng = np.random.default_rng(seed)
    vecs = [np.ones(n)] + [rng.standard_normal(n) for _ in range(samples)]
    return float(min((v @ (A @ v)) / (v @ v) for v in vecs))


def robin_system(L, M, a: float) -> LinearSystem:
    """``L + a M`` for ``a > 0`` (symmetric positive definite)."""
    if not a > 0:
        raise ValueError("Robin parameter must be positive; a = 0 is the Neumann problem")
    A = (L + a * M).tocsr()
    A.sort_indices()
    cert = _rayleigh_certificate(A)
    if not cert > 0:
        raise ValueError("Robin operator failed the positivity certificate")
    return LinearSystem(A, float(a), spd_certificate=cert)


def constrained_system(operator, pinned, values, a=None) -> LinearSystem:
    system = LinearSystem(operator.tocsr(), a, np.asarray(pinned), values)
    object.__setattr__(system, "spd_certificate", _rayleigh_certificate(system.reduced))
    return system


def dirichlet_system(L, domain: GridDomain) -> LinearSystem:
    """Stiffness with every boundary-owning cell pinned to zero."""
    pinned = domain.owner_cells
    return constrained_system(L, pinned, 0.0, a=np.inf)


def point_source_rhs(domain: GridDomain, Y) -> np.ndarray:
    """Unit mass in the cell containing ``Y`` (discrete Dirac)."""
    cell = domain.locate(Y)
    if cell < 0:
        raise ValueError(f"pole {Y} lies outside the domain")
    b = np.zeros(domain.n_cells)
    b[cell] = 1.0
    return b


def lung_constraint(domain: GridDomain, radius: float = 1.0):
    """Cells with centre in ``B(0, radius)``; returns ``(indices, values)`` pinned to 1."""
    if domain.h > 0.5 * radius:
        raise ValueError(f"h={domain.h} cannot resolve the unit source ball (need h <= 0.5)")
    inside = np.flatnonzero(np.sum(domain.centers**2, axis=1) < radius**2)
    if len(inside) == 0:
        raise ValueError("discretized source ball is empty")
    if np.isin(inside, domain.face_owner).any():
        raise ValueError("source ball touches the boundary")
    return inside, np.ones(len(inside))


def _face_selection(domain, E):
    E = np.asarray(E)
    if E.dtype == bool:
        if len(E) != domain.n_faces:
            raise ValueError("face mask has the wrong length")
        return E
    sel = np.zeros(domain.n_faces, dtype=bool)
    sel[E.astype(np.int64)] = True
    return sel


def indicator_boundary_rhs(domain: GridDomain, sigma: BoundaryMeasure, E, a: float) -> np.ndarray:
    """Discrete ``a int_E phi dsigma``: per-cell sum of ``a * weight`` over faces in ``E``."""
    sel = _face_selection(domain, E)
    w = np.where(sel, sigma.weights, 0.0)
    return a * np.bincount(domain.face_owner, weights=w, minlength=domain.n_cells)


def write_triplets(A, path) -> None:
    """Sorted ``row col value`` lines (zero-based indices, shortest round-trip floats)."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        fh.write(f"# {A.shape[0]} {A.shape[1]} {C.nnz}\n")
        for k in order:
            fh.write(f"{C.row[k]} {C.col[k]} {float(C.data[k])!r}\n")


def read_triplets(path) -> sp.csr_matrix:
    with open(path) as fh:
        header = fh.readline().split()
        nr, nc = int(header[1]), int(header[2])
        rows, cols, vals = [], [], []
        for line in fh:
            i, j, v = line.split()
            rows.append(int(i))
            cols.append(int(j))
            vals.append(float(v))
    return sp.csr_matrix((vals, (rows, cols)), shape=(nr, nc))
