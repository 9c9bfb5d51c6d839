"""Voxel domains, boundary faces and boundary measures.

A domain is a set of interior cells of a uniform Cartesian grid. Its boundary
is the set of cell faces separating an interior cell from an exterior one;
each face carries its centre, outward axis normal and area ``h**(n-1)``.

Cell indices follow the lexicographic (C) order of the grid, faces are ordered
by (owner, axis, sign). Both orders are fixed so that every quantity built on
top of a domain is reproducible bit for bit.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

__all__ = [
    "BoundaryFace",
    "BoundaryMeasure",
    "Corkscrew",
    "CorkscrewError",
    "GridDomain",
    "MixedDimensionReport",
    "boundary_distance",
    "build_ball_domain",
    "build_prefractal_domain",
    "build_shell_domain",
    "corkscrew_point",
    "critical_rho_X",
    "critical_rho_at",
    "critical_rho_global",
    "faces_in_ball",
    "index_I",
    "load_domain",
    "nearest_boundary_face",
    "save_domain",
    "sigma_ball",
    "surface_measure",
    "verify_mixed_dimension",
]

MAX_PREFRACTAL_DEPTH = 3


class CorkscrewError(RuntimeError):
    """No interior cell is available where a corkscrew point is required."""


class BoundaryFace(NamedTuple):
    center: np.ndarray
    normal: np.ndarray
    area: float
    owner: int


class GridDomain:
    """Interior cells of a padded Cartesian grid plus derived boundary data.

    Parameters
    ----------
    mask : ndarray of bool
        Interior indicator on the bounding grid. Padded with one exterior
        layer if it touches the array border.
    h : float
        Cell width.
    origin : array_like
        Coordinates of the lower corner of the bounding grid.
    metadata : dict
        Construction parameters (``kind``, ``R``, ``L``, ``depth``, ``ell``...).
    """

    def __init__(self, mask, h, origin, metadata=None):
        mask = np.asarray(mask, dtype=bool)
        origin = np.asarray(origin, dtype=float).copy()
        if mask.ndim not in (2, 3):
            raise ValueError("only 2-D and 3-D grids are supported")
        if h <= 0:
            raise ValueError("cell width must be positive")
        if not mask.any():
            raise ValueError("domain has no interior cell")
        if _touches_border(mask):
            mask = np.pad(mask, 1)
            origin -= h
        self.dim = mask.ndim
        self.h = float(h)
        self.origin = origin
        self.mask = mask
        self.shape = mask.shape
        self.metadata = dict(metadata or {})
        self.cache: dict = {}

        self.cells = np.argwhere(mask)
        self.n_cells = len(self.cells)
        self.cell_id = np.full(mask.shape, -1, dtype=np.int64)
        self.cell_id[mask] = np.arange(self.n_cells)
        self.centers = origin + (self.cells + 0.5) * self.h

        _, ncomp = ndimage.label(mask)
        if ncomp != 1:
            raise ValueError(f"interior cells form {ncomp} face-connected components")

        self._build_faces()
        self.diam = _voxel_diameter(self)

    def _build_faces(self):
        owners, axes, signs = [], [], []
        for axis in range(self.dim):
            for sign in (-1, 1):
                nb = self.cells.copy()
                nb[:, axis] += sign
                exterior = ~self.mask[tuple(nb.T)]
                idx = np.flatnonzero(exterior)
                owners.append(idx)
                axes.append(np.full(len(idx), axis))
                signs.append(np.full(len(idx), sign))
        owner = np.concatenate(owners)
        axis = np.concatenate(axes)
        sign = np.concatenate(signs)
        order = np.lexsort((sign, axis, owner))
        self.face_owner = owner[order].astype(np.int64)
        self.face_axis = axis[order].astype(np.int64)
        self.face_sign = sign[order].astype(np.int64)
        self.n_faces = len(self.face_owner)
        self.face_center = self.centers[self.face_owner].copy()
        self.face_center[np.arange(self.n_faces), self.face_axis] += 0.5 * self.h * self.face_sign
        self.face_area = np.full(self.n_faces, self.h ** (self.dim - 1))

    # -- derived lookups -------------------------------------------------

    @property
    def face_normal(self) -> np.ndarray:
        normal = np.zeros((self.n_faces, self.dim))
        normal[np.arange(self.n_faces), self.face_axis] = self.face_sign
        return normal

    def face(self, i: int) -> BoundaryFace:
        return BoundaryFace(self.face_center[i], self.face_normal[i], float(self.face_area[i]),
                            int(self.face_owner[i]))

    @property
    def owner_cells(self) -> np.ndarray:
        """Sorted indices of cells owning at least one boundary face."""
        return np.unique(self.face_owner)

    @property
    def face_tree(self) -> cKDTree:
        if "face_tree" not in self.cache:
            self.cache["face_tree"] = cKDTree(self.face_center)
        return self.cache["face_tree"]

    @property
    def cell_tree(self) -> cKDTree:
        if "cell_tree" not in self.cache:
            self.cache["cell_tree"] = cKDTree(self.centers)
        return self.cache["cell_tree"]

    def locate(self, X) -> int:
        """Index of the cell containing point ``X`` (``-1`` if exterior)."""
        X = np.asarray(X, dtype=float)
        ijk = np.floor((X - self.origin) / self.h).astype(np.int64)
        if np.any(ijk < 0) or np.any(ijk >= np.asarray(self.shape)):
            return -1
        return int(self.cell_id[tuple(ijk)])

    def content_hash(self) -> str:
        header = json.dumps(_header(self), sort_keys=True).encode()
        return hashlib.sha256(header + np.packbits(self.mask.ravel()).tobytes()).hexdigest()

    def __repr__(self):
        kind = self.metadata.get("kind", "custom")
        return (f"GridDomain(kind={kind!r}, dim={self.dim}, h={self.h}, cells={self.n_cells}, "
                f"faces={self.n_faces})")


def _touches_border(mask):
    for axis in range(mask.ndim):
        if mask.take(0, axis=axis).any() or mask.take(-1, axis=axis).any():
            return True
    return False


def _voxel_diameter(domain: GridDomain) -> float:
    """Exact diameter of the union of interior voxels."""
    pts = domain.centers[domain.owner_cells]
    if len(pts) > domain.dim + 1:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    offsets = np.array(list(itertools.product((-0.5, 0.5), repeat=domain.dim))) * domain.h
    corners = (pts[:, None, :] + offsets[None, :, :]).reshape(-1, domain.dim)
    if len(corners) > 64:
        try:
            corners = corners[ConvexHull(corners).vertices]
        except QhullError:
            pass
    return float(pdist(corners).max())


# -- boundary measure ----------------------------------------------------------


@dataclass(frozen=True)
class BoundaryMeasure:
    """Nonnegative weights on the boundary faces of a domain."""

    weights: np.ndarray
    total: float = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValueError("weights must be one-dimensional")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("boundary measure weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "total", float(np.sum(w)))

    def of(self, faces) -> float:
        """Measure of a face set given as an index array or boolean mask."""
        faces = np.asarray(faces)
        if faces.dtype == bool:
            return float(np.sum(self.weights[faces]))
        return float(np.sum(self.weights[np.sort(faces)]))

    def scaled(self, factor: float) -> "BoundaryMeasure":
        return BoundaryMeasure(self.weights * factor)


def surface_measure(domain: GridDomain, corrected: bool | None = None) -> BoundaryMeasure:
    """Surface measure carried by the boundary faces.

    Plain face areas are exact on axis-aligned geometry. For spherical
    boundaries the staircase overestimates the area by up to 3/2, so by
    default faces of ``ball``/``shell`` domains are weighted by
    ``|n . e_face|`` with ``n`` the exact sphere normal at the face centre;
    summed over the staircase this converges to the smooth surface area.
    """
    if corrected is None:
        corrected = domain.metadata.get("kind") in ("ball", "shell")
    if not corrected:
        return BoundaryMeasure(domain.face_area.copy())
    c = domain.face_center
    radius = np.linalg.norm(c, axis=1)
    cosine = np.abs(c[np.arange(domain.n_faces), domain.face_axis]) / radius
    return BoundaryMeasure(domain.face_area * cosine)


# -- builders ------------------------------------------------------------------


def _centered_grid(extent: float, h: float, dim: int):
    """Grid whose cell centres sit on integer multiples of ``h``."""
    m = int(math.ceil(extent / h)) + 1
    origin = np.full(dim, -(m + 0.5) * h)
    coords = (np.arange(2 * m + 1) - m) * h
    return origin, np.meshgrid(*([coords] * dim), indexing="ij")


def build_ball_domain(R: float, h: float, n: int = 3) -> GridDomain:
    """Cells whose centres satisfy ``|x| < R``."""
    if h <= 0:
        raise ValueError("cell width must be positive")
    if h >= R / 4:
        raise ValueError(f"h={h} too coarse for a ball of radius {R} (need h < R/4)")
    origin, X = _centered_grid(R, h, n)
    r2 = sum(x * x for x in X)
    mask = r2 < R * R
    meta = {"kind": "ball", "R": R, "h": h, "n": n, "ell": R, "C0": R + h}
    return GridDomain(mask, h, origin, meta)


def build_shell_domain(R_out: float, R_in: float, h: float, n: int = 3) -> GridDomain:
    """Spherical shell ``R_in < |x| < R_out``; violates ``B(0,4)`` containment."""
    if not 0 < R_in < R_out:
        raise ValueError("need 0 < R_in < R_out")
    if h >= (R_out - R_in) / 4:
        raise ValueError("h too coarse to resolve the shell thickness")
    origin, X = _centered_grid(R_out, h, n)
    r2 = sum(x * x for x in X)
    mask = (r2 < R_out**2) & (r2 > R_in**2)
    meta = {"kind": "shell", "R": R_out, "R_in": R_in, "h": h, "n": n,
            "ell": R_in, "C0": R_out + h}
    return GridDomain(mask, h, origin, meta)


def _prefractal_boxes(L: float, depth: int, n: int):
    """Axis-aligned boxes of the outward cube-bump recursion.

    Every exposed square of side ``s`` receives a centred cube of side
    ``s/3``; the square is replaced by its ``3**(n-1) - 1`` outer sub-squares
    and the ``2n - 1`` exposed faces of the bump.
    """
    half = L / 2
    boxes = [(np.full(n, -half), np.full(n, half))]
    squares = []
    for axis in range(n):
        for sign in (-1, 1):
            c = np.zeros(n)
            c[axis] = sign * half
            squares.append((c, axis, sign, L))
    for _ in range(depth):
        new = []
        for c, axis, sign, s in squares:
            t = s / 3
            lateral = [j for j in range(n) if j != axis]
            lo = c - t / 2
            hi = c + t / 2
            lo[axis], hi[axis] = (c[axis], c[axis] + t) if sign > 0 else (c[axis] - t, c[axis])
            boxes.append((lo, hi))
            for offs in itertools.product((-1, 0, 1), repeat=n - 1):
                if all(o == 0 for o in offs):
                    continue
                sc = c.copy()
                for j, o in zip(lateral, offs):
                    sc[j] += o * t
                new.append((sc, axis, sign, t))
            top = c.copy()
            top[axis] += sign * t
            new.append((top, axis, sign, t))
            for j in lateral:
                for sj in (-1, 1):
                    sc = c.copy()
                    sc[axis] += sign * t / 2
                    sc[j] += sj * t / 2
                    new.append((sc, j, sj, t))
        squares = new
    return boxes


def build_prefractal_domain(L: float, depth: int, h: float, n: int = 3) -> GridDomain:
    """Cube ``[-L/2, L/2]^n`` with ``depth`` generations of outward cube bumps.

    The smooth scale is ``ell = L * 3**-depth``; below it the boundary is
    piecewise flat. Cell faces are aligned with the cube so that every bump
    is voxelized exactly whenever ``ell/h`` is an integer.
    """
    if depth < 0 or depth > MAX_PREFRACTAL_DEPTH:
        raise ValueError(f"depth must be in [0, {MAX_PREFRACTAL_DEPTH}]")
    if L < 10:
        raise ValueError("L must be at least 10 so that the cube contains B(0,4)")
    ell = L * 3.0**-depth
    if h <= 0 or h > ell / 4 * (1 + 1e-9):
        raise ValueError(f"h={h} cannot resolve bumps of side {ell:g} (need h <= ell/4)")
    half = L / 2
    extent = half + sum(L * 3.0**-j for j in range(1, depth + 1))
    m = int(math.ceil((extent - half) / h - 1e-9)) + 1
    origin = np.full(n, -half - m * h)
    size = 2 * m + int(math.ceil(L / h)) + 2
    mask = np.zeros((size,) * n, dtype=bool)
    eps = 1e-9
    for lo, hi in _prefractal_boxes(L, depth, n):
        sl = []
        for j in range(n):
            # centres in the half-open [lo, hi) so that abutting boxes stay connected
            i0 = int(math.ceil((lo[j] - origin[j]) / h - 0.5 - eps))
            i1 = int(math.ceil((hi[j] - origin[j]) / h - 0.5 - eps)) - 1
            sl.append(slice(max(i0, 0), min(i1 + 1, size)))
        mask[tuple(sl)] = True
    meta = {"kind": "prefractal", "L": L, "depth": depth, "h": h, "n": n, "ell": ell,
            "C0": extent * math.sqrt(n) + h, "area_multiplier": (1 + (2 * n - 2) / 3 ** (n - 1))}
    domain = GridDomain(mask, h, origin, meta)
    _check_contains_b4(domain)
    return domain


def _check_contains_b4(domain: GridDomain):
    lo = domain.origin + 0.5 * domain.h
    axes = [lo[j] + domain.h * np.arange(domain.shape[j]) for j in range(domain.dim)]
    X = np.meshgrid(*axes, indexing="ij")
    ball = sum(x * x for x in X) < 16.0
    if np.any(ball & ~domain.mask):
        raise ValueError("construction does not contain the discretized B(0,4)")


# -- serialization ---------------------------------------------------------------


def _header(domain: GridDomain) -> dict:
    return {"format": "robinflux-domain", "version": 1, "dim": domain.dim, "h": domain.h,
            "origin": [float(x) for x in domain.origin], "shape": list(domain.shape),
            "metadata": domain.metadata}


def save_domain(domain: GridDomain, stem) -> tuple[Path, Path]:
    """Write ``<stem>.json`` (header) and ``<stem>.mask`` (packed interior bits)."""
    stem = Path(stem)
    header_path = stem.with_suffix(".json")
    mask_path = stem.with_suffix(".mask")
    header_path.write_text(json.dumps(_header(domain), indent=2, sort_keys=True) + "\n")
    mask_path.write_bytes(np.packbits(domain.mask.ravel()).tobytes())
    return header_path, mask_path


def load_domain(stem) -> GridDomain:
    """Inverse of :func:`save_domain`; boundary faces are re-derived."""
    stem = Path(stem)
    header = json.loads(stem.with_suffix(".json").read_text())
    if header.get("format") != "robinflux-domain":
        raise ValueError("not a robinflux domain header")
    shape = tuple(header["shape"])
    bits = np.frombuffer(stem.with_suffix(".mask").read_bytes(), dtype=np.uint8)
    mask = np.unpackbits(bits, count=int(np.prod(shape))).astype(bool).reshape(shape)
    return GridDomain(mask, header["h"], header["origin"], header["metadata"])


# -- boundary balls and indices ----------------------------------------------------


def faces_in_ball(domain: GridDomain, Q, r: float) -> np.ndarray:
    """Sorted indices of faces whose centre satisfies ``|c - Q| < r``."""
    Q = np.asarray(Q, dtype=float)
    idx = np.asarray(domain.face_tree.query_ball_point(Q, r), dtype=np.int64)
    if len(idx):
        d = np.linalg.norm(domain.face_center[idx] - Q, axis=1)
        idx = idx[d < r]
    return np.sort(idx)


def _check_boundary_point(domain, Q):
    d, _ = domain.face_tree.query(np.asarray(Q, dtype=float))
    if d > domain.h * (1 + 1e-9):
        raise ValueError(f"point {Q} is not within h of the boundary (distance {d:g})")


def sigma_ball(domain: GridDomain, sigma: BoundaryMeasure, Q, r: float) -> float:
    """``sigma(B(Q, r))`` for a boundary point ``Q``; ``r`` is clipped to the diameter."""
    if r <= 0:
        raise ValueError("radius must be positive")
    _check_boundary_point(domain, Q)
    r = min(r, domain.diam)
    return float(np.sum(sigma.weights[faces_in_ball(domain, Q, r)]))


def index_I(domain, sigma, a, Q, r) -> float:
    """Neumann-to-Dirichlet index ``a r^(2-n) sigma(B(Q, r))``."""
    if a < 0:
        raise ValueError("Robin parameter must be nonnegative")
    if a == 0:
        return 0.0
    return a * r ** (2 - domain.dim) * sigma_ball(domain, sigma, Q, r)


def critical_rho_global(sigma_total: float, a: float, n: int) -> float:
    """Global crossover length ``(a sigma(dOmega))^(1/(n-2))``."""
    if n < 3:
        raise ValueError("the critical scale needs n >= 3")
    if a <= 0 or sigma_total <= 0:
        raise ValueError("a and sigma_total must be positive")
    return (a * sigma_total) ** (1.0 / (n - 2))


def nearest_boundary_face(domain: GridDomain, X) -> int:
    """Nearest face centre to ``X``; ties go to the lowest face index."""
    X = np.asarray(X, dtype=float)
    k = min(8, domain.n_faces)
    d, idx = domain.face_tree.query(X, k=k)
    d, idx = np.atleast_1d(d), np.atleast_1d(idx)
    tie = d <= d[0] * (1 + 1e-12) + 1e-15
    return int(np.min(idx[tie]))


def critical_rho_at(domain, sigma, a, Q) -> float:
    """Crossing of ``I_Q(rho) = 1`` located by bisection on ``[h, diam]``.

    Returns ``diam`` when ``I_Q`` stays below one, and the resolution floor
    ``h`` when it already exceeds one there. Brackets shrink to ``h/4``.
    """
    if a < 0:
        raise ValueError("Robin parameter must be nonnegative")
    lo, hi = domain.h, domain.diam
    if a == 0 or index_I(domain, sigma, a, Q, hi) <= 1:
        return hi
    if index_I(domain, sigma, a, Q, lo) > 1:
        return lo
    while hi - lo > domain.h / 4:
        mid = 0.5 * (lo + hi)
        if index_I(domain, sigma, a, Q, mid) <= 1:
            lo = mid
        else:
            hi = mid
    return lo


def critical_rho_X(domain, sigma, a, X) -> float:
    """Local crossover length at the boundary point nearest to ``X``."""
    f = nearest_boundary_face(domain, X)
    return critical_rho_at(domain, sigma, a, domain.face_center[f])


# -- corkscrews ----------------------------------------------------------------------


def boundary_distance(domain: GridDomain) -> np.ndarray:
    """Distance from every cell centre to the nearest boundary face (cached)."""
    if "delta" not in domain.cache:
        k = min(16, domain.n_faces)
        _, idx = domain.face_tree.query(domain.centers, k=k)
        idx = idx.reshape(domain.n_cells, -1)
        best = np.full(domain.n_cells, np.inf)
        half = 0.5 * domain.h
        for col in range(idx.shape[1]):
            f = idx[:, col]
            diff = np.abs(domain.centers - domain.face_center[f])
            ax = domain.face_axis[f]
            rows = np.arange(domain.n_cells)
            normal = diff[rows, ax].copy()
            diff = np.maximum(diff - half, 0.0)
            diff[rows, ax] = normal
            best = np.minimum(best, np.sqrt(np.sum(diff * diff, axis=1)))
        domain.cache["delta"] = best
    return domain.cache["delta"]


class Corkscrew(NamedTuple):
    point: np.ndarray
    cell: int
    delta: float
    M: float


def corkscrew_point(domain: GridDomain, Q, r: float) -> Corkscrew:
    """Interior cell centre in ``B(Q, r/2)`` farthest from the boundary.

    Searching the half ball keeps the corkscrew ball ``B(A, r/M)`` inside
    ``B(Q, r)`` for every achieved ``M >= 2``. Ties go to the lowest
    (lexicographic) cell index.
    """
    if r < domain.h:
        raise ValueError(f"radius {r:g} below the cell width is unresolvable")
    Q = np.asarray(Q, dtype=float)
    cand = np.asarray(domain.cell_tree.query_ball_point(Q, 0.5 * r), dtype=np.int64)
    if len(cand):
        cand = cand[np.linalg.norm(domain.centers[cand] - Q, axis=1) <= 0.5 * r]
    if len(cand) == 0:
        raise CorkscrewError(f"no interior cell in B({Q}, {r / 2:g}); corkscrew condition fails")
    cand = np.sort(cand)
    delta = boundary_distance(domain)[cand]
    best = cand[int(np.argmax(delta))]
    dbest = float(boundary_distance(domain)[best])
    return Corkscrew(domain.centers[best].copy(), int(best), dbest, r / dbest)


# -- mixed dimension ------------------------------------------------------------------


@dataclass
class MixedDimensionReport:
    fitted_d: float
    doubling_const: float
    homogeneity_const: float
    samples: int
    r_min: float = 0.0
    r_max: float = 0.0

    def to_dict(self):
        return dict(self.__dict__)


def default_scale_range(domain: GridDomain) -> tuple[float, float]:
    """Radii over which the boundary growth exponent is fitted."""
    meta = domain.metadata
    h = domain.h
    if meta.get("kind") == "prefractal" and meta.get("depth", 0) >= 1:
        return max(meta["ell"], 4 * h), meta["L"] / 3
    return 4 * h, domain.diam / 4


def verify_mixed_dimension(domain, sigma, sample_count=32, seed=0, r_min=None, r_max=None,
                           n_radii=8) -> MixedDimensionReport:
    """Empirical growth exponent, doubling and homogeneity constants of ``sigma``."""
    if sample_count < 16:
        raise ValueError("sample_count must be at least 16")
    lo, hi = default_scale_range(domain)
    r_min = lo if r_min is None else r_min
    r_max = hi if r_max is None else r_max
    rng = np.random.default_rng(seed)
    faces = rng.choice(domain.n_faces, size=sample_count, replace=domain.n_faces < sample_count)
    radii = np.geomspace(r_min, r_max, n_radii)
    table = np.array([[sigma_ball(domain, sigma, domain.face_center[f], r) for r in radii]
                      for f in faces])
    logs_r = np.tile(np.log(radii), sample_count)
    fitted_d = float(np.polyfit(logs_r, np.log(table).ravel(), 1)[0])
    doubling = 0.0
    for f in faces:
        Q = domain.face_center[f]
        for r in radii:
            if 2 * r <= domain.diam:
                doubling = max(doubling, sigma_ball(domain, sigma, Q, 2 * r) / sigma_ball(domain, sigma, Q, r))
    homogeneity = float(np.max(table.max(axis=0) / table.min(axis=0)))
    return MixedDimensionReport(fitted_d, float(doubling), homogeneity, sample_count, r_min, r_max)
