"""Discrete Riemannian geometry on closed manifolds.

Three metric backends are supported:

* :class:`Circle1D` -- the periodic interval with metric ``phi(x)**2 dx**2``;
* :class:`ConformalTorus2D` -- the periodic square with ``exp(2w) (dx**2 + dy**2)``;
* :class:`RoundSphere` -- the round ``n``-sphere of squared radius ``r2``, handled
  analytically. Fields on it are homogeneous and stored on a single node; tensors
  are written in normal coordinates of the unit sphere at that node, so that
  ``g_ij = r2 * delta_ij``.

Field layout (plain numpy arrays, C order, ``indexing="ij"``):

* scalar field: ``shape``
* vector field (contravariant ``X^i``) or covector: ``(dim, *shape)``
* symmetric 2-tensor (covariant ``T_ij``): ``(dim, dim, *shape)``

All derivatives are second-order centered differences on the periodic grid.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

ScalarField = np.ndarray
VectorField = np.ndarray
SymTensorField = np.ndarray

MIN_RESOLUTION = 8


class UnsupportedBackend(TypeError):
    """Raised when an operation has no meaning on the given metric backend."""


class MetricDegeneracy(ValueError):
    """Raised when a metric stops being positive definite."""


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid with ``resolution[a]`` nodes on ``[0, lengths[a])``."""

    resolution: tuple[int, ...]
    lengths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "resolution", tuple(int(n) for n in self.resolution))
        object.__setattr__(self, "lengths", tuple(float(L) for L in self.lengths))
        if len(self.resolution) not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {len(self.resolution)}")
        if len(self.lengths) != len(self.resolution):
            raise ValueError("one length per axis is required")
        if min(self.resolution) < MIN_RESOLUTION:
            raise ValueError(f"resolution must be >= {MIN_RESOLUTION} per axis, got {self.resolution}")
        if min(self.lengths) <= 0:
            raise ValueError(f"domain lengths must be positive, got {self.lengths}")

    @classmethod
    def uniform(cls, dimension: int, n: int = 64, length: float = 1.0) -> GridSpec:
        return cls((n,) * dimension, (length,) * dimension)

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.resolution))

    def coordinates(self) -> tuple[np.ndarray, ...]:
        axes = [np.arange(n) * h for n, h in zip(self.resolution, self.spacing)]
        return tuple(np.meshgrid(*axes, indexing="ij"))


@dataclass(frozen=True, eq=False)
class Circle1D:
    """Periodic interval with metric ``phi**2 dx**2``."""

    grid: GridSpec
    phi: np.ndarray

    def __post_init__(self):
        if self.grid.dimension != 1:
            raise ValueError("Circle1D needs a 1D grid")
        phi = _frozen(self.phi)
        if phi.shape != self.grid.shape:
            raise ValueError(f"phi has shape {phi.shape}, grid has {self.grid.shape}")
        if not np.all(np.isfinite(phi)):
            raise ValueError("phi must be finite")
        if np.any(phi <= 0):
            raise MetricDegeneracy("Circle1D requires phi > 0 at every node")
        object.__setattr__(self, "phi", phi)

    dim = 1

    @property
    def shape(self):
        return self.grid.shape

    def metric(self) -> SymTensorField:
        return (self.phi**2)[None, None]

    def inverse_metric(self) -> SymTensorField:
        return (self.phi**-2)[None, None]

    def volume_element(self) -> ScalarField:
        return self.phi

    @property
    def dof(self) -> np.ndarray:
        """The evolved metric degree of freedom, ``g_11 = phi**2``."""
        return self.phi**2

    def with_dof(self, g11) -> Circle1D:
        g11 = np.asarray(g11)
        if np.any(g11 <= 0):
            raise MetricDegeneracy("g_11 <= 0")
        return Circle1D(self.grid, np.sqrt(g11))


@dataclass(frozen=True, eq=False)
class ConformalTorus2D:
    """Flat torus rescaled by a conformal factor: ``g = exp(2w) (dx^2 + dy^2)``."""

    grid: GridSpec
    w: np.ndarray

    def __post_init__(self):
        if self.grid.dimension != 2:
            raise ValueError("ConformalTorus2D needs a 2D grid")
        w = _frozen(self.w)
        if w.shape != self.grid.shape:
            raise ValueError(f"w has shape {w.shape}, grid has {self.grid.shape}")
        if not np.all(np.isfinite(w)):
            raise MetricDegeneracy("conformal factor must be finite")
        object.__setattr__(self, "w", w)

    dim = 2

    @property
    def shape(self):
        return self.grid.shape

    def metric(self) -> SymTensorField:
        return np.exp(2 * self.w) * np.eye(2)[:, :, None, None]

    def inverse_metric(self) -> SymTensorField:
        return np.exp(-2 * self.w) * np.eye(2)[:, :, None, None]

    def volume_element(self) -> ScalarField:
        return np.exp(2 * self.w)

    @property
    def dof(self) -> np.ndarray:
        return self.w

    def with_dof(self, w) -> ConformalTorus2D:
        return ConformalTorus2D(self.grid, w)


@dataclass(frozen=True, eq=False)
class RoundSphere:
    """Round sphere ``S^n`` of squared radius ``r2`` (homogeneous fields only)."""

    n: int
    r2: float
    shape: tuple[int, ...] = field(default=(1,), init=False)

    def __post_init__(self):
        if int(self.n) < 2:
            raise ValueError("RoundSphere needs n >= 2")
        object.__setattr__(self, "n", int(self.n))
        if not self.r2 > 0:
            raise MetricDegeneracy(f"RoundSphere requires r2 > 0, got {self.r2}")
        object.__setattr__(self, "r2", float(self.r2))

    @property
    def dim(self) -> int:
        return self.n

    def metric(self) -> SymTensorField:
        return self.r2 * np.eye(self.n)[:, :, None]

    def inverse_metric(self) -> SymTensorField:
        return np.eye(self.n)[:, :, None] / self.r2

    def area(self) -> float:
        unit = 2 * math.pi ** ((self.n + 1) / 2) / math.gamma((self.n + 1) / 2)
        return unit * self.r2 ** (self.n / 2)

    @property
    def dof(self) -> np.ndarray:
        return np.array([self.r2])

    def with_dof(self, r2) -> RoundSphere:
        return RoundSphere(self.n, float(np.asarray(r2).reshape(-1)[0]))


Geometry = Union[Circle1D, ConformalTorus2D, RoundSphere]


def is_grid(geom: Geometry) -> bool:
    return not isinstance(geom, RoundSphere)


def _require_grid(geom: Geometry, op: str) -> None:
    if not is_grid(geom):
        raise UnsupportedBackend(f"{op} requires a grid backend, got {type(geom).__name__}")


# -- finite differences ---------------------------------------------------------

def _axis(f: np.ndarray, dim: int, a: int) -> int:
    return f.ndim - dim + a


def diff1(f: np.ndarray, a: int, h: float, dim: int) -> np.ndarray:
    """Centered first difference along spatial axis ``a``."""
    ax = _axis(f, dim, a)
    return (np.roll(f, -1, ax) - np.roll(f, 1, ax)) / (2 * h)


def diff2(f: np.ndarray, a: int, h: float, dim: int) -> np.ndarray:
    """Compact centered second difference along spatial axis ``a``."""
    ax = _axis(f, dim, a)
    return (np.roll(f, -1, ax) - 2 * f + np.roll(f, 1, ax)) / h**2


def partials(geom: Geometry, f: ScalarField) -> np.ndarray:
    """Coordinate derivatives ``d_i f`` (a covector field)."""
    if not is_grid(geom):
        return np.zeros((geom.dim,) + np.shape(f))
    h = geom.grid.spacing
    return np.stack([diff1(f, a, h[a], geom.dim) for a in range(geom.dim)])


def _partials_any(geom: Geometry, T: np.ndarray) -> np.ndarray:
    # derivative index prepended: out[l, ...] = d_l T[...]
    h = geom.grid.spacing
    return np.stack([diff1(T, a, h[a], geom.dim) for a in range(geom.dim)])


# -- metric algebra --------------------------------------------------------------

def lower(geom: Geometry, X: VectorField) -> np.ndarray:
    return np.einsum("ij...,j...->i...", geom.metric(), X)


def raise_index(geom: Geometry, w: np.ndarray) -> VectorField:
    return np.einsum("ij...,j...->i...", geom.inverse_metric(), w)


def inner(geom: Geometry, X: VectorField, Y: VectorField) -> ScalarField:
    return np.einsum("ij...,i...,j...->...", geom.metric(), X, Y)


def norm_sq(geom: Geometry, X: VectorField) -> ScalarField:
    return inner(geom, X, X)


def covector_norm_sq(geom: Geometry, w: np.ndarray) -> ScalarField:
    return np.einsum("ij...,i...,j...->...", geom.inverse_metric(), w, w)


def contract(T: SymTensorField, X: VectorField, Y: VectorField | None = None) -> ScalarField:
    """``T_ij X^i Y^j`` (``Y`` defaults to ``X``)."""
    return np.einsum("ij...,i...,j...->...", T, X, X if Y is None else Y)


def trace(geom: Geometry, T: SymTensorField) -> ScalarField:
    return np.einsum("ij...,ij...->...", geom.inverse_metric(), T)


def tensor_inner(geom: Geometry, A: SymTensorField, B: SymTensorField) -> ScalarField:
    gi = geom.inverse_metric()
    return np.einsum("ik...,jl...,ij...,kl...->...", gi, gi, A, B)


def tensor_norm_sq(geom: Geometry, T: SymTensorField) -> ScalarField:
    """``|T|^2 = g^ik g^jl T_ij T_kl``, pointwise."""
    return tensor_inner(geom, T, T)


def raise_both(geom: Geometry, T: SymTensorField) -> SymTensorField:
    gi = geom.inverse_metric()
    return np.einsum("ik...,jl...,kl...->ij...", gi, gi, T)


def relative_eigenvalues(geom: Geometry, T: SymTensorField) -> np.ndarray:
    """Eigenvalues of ``T`` relative to ``g`` at each node, shape ``(*shape, dim)``.

    These are the ``lambda`` with ``T - lambda g`` singular, so that
    ``lambda_min g <= T <= lambda_max g``.
    """
    g = np.moveaxis(geom.metric(), (0, 1), (-2, -1))
    A = np.moveaxis(T, (0, 1), (-2, -1))
    L = np.linalg.cholesky(g)
    Linv = np.linalg.inv(L)
    M = Linv @ A @ np.swapaxes(Linv, -1, -2)
    return np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))


# -- connection and differential operators ---------------------------------------

def christoffel(geom: Geometry) -> np.ndarray:
    """Christoffel symbols ``Gamma[k, i, j] = Gamma^k_ij`` from centered differences of g."""
    _require_grid(geom, "christoffel")
    g = geom.metric()
    dg = _partials_any(geom, g)  # dg[l, i, j] = d_l g_ij
    low = 0.5 * (
        np.einsum("ijl...->lij...", dg)
        + np.einsum("jil...->lij...", dg)
        - dg
    )
    return np.einsum("kl...,lij...->kij...", geom.inverse_metric(), low)


def gradient(geom: Geometry, f: ScalarField) -> VectorField:
    """Metric gradient ``X^i = g^ij d_j f``."""
    return raise_index(geom, partials(geom, f))


def laplace_beltrami(geom: Geometry, f: ScalarField) -> ScalarField:
    """Conservative Laplace-Beltrami operator ``(1/sqrt g) d_i (sqrt g g^ij d_j f)``."""
    if isinstance(geom, RoundSphere):
        return np.zeros(np.shape(f))
    if isinstance(geom, ConformalTorus2D):
        hx, hy = geom.grid.spacing
        flat = diff2(f, 0, hx, 2) + diff2(f, 1, hy, 2)
        return np.exp(-2 * geom.w) * flat
    (h,) = geom.grid.spacing
    phi = geom.phi
    phi_half = 0.5 * (phi + np.roll(phi, -1))
    flux = (np.roll(f, -1) - f) / (h * phi_half)
    return (flux - np.roll(flux, 1)) / (h * phi)


def second_partials(geom: Geometry, f: ScalarField) -> SymTensorField:
    dim = geom.dim
    h = geom.grid.spacing
    out = np.empty((dim, dim) + np.shape(f))
    for a in range(dim):
        out[a, a] = diff2(f, a, h[a], dim)
        for b in range(a + 1, dim):
            out[a, b] = out[b, a] = diff1(diff1(f, a, h[a], dim), b, h[b], dim)
    return out


def hessian(geom: Geometry, f: ScalarField) -> SymTensorField:
    """Covariant Hessian ``d_i d_j f - Gamma^k_ij d_k f``."""
    if isinstance(geom, RoundSphere):
        return np.zeros((geom.dim, geom.dim) + np.shape(f))
    gam = christoffel(geom)
    return second_partials(geom, f) - np.einsum("kij...,k...->ij...", gam, partials(geom, f))


def covariant_derivative(geom: Geometry, T: SymTensorField) -> np.ndarray:
    """``out[k, i, j] = nabla_k T_ij``."""
    if isinstance(geom, RoundSphere):
        return np.zeros((geom.dim,) + np.shape(T))
    gam = christoffel(geom)
    dT = _partials_any(geom, T)
    return (
        dT
        - np.einsum("lki...,lj...->kij...", gam, T)
        - np.einsum("lkj...,il...->kij...", gam, T)
    )


def divergence(geom: Geometry, T: SymTensorField) -> np.ndarray:
    """Covector ``(div T)_j = g^ik nabla_k T_ij``."""
    return np.einsum("ik...,kij...->j...", geom.inverse_metric(), covariant_derivative(geom, T))


def vector_divergence(geom: Geometry, X: VectorField) -> ScalarField:
    """``nabla_i X^i = (1/sqrt g) d_i (sqrt g X^i)``."""
    if isinstance(geom, RoundSphere):
        return np.zeros(X.shape[1:])
    mu = geom.volume_element()
    h = geom.grid.spacing
    return sum(diff1(mu * X[a], a, h[a], geom.dim) for a in range(geom.dim)) / mu


def bochner_residual(geom: Geometry, f: ScalarField) -> ScalarField:
    """``1/2 Lap|grad f|^2 - <grad Lap f, grad f> - |Hess f|^2 - Ric(grad f, grad f)``.

    Zero in the continuum; on the grid it measures the consistency of the
    Laplacian, Hessian and curvature stencils with one another.
    """
    df = partials(geom, f)
    grad = raise_index(geom, df)
    return (
        0.5 * laplace_beltrami(geom, covector_norm_sq(geom, df))
        - np.einsum("i...,i...->...", partials(geom, laplace_beltrami(geom, f)), grad)
        - tensor_norm_sq(geom, hessian(geom, f))
        - contract(ricci(geom), grad)
    )


# -- curvature -------------------------------------------------------------------

def scalar_curvature(geom: Geometry) -> ScalarField:
    if isinstance(geom, Circle1D):
        return np.zeros(geom.shape)
    if isinstance(geom, ConformalTorus2D):
        hx, hy = geom.grid.spacing
        flat = diff2(geom.w, 0, hx, 2) + diff2(geom.w, 1, hy, 2)
        return -2 * np.exp(-2 * geom.w) * flat
    return np.full(geom.shape, geom.n * (geom.n - 1) / geom.r2)


def ricci(geom: Geometry) -> SymTensorField:
    """Ricci tensor; exactly ``(R/2) g`` on the conformal torus."""
    if isinstance(geom, Circle1D):
        return np.zeros((1, 1) + geom.shape)
    if isinstance(geom, ConformalTorus2D):
        return 0.5 * scalar_curvature(geom) * geom.metric()
    return (geom.n - 1) / geom.r2 * geom.metric()


# -- integration and distance ----------------------------------------------------

def integrate(geom: Geometry, f: ScalarField) -> float:
    """Riemann sum of ``f dmu``; exact for constants."""
    f = np.asarray(f, dtype=float)
    if isinstance(geom, RoundSphere):
        return float(np.mean(f)) * geom.area()
    return float(np.sum(f * geom.volume_element()) * geom.grid.cell_volume)


def _neighbor_offsets(dim: int, hops: int = 1) -> list[tuple[int, ...]]:
    rng = range(-hops, hops + 1)
    if dim == 1:
        return [(i,) for i in rng if i != 0]
    return [(i, j) for i in rng for j in rng if (i, j) != (0, 0)]


def edge_lengths(geom: Geometry, offset: tuple[int, ...]) -> np.ndarray:
    """Metric length of the straight lattice move ``node -> node + offset``.

    The square root of the conformal factor is averaged over the two endpoints.
    """
    _require_grid(geom, "edge_lengths")
    h = geom.grid.spacing
    euclid = math.sqrt(sum((o * hh) ** 2 for o, hh in zip(offset, h)))
    scale = geom.phi if isinstance(geom, Circle1D) else np.exp(geom.w)
    shifted = np.roll(scale, tuple(-o for o in offset), axis=tuple(range(geom.dim)))
    return 0.5 * (scale + shifted) * euclid


def geodesic_distance(geom: Geometry, x0) -> ScalarField:
    """Graph distance from node ``x0`` on the metric-weighted lattice.

    Neighbors are the 2 adjacent nodes in 1D and the 8 surrounding nodes in 2D.
    """
    _require_grid(geom, "geodesic_distance")
    shape = geom.shape
    idx = np.arange(geom.grid.node_count).reshape(shape)
    rows, cols, vals = [], [], []
    for off in _neighbor_offsets(geom.dim):
        rows.append(idx.ravel())
        cols.append(np.roll(idx, tuple(-o for o in off), axis=tuple(range(geom.dim))).ravel())
        vals.append(edge_lengths(geom, off).ravel())
    n = geom.grid.node_count
    graph = coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsr()
    source = int(np.ravel_multi_index(tuple(np.atleast_1d(x0)), shape))
    return dijkstra(graph, directed=False, indices=source).reshape(shape)


# -- snapshot serialization ------------------------------------------------------

def format_header(grid: GridSpec, t: float, **extra) -> str:
    parts = [
        f"dimension={grid.dimension}",
        "resolution=" + ",".join(str(n) for n in grid.resolution),
        "length=" + ",".join(repr(L) for L in grid.lengths),
        f"time={t!r}",
    ]
    parts += [f"{k}={v}" for k, v in extra.items()]
    return "# " + " ".join(parts)


def write_field(target, grid: GridSpec, values: ScalarField, t: float, **extra) -> None:
    """Write a scalar field: one header line, then one value per line (row-major)."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    buf = io.StringIO()
    buf.write(format_header(grid, t, **extra) + "\n")
    np.savetxt(buf, values.ravel(), fmt="%.17g")
    text = buf.getvalue()
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    else:
        target.write(text)


def read_field(source) -> tuple[GridSpec, float, dict[str, str], np.ndarray]:
    """Inverse of :func:`write_field`: returns (grid, time, extra header fields, values)."""
    text = Path(source).read_text() if isinstance(source, (str, Path)) else source.read()
    header, _, body = text.partition("\n")
    if not header.startswith("#"):
        raise ValueError("missing snapshot header line")
    fields = dict(item.split("=", 1) for item in header[1:].split())
    grid = GridSpec(
        tuple(int(n) for n in fields.pop("resolution").split(",")),
        tuple(float(L) for L in fields.pop("length").split(",")),
    )
    if int(fields.pop("dimension")) != grid.dimension:
        raise ValueError("dimension does not match resolution")
    t = float(fields.pop("time"))
    values = np.array(body.split(), dtype=float)
    if values.size != grid.node_count:
        raise ValueError(f"expected {grid.node_count} values, found {values.size}")
    return grid, t, fields, values.reshape(grid.shape)


def flat_torus(n: int = 64, length: float = 1.0) -> ConformalTorus2D:
    grid = GridSpec.uniform(2, n, length)
    return ConformalTorus2D(grid, np.zeros(grid.shape))


def flat_circle(n: int = 64, length: float = 1.0) -> Circle1D:
    grid = GridSpec.uniform(1, n, length)
    return Circle1D(grid, np.ones(grid.shape))
