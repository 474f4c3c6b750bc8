"""Composite Gauss-Legendre grids on [a, b] and functions sampled on them.

A Grid is a fixed partition of [a, b] into panels, each carrying the same
Gauss-Legendre rule.  All quadrature nodes are interior to (a, b), so weights
with endpoint singularities are never evaluated at a or b.  Panels can be
geometrically graded toward a singular endpoint.

GridFunctions are immutable samples bound to one Grid.  Functions from
different grids never combine silently; `resample` is the explicit (linear)
way across grids, while `eval_at` uses the per-panel polynomial interpolant
for high-order evaluation inside one grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

GRADINGS = ("uniform", "geometric-toward-a", "geometric-toward-both")


class GridMismatchError(ValueError):
    """Raised when values and grid disagree or two grids are combined."""


class ZeroFunctionError(ValueError):
    """Raised when a sign-change count is requested for an (effectively) zero function."""


@lru_cache(maxsize=16)
def gauss_rule(order: int):
    """Nodes and weights of the order-point Gauss-Legendre rule on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@lru_cache(maxsize=16)
def _barycentric_weights(order: int) -> np.ndarray:
    """Barycentric weights for the Gauss nodes; scale-invariant across panels."""
    x, _ = gauss_rule(order)
    w = np.ones(order)
    for j in range(order):
        w[j] = 1.0 / np.prod(x[j] - np.delete(x, j))
    w /= np.max(np.abs(w))
    w.flags.writeable = False
    return w


def _geometric_edges(lo: float, hi: float, n: int, min_panel: float, toward_lo: bool) -> np.ndarray:
    """n panel edges on [lo, hi] with widths shrinking geometrically toward one end."""
    length = hi - lo
    ratio = (min_panel / length) ** (1.0 / n)
    rel = ratio ** np.arange(n, -1, -1.0)
    rel[0] = 0.0  # first edge sits exactly on the endpoint
    if toward_lo:
        return lo + length * rel
    return hi - length * rel[::-1]


@dataclass(frozen=True, eq=False)
class Grid:
    """Quadrature grid: panel edges plus per-panel Gauss nodes and weights.

    Invariants: nodes strictly increase and stay inside (a, b); all weights
    are positive and sum to b - a.
    """

    a: float
    b: float
    nodes: np.ndarray
    quad_weights: np.ndarray
    panel_edges: np.ndarray
    order: int
    grading: str

    def __post_init__(self):
        if self.grading not in GRADINGS:
            raise ValueError(f"unknown grading {self.grading!r}")
        if len(self.nodes) != len(self.quad_weights):
            raise GridMismatchError("nodes and quad_weights differ in length")
        if not (self.a < self.nodes[0] and self.nodes[-1] < self.b):
            raise ValueError("grid nodes must be interior to (a, b)")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("grid nodes must strictly increase")
        if np.any(self.quad_weights <= 0):
            raise ValueError("quadrature weights must be positive")
        total = float(np.sum(self.quad_weights))
        if abs(total - (self.b - self.a)) > 1e-12 * (self.b - self.a):
            raise ValueError("quadrature weights do not sum to b - a")
        for arr in (self.nodes, self.quad_weights, self.panel_edges):
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def n_panels(self) -> int:
        return len(self.panel_edges) - 1

    def panel_of(self, points) -> np.ndarray:
        """Index of the panel containing each point (edges belong to the left panel)."""
        idx = np.searchsorted(self.panel_edges, points, side="right") - 1
        return np.clip(idx, 0, self.n_panels - 1)

    def __len__(self) -> int:
        return self.size


def make_grid(a: float, b: float, n_panels: int, order: int = 8,
              grading: str = "uniform", min_panel: float = 1e-10) -> Grid:
    """Build a composite Gauss grid on [a, b].

    grading:
      uniform               equal panels
      geometric-toward-a    half the panels shrink geometrically toward a
      geometric-toward-both a quarter toward each endpoint, the rest uniform
    min_panel is the smallest panel width relative to b - a.
    """
    if not (b > a):
        raise ValueError("need b > a")
    if n_panels < 1 or order < 2:
        raise ValueError("need n_panels >= 1 and order >= 2")
    length = b - a
    if grading == "uniform":
        edges = np.linspace(a, b, n_panels + 1)
    elif grading == "geometric-toward-a":
        n_g = max(1, n_panels // 2)
        n_u = n_panels - n_g
        mid = a + length / 2 if n_u else b
        left = _geometric_edges(a, mid, n_g, min_panel * length, toward_lo=True)
        edges = np.concatenate([left, np.linspace(mid, b, n_u + 1)[1:]]) if n_u else left
    elif grading == "geometric-toward-both":
        n_g = max(1, n_panels // 4)
        n_u = n_panels - 2 * n_g
        if n_u < 1:
            raise ValueError("too few panels for two-sided grading")
        lm, rm = a + length / 4, b - length / 4
        left = _geometric_edges(a, lm, n_g, min_panel * length, toward_lo=True)
        right = _geometric_edges(rm, b, n_g, min_panel * length, toward_lo=False)
        edges = np.concatenate([left, np.linspace(lm, rm, n_u + 1)[1:-1], right])
    else:
        raise ValueError(f"unknown grading {grading!r}")

    ref_x, ref_w = gauss_rule(order)
    widths = np.diff(edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mids[:, None] + 0.5 * widths[:, None] * ref_x[None, :]).ravel()
    weights = (0.5 * widths[:, None] * ref_w[None, :]).ravel()
    return Grid(a=float(a), b=float(b), nodes=nodes, quad_weights=weights,
                panel_edges=edges, order=order, grading=grading)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Real values sampled at the nodes of one Grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise GridMismatchError("values length does not match grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, grid: Grid, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.nodes), dtype=float) * np.ones(grid.size))

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "GridFunction":
        return cls(grid, np.full(grid.size, float(c)))

    def _check_same_grid(self, other: "GridFunction"):
        if other.grid is not self.grid:
            raise GridMismatchError("grid functions live on different grids; resample explicitly")

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check_same_grid(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check_same_grid(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            self._check_same_grid(other)
            return GridFunction(self.grid, self.values * other.values)
        return GridFunction(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def eval_at(self, points) -> np.ndarray:
        """Evaluate via the degree (order-1) interpolant of the point's panel."""
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        order = self.grid.order
        bw = _barycentric_weights(order)
        ref_x, _ = gauss_rule(order)
        panels = self.grid.panel_of(pts)
        e0 = self.grid.panel_edges[panels]
        e1 = self.grid.panel_edges[panels + 1]
        local = 2.0 * (pts - e0) / (e1 - e0) - 1.0
        vals = self.values.reshape(-1, order)[panels]  # (npts, order)
        diff = local[:, None] - ref_x[None, :]
        exact = np.isclose(diff, 0.0, rtol=0.0, atol=1e-15)
        diff = np.where(exact, 1.0, diff)
        w = bw[None, :] / diff
        out = np.sum(w * vals, axis=1) / np.sum(w, axis=1)
        hit = exact.any(axis=1)
        if np.any(hit):
            out[hit] = vals[hit, np.argmax(exact[hit], axis=1)]
        return out if np.ndim(points) else float(out[0])


def resample(f: GridFunction, grid: Grid) -> GridFunction:
    """Move f to another grid by linear interpolation of its node values."""
    if grid is f.grid:
        return f
    return GridFunction(grid, np.interp(grid.nodes, f.grid.nodes, f.values))


def integrate(f: GridFunction) -> float:
    """Quadrature sum over the grid; exact for per-panel polynomials of the rule's degree."""
    return float(np.dot(f.grid.quad_weights, f.values))


def lp_norm(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    return float(np.dot(weights, np.abs(values) ** p) ** (1.0 / p))


def weighted_lp_norm(f: GridFunction, w, p: float) -> float:
    """||w f||_{L_p} on f's grid.  w is a GridFunction (same grid) or scalar."""
    if p <= 1.0:
        raise ValueError("need p > 1")
    wv = w.values if isinstance(w, GridFunction) else float(w)
    if isinstance(w, GridFunction):
        f._check_same_grid(w)
    vals = wv * f.values
    if not np.all(np.isfinite(vals)):
        raise ValueError("nonfinite values in norm")
    return lp_norm(vals, f.grid.quad_weights, p)


def duality_values(values: np.ndarray, sigma: float) -> np.ndarray:
    """Pointwise |h|^(sigma-1) sgn h; 0 maps to 0."""
    return np.abs(values) ** (sigma - 1.0) * np.sign(values)


def duality_map(f: GridFunction, sigma: float) -> GridFunction:
    if sigma <= 1.0:
        raise ValueError("need sigma > 1")
    return GridFunction(f.grid, duality_values(f.values, sigma))


def _kept_signs(f: GridFunction, tol: float):
    """Indices and signs of nodes surviving the relative-tolerance cut."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    scale = float(np.max(np.abs(f.values)))
    if scale == 0.0:
        raise ZeroFunctionError("function is identically zero")
    keep = np.abs(f.values) >= tol * scale
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        raise ZeroFunctionError("function is zero within tolerance")
    return idx, np.sign(f.values[idx])


def count_sign_changes(f: GridFunction, tol: float = 1e-8) -> int:
    """Number of sign alternations of f across the grid.

    Nodes with |f| < tol * max|f| are discarded; the rest must split into
    blocks of constant sign, and the count is the number of block boundaries.
    A function that is zero everywhere within tolerance raises
    ZeroFunctionError rather than counting as 0.
    """
    _, signs = _kept_signs(f, tol)
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def sign_change_locations(f: GridFunction, tol: float = 1e-8) -> np.ndarray:
    """Refined abscissae where f crosses zero, one per sign alternation.

    Each crossing is bracketed by the adjacent surviving nodes and polished by
    bisection on the panel interpolant.
    """
    idx, signs = _kept_signs(f, tol)
    flips = np.nonzero(signs[1:] != signs[:-1])[0]
    nodes = f.grid.nodes
    out = np.empty(len(flips))
    for m, j in enumerate(flips):
        lo, hi = nodes[idx[j]], nodes[idx[j + 1]]
        flo = f.eval_at(lo)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fmid = f.eval_at(mid)
            if flo * fmid <= 0:
                hi = mid
            else:
                lo, flo = mid, fmid
        out[m] = 0.5 * (lo + hi)
    return out


@dataclass(frozen=True)
class ExponentSet:
    """Integrability/smoothness parameters (r, k, p, q) with derived duals and kappa.

    Standing assumptions: r >= 2 integer, 1 <= k <= r-1, 1 < q <= p < inf.
    """

    r: int
    k: int
    p: float
    q: float
    p_dual: float = field(init=False)
    q_dual: float = field(init=False)
    kappa: float = field(init=False)

    def __post_init__(self):
        if self.r < 2 or not float(self.r).is_integer():
            raise ValueError("need integer r >= 2")
        if not 1 <= self.k <= self.r - 1:
            raise ValueError("need 1 <= k <= r-1")
        if not (1.0 < self.p < math.inf and 1.0 < self.q < math.inf):
            raise ValueError("need p, q in (1, inf)")
        if self.q > self.p:
            raise ValueError("requires q <= p")
        object.__setattr__(self, "p_dual", self.p / (self.p - 1.0))
        object.__setattr__(self, "q_dual", self.q / (self.q - 1.0))
        object.__setattr__(self, "kappa", 1.0 / (self.r + 1.0 / self.q - 1.0 / self.p))
