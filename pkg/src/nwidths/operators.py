"""Two-weighted Riemann-Liouville operators and their discretizations.

The lower/upper operators integrate against (t-s)^(m-1) kernels from one
endpoint.  Their two-sided composition, which generates the weighted Sobolev
class, collapses by Fubini to a single integral operator with the closed-form
cross kernel

    H(t, tau) = integral_0^min(t,tau) (t-s)^(k-1) (tau-s)^(r-k-1) ds,

so the composite is discretized here as plain quadrature against H.  That
makes the discrete forward and dual maps exact matrix transposes with respect
to the quadrature weights, which the spectral iteration relies on.

rl_lower / rl_upper keep the direct panel-by-panel evaluation (kernel exact
per panel, inner weight absorbed into the inner quadrature) and serve as an
independent route to the same composite for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import ExponentSet, Grid, GridFunction, gauss_rule

_ROW_BLOCK = 512  # bounds memory while assembling dense kernels


def _weight_values(w, grid: Grid) -> np.ndarray:
    """Samples of a weight given as scalar, callable, or GridFunction."""
    if isinstance(w, GridFunction):
        if w.grid is not grid:
            raise ValueError("weight lives on a different grid")
        return w.values
    if callable(w):
        return np.asarray(w(grid.nodes), dtype=float) * np.ones(grid.size)
    return np.full(grid.size, float(w))


def _weight_evaluator(w, grid: Grid):
    """Pointwise evaluator for a weight, usable off the grid nodes."""
    if isinstance(w, GridFunction):
        return w.eval_at
    if callable(w):
        return lambda pts: np.asarray(w(pts), dtype=float) * np.ones(np.shape(pts))
    c = float(w)
    return lambda pts: np.full(np.shape(pts), c)


def cross_kernel(t, tau, r: int, k: int, a: float = 0.0):
    """H(t, tau) in closed form; t, tau broadcast.

    Expanding the binomial under the integral gives, for t <= tau,
      sum_j C(r-k-1, j) (tau-t)^(r-k-1-j) (t-a)^(k+j) / (k+j)
    and the mirrored sum with k <-> r-k for tau < t.
    """
    t = np.asarray(t, dtype=float) - a
    tau = np.asarray(tau, dtype=float) - a
    lo = np.minimum(t, tau)
    d = np.abs(t - tau)
    first = np.zeros(np.broadcast(t, tau).shape)
    second = np.zeros_like(first)
    for j in range(r - k):
        first += math.comb(r - k - 1, j) / (k + j) * d ** (r - k - 1 - j) * lo ** (k + j)
    for j in range(k):
        second += math.comb(k - 1, j) / (r - k + j) * d ** (k - 1 - j) * lo ** (r - k + j)
    out = np.where(t <= tau, first, second)
    return out if out.ndim else float(out)


@lru_cache(maxsize=6)
def composite_kernel_matrix(grid: Grid, r: int, k: int) -> np.ndarray:
    """Dense H(t_i, t_l) / ((k-1)!(r-k-1)!) over all node pairs, assembled in row blocks."""
    n = grid.size
    scale = 1.0 / (math.factorial(k - 1) * math.factorial(r - k - 1))
    out = np.empty((n, n))
    nodes = grid.nodes
    for i0 in range(0, n, _ROW_BLOCK):
        i1 = min(i0 + _ROW_BLOCK, n)
        out[i0:i1] = cross_kernel(nodes[i0:i1, None], nodes[None, :], r, k, grid.a)
    out *= scale
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RLSpec:
    """One-sided Riemann-Liouville operator: order, inner weight u, outer weight w, anchor."""

    m: int
    u: object = 1.0
    w: object = 1.0
    anchor: str = "lower"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need order m >= 1")
        if self.anchor not in ("lower", "upper"):
            raise ValueError("anchor must be 'lower' or 'upper'")


def _rl_apply(spec: RLSpec, f: GridFunction) -> np.ndarray:
    """Shared body of rl_lower / rl_upper.

    Panels fully on the integration side contribute through their own Gauss
    rule (kernel is polynomial there, so the rule is exact for polynomial
    u*f).  The partial panel containing t is handled with a fresh Gauss rule
    on the subinterval, with u evaluated at the fresh nodes and f replaced by
    its panel interpolant.
    """
    grid = f.grid
    lower = spec.anchor == "lower"
    m = spec.m
    nodes = grid.nodes
    u_vals = _weight_values(spec.u, grid)
    x = u_vals * f.values
    panel_idx = grid.panel_of(nodes)

    # full panels strictly between the anchor and t_i
    diff = (nodes[:, None] - nodes[None, :]) if lower else (nodes[None, :] - nodes[:, None])
    kern = np.where(panel_idx[None, :] < panel_idx[:, None] if lower
                    else panel_idx[None, :] > panel_idx[:, None],
                    diff ** (m - 1), 0.0)
    acc = kern @ (grid.quad_weights * x)

    # partial panel: [edge, t_i] (lower) or [t_i, edge] (upper)
    u_eval = _weight_evaluator(spec.u, grid)
    ref_x, ref_w = gauss_rule(grid.order)
    order = grid.order
    for j in range(grid.n_panels):
        sl = slice(j * order, (j + 1) * order)
        t = nodes[sl]
        edge = grid.panel_edges[j] if lower else grid.panel_edges[j + 1]
        half = 0.5 * (t - edge) if lower else 0.5 * (edge - t)
        mid = 0.5 * (t + edge)
        sig = mid[:, None] + half[:, None] * ref_x[None, :]          # (order, order)
        wts = half[:, None] * ref_w[None, :]
        fi = f.eval_at(sig.ravel()).reshape(sig.shape)
        ui = u_eval(sig.ravel()).reshape(sig.shape)
        kpart = (t[:, None] - sig) ** (m - 1) if lower else (sig - t[:, None]) ** (m - 1)
        acc[sl] += np.sum(wts * kpart * ui * fi, axis=1)

    out = _weight_values(spec.w, grid) * acc / math.factorial(m - 1)
    if not np.all(np.isfinite(out)):
        raise ValueError("nonintegrable product near the anchor: nonfinite partial sums")
    return out


def rl_lower(spec: RLSpec, psi: GridFunction) -> GridFunction:
    """t -> (w(t)/(m-1)!) * integral_a^t (t-s)^(m-1) u(s) psi(s) ds at all nodes."""
    if spec.anchor != "lower":
        raise ValueError("rl_lower needs anchor='lower'")
    return GridFunction(psi.grid, _rl_apply(spec, psi))


def rl_upper(spec: RLSpec, phi: GridFunction) -> GridFunction:
    """t -> (w(t)/(m-1)!) * integral_t^b (s-t)^(m-1) u(s) phi(s) ds at all nodes."""
    if spec.anchor != "upper":
        raise ValueError("rl_upper needs anchor='upper'")
    return GridFunction(phi.grid, _rl_apply(spec, phi))


def composite_rl(exp: ExponentSet, g, w, phi: GridFunction) -> GridFunction:
    """Two-sided composite: outer k-fold integration from a of the (r-k)-fold
    g-weighted integration from b, times the outer weight w.

    Evaluated as quadrature against the closed-form cross kernel; vanishes at
    a with its first k-1 derivatives and is linear in phi.
    """
    grid = phi.grid
    kmat = composite_kernel_matrix(grid, exp.r, exp.k)
    gv = _weight_values(g, grid)
    wv = _weight_values(w, grid)
    return GridFunction(grid, wv * (kmat @ (grid.quad_weights * gv * phi.values)))


def composite_dual_rl(exp: ExponentSet, v, w, psi: GridFunction) -> GridFunction:
    """Dual composite (k <-> r-k, weight v inside): the transpose quadrature map."""
    grid = psi.grid
    kmat = composite_kernel_matrix(grid, exp.r, exp.k)
    vv = _weight_values(v, grid)
    wv = _weight_values(w, grid)
    return GridFunction(grid, wv * (kmat.T @ (grid.quad_weights * vv * psi.values)))


def composite_via_rl(exp: ExponentSet, g, w, phi: GridFunction) -> GridFunction:
    """Same composite through the two one-sided operators; cross-check route."""
    inner = rl_upper(RLSpec(exp.r - exp.k, u=g, w=1.0, anchor="upper"), phi)
    return rl_lower(RLSpec(exp.k, u=1.0, w=w, anchor="lower"), inner)


def operator_matrix(exp: ExponentSet, g, v, grid: Grid) -> np.ndarray:
    """L2-isometric discretization of phi -> v * composite(phi).

    M (sqrt(w) . phi) = sqrt(w) . (v * composite phi), so singular values of M
    approximate singular values of the operator between L2 spaces.
    """
    kmat = composite_kernel_matrix(grid, exp.r, exp.k)
    sq = np.sqrt(grid.quad_weights)
    gv = _weight_values(g, grid)
    vv = _weight_values(v, grid)
    return (sq * vv)[:, None] * kmat * (sq * gv)[None, :]


def save_matrix_txt(matrix: np.ndarray, path):
    """Plain-text export: first line 'rows cols', then row-major values."""
    mat = np.asarray(matrix, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"{mat.shape[0]} {mat.shape[1]}\n")
        for row in mat:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_matrix_txt(path) -> np.ndarray:
    with open(path) as fh:
        rows, cols = map(int, fh.readline().split())
        data = np.loadtxt(fh).reshape(rows, cols)
    return data


@dataclass(frozen=True)
class ConditionReport:
    name: str
    finite: bool
    norm: float
    tail_ratio: float


@dataclass(frozen=True)
class AdmissibilityReport:
    conditions: tuple
    all_pass: bool


def _cutoff_integral(fn, sigma: float, lo: float, hi: float, singular_at: str,
                     levels: int = 26, ratio: float = 0.5):
    """integral |fn|^sigma over [lo, hi] with cutoffs shrinking toward one end.

    Returns (finite, norm, tail_ratio).  Contributions of geometric annuli
    toward the singular end must eventually decay for the integral to count
    as finite; the norm includes a geometric tail estimate.
    """
    ref_x, ref_w = gauss_rule(12)
    length = hi - lo
    cuts = length * 0.5 * ratio ** np.arange(levels + 1)

    def annulus(c0, c1):
        # c1 < c0: distance from the singular endpoint
        if singular_at == "lo":
            a0, a1 = lo + c1, lo + c0
        else:
            a0, a1 = hi - c0, hi - c1
        mid, half = 0.5 * (a0 + a1), 0.5 * (a1 - a0)
        pts = mid + half * ref_x
        return float(np.sum(half * ref_w * np.abs(fn(pts)) ** sigma))

    # bulk away from the singular end
    if singular_at == "lo":
        b0, b1 = lo + cuts[0], hi
    else:
        b0, b1 = lo, hi - cuts[0]
    bulk = 0.0
    for e0, e1 in zip(np.linspace(b0, b1, 33)[:-1], np.linspace(b0, b1, 33)[1:]):
        mid, half = 0.5 * (e0 + e1), 0.5 * (e1 - e0)
        bulk += float(np.sum(half * ref_w * np.abs(fn(mid + half * ref_x)) ** sigma))

    inc = np.array([annulus(cuts[j], cuts[j + 1]) for j in range(levels)])
    total = bulk + float(np.sum(inc))
    pos = inc[inc > 0]
    if pos.size < 4:
        return True, total ** (1.0 / sigma), 0.0
    tail = inc[-6:]
    ratios = tail[1:] / np.maximum(tail[:-1], 1e-300)
    rho = float(np.median(ratios))
    if rho >= 0.999 or not np.isfinite(total):
        return False, math.inf, rho
    total += tail[-1] * rho / (1.0 - rho)
    return True, total ** (1.0 / sigma), rho


def check_admissibility(exp: ExponentSet, g, v, eps: float,
                        a: float = 0.0, b: float = 1.0) -> AdmissibilityReport:
    """Numerical finiteness checks required for the composite operator to map
    L_p into the weighted L_q space: g in L_{p'}(a+eps, b], v in L_q(a+eps, b],
    (s-a)^k v in L_q[a, b-eps), (s-a)^{r-k} g in L_{p'}[a, b-eps).
    """
    if not 0.0 < eps < 1.0:
        raise ValueError("need eps in (0, 1)")
    ge = _weight_evaluator(g, None) if not isinstance(g, GridFunction) else g.eval_at
    ve = _weight_evaluator(v, None) if not isinstance(v, GridFunction) else v.eval_at
    cases = [
        ("g in L_p'(a+eps, b]", ge, exp.p_dual, a + eps, b, "hi"),
        ("v in L_q(a+eps, b]", ve, exp.q, a + eps, b, "hi"),
        ("(s-a)^k v in L_q[a, b-eps)",
         lambda s: (s - a) ** exp.k * ve(s), exp.q, a, b - eps, "lo"),
        ("(s-a)^(r-k) g in L_p'[a, b-eps)",
         lambda s: (s - a) ** (exp.r - exp.k) * ge(s), exp.p_dual, a, b - eps, "lo"),
    ]
    reports = []
    for name, fn, sigma, lo, hi, side in cases:
        finite, norm, rho = _cutoff_integral(fn, sigma, lo, hi, side)
        reports.append(ConditionReport(name, finite, norm, rho))
    return AdmissibilityReport(tuple(reports), all(c.finite for c in reports))
