"""Fixed-point iteration for the spectral triples and the widths they encode.

One sweep maps the current x through the dual composite (with the q-duality
map applied to v*x), renormalizes so ||g y|| in the dual exponent is one, and
maps back through the forward composite.  Each sweep yields the two-sided
bracket  ||x_prev||_{q,v} <= 1/theta <= ||x_next||_{q,v},  which holds for
the discrete operators to roundoff because the forward and dual maps are
exact transposes with respect to the quadrature weights.

Level n is the solution whose x has exactly n sign changes.  For p = q = 2
the sweep is a power iteration on a symmetric positive operator, so lower
levels re-enter through rounding noise and grow geometrically; converged
lower levels are therefore projected out of the iterate between sweeps.
Other exponents give no such linear structure; those levels are reached by
continuation: solve at p = q = 2 first, then walk the exponents toward the
target in short steps, warm-starting each from the previous fixed point so
the unstable lower-mode contamination stays small.  Restarting from the zero
set of the last iterate with the requested count backs up both paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grid import (
    ExponentSet,
    Grid,
    GridFunction,
    ZeroFunctionError,
    count_sign_changes,
    duality_values,
    lp_norm,
    sign_change_locations,
)
from .kernels import NodeConfig, check_alternation
from .operators import composite_kernel_matrix, operator_matrix


class ConvergenceError(RuntimeError):
    """Brackets failed to contract within the sweep budget."""


class LevelCollapseError(RuntimeError):
    """The sign-change count could not be pinned at the requested level."""


@dataclass(frozen=True)
class SolveOptions:
    theta_tol: float = 1e-8        # relative change of theta between sweeps
    bracket_tol: float = 1e-6      # relative bracket width at convergence
    sign_tol: float = 1e-8         # sign-change tolerance, relative to max|x|
    residual_tol: float = 1e-5
    max_sweeps: int = 500
    max_restarts: int = 50
    multistart: int | None = None  # None: 1 for p == q, 3 otherwise
    deflate: bool | None = None    # None: only for p == q == 2
    seed: int = 42


@dataclass(frozen=True)
class SweepRecord:
    sweep: int
    theta: float
    bracket_lo: float
    bracket_hi: float
    sign_changes: int
    restart: int


@dataclass(frozen=True)
class VerifyReport:
    theta: float
    level: int
    residual_x: float
    residual_y: float
    norm_defect: float
    x_sign_changes: int
    y_sign_changes: int
    alternation_ok: bool
    passed: bool


@dataclass(frozen=True)
class SpectralTriple:
    """Converged (x, y, theta) at a level, with the dual density chi that
    generates x, the per-sweep trace, and the verification report."""

    x: GridFunction
    y: GridFunction
    theta: float
    level: int
    chi: np.ndarray = field(repr=False)
    trace: tuple = field(repr=False, default=())
    report: VerifyReport | None = None


class OperatorBundle:
    """Forward/dual composite applications and the norms used by the iteration."""

    def __init__(self, exp: ExponentSet, g: GridFunction, v: GridFunction):
        if g.grid is not v.grid:
            raise ValueError("g and v must share a grid")
        self.exp = exp
        self.grid: Grid = g.grid
        self.g = g.values
        self.v = v.values
        self.w = self.grid.quad_weights
        self.kmat = composite_kernel_matrix(self.grid, exp.r, exp.k)
        self._wg = self.w * self.g
        self._wv = self.w * self.v

    def forward(self, chi: np.ndarray) -> np.ndarray:
        """x = composite of chi against the g weight (k-fold from a)."""
        return self.kmat @ (self._wg * chi)

    def dual(self, psi: np.ndarray) -> np.ndarray:
        """Dual composite of psi against the v weight ((r-k)-fold from a)."""
        return self.kmat.T @ (self._wv * psi)

    def norm_qv(self, xvals: np.ndarray) -> float:
        return lp_norm(self.v * xvals, self.w, self.exp.q)

    def norm_gdual(self, yvals: np.ndarray) -> float:
        return lp_norm(self.g * yvals, self.w, self.exp.p_dual)

    def norm_p(self, chi: np.ndarray) -> float:
        return lp_norm(chi, self.w, self.exp.p)


def init_u(grid: Grid, nodes) -> GridFunction:
    """Step function with values +-1 alternating across the given nodes, +1 first."""
    nodes = np.sort(np.asarray(nodes, dtype=float))
    if nodes.size and not (grid.a < nodes[0] and nodes[-1] < grid.b):
        raise ValueError("sign-change nodes must lie inside (a, b)")
    flips = np.searchsorted(nodes, grid.nodes)
    return GridFunction(grid, np.where(flips % 2 == 0, 1.0, -1.0))


def iteration_step(bundle: OperatorBundle, x: np.ndarray):
    """One renormalized sweep from x; returns (theta, y, chi, x_next)."""
    exp = bundle.exp
    psi = duality_values(bundle.v * x, exp.q)
    ytil = bundle.dual(psi)
    ng = bundle.norm_gdual(ytil)
    if ng == 0.0:
        raise ZeroFunctionError("dual sweep produced the zero function")
    theta = ng ** (-1.0 / exp.q)
    y = theta ** exp.q * ytil
    chi = duality_values(bundle.g * y, exp.p_dual)
    return theta, y, chi, bundle.forward(chi)


def _orthonormal_basis(bundle: OperatorBundle, triples) -> np.ndarray:
    """Weighted Gram-Schmidt of the converged dual densities (rows)."""
    rows = []
    for t in triples:
        c = t.chi.copy()
        for b in rows:
            c -= np.dot(bundle.w * b, c) * b
        nrm = math.sqrt(np.dot(bundle.w * c, c))
        if nrm > 0:
            rows.append(c / nrm)
    return np.array(rows) if rows else np.zeros((0, bundle.grid.size))


def _deflate(bundle: OperatorBundle, chi: np.ndarray, basis: np.ndarray):
    """Remove the span of the basis rows from chi and renormalize in L_p."""
    if basis.size == 0:
        return chi, 1.0
    c = chi - basis.T @ (basis @ (bundle.w * chi))
    nrm = bundle.norm_p(c)
    return (c / nrm if nrm > 0 else c), nrm


def _equispaced(grid: Grid, n: int) -> np.ndarray:
    return grid.a + (grid.b - grid.a) * (np.arange(1, n + 1) / (n + 1.0))


def _initial_nodes(grid: Grid, n: int, start: int, rng) -> np.ndarray:
    if start == 0 or n == 0:
        return _equispaced(grid, n)
    span = grid.b - grid.a
    pad = 0.02 * span
    for _ in range(200):
        nodes = np.sort(rng.uniform(grid.a + pad, grid.b - pad, size=n))
        if n < 2 or np.min(np.diff(nodes)) > 0.2 * span / (n + 1):
            return nodes
    return _equispaced(grid, n)


def verify_triple(triple: SpectralTriple, exp: ExponentSet, g: GridFunction,
                  v: GridFunction, opts: SolveOptions = SolveOptions()) -> VerifyReport:
    """Residuals of the two coupled integral equations, the normalization defect,
    sign-change counts of x and y, and the zero interlacing check."""
    bundle = OperatorBundle(exp, g, v)
    x, y, theta = triple.x.values, triple.y.values, triple.theta
    x_hat = bundle.forward(duality_values(bundle.g * y, exp.p_dual))
    res_x = bundle.norm_qv(x - x_hat) / max(bundle.norm_qv(x), 1e-300)
    y_hat = theta ** exp.q * bundle.dual(duality_values(bundle.v * x, exp.q))
    res_y = bundle.norm_gdual(y - y_hat)
    defect = abs(bundle.norm_gdual(y) - 1.0)
    try:
        nx = count_sign_changes(triple.x, opts.sign_tol)
        ny = count_sign_changes(triple.y, opts.sign_tol)
        xi = sign_change_locations(triple.x, opts.sign_tol)
        eta = sign_change_locations(triple.y, opts.sign_tol)
    except ZeroFunctionError:
        return VerifyReport(theta, triple.level, res_x, res_y, defect, -1, -1, False, False)
    alt = nx == ny and check_alternation(
        NodeConfig(xi, eta, exp.r, exp.k, bundle.grid.a, bundle.grid.b))
    passed = (res_x <= opts.residual_tol and res_y <= opts.residual_tol
              and defect <= 1e-8 and nx == triple.level and ny == triple.level and alt)
    return VerifyReport(theta, triple.level, res_x, res_y, defect, nx, ny, alt, passed)


def _iterate(bundle: OperatorBundle, n: int, chi0: np.ndarray, basis: np.ndarray,
             opts: SolveOptions, restart: int, trace: list, res_target: float,
             allow_floor: bool):
    """Sweep from a given density until converged at count n.

    The residual of the second equation is drained to res_target; when
    allow_floor is set, the best triple seen is returned once the residual
    stagnates (the deflated iteration bottoms out at the accuracy of its
    basis).  Returns (triple_or_None, values_of_last_iterate_with_count_n).
    """
    exp = bundle.exp
    chi = chi0 / bundle.norm_p(chi0)
    if basis.size:
        chi, _ = _deflate(bundle, chi, basis)
    x = bundle.forward(chi)
    theta_prev = None
    last_good = None
    miss = 0
    best = None
    stale = 0
    for sweep in range(opts.max_sweeps):
        lo = bundle.norm_qv(x)
        theta, y, chi_new, x_new = iteration_step(bundle, x)
        hi = bundle.norm_qv(x_new)
        xf = GridFunction(bundle.grid, x_new)
        try:
            count = count_sign_changes(xf, opts.sign_tol)
        except ZeroFunctionError:
            return None, last_good
        trace.append(SweepRecord(len(trace), theta, lo, hi, count, restart))
        if count == n:
            last_good = x_new
            miss = 0
        else:
            miss += 1
        theta_ok = theta_prev is not None and abs(theta - theta_prev) <= opts.theta_tol * theta
        bracket_ok = (hi - lo) <= opts.bracket_tol * hi
        if theta_ok and bracket_ok and count == n:
            # theta converges at second order in the iterate error; gate the
            # return on the actual residual of the second equation as well
            y_hat = theta ** exp.q * bundle.dual(duality_values(bundle.v * x_new, exp.q))
            res = bundle.norm_gdual(y - y_hat)
            cand = SpectralTriple(xf, GridFunction(bundle.grid, y), theta, n, chi_new)
            if res <= res_target:
                return cand, last_good
            if best is None or res < 0.8 * best[0]:
                best = (res, cand)
                stale = 0
            else:
                stale += 1
                if allow_floor and stale >= 8:
                    return best[1], last_good
        elif theta_ok and bracket_ok and miss >= 3:
            return None, last_good  # converged onto the wrong level
        if miss >= 3 and sweep >= 3:
            return None, last_good
        theta_prev = theta
        if basis.size:
            chi_new, nrm = _deflate(bundle, chi_new, basis)
            if nrm < 1e-12:
                return None, last_good
            x_new = bundle.forward(chi_new)
        chi, x = chi_new, x_new
    raise ConvergenceError(
        f"level {n}: residual not drained after {opts.max_sweeps} sweeps"
        + (f" (best {best[0]:.2e})" if best else ""))


def _solve_with_restarts(bundle: OperatorBundle, n: int, chi0: np.ndarray,
                         basis: np.ndarray, opts: SolveOptions, trace: list,
                         rng, res_target: float, allow_floor: bool = False):
    """Run _iterate, restarting from the zero set of the last good iterate."""
    chi = chi0
    for restart in range(opts.max_restarts + 1):
        found, last_good = _iterate(bundle, n, chi, basis, opts, restart, trace,
                                    res_target, allow_floor)
        if found is not None:
            return found
        if last_good is not None:
            zeros = sign_change_locations(
                GridFunction(bundle.grid, last_good), opts.sign_tol)
            nodes = zeros if zeros.size == n else _initial_nodes(bundle.grid, n, 1, rng)
        else:
            nodes = _initial_nodes(bundle.grid, n, 1, rng)
        chi = init_u(bundle.grid, nodes).values
    raise LevelCollapseError(
        f"level {n}: sign-change count lost in all {opts.max_restarts} restarts")


def _exponent_path(exp: ExponentSet):
    """Exponent steps from (2, 2) to (p, q); q_t <= p_t holds along the path."""
    dist = max(abs(exp.p - 2.0), abs(exp.q - 2.0))
    steps = max(2, math.ceil(dist / 0.25))
    out = []
    for j in range(1, steps + 1):
        t = j / steps
        out.append(ExponentSet(exp.r, exp.k, 2.0 + t * (exp.p - 2.0),
                               2.0 + t * (exp.q - 2.0)))
    return out


def solve_level(n: int, exp: ExponentSet, g: GridFunction, v: GridFunction,
                opts: SolveOptions = SolveOptions(), basis=(),
                initial_nodes=None, _as_basis: bool = False) -> SpectralTriple:
    """Spectral triple whose x has exactly n sign changes.

    basis: converged lower-level triples (p = q = 2), used for deflation and
    computed on demand when missing.  initial_nodes overrides the equispaced
    sign-change seed of the first start.
    """
    if n < 0:
        raise ValueError("need n >= 0")
    rng = np.random.default_rng(opts.seed)
    deflate = opts.deflate if opts.deflate is not None else (exp.p == exp.q == 2.0)
    is_22 = exp.p == 2.0 and exp.q == 2.0
    multistart = opts.multistart if opts.multistart is not None \
        else (1 if exp.p == exp.q else 3)

    exp22 = exp if is_22 else ExponentSet(exp.r, exp.k, 2.0, 2.0)
    basis = list(basis)
    if (deflate or not is_22) and len(basis) < n:
        opts22 = replace(opts, deflate=True, multistart=1)
        for m in range(len(basis), n):
            basis.append(solve_level(m, exp22, g, v, opts22, basis, _as_basis=True))
    bundle22 = OperatorBundle(exp22, g, v)
    bmat = _orthonormal_basis(bundle22, basis[:n]) if (deflate or not is_22) \
        else np.zeros((0, g.grid.size))

    # basis triples are drained to their residual floor so the levels deflated
    # against them do not inherit an amplified error
    res_target = 1e-11 if _as_basis else 0.5 * opts.residual_tol
    best = None
    failure = None
    for start in range(multistart):
        trace: list = []
        nodes = initial_nodes if (start == 0 and initial_nodes is not None) \
            else _initial_nodes(g.grid, n, start, rng)
        chi0 = init_u(g.grid, np.asarray(nodes, dtype=float)).values
        try:
            found = _solve_with_restarts(bundle22, n, chi0, bmat, opts, trace,
                                         rng, res_target, allow_floor=_as_basis)
            if not is_22:
                # walk the exponents from (2, 2) to (p, q), warm-starting each
                # step from the previous fixed point
                path = _exponent_path(exp)
                for j, exp_t in enumerate(path):
                    final = j == len(path) - 1
                    step_opts = opts if final else replace(
                        opts, theta_tol=max(opts.theta_tol, 1e-7))
                    step_target = res_target if final else 100 * opts.residual_tol
                    chi_warm = found.chi
                    if start > 0:
                        chi_warm = chi_warm * (1.0 + 0.01 * rng.standard_normal(chi_warm.size))
                    found = _solve_with_restarts(
                        OperatorBundle(exp_t, g, v), n, chi_warm,
                        np.zeros((0, g.grid.size)), step_opts, trace, rng,
                        step_target, allow_floor=_as_basis)
        except (LevelCollapseError, ConvergenceError) as err:
            failure = err
            continue
        report = verify_triple(found, exp, g, v, opts)
        if report.x_sign_changes != n or report.y_sign_changes != n:
            failure = LevelCollapseError(
                f"level {n}: converged triple has counts ({report.x_sign_changes}, "
                f"{report.y_sign_changes})")
            continue
        found = replace(found, trace=tuple(trace), report=report)
        if best is None or found.theta > best.theta:
            best = found
    if best is None:
        raise failure if failure is not None else ConvergenceError(f"level {n} failed")
    return best


@dataclass(frozen=True)
class WidthRow:
    n: int
    theta: float
    width: float
    residual_x: float
    residual_y: float
    sign_changes: int


@dataclass(frozen=True)
class WidthTable:
    rows: tuple
    strict_decrease: bool
    triples: tuple

    def widths(self) -> np.ndarray:
        return np.array([r.width for r in self.rows])

    def thetas(self) -> np.ndarray:
        return np.array([r.theta for r in self.rows])


def compute_widths(n_max: int, exp: ExponentSet, g: GridFunction, v: GridFunction,
                   opts: SolveOptions = SolveOptions()) -> WidthTable:
    """Widths theta_n^{-1} for n = 0..n_max, with strict-decrease verification."""
    triples = []
    rows = []
    basis: list = []
    for n in range(n_max + 1):
        t = solve_level(n, exp, g, v, opts, basis)
        if exp.p == exp.q == 2.0:
            basis.append(t)
        elif len(basis) < n + 1:
            # keep the (2, 2) ladder warm for the continuation of later levels
            opts22 = replace(opts, deflate=True, multistart=1)
            exp22 = ExponentSet(exp.r, exp.k, 2.0, 2.0)
            while len(basis) < n + 1:
                basis.append(solve_level(len(basis), exp22, g, v, opts22, basis))
        triples.append(t)
        rep = t.report
        rows.append(WidthRow(n, t.theta, 1.0 / t.theta, rep.residual_x,
                             rep.residual_y, rep.x_sign_changes))
    widths = np.array([r.width for r in rows])
    strict = bool(np.all(np.diff(widths) < 0))
    return WidthTable(tuple(rows), strict, tuple(triples))


def singular_value_oracle(exp: ExponentSet, g: GridFunction, v: GridFunction) -> np.ndarray:
    """Descending singular values of the L2-isometric operator matrix (p = q = 2)."""
    if not (exp.p == 2.0 and exp.q == 2.0):
        raise ValueError("singular value oracle requires p = q = 2")
    mat = operator_matrix(exp, g, v, g.grid)
    return np.linalg.svd(mat, compute_uv=False)


def trace_to_rows(triple: SpectralTriple):
    """Per-sweep diagnostic rows (sweep, theta, bracket_lo, bracket_hi, sign_changes)."""
    return [(r.sweep, r.theta, r.bracket_lo, r.bracket_hi, r.sign_changes)
            for r in triple.trace]
