"""Determinant kernels, the bordered interpolating kernel, and projections.

The building blocks are determinants of truncated-power matrices and of the
cross kernel H.  For strictly increasing node lists obeying the interlacing
condition these determinants are strictly positive, which is what makes the
bordered kernel

    G(t, tau) ~ det [[H(t,tau), H(xi_j, tau)], [H(t, eta_i), H(xi_j, eta_i)]]

well defined.  G vanishes identically on the xi rows and eta columns and
reproduces every member of the weighted Sobolev class up to an explicit
m-dimensional remainder spanned by H(., eta_j).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .grid import ExponentSet, Grid, GridFunction, gauss_rule
from .operators import composite_kernel_matrix, cross_kernel, _weight_values


def truncated_power_det(mu, nu, degree: int) -> float:
    """det of the (mu_j - nu_i)_+^(degree-1) matrix; for degree 1 the kernel is
    the step 1{x >= 0}.  Empty lists give 1."""
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if mu.size != nu.size:
        raise ValueError("mu and nu must have equal length")
    if mu.size == 0:
        return 1.0
    diff = mu[None, :] - nu[:, None]
    if degree == 1:
        mat = (diff >= 0).astype(float)
    else:
        mat = np.where(diff >= 0, diff, 0.0) ** (degree - 1)
    return float(np.linalg.det(mat))


def composition_det(mu, nu, r: int, k: int) -> float:
    """J! * det(H(mu_i, nu_j)): the determinant kernel of the two-sided composition.

    Nonnegative for strictly increasing lists; strictly positive under the
    interlacing condition nu_{j+k-r} < mu_j < nu_{j+k}.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    if mu.size != nu.size:
        raise ValueError("mu and nu must have equal length")
    if mu.size == 0:
        return 1.0
    hmat = cross_kernel(mu[:, None], nu[None, :], r, k)
    return float(math.factorial(mu.size) * np.linalg.det(hmat))


def composition_integral_bruteforce(mu, nu, r: int, k: int) -> float:
    """Direct iterated-integral evaluation of the composition determinant kernel
    for J <= 2: integral over [0,1]^J of det-K_k(mu, alpha) * det-K_{r-k}(nu, alpha).

    Cells are aligned to every breakpoint of the truncated powers, so the
    tensor Gauss rule is exact per cell.  Independent of composition_det.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    J = mu.size
    if J == 0:
        return 1.0
    if J > 2:
        raise ValueError("brute-force route only supports J <= 2")
    breaks = np.unique(np.concatenate([[0.0, 1.0], mu, nu]))
    ref_x, ref_w = gauss_rule(max(4, r))
    pts, wts = [], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        pts.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * ref_x)
        wts.append(0.5 * (hi - lo) * ref_w)
    pts = np.concatenate(pts)
    wts = np.concatenate(wts)

    def kdet(anchor, alpha, deg):
        if J == 1:
            d = anchor[0] - alpha[0]
            return (1.0 if d >= 0 else 0.0) if deg == 1 else (max(d, 0.0) ** (deg - 1))
        m = np.array([[anchor[j] - alpha[i] for j in range(2)] for i in range(2)])
        m = (m >= 0).astype(float) if deg == 1 else np.where(m >= 0, m, 0.0) ** (deg - 1)
        return m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]

    total = 0.0
    for combo in itertools.product(range(len(pts)), repeat=J):
        alpha = [pts[c] for c in combo]
        w = math.prod(wts[c] for c in combo)
        total += w * kdet(mu, alpha, k) * kdet(nu, alpha, r - k)
    return total


def alternation_holds(xi, eta, r: int, k: int, a: float = 0.0, b: float = 1.0) -> bool:
    """Strict interlacing eta_{j+k-r} < xi_j < eta_{j+k} with eta_0 = a, eta_{m+1} = b
    conventions.  Out-of-range indices compare against the endpoints; exact
    coincidences between xi and eta values count as failures of strictness."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    if xi.size != eta.size:
        return False
    m = xi.size
    for arr in (xi, eta):
        if arr.size and (np.any(np.diff(arr) <= 0) or arr[0] <= a or arr[-1] >= b):
            return False
    if m and np.intersect1d(xi, eta).size:
        return False

    def eta_at(i):
        if i <= 0:
            return a
        if i >= m + 1:
            return b
        return eta[i - 1]

    for j in range(1, m + 1):
        if not (eta_at(j + k - r) < xi[j - 1] < eta_at(j + k)):
            return False
    return True


@dataclass(frozen=True)
class NodeConfig:
    """Zero sets of a candidate pair: xi from x, eta from y, with the exponents."""

    xi: np.ndarray
    eta: np.ndarray
    r: int
    k: int
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if xi.size != eta.size:
            raise ValueError("xi and eta must have equal length")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)

    @property
    def m(self) -> int:
        return self.xi.size


def check_alternation(cfg: NodeConfig) -> bool:
    if cfg.m == 0:
        return True
    return alternation_holds(cfg.xi, cfg.eta, cfg.r, cfg.k, cfg.a, cfg.b)


@dataclass(frozen=True)
class KernelCache:
    """H matrix over (xi, eta), its determinant, and the inverse used to border it."""

    cfg: NodeConfig
    h_matrix: np.ndarray
    det: float
    inv: np.ndarray

    @classmethod
    def build(cls, cfg: NodeConfig) -> "KernelCache":
        if not check_alternation(cfg):
            raise ValueError("node configuration is not strictly alternating")
        m = cfg.m
        if m == 0:
            eye = np.zeros((0, 0))
            return cls(cfg, eye, 1.0, eye)
        # rows indexed by eta, columns by xi
        a = cross_kernel(cfg.xi[None, :], cfg.eta[:, None], cfg.r, cfg.k, cfg.a)
        det = float(np.linalg.det(a))
        scale = max(1.0, float(np.prod(np.linalg.norm(a, axis=1))))
        if det <= 1e-13 * scale:
            raise ValueError("H matrix numerically singular; alternation broken")
        return cls(cfg, a, det, np.linalg.inv(a))


def bordered_kernel(t, tau, cfg: NodeConfig, cache: KernelCache) -> np.ndarray:
    """G(t, tau) for arrays t (rows) and tau (columns), via the Schur complement
    of the bordered determinant divided by C (k-1)! (r-k-1)!."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    scale = 1.0 / (math.factorial(cfg.k - 1) * math.factorial(cfg.r - cfg.k - 1))
    base = cross_kernel(t[:, None], tau[None, :], cfg.r, cfg.k, cfg.a)
    if cfg.m == 0:
        return scale * base
    h_eta = cross_kernel(t[:, None], cfg.eta[None, :], cfg.r, cfg.k, cfg.a)   # (nt, m)
    h_xi = cross_kernel(cfg.xi[:, None], tau[None, :], cfg.r, cfg.k, cfg.a)   # (m, ntau)
    out = scale * (base - h_eta @ cache.inv.T @ h_xi)
    # the Schur form cancels exactly on the knots; pin the float result there too
    out[np.isin(t, cfg.xi), :] = 0.0
    out[:, np.isin(tau, cfg.eta)] = 0.0
    return out


@dataclass(frozen=True)
class KernelProjection:
    """Split of a class member into its bordered-kernel reproduction and the
    m-dimensional remainder sum_j coeffs_j H(., eta_j)."""

    reproduced: GridFunction
    coeffs: np.ndarray
    remainder: GridFunction


def kernel_projection(exp: ExponentSet, phi: GridFunction, g,
                      cfg: NodeConfig, cache: KernelCache) -> KernelProjection:
    """Apply the bordered-kernel integral to the class member generated by phi.

    The member is f = composite(phi) with f^(r) proportional to g*phi; the
    reproduction integral of G against g*phi differs from f exactly by an
    element of span{H(., eta_j)}, whose coefficients solve the m x m system
    with matrix H(xi_i, eta_j) and right-hand side the values of f at xi.
    """
    grid = phi.grid
    scale = 1.0 / (math.factorial(exp.k - 1) * math.factorial(exp.r - exp.k - 1))
    kmat = composite_kernel_matrix(grid, exp.r, exp.k)
    source = grid.quad_weights * _weight_values(g, grid) * phi.values
    f_vals = kmat @ source
    f = GridFunction(grid, f_vals)
    if cfg.m == 0:
        return KernelProjection(f, np.zeros(0), GridFunction(grid, np.zeros(grid.size)))
    # quadrature values of f at the xi nodes, consistent with the kernel matrix
    h_xi = cross_kernel(cfg.xi[:, None], grid.nodes[None, :], exp.r, exp.k, cfg.a)
    f_at_xi = scale * (h_xi @ source)
    coeffs = np.linalg.solve(cache.h_matrix.T, f_at_xi)
    h_eta = cross_kernel(grid.nodes[:, None], cfg.eta[None, :], exp.r, exp.k, cfg.a)
    remainder = GridFunction(grid, h_eta @ coeffs)
    return KernelProjection(GridFunction(grid, f_vals - remainder.values), coeffs, remainder)


def _random_alternating(rng, m: int, r: int, k: int, tries: int = 2000):
    """Rejection sample a strictly interlacing (xi, eta) pair inside (0, 1)."""
    for _ in range(tries):
        xi = np.sort(rng.uniform(0.02, 0.98, size=m))
        eta = np.sort(rng.uniform(0.02, 0.98, size=m))
        if np.all(np.diff(xi) > 1e-3) and np.all(np.diff(eta) > 1e-3) \
                and alternation_holds(xi, eta, r, k):
            return xi, eta
    raise RuntimeError("failed to sample an alternating configuration")


def _random_sorted(rng, m: int):
    xi = np.sort(rng.uniform(0.02, 0.98, size=m))
    eta = np.sort(rng.uniform(0.02, 0.98, size=m))
    return xi, eta


def _det_scale(mu, nu, r, k) -> float:
    """Hadamard-style magnitude reference for the composition determinant."""
    m = np.atleast_1d(mu).size
    if m == 0:
        return 1.0
    hmat = cross_kernel(np.atleast_1d(mu)[:, None], np.atleast_1d(nu)[None, :], r, k)
    return float(math.factorial(m) * max(np.prod(np.linalg.norm(hmat, axis=1)), 1.0))


def property_suite(seed: int = 42, cases: int = 200) -> dict:
    """Randomized checks of positivity, nonnegativity, the brute-force identity,
    and the vanishing structure of the bordered kernel.  Returns per-case
    (total, passed) counts; used by the command-line kernel-test harness."""
    rng = np.random.default_rng(seed)
    results = {}
    pairs = [(2, 1), (3, 1), (3, 2), (4, 2)]
    for r, k in pairs:
        passed = 0
        for _ in range(cases):
            m = int(rng.integers(1, 5))
            xi, eta = _random_alternating(rng, m, r, k)
            if composition_det(xi, eta, r, k) > 0:
                passed += 1
        results[f"positivity r={r} k={k}"] = (cases, passed)
    for r, k in pairs:
        passed = 0
        for _ in range(cases):
            m = int(rng.integers(1, 5))
            mu, nu = _random_sorted(rng, m)
            val = composition_det(mu, nu, r, k)
            if val >= -1e-12 * _det_scale(mu, nu, r, k):
                passed += 1
        results[f"nonnegativity r={r} k={k}"] = (cases, passed)

    passed = total = 0
    for r, k in pairs:
        for m in (1, 2):
            for _ in range(10):
                mu, nu = _random_sorted(rng, m)
                total += 1
                ref = composition_integral_bruteforce(mu, nu, r, k)
                val = composition_det(mu, nu, r, k)
                if abs(val - ref) <= 1e-6 * max(abs(ref), 1e-12):
                    passed += 1
    results["bruteforce identity J<=2"] = (total, passed)

    passed = total = 0
    for r, k in pairs:
        for _ in range(25):
            m = int(rng.integers(1, 4))
            xi, eta = _random_alternating(rng, m, r, k)
            cfg = NodeConfig(xi, eta, r, k)
            cache = KernelCache.build(cfg)
            ts = rng.uniform(0, 1, size=12)
            total += 1
            gmax = np.max(np.abs(bordered_kernel(ts, ts, cfg, cache)))
            on_xi = np.max(np.abs(bordered_kernel(xi, ts, cfg, cache)))
            on_eta = np.max(np.abs(bordered_kernel(ts, eta, cfg, cache)))
            if max(on_xi, on_eta) <= 1e-12 * max(gmax, 1e-30):
                passed += 1
    results["bordered kernel vanishing"] = (total, passed)
    return results
