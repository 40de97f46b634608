"""Stabilization regions, membership probabilities, and decay functionals.

The voting indicator of a point ``x`` relative to a target ``x0`` is local:
whether ``x`` is a k-PNN of ``x0`` depends only on the configuration inside
``Rect(x0, x)``.  The *stabilization region* of ``(x, mark)`` is therefore
``Rect(x0, x) x R`` when fewer than k other points occupy the rectangle, and
empty otherwise.  This module computes that region, the Poisson probability
that it is non-degenerate, an exponential tail bound dominating that
probability, and the localized decay functional used in second-order
analysis — each with an independent cross-checkable route.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .geometry import HyperRect, PointConfig, as_point, count_in_rect_excl, is_kpnn, rect_between
from .process import DensitySpec, QuadratureError, SeedSpec, rect_mass, rect_mass_batch

__all__ = [
    "poisson_cdf_psi",
    "psi_batch",
    "psi_prefix_batch",
    "StabilizationRegion",
    "region_of",
    "membership_prob",
    "tail_bound",
    "tail_bound_poisson",
    "CFunctionResult",
    "c_function",
    "PHI_KINDS",
    "AssumptionReport",
    "check_assumptions",
]

PHI_KINDS = ("one", "abs-moment-proxy")


def poisson_cdf_psi(lam: float, k: int) -> float:
    """P(Poisson(lam) < k), evaluated stably in log space.

    Summing the first k Poisson weights via logsumexp keeps the result
    accurate for every intensity (direct summation underflows past
    lam ~ 745); the value is clamped into [0, 1] against rounding.
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError("k must be a positive integer")
    if not np.isfinite(lam) or lam < 0:
        raise ValueError("intensity must be finite and nonnegative")
    if lam == 0.0:
        return 1.0
    j = np.arange(k)
    log_terms = -lam + j * math.log(lam) - gammaln(j + 1)
    return float(min(1.0, math.exp(logsumexp(log_terms))))


def psi_batch(lams: np.ndarray, k: int) -> np.ndarray:
    """Vectorized :func:`poisson_cdf_psi` over an array of intensities."""
    lams = np.asarray(lams, dtype=np.float64)
    return psi_prefix_batch(lams, [int(k)])[..., 0].reshape(lams.shape)


def psi_prefix_batch(lams: np.ndarray, ks) -> np.ndarray:
    """P(Poisson(lam) < k) for every intensity and every k in one sweep.

    Returns an array of shape ``lams.shape + (len(ks),)``.  All k values
    share one pass over the Poisson weights: a scaled linear recurrence for
    intensities <= 700 (where e^-lam is representable) and a log-space
    accumulation for larger ones.
    """
    ks = [int(k) for k in ks]
    if not ks or any(k < 1 for k in ks):
        raise ValueError("k values must be positive integers")
    lams = np.asarray(lams, dtype=np.float64)
    flat = lams.reshape(-1)
    if np.any(~np.isfinite(flat)) or np.any(flat < 0):
        raise ValueError("intensities must be finite and nonnegative")
    kmax = max(ks)
    cols = np.asarray(ks, dtype=np.int64) - 1
    out = np.empty((flat.size, len(ks)))
    chunk = max(1, int(2_000_000 // kmax))
    for start in range(0, flat.size, chunk):
        lam = flat[start:start + chunk]
        block = np.empty((lam.size, len(ks)))
        small = lam <= 700.0
        if np.any(small):
            ls = lam[small]
            term = np.exp(-ls)
            acc = np.empty((ls.size, kmax))
            acc[:, 0] = term
            for j in range(1, kmax):
                term = term * ls / j
                acc[:, j] = acc[:, j - 1] + term
            block[small] = acc[:, cols]
        if np.any(~small):
            ll = lam[~small, None]
            j = np.arange(kmax)
            log_terms = -ll + j * np.log(ll) - gammaln(j + 1)
            acc = np.logaddexp.accumulate(log_terms, axis=1)
            block[~small] = np.exp(acc[:, cols])
        out[start:start + chunk] = block
    out[flat == 0.0] = 1.0
    return np.minimum(out, 1.0).reshape(lams.shape + (len(ks),))


@dataclass(frozen=True, eq=False)
class StabilizationRegion:
    """Either ``Rect(x0, x) x R`` (marks unconstrained) or the empty set."""

    rect: HyperRect | None

    @property
    def is_empty(self) -> bool:
        return self.rect is None

    def contains(self, point) -> bool:
        """Spatial membership; mark coordinates never constrain membership."""
        if self.rect is None:
            return False
        return bool(self.rect.contains(as_point(point)))


def region_of(config: PointConfig, x0, x, k: int) -> StabilizationRegion:
    """Stabilization region of configuration member ``x`` relative to ``x0``.

    Non-empty exactly when ``x`` is a k-PNN of ``x0`` within ``config``.
    """
    config.index_of(x)
    if count_in_rect_excl(config, x0, x) < k:
        return StabilizationRegion(rect_between(x0, x))
    return StabilizationRegion(None)


def membership_prob(density: DensitySpec, intensity: float, x0, x, y, k: int) -> float:
    """P(the region of (x, mark) in a Poisson(intensity * density) sample
    with ``x`` adjoined covers location ``y``).

    Zero when ``y`` is outside Rect(x0, x); otherwise the probability that
    the rectangle holds fewer than k sample points.
    """
    if intensity <= 0:
        raise ValueError("intensity must be positive")
    rect = rect_between(x0, x)
    if not rect.contains(as_point(y)):
        return 0.0
    return poisson_cdf_psi(intensity * rect_mass(density, rect), k)


def tail_bound_poisson(lam: float, k: int) -> float:
    """e * sum_{j<k} exp(-lam / (j + 2)): the exponential decay envelope.

    Dominates P(Poisson(lam) < k) term by term; intentionally returned
    unclamped (it exceeds 1 for small lam — callers clamp for reporting
    only, never before comparisons).
    """
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError("k must be a positive integer")
    if not np.isfinite(lam) or lam < 0:
        raise ValueError("intensity must be finite and nonnegative")
    j = np.arange(k)
    return float(math.e * np.exp(-lam / (j + 2.0)).sum())


def tail_bound(density: DensitySpec, intensity: float, x0, x, k: int, clamp: bool = False) -> float:
    """Decay envelope for the membership probability of Rect(x0, x)."""
    if intensity <= 0:
        raise ValueError("intensity must be positive")
    rect = rect_between(x0, x)
    val = tail_bound_poisson(intensity * rect_mass(density, rect), k)
    return min(1.0, val) if clamp else val


# ---------------------------------------------------------------------------
# localized decay functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CFunctionResult:
    """Value of the decay functional plus how it was obtained."""

    value: float
    standard_error: float | None
    method: str

    def __float__(self) -> float:
        return self.value


def _phi(kind: str, pts: np.ndarray) -> np.ndarray:
    if kind == "one":
        return np.ones(pts.shape[0])
    if kind == "abs-moment-proxy":
        return 1.0 + np.abs(pts).sum(axis=1)
    raise ValueError(f"unknown phi kind {kind!r}")


def c_function(density: DensitySpec, phi: str, alpha: float, s: float, x0, y,
               *, rel_tol: float = 1e-6, mc_draws: int = 200_000, seed: int = 0) -> CFunctionResult:
    """s * int 1{y in Rect(x0, x)} exp(-alpha * s * mass(Rect(x0, x))) phi(x) g(x) dx.

    The integration domain is the product of coordinate rays on ``y``'s side
    of ``x0`` (both sides when y_c == x0_c), intersected with the support
    box.  Routes: closed form for the 1-D uniform phi == one case, adaptive
    quadrature for d <= 2 (relative tolerance ``rel_tol``), plain Monte Carlo
    with a reported standard error for d >= 3.

    Scaling identity (exact by construction, pinned in tests):
    c(alpha, s) == c(1, alpha * s) / alpha.
    """
    if phi not in PHI_KINDS:
        raise ValueError(f"unknown phi kind {phi!r}")
    if alpha <= 0 or s <= 0:
        raise ValueError("alpha and s must be positive")
    p0 = as_point(x0)
    py = as_point(y)
    if p0.size != density.dim or py.size != density.dim:
        raise ValueError("dimension mismatch")

    # per-coordinate integration ranges: x must satisfy y in Rect(x0, x)
    ranges: list[tuple[float, float]] = []
    for c in range(density.dim):
        lo_c, hi_c = density.lo[c], density.hi[c]
        if py[c] > p0[c]:
            lo_c = max(lo_c, py[c])
        elif py[c] < p0[c]:
            hi_c = min(hi_c, py[c])
        if lo_c > hi_c:
            return CFunctionResult(0.0, 0.0, "empty-domain")
        ranges.append((float(lo_c), float(hi_c)))

    if (density.kind == "uniform-box" and density.dim == 1 and phi == "one"
            and density.lo[0] <= p0[0] <= density.hi[0]):
        return CFunctionResult(_c_closed_uniform_1d(density, alpha, s, p0, ranges[0]),
                               None, "closed-form")
    if density.dim <= 2:
        return _c_quadrature(density, phi, alpha, s, p0, ranges, rel_tol)
    return _c_monte_carlo(density, phi, alpha, s, p0, py, mc_draws, seed)


def _c_closed_uniform_1d(density: DensitySpec, alpha: float, s: float,
                         p0: np.ndarray, rng_c: tuple[float, float]) -> float:
    # (s/w) int_a^b e^(-alpha s |x - x0| / w) dx with w the support width;
    # each one-sided piece integrates exactly to (e^(-r t0) - e^(-r t1)) / alpha
    # for r = alpha s / w and t the sorted endpoint distances |. - x0|
    width = float(density.hi[0] - density.lo[0])
    a, b = rng_c
    rate = alpha * s / width

    def seg(lo: float, hi: float) -> float:
        t0, t1 = sorted((abs(lo - p0[0]), abs(hi - p0[0])))
        return (math.exp(-rate * t0) - math.exp(-rate * t1)) / alpha

    if a < p0[0] < b:
        return seg(a, float(p0[0])) + seg(float(p0[0]), b)
    return seg(a, b)


def _c_quadrature(density: DensitySpec, phi: str, alpha: float, s: float,
                  p0: np.ndarray, ranges: list[tuple[float, float]], rel_tol: float) -> CFunctionResult:
    def integrand(*coords):
        x = np.array(coords, dtype=np.float64)
        rect = rect_between(p0, x)
        mass = rect_mass(density, rect)
        return float(s * math.exp(-alpha * s * mass) * _phi(phi, x[None, :])[0]
                     * density.pdf(x[None, :])[0])

    # split each axis at x0 so the |. - x0| kink never sits inside a panel
    def split(rng_c, c):
        lo, hi = rng_c
        if lo < p0[c] < hi:
            return [(lo, float(p0[c])), (float(p0[c]), hi)]
        return [rng_c]

    pieces: list[list[tuple[float, float]]] = [[]]
    for c, rng_c in enumerate(ranges):
        pieces = [prefix + [part] for prefix in pieces for part in split(rng_c, c)]

    total, err_total = 0.0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            for ranges_piece in pieces:
                val, err = integrate.nquad(
                    integrand, ranges_piece,
                    opts={"epsabs": 1e-12, "epsrel": rel_tol, "limit": 200})
                total += val
                err_total += err
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"decay-functional quadrature failed: {exc}") from exc
    if err_total > max(1e-10, 10 * rel_tol * abs(total)):
        raise QuadratureError(f"decay-functional quadrature error {err_total:.2e} too large")
    return CFunctionResult(total, None, "quadrature")


def _c_monte_carlo(density: DensitySpec, phi: str, alpha: float, s: float,
                   p0: np.ndarray, py: np.ndarray, draws: int, seed: int) -> CFunctionResult:
    rng = SeedSpec(seed, 0).generator()
    x = density.sample(draws, rng)
    inside = np.logical_and(np.minimum(p0, x) <= py, py <= np.maximum(p0, x)).all(axis=1)
    los = np.minimum(p0, x)
    his = np.maximum(p0, x)
    mass = rect_mass_batch(density, los, his)
    vals = s * inside * np.exp(-alpha * s * mass) * _phi(phi, x)
    value = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(draws))
    return CFunctionResult(value, se, "monte-carlo")


# ---------------------------------------------------------------------------
# locality / monotonicity / stability audit
# ---------------------------------------------------------------------------


@dataclass
class AssumptionReport:
    """Outcome of the locality, monotonicity, and add-point-stability audit
    over every point of one configuration against one probe point."""

    n_points: int
    k: int
    locality_failures: list[int]
    monotonicity_failures: list[int]
    add_stability_failures: list[int]
    outside_unchanged_failures: list[int]
    add_stability_checked: int

    @property
    def all_ok(self) -> bool:
        return not (self.locality_failures or self.monotonicity_failures
                    or self.add_stability_failures or self.outside_unchanged_failures)


def check_assumptions(config: PointConfig, x0, k: int, probe) -> AssumptionReport:
    """Audit the stabilization contract on one configuration.

    For every configuration point x, with region R = region_of(config, x0, x):

    * locality — the voting indicator of x computed on the restriction of the
      configuration to R equals the indicator on the full configuration
      (empty region => indicator false);
    * monotonicity — adding the probe point never grows the region:
      region_of(config + probe) is contained in R;
    * outside-unchanged — a probe outside Rect(x0, x) leaves the region as
      it was;
    * add-stability — when R is non-empty and the probe lies outside R,
      the region stays non-empty after adding the probe.
    """
    p0 = as_point(x0)
    probe_pt = as_point(probe)
    enlarged = config.add(probe_pt)
    report = AssumptionReport(config.n_points, k, [], [], [], [], 0)

    for i in range(config.n_points):
        x = config.points[i]
        region = region_of(config, p0, x, k)
        full_ind = is_kpnn(config, p0, x, k)

        if region.is_empty:
            local_ind = False
        else:
            inside = region.rect.contains(config.points)
            restricted = PointConfig(config.points[inside], dim=config.dim)
            local_ind = is_kpnn(restricted, p0, x, k)
        if local_ind != full_ind:
            report.locality_failures.append(i)

        region_after = region_of(enlarged, p0, x, k)
        if not region_after.is_empty and region.is_empty:
            report.monotonicity_failures.append(i)

        base_rect = rect_between(p0, x)
        if not bool(base_rect.contains(probe_pt)):
            if region_after.is_empty != region.is_empty:
                report.outside_unchanged_failures.append(i)

        if not region.is_empty and not region.contains(probe_pt):
            report.add_stability_checked += 1
            if region_after.is_empty:
                report.add_stability_failures.append(i)

    return report
