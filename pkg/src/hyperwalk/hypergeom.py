"""Simplex special functions: the density phi, its integral Phi, and duality.

The central object is the integral over the open n-simplex

    Phi(alpha, beta; Z) = int  prod_i u_i^(alpha_i - 1) * prod_j (Z u)_j^(-beta_j)  du

for strictly positive parameter vectors and a strictly positive l x n matrix
Z.  Since ``min_i Z_ji <= (Z u)_j <= max_i Z_ji`` on the simplex, the second
factor is bounded and the integral is always finite.

Evaluation strategy: factor out the Dirichlet part, so that

    Phi = B(alpha) * E_Dirichlet(alpha)[ g(u) ],    g(u) = prod_j (Z u)_j^(-beta_j),

then integrate the bounded expectation with a stick-breaking change of
variables that turns the simplex into nested 1-d Beta-weighted integrals.
Endpoint singularities of the Beta weights with exponent < 1 are removed by
per-coordinate power substitutions; each 1-d integral uses adaptive Simpson
panels with Richardson error control.  All Gamma products and powers are
computed in the log domain.

Tolerances are relative to the returned value throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln


class ParameterError(ValueError):
    """Raised when parameters violate a validity window."""


class NumericsError(RuntimeError):
    """Raised when a quadrature cannot reach its requested accuracy."""


QUADRATURE_MAX_N = 4  # deterministic quadrature handles simplex dimension n-1 <= 3


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo scalar: mean, standard error (sample std / sqrt(n)), sample count."""

    mean: float
    std_error: float
    n_samples: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ParameterError("estimate needs at least one sample")
        if self.std_error < 0:
            raise ParameterError("standard error must be nonnegative")

    def z_score(self, other: float | "Estimate") -> float:
        if isinstance(other, Estimate):
            denom = np.hypot(self.std_error, other.std_error)
            diff = self.mean - other.mean
        else:
            denom = self.std_error
            diff = self.mean - other
        if denom == 0:
            return 0.0 if diff == 0 else np.inf * np.sign(diff)
        return float(diff / denom)


def estimate_from_samples(values: np.ndarray) -> Estimate:
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        return Estimate(float(values.mean()), 0.0, n)
    return Estimate(float(values.mean()), float(values.std(ddof=1) / np.sqrt(n)), n)


@dataclass(frozen=True)
class SimplexPoint:
    """Point of the open simplex: positive coordinates summing to 1 (tol 1e-12)."""

    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        object.__setattr__(self, "u", u)
        if u.ndim != 1 or len(u) == 0:
            raise ParameterError("simplex point must be a nonempty vector")
        if np.any(u <= 0) or np.any(u > 1):
            raise ParameterError("simplex coordinates must lie in (0, 1]")
        if abs(u.sum() - 1.0) > 1e-12:
            raise ParameterError("simplex coordinates must sum to 1")


@dataclass(frozen=True)
class HypergeomParams:
    """Parameters (alpha, beta, Z) of the simplex integral.

    alpha has length n (one entry per simplex coordinate), beta length l,
    and Z is l x n, all strictly positive.  The balance Sum alpha = Sum beta
    is only required where duality is invoked.
    """

    alpha: np.ndarray
    beta: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=np.float64))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))
        Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "Z", Z)
        if np.any(alpha <= 0):
            raise ParameterError("alpha must be strictly positive")
        if np.any(beta <= 0):
            raise ParameterError("beta must be strictly positive")
        if np.any(Z <= 0):
            raise ParameterError("Z must have strictly positive entries")
        if Z.shape != (len(beta), len(alpha)):
            raise ParameterError(
                f"Z must be {len(beta)} x {len(alpha)}, got {Z.shape}"
            )

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def l(self) -> int:
        return len(self.beta)

    def transposed(self) -> "HypergeomParams":
        """Parameters of the dual integral: roles of alpha and beta swapped."""
        return HypergeomParams(self.beta, self.alpha, self.Z.T)

    def is_balanced(self, tol: float = 1e-10) -> bool:
        scale = max(1.0, float(self.alpha.sum()))
        return abs(float(self.alpha.sum() - self.beta.sum())) <= tol * scale


def log_beta_multivariate(alpha) -> float:
    """log of prod Gamma(alpha_i) / Gamma(sum alpha_i)."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    if np.any(alpha <= 0):
        raise ParameterError("alpha must be strictly positive")
    return float(gammaln(alpha).sum() - gammaln(alpha.sum()))


def beta_multivariate(alpha) -> float:
    """Multivariate beta: prod Gamma(alpha_i) / Gamma(sum alpha_i)."""
    return float(np.exp(log_beta_multivariate(alpha)))


def _log_g(p: HypergeomParams, u: np.ndarray) -> np.ndarray:
    """log prod_j (Z u)_j^(-beta_j) for a batch of simplex points (rows of u)."""
    zu = u @ p.Z.T
    return -(np.log(zu) @ p.beta)


def log_envelope_bounds(p: HypergeomParams) -> tuple[float, float]:
    """(log lower, log upper) bounds for prod (Z u)_j^(-beta_j) on the simplex."""
    zmax = p.Z.max(axis=1)
    zmin = p.Z.min(axis=1)
    return (
        float(-(np.log(zmax) @ p.beta)),
        float(-(np.log(zmin) @ p.beta)),
    )


def phi_density(p: HypergeomParams, u: SimplexPoint | np.ndarray) -> float:
    """The unnormalized density prod u_i^(alpha_i-1) * prod (Z u)_j^(-beta_j).

    The point must be interior when some alpha_i < 1 (the density diverges on
    that part of the boundary); boundary points are rejected outright.
    """
    if not isinstance(u, SimplexPoint):
        u = SimplexPoint(np.asarray(u, dtype=np.float64))
    uv = u.u
    if len(uv) != p.n:
        raise ParameterError("dimension mismatch between point and parameters")
    logval = float((p.alpha - 1.0) @ np.log(uv)) + float(_log_g(p, uv[None, :])[0])
    return float(np.exp(logval))


# ---------------------------------------------------------------------------
# adaptive quadrature


# 15-point Kronrod extension of 7-point Gauss on [-1, 1] (QUADPACK constants)
_K15_NODES = np.array(
    [
        -0.991455371120813,
        -0.949107912342759,
        -0.864864423359769,
        -0.741531185599394,
        -0.586087235467691,
        -0.405845151377397,
        -0.207784955007898,
        0.0,
        0.207784955007898,
        0.405845151377397,
        0.586087235467691,
        0.741531185599394,
        0.864864423359769,
        0.949107912342759,
        0.991455371120813,
    ]
)
_K15_WEIGHTS = np.array(
    [
        0.022935322010529,
        0.063092092629979,
        0.104790010322250,
        0.140653259715525,
        0.169004726639267,
        0.190350578064785,
        0.204432940075298,
        0.209482141084728,
        0.204432940075298,
        0.190350578064785,
        0.169004726639267,
        0.140653259715525,
        0.104790010322250,
        0.063092092629979,
        0.022935322010529,
    ]
)
_G7_WEIGHTS = np.array(
    [
        0.129484966168870,
        0.279705391489277,
        0.381830050505119,
        0.417959183673469,
        0.381830050505119,
        0.279705391489277,
        0.129484966168870,
    ]
)


def _adaptive_quad(f, lo: float, hi: float, tol: float, max_depth: int = 40) -> float:
    """Adaptive panel quadrature with embedded Gauss-Kronrod error control.

    ``f`` maps arrays to arrays; all pending panels of one refinement round
    are evaluated in a single call.  Each panel carries an absolute error
    budget, halved on subdivision.
    """
    if hi <= lo:
        return 0.0
    a = np.array([lo])
    b = np.array([hi])
    tols = np.array([tol])
    depth = np.zeros(1, dtype=np.int64)
    total = 0.0
    while len(a):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        pts = mid[:, None] + half[:, None] * _K15_NODES[None, :]
        vals = f(pts.reshape(-1)).reshape(len(a), 15)
        k15 = (vals @ _K15_WEIGHTS) * half
        g7 = (vals[:, 1::2] @ _G7_WEIGHTS) * half
        err = np.abs(k15 - g7)
        exhausted = depth >= max_depth
        if np.any(exhausted):
            bad = float(err[exhausted].max())
            if bad > 1e3 * tol:
                raise NumericsError(
                    f"adaptive panel limit reached with residual {bad:.2e}"
                )
        done = (err <= tols) | exhausted
        total += float(k15[done].sum())
        keep = ~done
        a = np.concatenate([a[keep], mid[keep]])
        b = np.concatenate([mid[keep], b[keep]])
        tols = np.concatenate([tols[keep] / 2.0, tols[keep] / 2.0])
        depth = np.concatenate([depth[keep] + 1, depth[keep] + 1])
    return total


def _adaptive_quad_multi(f, tol: float, n_owners: int, max_depth: int = 40) -> np.ndarray:
    """Owner-tagged adaptive Gauss-Kronrod on [0, 1]: one independent
    integral per owner, all pending panels evaluated in shared batches.

    ``f(owners, pts)`` maps equal-length arrays to values.  Returns the
    per-owner integrals, each to absolute accuracy ``tol``.
    """
    owners = np.arange(n_owners, dtype=np.int64)
    a = np.zeros(n_owners)
    b = np.ones(n_owners)
    tols = np.full(n_owners, tol)
    depth = np.zeros(n_owners, dtype=np.int64)
    totals = np.zeros(n_owners)
    while len(a):
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        pts = (mid[:, None] + half[:, None] * _K15_NODES[None, :]).reshape(-1)
        own = np.repeat(owners, 15)
        vals = f(own, pts).reshape(len(a), 15)
        k15 = (vals @ _K15_WEIGHTS) * half
        g7 = (vals[:, 1::2] @ _G7_WEIGHTS) * half
        err = np.abs(k15 - g7)
        exhausted = depth >= max_depth
        if np.any(exhausted):
            bad = float(err[exhausted].max())
            if bad > 1e3 * tol:
                raise NumericsError(
                    f"adaptive panel limit reached with residual {bad:.2e}"
                )
        done = (err <= tols) | exhausted
        np.add.at(totals, owners[done], k15[done])
        keep = ~done
        owners = np.concatenate([owners[keep], owners[keep]])
        a = np.concatenate([a[keep], mid[keep]])
        b = np.concatenate([mid[keep], b[keep]])
        tols = np.concatenate([tols[keep] / 2.0, tols[keep] / 2.0])
        depth = np.concatenate([depth[keep] + 1, depth[keep] + 1])
    return totals


def _beta_pieces(a: float, b: float):
    """Substituted pieces of ``int_0^1 Beta(t;a,b) f(t) dt``.

    Splits at 1/2 and removes an exponent < 1 in the Beta weight analytically
    with the power substitution ``t = (1/2) v^(1/a)`` (mirrored on the right),
    after which each piece is a regular integral over [0, 1].  Yields
    ``(prefactor, map_t, weight)`` triples with the piece equal to
    ``prefactor * int_0^1 weight(v) f(t(v)) dv``.
    """
    log_b = gammaln(a) + gammaln(b) - gammaln(a + b)
    pieces = []
    if a < 1.0:
        pref = float(np.exp(a * np.log(0.5) - np.log(a) - log_b))
        pieces.append(
            (
                pref,
                lambda v: 0.5 * v ** (1.0 / a),
                lambda v, t: np.power(1.0 - t, b - 1.0),
            )
        )
    else:
        pref = float(np.exp(-log_b))
        pieces.append(
            (
                pref,
                lambda v: 0.5 * v,
                lambda v, t: 0.5 * np.power(t, a - 1.0) * np.power(1.0 - t, b - 1.0),
            )
        )
    if b < 1.0:
        pref = float(np.exp(b * np.log(0.5) - np.log(b) - log_b))
        pieces.append(
            (
                pref,
                lambda v: 1.0 - 0.5 * v ** (1.0 / b),
                lambda v, t: np.power(t, a - 1.0),
            )
        )
    else:
        pref = float(np.exp(-log_b))
        pieces.append(
            (
                pref,
                lambda v: 1.0 - 0.5 * v,
                lambda v, t: 0.5 * np.power(t, a - 1.0) * np.power(1.0 - t, b - 1.0),
            )
        )
    return pieces


def _beta_weighted_integral(f, a: float, b: float, tol: float) -> float:
    """``int_0^1 Beta(t; a, b) f(t) dt`` with ``f`` smooth and vectorized."""
    total = _beta_weighted_multi(lambda owners, ts: f(ts), a, b, tol, 1)
    return float(total[0])


def _beta_weighted_multi(f, a: float, b: float, tol: float, n_owners: int) -> np.ndarray:
    """Per-owner version of :func:`_beta_weighted_integral`;
    ``f(owners, ts)`` is vectorized over pairs."""
    total = np.zeros(n_owners)
    for pref, t_of_v, weight in _beta_pieces(a, b):

        def integrand(owners, v, _t=t_of_v, _w=weight):
            t = _t(v)
            return _w(v, t) * f(owners, t)

        total += pref * _adaptive_quad_multi(
            integrand, 0.5 * tol / max(pref, 1e-300), n_owners
        )
    return total


def _dirichlet_expectation(alpha: np.ndarray, g, tol: float) -> float:
    """E_Dirichlet(alpha)[g(u)] by nested stick-breaking quadrature.

    ``g`` maps a batch of simplex points (rows) to values; it must be bounded
    on the closed simplex.  Stick-breaking factorizes the Dirichlet into 1-d
    Beta laws: u_i = t_i * prod_{k<i}(1 - t_k) with t_i ~ Beta(alpha_i, tail).
    Every nesting level integrates whole batches of stick prefixes at once,
    so panel refinement anywhere turns into single vectorized sweeps.
    """
    n = len(alpha)
    if n == 1:
        return float(g(np.ones((1, 1)))[0])
    tails = np.cumsum(alpha[::-1])[::-1]  # tails[i] = sum alpha[i:]
    level_tol = tol / (n - 1)

    def level(i: int, prefixes: np.ndarray, masses: np.ndarray) -> np.ndarray:
        # per-owner integral over stick t_i given prefix rows and leftover mass
        if i == n - 2:

            def f(owners, ts):
                u = np.empty((len(ts), n))
                u[:, :i] = prefixes[owners]
                m = masses[owners]
                u[:, i] = m * ts
                u[:, i + 1] = m * (1.0 - ts)
                return g(u)

        else:

            def f(owners, ts):
                nxt = np.column_stack([prefixes[owners], masses[owners] * ts])
                return level(i + 1, nxt, masses[owners] * (1.0 - ts))

        return _beta_weighted_multi(
            f, float(alpha[i]), float(tails[i + 1]), level_tol, len(masses)
        )

    return float(level(0, np.empty((1, 0)), np.ones(1))[0])


def log_phi_quadrature(p: HypergeomParams, tol: float) -> float:
    """log Phi(alpha, beta; Z) by deterministic quadrature, relative accuracy ~tol.

    Only simplex dimensions with n <= 4 are supported deterministically; use
    :func:`phi_mc` beyond that.  The normalized expectation is checked against
    its analytic envelope bounds on every evaluation.
    """
    if tol <= 0:
        raise ParameterError("tolerance must be positive")
    if p.n > QUADRATURE_MAX_N:
        raise ParameterError(
            f"deterministic quadrature supports n <= {QUADRATURE_MAX_N}; use phi_mc"
        )
    log_lo, log_hi = log_envelope_bounds(p)

    def g_norm(u):
        # g scaled by its supremum: values in (0, 1]
        return np.exp(_log_g(p, u) - log_hi)

    if p.n == 1:
        r = 1.0  # g is constant on a single-point simplex; log_hi == log value
    else:
        lower = np.exp(log_lo - log_hi)
        # the normalized expectation lies in [lower, 1]; integrate at absolute
        # tolerance tol * scale, seeding the scale from the simplex center and
        # shrinking it only when the value turns out much smaller than assumed
        center = float(g_norm(np.full((1, p.n), 1.0 / p.n))[0])
        guess = min(1.0, max(center, lower))
        for _ in range(8):
            r = _dirichlet_expectation(p.alpha, g_norm, tol * guess)
            if r >= 0.3 * guess or guess <= lower:
                break
            guess = max(r, lower)
        slack = 10.0 * tol + 1e-12
        if not (lower * (1 - slack) <= r <= 1.0 + slack):
            raise NumericsError(
                f"quadrature value {r:.6e} violates envelope bounds [{lower:.6e}, 1]"
            )
    return log_beta_multivariate(p.alpha) + log_hi + float(np.log(r))


def phi_quadrature(p: HypergeomParams, tol: float) -> float:
    """Phi(alpha, beta; Z) by deterministic quadrature (relative accuracy ~tol)."""
    return float(np.exp(log_phi_quadrature(p, tol)))


def phi_mc(p: HypergeomParams, n_samples: int, seed) -> Estimate:
    """Unbiased Monte Carlo estimate of Phi via the Dirichlet representation.

    Phi = B(alpha) * E_Dirichlet(alpha)[g(u)] with g bounded, so plain
    averaging over Dirichlet draws suffices.  Deterministic given ``seed``.
    """
    if n_samples < 2:
        raise ParameterError("need at least 2 samples")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    u = rng.dirichlet(p.alpha, size=n_samples)
    u = np.clip(u, 1e-300, None)
    log_lo, log_hi = log_envelope_bounds(p)
    vals = np.exp(_log_g(p, u) - log_hi)  # in (0, 1]
    scale = np.exp(log_beta_multivariate(p.alpha) + log_hi)
    est = estimate_from_samples(vals)
    return Estimate(scale * est.mean, scale * est.std_error, n_samples)


def duality_sides(p: HypergeomParams, tol: float) -> tuple[float, float]:
    """Both sides of the duality identity, each by its own quadrature.

    Requires balanced parameters.  Returns
    ``(Phi(alpha,beta,Z)/B(alpha), Phi(beta,alpha,Z^t)/B(beta))``; the two
    integrals run over simplices of different dimension, so they are
    genuinely independent evaluations.
    """
    if not p.is_balanced():
        raise ParameterError("duality requires sum(alpha) == sum(beta)")
    lhs = np.exp(log_phi_quadrature(p, tol) - log_beta_multivariate(p.alpha))
    q = p.transposed()
    rhs = np.exp(log_phi_quadrature(q, tol) - log_beta_multivariate(q.alpha))
    return float(lhs), float(rhs)


def duality_residual(p: HypergeomParams, tol: float) -> float:
    """B(alpha)^-1 Phi(alpha,beta,Z) - B(beta)^-1 Phi(beta,alpha,Z^t)."""
    lhs, rhs = duality_sides(p, tol)
    return lhs - rhs
