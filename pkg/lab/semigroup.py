"""
Exact per-mode propagator of the linearized (u_i, n_i) and (Omega_ij, Ebb_ij) pairs.

For a wavenumber magnitude r = |xi| the pair obeys w' = A w with

    A = [[-mu r^2, r],
         [-r,      0]]

whose exponential is written through sigma = -mu r^2 / 2 and
delta^2 = r^2 (mu r / 2 - 1)(mu r / 2 + 1) as

    G(t) = e^{sigma t} [[C + sigma t S, r t S], [-r t S, C - sigma t S]]

with C = cosh(delta t) and S = sinh(delta t) / (delta t). Both are entire in
z = delta^2 t^2, which removes the 0/0 at the double eigenvalue r = 2/mu.

Evaluation switches regimes on |z| <= 1 only. `disc_eps` is a separate,
reporting-only threshold: it marks modes near the double eigenvalue as
degenerate in `evaluate` and the greens-dump table (where the spectral
projections are not formed), and never changes a propagator entry.
"""

import logging
from dataclasses import dataclass
from math import factorial
from typing import NamedTuple

import numpy as np
from scipy import linalg, stats

from lab.exceptions import ContractViolation

logger = logging.getLogger(__name__)

DEFAULT_DISC_EPS = 1e-8

# Taylor coefficients of cosh(sqrt z) and sinh(sqrt z)/sqrt z, enough for |z| <= 1
_SERIES_TERMS = 14
_COSH_COEFFS = np.array([1.0 / factorial(2 * k) for k in range(_SERIES_TERMS)])
_SINHC_COEFFS = np.array([1.0 / factorial(2 * k + 1) for k in range(_SERIES_TERMS)])


@dataclass(frozen=True)
class SemigroupParams:
    mu: float
    xi_mag: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not self.xi_mag >= 0:
            raise ValueError(f"xi_mag must be non-negative, got {self.xi_mag}")

    @property
    def critical_xi(self):
        """Wavenumber of the double eigenvalue."""
        return 2.0 / self.mu


@dataclass(frozen=True)
class GreensMatrix:
    """Entries of G(t, xi); scalars or arrays broadcast against each other."""

    g11: np.ndarray
    g12: np.ndarray
    g21: np.ndarray
    g22: np.ndarray

    def as_array(self):
        """Stack into shape (..., 2, 2)."""
        top = np.stack(np.broadcast_arrays(self.g11, self.g12), axis=-1)
        bottom = np.stack(np.broadcast_arrays(self.g21, self.g22), axis=-1)
        return np.stack([top, bottom], axis=-2)

    def det(self):
        return self.g11 * self.g22 - self.g12 * self.g21

    def apply(self, w):
        """Multiply a pair w = (w1, w2); w1, w2 may be coefficient arrays."""
        w1, w2 = w
        return (self.g11 * w1 + self.g12 * w2, self.g21 * w1 + self.g22 * w2)

    def compose(self, other):
        """Matrix product self @ other."""
        return GreensMatrix(
            g11=self.g11 * other.g11 + self.g12 * other.g21,
            g12=self.g11 * other.g12 + self.g12 * other.g22,
            g21=self.g21 * other.g11 + self.g22 * other.g21,
            g22=self.g21 * other.g12 + self.g22 * other.g22,
        )

    def max_abs_diff(self, other):
        return float(np.max(np.abs(self.as_array() - other.as_array())))


@dataclass(frozen=True)
class SemigroupEval:
    lambda_plus: complex
    lambda_minus: complex
    p_plus: np.ndarray | None
    p_minus: np.ndarray | None
    degenerate: bool
    greens: GreensMatrix


class AntiderivativeRow(NamedTuple):
    """First row of int_0^t G(tau) d tau: how u accumulates from u0 and from n0."""

    from_u: np.ndarray
    from_n: np.ndarray


@dataclass(frozen=True)
class HighFrequencyEnvelope:
    """|G11|, |G22| <= C e^{-gamma t} and |G12|, |G21| <= C e^{-gamma t} / |xi| for |xi| >= xi_min."""

    gamma: float
    constant: float
    xi_min: float
    mu: float

    def bound(self, t, xi_mag):
        decay = self.constant * np.exp(-self.gamma * np.asarray(t, dtype=np.float64))
        return GreensMatrix(g11=decay, g12=decay / xi_mag, g21=decay / xi_mag, g22=decay)

    def to_dict(self):
        return {"gamma": self.gamma, "C": self.constant, "xi_min": self.xi_min, "mu": self.mu}


def symbol(xi_mag, mu):
    r = float(xi_mag)
    return np.array([[-mu * r * r, r], [-r, 0.0]])


def is_degenerate(xi_mag, mu, disc_eps=DEFAULT_DISC_EPS):
    r2 = np.asarray(xi_mag, dtype=np.float64) ** 2
    discriminant = mu**2 * r2**2 - 4 * r2
    return np.abs(discriminant) < disc_eps * np.maximum(1.0, mu**2 * r2**2)


def eigenvalues(params):
    """
    Roots of lambda^2 + mu r^2 lambda + r^2 = 0, lambda_plus on the + branch.
    On the real branch lambda_plus is taken as r^2 / lambda_minus to avoid cancellation.
    """
    mu, r = params.mu, params.xi_mag
    sigma = -0.5 * mu * r * r
    delta2 = r * r * (0.5 * mu * r - 1.0) * (0.5 * mu * r + 1.0)
    if delta2 < 0:
        b = np.sqrt(-delta2)
        return complex(sigma, b), complex(sigma, -b)
    lambda_minus = sigma - np.sqrt(delta2)
    if lambda_minus == 0.0:
        return 0j, 0j
    return complex(r * r / lambda_minus), complex(lambda_minus)


def projections(params, lambda_plus, lambda_minus):
    """Spectral projections (A - lambda_-)/(lambda_+ - lambda_-) and its complement."""
    a = symbol(params.xi_mag, params.mu).astype(np.complex128)
    gap = lambda_plus - lambda_minus
    identity = np.eye(2, dtype=np.complex128)
    p_plus = (a - lambda_minus * identity) / gap
    p_minus = -(a - lambda_plus * identity) / gap
    return p_plus, p_minus


def evaluate(params, t=0.0, disc_eps=DEFAULT_DISC_EPS):
    lambda_plus, lambda_minus = eigenvalues(params)
    degenerate = bool(is_degenerate(params.xi_mag, params.mu, disc_eps)) or params.xi_mag == 0
    p_plus = p_minus = None
    if not degenerate:
        p_plus, p_minus = projections(params, lambda_plus, lambda_minus)
    return SemigroupEval(
        lambda_plus=lambda_plus,
        lambda_minus=lambda_minus,
        p_plus=p_plus,
        p_minus=p_minus,
        degenerate=degenerate,
        greens=greens_function(t, params),
    )


def _series(z, coeffs):
    out = np.zeros_like(z)
    for c in coeffs[::-1]:
        out = out * z + c
    return out


def _kernel(t, xi_mag, mu):
    """
    Return (G11, D, K, 1 - K) with D = G12 / r and K = G22, vectorised.
    The three evaluation regimes are split on z = delta^2 t^2.
    """
    t, r, mu = np.broadcast_arrays(
        np.asarray(t, dtype=np.float64),
        np.asarray(xi_mag, dtype=np.float64),
        np.asarray(mu, dtype=np.float64),
    )
    if np.any(t < 0):
        raise ContractViolation("the propagator is only defined for t >= 0")

    sigma = -0.5 * mu * r * r
    delta2 = r * r * (0.5 * mu * r - 1.0) * (0.5 * mu * r + 1.0)
    z = delta2 * t * t

    g11 = np.empty_like(t)
    d = np.empty_like(t)
    k = np.empty_like(t)
    one_minus_k = np.empty_like(t)

    bounded = np.abs(z) <= 1.0
    if np.any(bounded):
        tb, sb, zb = t[bounded], sigma[bounded], z[bounded]
        cosh_part = _series(zb, _COSH_COEFFS)
        cosh_minus_one = zb * _series(zb, _COSH_COEFFS[1:])
        t_sinhc = tb * _series(zb, _SINHC_COEFFS)
        _fill_from_cs(bounded, g11, d, k, one_minus_k, tb, sb, cosh_part, cosh_minus_one, t_sinhc)

    oscillatory = z < -1.0
    if np.any(oscillatory):
        tb, sb = t[oscillatory], sigma[oscillatory]
        b = np.sqrt(-delta2[oscillatory])
        cos_part = np.cos(b * tb)
        cos_minus_one = -2.0 * np.sin(0.5 * b * tb) ** 2
        t_sinc = np.sin(b * tb) / b
        _fill_from_cs(oscillatory, g11, d, k, one_minus_k, tb, sb, cos_part, cos_minus_one, t_sinc)

    overdamped = z > 1.0
    if np.any(overdamped):
        tb, rb = t[overdamped], r[overdamped]
        delta = np.sqrt(delta2[overdamped])
        lam_minus = sigma[overdamped] - delta
        lam_plus = rb * rb / lam_minus
        em1_plus = np.expm1(lam_plus * tb)
        em1_minus = np.expm1(lam_minus * tb)
        e_plus, e_minus = em1_plus + 1.0, em1_minus + 1.0
        two_delta = 2.0 * delta
        d[overdamped] = (em1_plus - em1_minus) / two_delta
        k[overdamped] = (-lam_minus * e_plus + lam_plus * e_minus) / two_delta
        g11[overdamped] = (lam_plus * e_plus - lam_minus * e_minus) / two_delta
        one_minus_k[overdamped] = (lam_minus * em1_plus - lam_plus * em1_minus) / two_delta

    return g11, d, k, one_minus_k, r


def _fill_from_cs(where, g11, d, k, one_minus_k, t, sigma, c, c_minus_one, t_s):
    decay = np.exp(sigma * t)
    d[where] = decay * t_s
    k[where] = decay * (c - sigma * t_s)
    g11[where] = decay * (c + sigma * t_s)
    one_minus_k[where] = -(np.expm1(sigma * t) * c + c_minus_one) + sigma * decay * t_s


def greens_batch(t, xi_mag, mu):
    """G(t, xi) for broadcastable arrays of times and wavenumber magnitudes."""
    g11, d, k, _, r = _kernel(t, xi_mag, mu)
    return GreensMatrix(g11=g11, g12=r * d, g21=-r * d, g22=k)


def greens_function(t, params):
    g = greens_batch(t, params.xi_mag, params.mu)
    if np.ndim(g.g11) == 0:
        return GreensMatrix(*(float(x) for x in (g.g11, g.g12, g.g21, g.g22)))
    return g


def greens_integral(t, xi_mag, mu):
    """
    First row of int_0^t G = A^{-1}(G(t) - I): (D, (1 - K)/r). The r = 0 limit of
    the second entry is 0.
    """
    _, d, _, one_minus_k, r = _kernel(t, xi_mag, mu)
    safe_r = np.where(r > 0, r, 1.0)
    return AntiderivativeRow(from_u=d, from_n=np.where(r > 0, one_minus_k / safe_r, 0.0))


def propagate_pair(w0, t, params):
    g = greens_function(t, params)
    w1, w2 = g.apply((complex(w0[0]), complex(w0[1])))
    return np.array([w1, w2], dtype=np.complex128)


def default_eta(mu):
    return 1.0 / mu


def asymptotic_greens(t, params, eta=None, envelope=None):
    """
    Low branch (|xi| < eta): the damped-rotation closed form with
    b = sqrt(4 r^2 - mu^2 r^4) / 2. High branch: the fitted O(1) envelope, which
    bounds the entries instead of approximating them.
    """
    eta = default_eta(params.mu) if eta is None else eta
    if not 0 < eta < params.critical_xi:
        raise ContractViolation(f"eta must lie in (0, 2/mu), got {eta}")
    r, mu = params.xi_mag, params.mu
    t = np.asarray(t, dtype=np.float64)

    if r >= eta:
        if envelope is None:
            raise ContractViolation("the high-frequency branch needs a fitted envelope")
        return envelope.bound(t, r)

    b = 0.5 * np.sqrt(4.0 * r * r - mu * mu * r**4)
    decay = np.exp(-0.5 * mu * r * r * t)
    sinc_t = np.sin(b * t) / b if b > 0 else t
    d = decay * sinc_t
    k = decay * (np.cos(b * t) + 0.5 * mu * r * r * sinc_t)
    return GreensMatrix(g11=-mu * r * r * d + k, g12=r * d, g21=-r * d, g22=k)


def fit_high_frequency_envelope(mu, xi_min, times, xi_mags=None):
    """
    Fit gamma by least squares on log max_xi of the scaled entries, then take
    the smallest C for which C e^{-gamma t} bounds every sample.
    """
    times = np.asarray(times, dtype=np.float64)
    if xi_mags is None:
        xi_mags = np.geomspace(xi_min, 1e3 * xi_min, 200)
    xi_mags = np.asarray(xi_mags, dtype=np.float64)
    if len(times) < 2:
        raise ContractViolation("fitting an envelope needs at least two times")

    tt, rr = np.meshgrid(times, xi_mags, indexing="ij")
    g11, d, k, _, r = _kernel(tt, rr, mu)
    scaled = np.maximum(np.maximum(np.abs(g11), np.abs(k)), r * r * np.abs(d))
    peak = np.max(scaled, axis=1)

    fit = stats.linregress(times, np.log(peak))
    gamma = max(-fit.slope, 0.0)
    constant = float(np.max(peak * np.exp(gamma * times)))
    logger.debug(f"high-frequency envelope for mu={mu}: gamma={gamma:.4g}, C={constant:.4g}")
    return HighFrequencyEnvelope(gamma=float(gamma), constant=constant, xi_min=float(xi_min), mu=float(mu))


def envelope_violation(envelope, times, xi_mags):
    """Largest ratio |entry| / bound over the samples; <= 1 means the envelope holds."""
    tt, rr = np.meshgrid(np.asarray(times, dtype=np.float64), np.asarray(xi_mags, dtype=np.float64), indexing="ij")
    exact = greens_batch(tt, rr, envelope.mu).as_array()
    bound = envelope.bound(tt, rr).as_array()
    return float(np.max(np.abs(exact) / bound))


def greens_table(times, xi_mags, mus, disc_eps=DEFAULT_DISC_EPS):
    """Rows for the greens-dump CSV: entries of G, both eigenvalues and the degenerate flag."""
    times = np.asarray(times, dtype=np.float64)
    for mu in mus:
        for r in xi_mags:
            evaluation = evaluate(SemigroupParams(mu=float(mu), xi_mag=float(r)), times, disc_eps)
            g = evaluation.greens
            for i, t in enumerate(times):
                row = {"t": float(t), "xi_mag": float(r), "mu": float(mu)}
                for name in ("g11", "g12", "g21", "g22"):
                    value = complex(getattr(g, name)[i])
                    row[f"re_{name}"] = value.real
                    row[f"im_{name}"] = value.imag
                for name in ("lambda_plus", "lambda_minus"):
                    value = getattr(evaluation, name)
                    row[f"re_{name}"] = value.real
                    row[f"im_{name}"] = value.imag
                row["degenerate"] = int(evaluation.degenerate)
                yield row


def oracle_report(times, xi_mags, mus):
    """
    Compare against scipy's scaling-and-squaring expm and check
    G(t + s) = G(t) G(s) over every pair of sampled times.
    """
    expm_error = 0.0
    semigroup_error = 0.0
    worst = None
    times = [float(t) for t in times]
    for mu in mus:
        for r in xi_mags:
            a = symbol(r, mu)
            for t in times:
                exact = greens_batch(t, r, mu).as_array()
                error = float(np.max(np.abs(exact - linalg.expm(t * a))))
                if error > expm_error:
                    expm_error, worst = error, {"t": t, "xi_mag": float(r), "mu": float(mu)}
            for t in times:
                for s in times:
                    lhs = greens_batch(t + s, r, mu)
                    rhs = greens_batch(t, r, mu).compose(greens_batch(s, r, mu))
                    semigroup_error = max(semigroup_error, lhs.max_abs_diff(rhs))
    logger.info(f"propagator oracle: expm error {expm_error:.3e}, semigroup residual {semigroup_error:.3e}")
    return {"expm_max_error": expm_error, "semigroup_max_residual": semigroup_error, "worst_point": worst}
