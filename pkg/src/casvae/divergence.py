"""Divergences between a 1-D Gaussian posterior and a two-peak prior.

The prior is ``alpha * N(-m, s^2) + (1 - alpha) * N(m, s^2)``. Besides the
closed-form Gaussian/Gaussian pieces this module provides the training
surrogates (``dklsc``, ``dkl_paper``, ``w_surrogate``, ``pw_surrogate``),
their analytic gradients, and an accurate quadrature of the exact mixture KL
used as ground truth in tests and error maps.

All surrogate functions broadcast over numpy arrays of ``mu`` / ``log_var``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError

SQRT_HALF_PI = math.sqrt(math.pi / 2)
# slope of the tanh stand-in for erfc, applied to mu / (sqrt(2) sigma)
ERFC_TANH_SLOPE = 1.19


@dataclass(frozen=True)
class DiagGaussian:
    mu: float | np.ndarray
    log_var: float | np.ndarray

    @property
    def var(self):
        return np.exp(self.log_var)

    @property
    def std(self):
        return np.exp(0.5 * np.asarray(self.log_var))

    @classmethod
    def from_std(cls, mu, std) -> "DiagGaussian":
        return cls(mu, 2 * np.log(std))


@dataclass(frozen=True)
class TwoPeakPrior:
    m: float = 2.0
    s: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if not self.s > 0:
            raise DomainError("peak std s must be positive")
        if not self.m >= 0:
            raise DomainError("peak offset m must be non-negative")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")


class SurrogateKind(str, Enum):
    STD_NORMAL_KL = "std_normal_kl"
    DKLSC = "dklsc"
    DKL = "dkl"
    W = "w"
    PW = "pw"

    @classmethod
    def parse(cls, value: "str | SurrogateKind") -> "SurrogateKind":
        try:
            return cls(value.lower() if isinstance(value, str) else value)
        except ValueError:
            raise ConfigError(f"unknown surrogate {value!r}") from None


def _mv(q: DiagGaussian):
    mu = np.asarray(q.mu, dtype=np.float64)
    lv = np.asarray(q.log_var, dtype=np.float64)
    return mu, lv, np.exp(0.5 * lv)


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def kl_gauss_gauss(q: DiagGaussian, mean2, std2):
    """KL(N(mu, sigma^2) || N(mean2, std2^2))."""
    if np.any(np.asarray(std2) <= 0):
        raise DomainError("std2 must be positive")
    mu, _, sigma = _mv(q)
    std2 = np.asarray(std2, dtype=np.float64)
    # via the std ratio so that sigma == std2 gives exactly zero
    ratio = sigma / std2
    val = 0.5 * (ratio * ratio - 1) - np.log(ratio) + (mu - mean2) ** 2 / (2 * std2 ** 2)
    return _out(np.maximum(val, 0.0))


def kl_std_normal(q: DiagGaussian):
    mu, lv, _ = _mv(q)
    return _out(np.maximum(0.5 * (mu ** 2 + np.exp(lv) - lv - 1), 0.0))


def dklsc(q: DiagGaussian, prior: TwoPeakPrior):
    """Convexity upper bound on the mixture KL.

    ``alpha * KL(q || N(-m, s^2)) + (1 - alpha) * KL(q || N(m, s^2))``;
    with ``alpha = 1/2`` this is
    ``log(s / sigma) + (sigma^2 + mu^2 + m^2) / (2 s^2) - 1/2``.
    """
    a = prior.alpha
    return _out(a * np.asarray(kl_gauss_gauss(q, -prior.m, prior.s))
                + (1 - a) * np.asarray(kl_gauss_gauss(q, prior.m, prior.s)))


def dkl_paper_raw(q: DiagGaussian, prior: TwoPeakPrior):
    """Closed-form mixture-KL approximation with erfc(x) ~ 1 - tanh(1.19 x), unclamped.

    Uses equal weights regardless of ``prior.alpha``.
    """
    mu, lv, sigma = _mv(q)
    m, s = prior.m, prior.s
    s2 = s * s
    tail = -sigma * np.exp(-mu ** 2 / (2 * sigma ** 2)) + SQRT_HALF_PI * mu * (
        1 - np.tanh(ERFC_TANH_SLOPE * mu / (math.sqrt(2) * sigma)))
    val = np.log(2 * s / sigma) + ((m - mu) ** 2 + sigma ** 2 - s2) / (2 * s2) + 2 * m * tail / s2
    return _out(val)


def dkl_paper(q: DiagGaussian, prior: TwoPeakPrior):
    """``dkl_paper_raw`` clamped at zero; the approximation goes negative near mu = -m."""
    return _out(np.maximum(np.asarray(dkl_paper_raw(q, prior)), 0.0))


def w2_gauss(q: DiagGaussian, mean2, std2):
    """Squared 2-Wasserstein distance between 1-D Gaussians."""
    if np.any(np.asarray(std2) <= 0):
        raise DomainError("std2 must be positive")
    mu, _, sigma = _mv(q)
    return _out((mu - mean2) ** 2 + (sigma - std2) ** 2)


def w_surrogate(q: DiagGaussian, prior: TwoPeakPrior):
    """Weight-averaged W2^2 to the two peaks (our definition, not canonical)."""
    a = prior.alpha
    return _out(a * np.asarray(w2_gauss(q, -prior.m, prior.s))
                + (1 - a) * np.asarray(w2_gauss(q, prior.m, prior.s)))


def pw_surrogate(q: DiagGaussian, prior: TwoPeakPrior):
    """W2^2 to the nearer peak (our definition, not canonical)."""
    return _out(np.minimum(np.asarray(w2_gauss(q, -prior.m, prior.s)),
                           np.asarray(w2_gauss(q, prior.m, prior.s))))


def surrogate(kind: SurrogateKind | str, q: DiagGaussian, prior: TwoPeakPrior):
    kind = SurrogateKind.parse(kind)
    if kind is SurrogateKind.STD_NORMAL_KL:
        return kl_std_normal(q)
    if kind is SurrogateKind.DKLSC:
        return dklsc(q, prior)
    if kind is SurrogateKind.DKL:
        return dkl_paper(q, prior)
    if kind is SurrogateKind.W:
        return w_surrogate(q, prior)
    return pw_surrogate(q, prior)


def surrogate_grad(kind: SurrogateKind | str, q: DiagGaussian, prior: TwoPeakPrior):
    """Analytic ``(d/d mu, d/d log_var)`` of the chosen surrogate.

    Clamped regions of ``dkl`` have zero gradient. For ``pw`` ties at
    ``mu = 0`` resolve to the ``-m`` peak, matching ``np.minimum``'s value.
    """
    kind = SurrogateKind.parse(kind)
    mu, lv, sigma = _mv(q)
    var = sigma ** 2
    m, s, a = prior.m, prior.s, prior.alpha
    s2 = s * s
    if kind is SurrogateKind.STD_NORMAL_KL:
        d_mu, d_lv = mu, 0.5 * (var - 1)
    elif kind is SurrogateKind.DKLSC:
        d_mu = (mu + (2 * a - 1) * m) / s2
        d_lv = var / (2 * s2) - 0.5
    elif kind is SurrogateKind.DKL:
        z = ERFC_TANH_SLOPE * mu / (math.sqrt(2) * sigma)
        th = np.tanh(z)
        sech2 = 1 - th ** 2
        e = np.exp(-mu ** 2 / (2 * var))
        dz_dmu = ERFC_TANH_SLOPE / (math.sqrt(2) * sigma)
        # tail term T(mu, sigma) = -sigma e + c mu (1 - tanh z)
        dt_dmu = mu * e / sigma + SQRT_HALF_PI * ((1 - th) - mu * sech2 * dz_dmu)
        dt_dsigma = -e - mu ** 2 * e / var + SQRT_HALF_PI * mu * sech2 * z / sigma
        d_mu = -(m - mu) / s2 + 2 * m * dt_dmu / s2
        d_sigma = sigma / s2 + 2 * m * dt_dsigma / s2
        d_lv = -0.5 + 0.5 * sigma * d_sigma
        active = np.asarray(dkl_paper_raw(q, prior)) > 0
        d_mu = np.where(active, d_mu, 0.0)
        d_lv = np.where(active, d_lv, 0.0)
    elif kind is SurrogateKind.W:
        d_mu = 2 * a * (mu + m) + 2 * (1 - a) * (mu - m)
        d_lv = (sigma - s) * sigma
    else:
        peak = np.where(mu > 0, m, -m)
        d_mu = 2 * (mu - peak)
        d_lv = (sigma - s) * sigma
    d_mu = np.broadcast_to(d_mu, np.broadcast_shapes(mu.shape, lv.shape))
    d_lv = np.broadcast_to(d_lv, d_mu.shape)
    return _out(np.array(d_mu)), _out(np.array(d_lv))


# -- exact mixture KL --------------------------------------------------------

def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2))


def _kink_residual(center: float, scale: float, order: int) -> float:
    """E[log1p(exp(-|V|))] for V ~ N(center, scale^2).

    The integrand is bounded, decays like exp(-|v|) and has its only kink at
    v = 0, so the line is folded onto [0, inf) and integrated with composite
    Gauss-Legendre panels no wider than min(1, scale).
    """
    if scale == 0:
        return math.log1p(math.exp(-abs(center)))
    nodes, weights = np.polynomial.legendre.leggauss(order)
    upper = 50.0  # log1p(exp(-50)) < 2e-22
    total = 0.0
    for c in (center, -center):
        lo = max(0.0, c - 12 * scale)
        hi = min(upper, c + 12 * scale)
        if hi <= lo:
            continue
        panels = max(1, math.ceil((hi - lo) / min(1.0, scale)))
        edges = np.linspace(lo, hi, panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        u = (mid[:, None] + half[:, None] * nodes[None, :])
        dens = np.exp(-0.5 * ((u - c) / scale) ** 2) / (scale * math.sqrt(2 * math.pi))
        total += float(np.sum(half[:, None] * weights[None, :] * np.log1p(np.exp(-u)) * dens))
    return total


def mixture_kl_quadrature(q: DiagGaussian, prior: TwoPeakPrior, order: int = 64) -> float:
    """Exact KL(q || two-peak prior) by analytic splitting plus quadrature.

    With ``v = 2 m x / s^2 + log((1 - alpha) / alpha)`` the log prior is
    ``log alpha + log N(x; -m, s^2) + softplus(v)``, and
    ``softplus(v) = max(v, 0) + log1p(exp(-|v|))``. The expectation under q
    of every piece except the last has a closed form; only the bounded
    kink term is integrated numerically (``order`` nodes per panel).
    """
    if order < 16:
        raise ConfigError("quadrature order must be at least 16")
    mu = float(q.mu)
    sigma = math.exp(0.5 * float(q.log_var))
    m, s, a = prior.m, prior.s, prior.alpha
    s2 = s * s
    # E_q[log q] - log alpha - E_q[log N(x; -m, s^2)]
    base = (math.log(s / sigma) - 0.5 - math.log(a)
            + ((mu + m) ** 2 + sigma ** 2) / (2 * s2))
    c = math.log((1 - a) / a)
    v_mu = 2 * m * mu / s2 + c
    v_sd = 2 * m * sigma / s2
    if v_sd == 0:
        pos = max(v_mu, 0.0)
    else:
        z = v_mu / v_sd
        pos = v_mu * _norm_cdf(z) + v_sd * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    val = base - pos - _kink_residual(v_mu, v_sd, order)
    return max(val, 0.0)
