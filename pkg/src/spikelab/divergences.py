"""Generalized f-divergences over finite, possibly unnormalized measures.

Measures live on an explicit shared atom list so Radon-Nikodym ratios are
just elementwise quotients.  Divergence functions carry their behavior at
0 and at infinity; mass on a nu-null atom contributes mu({nu=0}) * f'(inf)
with the convention 0 * inf = 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

MASS_TOL = 1e-12
ENUMERATION_GUARD = 10 ** 6


class CombinatorialGuardError(RuntimeError):
    """Decision-rule enumeration would exceed the configured limit."""


@dataclass
class FiniteMeasure:
    """Nonnegative weights on an explicit finite support."""

    weights: np.ndarray
    atoms: Optional[tuple] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("weights must be one-dimensional")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        if self.atoms is not None:
            self.atoms = tuple(self.atoms)
            if len(self.atoms) != self.weights.size:
                raise ValueError("atom list and weights disagree in length")

    @property
    def n(self):
        return self.weights.size

    @property
    def mass(self):
        return float(self.weights.sum())

    def normalized(self):
        return FiniteMeasure(self.weights / self.mass, self.atoms)

    def scaled(self, c):
        return FiniteMeasure(c * self.weights, self.atoms)


def _aligned(mu, nu):
    if mu.n != nu.n:
        raise ValueError("measures live on different supports")
    if mu.atoms is not None and nu.atoms is not None and mu.atoms != nu.atoms:
        raise ValueError("measures live on different atom lists")


@dataclass
class DivergenceFunction:
    """Convex f on (0, inf) with its limits at 0 and at infinity."""

    kind: str
    fn: Callable[[float], float]
    f_prime_inf: float
    f_zero: float
    nonnegative: bool
    x_f_inv_nonincreasing: bool
    params: dict = field(default_factory=dict)

    def __call__(self, t):
        if t == 0.0:
            return self.f_zero
        return self.fn(t)

    @classmethod
    def power(cls, eta):
        """f(t) = t^(1+eta); f'(inf) = inf for eta > 0, 1 for eta = 0."""
        if eta < 0:
            raise ValueError("power divergence needs eta >= 0")
        alpha = 1.0 + eta
        return cls(
            kind=f"power({alpha:g})",
            fn=lambda t: t ** alpha,
            f_prime_inf=math.inf if eta > 0 else 1.0,
            f_zero=0.0,
            nonnegative=True,
            x_f_inv_nonincreasing=True,   # x * (1/x)^(1+eta) = x^-eta
            params={"eta": eta},
        )

    @classmethod
    def kl(cls):
        """f(t) = t log t with f(0) = 0 by continuity; f'(inf) = inf."""
        return cls(
            kind="kl",
            fn=lambda t: t * math.log(t),
            f_prime_inf=math.inf,
            f_zero=0.0,
            nonnegative=False,
            x_f_inv_nonincreasing=True,   # x * (1/x) log(1/x) = -log x
        )

    @classmethod
    def chi2(cls):
        """f(t) = (t - 1)^2; f'(inf) = inf."""
        return cls(
            kind="chi2",
            fn=lambda t: (t - 1.0) ** 2,
            f_prime_inf=math.inf,
            f_zero=1.0,
            nonnegative=True,
            x_f_inv_nonincreasing=False,
        )

    @classmethod
    def custom(cls, fn, f_prime_inf, f_zero=None, nonnegative=False,
               x_f_inv_nonincreasing=False, rng=None, checks=10**4):
        """Tabulated convex f; convexity is spot-checked at random triples."""
        rng = rng or np.random.default_rng(0)
        for _ in range(checks):
            a, b = np.sort(rng.uniform(1e-6, 50.0, size=2))
            lam = rng.uniform()
            mid = lam * a + (1 - lam) * b
            if fn(mid) > lam * fn(a) + (1 - lam) * fn(b) + 1e-9 * (1 + abs(fn(a)) + abs(fn(b))):
                raise ValueError("custom divergence function failed a convexity check")
        if f_zero is None:
            f_zero = fn(1e-12)
        return cls(
            kind="custom",
            fn=fn,
            f_prime_inf=f_prime_inf,
            f_zero=f_zero,
            nonnegative=nonnegative,
            x_f_inv_nonincreasing=x_f_inv_nonincreasing,
        )


def f_divergence(mu, nu, f):
    """D_f(mu, nu) = sum_{nu>0} nu_i f(mu_i/nu_i) + mu({nu=0}) f'(inf)."""
    _aligned(mu, nu)
    pos = nu.weights > 0
    total = 0.0
    for m, v in zip(mu.weights[pos], nu.weights[pos]):
        total += v * f(m / v)
    null_mass = float(mu.weights[~pos].sum())
    if null_mass > 0.0:
        total += null_mass * f.f_prime_inf   # may be +inf, by design
    return float(total)


def phi_f(a, b, p, q, f):
    """Binary-channel divergence: the f-divergence of (a, p-a) vs (b, q-b).

    Limits at b = 0 and b = q are taken, with 0 * f'(inf) = 0.
    """
    if not (0.0 <= a <= p and 0.0 <= b <= q):
        raise ValueError("need 0 <= a <= p and 0 <= b <= q")
    total = 0.0
    if b > 0.0:
        total += b * f(a / b)
    elif a > 0.0:
        total += a * f.f_prime_inf
    if q - b > 0.0:
        total += (q - b) * f((p - a) / (q - b))
    elif p - a > 0.0:
        total += (p - a) * f.f_prime_inf
    return float(total)


@dataclass
class Channel:
    """Row-stochastic map between finite supports."""

    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise ValueError("channel matrix must be two-dimensional")
        if np.any(self.matrix < 0):
            raise ValueError("channel entries must be nonnegative")
        rows = self.matrix.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > MASS_TOL:
            raise ValueError("channel rows must sum to 1")

    @classmethod
    def deterministic(cls, mapping, n_target):
        m = np.zeros((len(mapping), n_target))
        for i, j in enumerate(mapping):
            m[i, j] = 1.0
        return cls(m)


def pushforward(mu, channel):
    """Image measure mu Gamma^-1; mass-preserving by row-stochasticity."""
    if channel.matrix.shape[0] != mu.n:
        raise ValueError("channel source does not match the measure support")
    return FiniteMeasure(channel.matrix.T @ mu.weights)


def truncate(prob_measure, event_mask):
    """Restrict a probability measure to an event; output mass <= 1."""
    if abs(prob_measure.mass - 1.0) > 1e-9:
        raise ValueError("truncate expects a probability measure")
    mask = np.asarray(event_mask, dtype=bool)
    if mask.shape != prob_measure.weights.shape:
        raise ValueError("event mask does not match the support")
    return FiniteMeasure(np.where(mask, prob_measure.weights, 0.0), prob_measure.atoms)


def enumerate_rule_values(prior, mus, indicator):
    """Per-atom action gains G[x, a] = sum_theta prior * mu_theta(x) * I(a, theta)."""
    prior = np.asarray(prior, dtype=np.float64)
    mu_matrix = np.stack([m.weights for m in mus])        # (n_theta, n_x)
    indicator = np.asarray(indicator, dtype=np.float64)   # (n_actions, n_theta)
    return np.einsum("t,tx,at->xa", prior, mu_matrix, indicator)


def bayes_bound_check(prior, mus, nu, indicator, f):
    """Both sides of the sub-distribution Bayes-risk bound, plus the verdict.

    V_opt is found by exhaustive enumeration over deterministic decision
    rules (the independent oracle this check exists to be); V_0 is the best
    data-oblivious action.  Returns (lhs, rhs, holds) for
    lhs = E_theta D_f(mu_theta, nu) and rhs = V_0 f(V_opt / V_0).
    """
    prior = np.asarray(prior, dtype=np.float64)
    if abs(prior.sum() - 1.0) > 1e-9 or np.any(prior < 0):
        raise ValueError("prior must be a probability vector")
    if nu.mass > 1.0 + MASS_TOL:
        raise ValueError("reference measure must have mass at most 1")
    if not (f.x_f_inv_nonincreasing or abs(nu.mass - 1.0) <= 1e-9):
        raise ValueError("need x*f(1/x) non-increasing or a normalized reference")
    if not f.nonnegative:
        raise ValueError("the bound requires a nonnegative divergence function")
    for m in mus:
        if m.mass > 1.0 + MASS_TOL:
            raise ValueError("every mu_theta must have mass at most 1")

    indicator = np.asarray(indicator)
    n_actions, n_theta = indicator.shape
    if n_theta != len(mus) or n_theta != prior.size:
        raise ValueError("indicator shape does not match the parameter space")
    n_x = nu.n

    n_rules = n_actions ** n_x
    if n_rules > ENUMERATION_GUARD:
        raise CombinatorialGuardError(
            f"{n_actions}^{n_x} = {n_rules} decision rules exceed the limit"
        )

    gains = enumerate_rule_values(prior, mus, indicator)
    v_opt = -math.inf
    for rule in itertools.product(range(n_actions), repeat=n_x):
        v_opt = max(v_opt, float(gains[np.arange(n_x), rule].sum()))

    v0 = float(max(indicator.astype(float) @ prior))
    lhs = float(sum(p * f_divergence(m, nu, f) for p, m in zip(prior, mus)))
    if v0 <= 0.0:
        return lhs, 0.0, True
    rhs = float(v0 * f(v_opt / v0))
    holds = lhs >= rhs - 1e-12 * max(1.0, abs(rhs))
    return lhs, rhs, bool(holds)


def gaussian_power_moment(mu1, mu2, sigma, eta):
    """Closed-form E_Q[(dP/dQ)^(1+eta)] for P = N(mu1, S), Q = N(mu2, S).

    exp(eta (1+eta) / 2 * (mu1-mu2)^T S^+ (mu1-mu2)); both means must lie
    in the range of S (checked through the pseudo-inverse projector).
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    pinv = np.linalg.pinv(sigma, hermitian=True)
    proj = sigma @ pinv
    for m in (mu1, mu2):
        if np.linalg.norm(m - proj @ m) >= 1e-8:
            raise ValueError("means must lie in the range of the covariance")
    diff = mu1 - mu2
    return float(np.exp(eta * (1.0 + eta) / 2.0 * (diff @ pinv @ diff)))
