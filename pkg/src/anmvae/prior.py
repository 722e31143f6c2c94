"""Build the latent prior mixture from a mechanism by local linearization.

An additive noise model y = f(t) + n with t ~ U(low, high) and
n ~ N(0, sigma_n^2) is approximated by a Gaussian mixture: draw anchor
points (t0, n0), replace f near t0 by its tangent line, and the joint
(t, y) of t ~ N(t0, sigma_t^2) becomes one Gaussian per anchor,

    mean = (t0, f(t0) + n0)
    cov  = [[sigma_t^2,            f' sigma_t^2          ],
            [f' sigma_t^2,         f'^2 sigma_t^2 + sigma_n^2]]

with f' = df/dt at t0, so each component's covariance follows the local
slope of the mechanism.  The mixture has equal weights and, for a fixed
seed, is bit-for-bit reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mechanism as mech
from .errors import ConfigurationError
from .gmm import Gaussian2, Gmm


@dataclass(frozen=True)
class TimeDistribution:
    """Uniform distribution of anchor times."""

    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ConfigurationError(
                f"time range needs low < high, got [{self.low}, {self.high}]")

    def sample(self, rng, count):
        return rng.uniform(self.low, self.high, count)


@dataclass(frozen=True)
class AnmPriorSpec:
    """Everything needed to build (and rebuild) the prior mixture."""

    mechanism: mech.MechanismExpr
    time: TimeDistribution
    sigma_t: float = 0.01
    sigma_n: float = 0.05
    n_components: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_t", "sigma_n"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be finite and > 0")
        if self.n_components < 1:
            raise ConfigurationError("n_components must be >= 1")


def linearize_component(mechanism, t0, n0, sigma_t, sigma_n):
    """One mixture component: tangent-line Gaussian at anchor (t0, n0)."""
    d = mech.eval_dual(mechanism, t0)
    st2, sn2 = sigma_t ** 2, sigma_n ** 2
    mean = np.array([t0, d.value + n0])
    cov = np.array([
        [st2, d.deriv * st2],
        [d.deriv * st2, d.deriv ** 2 * st2 + sn2],
    ])
    return Gaussian2(mean, cov)


def build_prior_gmm(spec, seed=None):
    """Sample anchors from the spec's distributions and linearize each.

    ``seed`` overrides the spec's seed (used by the trainer's optional
    periodic resampling).
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    t0 = spec.time.sample(rng, spec.n_components)
    n0 = rng.normal(0.0, spec.sigma_n, spec.n_components)
    d = mech.eval_dual(spec.mechanism, t0)
    st2, sn2 = spec.sigma_t ** 2, spec.sigma_n ** 2
    means = np.stack([t0, d.value + n0], axis=1)
    cov_ty = d.deriv * st2
    cov_tt = np.full(spec.n_components, st2)
    cov_yy = d.deriv ** 2 * st2 + sn2
    return Gmm.from_arrays(means, cov_tt, cov_ty, cov_yy)


def exact_anm_sample(spec, rng, count, times=None):
    """Draw from the true, un-linearized model: t ~ p_T, y = f(t) + n.

    This is the reference the linearized mixture is judged against.
    ``times`` pins the time draws (useful for conditional checks).
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    t = spec.time.sample(rng, count) if times is None else np.asarray(
        times, dtype=np.float64)
    if t.shape != (count,):
        raise ConfigurationError(f"times must have shape ({count},)")
    y = mech.evaluate(spec.mechanism, t) + rng.normal(0.0, spec.sigma_n,
                                                      count)
    return np.stack([t, y], axis=1)
