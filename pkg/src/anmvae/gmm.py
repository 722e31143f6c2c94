"""2-D Gaussians, equal-weight mixtures, and the Monte-Carlo KL estimate.

The mixture log-density is computed in the factored, shift-stable form

    ln p(x) = -ln N - ln 2pi
              + logsumexp_j [ -1/2 logdet(Sigma_j) - 1/2 (x-mu_j)^T Sigma_j^-1 (x-mu_j) ]

which stays finite far into the tails where the density itself
underflows.  The same expression runs either on plain float64 numpy
(``graph=None``) or on the autodiff tape, batched over all (sample,
component) pairs at once.

KL(q || p) is estimated by reparameterized sampling of q: each of q's
components contributes ``samples_per_component`` draws, and gradients
flow into q's parameters both through the samples and through q's own
log-density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Node
from .errors import ConfigurationError, NumericalDomainError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Gaussian2:
    """2-D Gaussian over (t, y) with a full SPD covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.shape != (2,) or cov.shape != (2, 2):
            raise ConfigurationError(
                f"Gaussian2 needs mean (2,) and cov (2, 2), got "
                f"{mean.shape} and {cov.shape}")
        if cov[0, 1] != cov[1, 0]:
            raise ConfigurationError("covariance must be symmetric")
        if cov[0, 0] <= 0 or cov[1, 1] <= 0:
            raise ConfigurationError("covariance diagonal must be positive")
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
        if det <= 0:
            raise ConfigurationError(
                f"covariance must be positive definite, det = {det:g}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def det(self):
        return float(self.cov[0, 0] * self.cov[1, 1] - self.cov[0, 1] ** 2)


class Gmm:
    """Equal-weight mixture of :class:`Gaussian2` components."""

    def __init__(self, components):
        components = tuple(components)
        if not components:
            raise ConfigurationError("a mixture needs at least one component")
        self.components = components
        self.means = np.stack([c.mean for c in components])
        covs = np.stack([c.cov for c in components])
        self.cov_tt = covs[:, 0, 0].copy()
        self.cov_ty = covs[:, 0, 1].copy()
        self.cov_yy = covs[:, 1, 1].copy()

    def __len__(self):
        return len(self.components)

    def __eq__(self, other):
        return (isinstance(other, Gmm)
                and len(self) == len(other)
                and all(np.array_equal(a.mean, b.mean)
                        and np.array_equal(a.cov, b.cov)
                        for a, b in zip(self.components, other.components)))

    @classmethod
    def from_arrays(cls, means, cov_tt, cov_ty, cov_yy):
        comps = [
            Gaussian2(m, np.array([[a, b], [b, c]]))
            for m, a, b, c in zip(means, cov_tt, cov_ty, cov_yy)
        ]
        return cls(comps)


@dataclass
class MixtureNodes:
    """Mixture parameters living on an autodiff tape, one array per
    field, all of shape (n,).  This is how the posterior participates in
    the KL with gradients attached."""

    mean_t: Node
    mean_y: Node
    cov_tt: Node
    cov_ty: Node
    cov_yy: Node

    def __len__(self):
        return self.mean_t.value.shape[0]

    @classmethod
    def from_gmm(cls, gmm, graph, dtype=np.float64):
        const = lambda a: graph.constant(np.asarray(a, dtype=dtype))
        return cls(
            mean_t=const(gmm.means[:, 0]),
            mean_y=const(gmm.means[:, 1]),
            cov_tt=const(gmm.cov_tt),
            cov_ty=const(gmm.cov_ty),
            cov_yy=const(gmm.cov_yy),
        )


def _as_mixture_nodes(mix, graph, dtype):
    if isinstance(mix, MixtureNodes):
        return mix
    return MixtureNodes.from_gmm(mix, graph, dtype=dtype)


def _log_density_nodes(mix, xt, xy):
    """Stable mixture log-density on the tape; xt, xy are (m,) nodes."""
    n = len(mix)
    m = xt.value.shape[0]
    ldet = ad.logdet2x2(mix.cov_tt, mix.cov_ty, mix.cov_yy)
    ia, ib, ic = ad.inv2x2(mix.cov_tt, mix.cov_ty, mix.cov_yy)
    row = lambda node: ad.reshape(node, (1, n))
    col = lambda node: ad.reshape(node, (m, 1))
    dt = ad.sub(col(xt), row(mix.mean_t))
    dy = ad.sub(col(xy), row(mix.mean_y))
    quad = ad.add(
        ad.add(ad.mul(row(ia), ad.square(dt)),
               ad.mul(row(ic), ad.square(dy))),
        ad.mul(ad.mul(row(ib), dt), ad.mul(dy, 2.0)),
    )
    scores = ad.mul(ad.add(row(ldet), quad), -0.5)
    return ad.add(ad.logsumexp(scores, axis=1), -math.log(n) - _LOG_2PI)


def _log_density_numpy(gmm, x):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    pts = np.atleast_2d(x)
    det = gmm.cov_tt * gmm.cov_yy - gmm.cov_ty ** 2
    bad = det <= ad.DET_GUARD
    if np.any(bad):
        raise NumericalDomainError(
            f"component determinant {float(det[bad].min()):g} is not "
            "positive", value=float(det[bad].min()))
    dt = pts[:, :1] - gmm.means[None, :, 0]
    dy = pts[:, 1:] - gmm.means[None, :, 1]
    quad = (gmm.cov_yy * dt ** 2 - 2.0 * gmm.cov_ty * dt * dy
            + gmm.cov_tt * dy ** 2) / det
    scores = -0.5 * (np.log(det) + quad)
    shift = scores.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(scores - shift).sum(axis=1))
    out = lse - math.log(len(gmm)) - _LOG_2PI
    return float(out[0]) if squeeze else out


def log_density(gmm, x, graph=None):
    """ln of the mixture density at ``x``.

    With ``graph=None`` this is plain float64 numpy: ``x`` may be one
    point (2,) or a batch (m, 2).  With a graph, ``x`` may additionally
    be a pair of (m,) nodes ``(xt, xy)`` and the result is a
    differentiable node.
    """
    if graph is None:
        return _log_density_numpy(gmm, x)
    mix = _as_mixture_nodes(gmm, graph, dtype=np.float64)
    if isinstance(x, tuple):
        xt, xy = x
    else:
        pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
        xt = graph.constant(pts[:, 0])
        xy = graph.constant(pts[:, 1])
    return _log_density_nodes(mix, xt, xy)


def _cholesky_factors(cov_tt, cov_ty, cov_yy):
    """Lower Cholesky entries (ltt, lyt, lyy) for 2x2 covariances."""
    rest = cov_yy - cov_ty ** 2 / cov_tt
    if np.any(cov_tt <= 0) or np.any(rest <= 0):
        raise NumericalDomainError(
            "Cholesky failure: covariance not positive definite",
            value=float(np.min(rest)))
    return np.sqrt(cov_tt), cov_ty / np.sqrt(cov_tt), np.sqrt(rest)


def sample(gmm, rng, count, return_aux=False):
    """Draw ``count`` points: uniform component, then mean + L eta.

    With ``return_aux`` also returns the chosen component indices and
    the standard-normal draws, so a caller can reuse them as common
    random numbers.
    """
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    ltt, lyt, lyy = _cholesky_factors(gmm.cov_tt, gmm.cov_ty, gmm.cov_yy)
    idx = rng.integers(len(gmm), size=count)
    eta = rng.standard_normal((count, 2))
    pts = np.empty((count, 2))
    pts[:, 0] = gmm.means[idx, 0] + ltt[idx] * eta[:, 0]
    pts[:, 1] = (gmm.means[idx, 1] + lyt[idx] * eta[:, 0]
                 + lyy[idx] * eta[:, 1])
    if return_aux:
        return pts, idx, eta
    return pts


def _sample_nodes(mix, graph, s, eta):
    """Reparameterized draws, ``s`` per component: (s*n,) node pair."""
    n = len(mix)
    a, b, c = mix.cov_tt.value, mix.cov_ty.value, mix.cov_yy.value
    rest = c - b ** 2 / a
    if np.any(a <= 0) or np.any(rest <= 0):
        raise NumericalDomainError(
            "Cholesky failure: covariance not positive definite",
            value=float(np.min(rest)))
    ltt = ad.sqrt(mix.cov_tt)
    lyt = ad.div(mix.cov_ty, ltt)
    lyy = ad.sqrt(ad.sub(mix.cov_yy, ad.div(ad.square(mix.cov_ty),
                                            mix.cov_tt)))
    e1 = graph.constant(eta[..., 0].astype(a.dtype))
    e2 = graph.constant(eta[..., 1].astype(a.dtype))
    xt = ad.add(mix.mean_t, ad.mul(ltt, e1))
    xy = ad.add(mix.mean_y, ad.add(ad.mul(lyt, e1), ad.mul(lyy, e2)))
    return ad.reshape(xt, (s * n,)), ad.reshape(xy, (s * n,))


def kl_mc(q, p, samples_per_component, rng, graph, eta=None):
    """Monte-Carlo KL(q || p) on the tape.

    ``q`` and ``p`` are :class:`Gmm` or :class:`MixtureNodes`.  Each of
    q's components contributes ``samples_per_component`` reparameterized
    draws; the estimate is the mean of ln q(x) - ln p(x) over all
    draws.  Pass ``eta`` (shape (s, n_q, 2)) to pin the normal draws,
    e.g. for common-random-number comparisons.
    """
    if samples_per_component < 1:
        raise ConfigurationError("samples_per_component must be >= 1")
    qn = _as_mixture_nodes(q, graph, dtype=np.float64)
    pn = _as_mixture_nodes(p, graph, dtype=np.float64)
    s, n = samples_per_component, len(qn)
    if eta is None:
        eta = rng.standard_normal((s, n, 2))
    elif eta.shape != (s, n, 2):
        raise ConfigurationError(
            f"eta must have shape {(s, n, 2)}, got {eta.shape}")
    xt, xy = _sample_nodes(qn, graph, s, eta)
    ln_q = _log_density_nodes(qn, xt, xy)
    ln_p = _log_density_nodes(pn, xt, xy)
    return ad.mean(ad.sub(ln_q, ln_p))


def closed_form_gaussian_kl(a, b):
    """Exact KL(a || b) between two 2-D Gaussians; the oracle that the
    Monte-Carlo estimator is validated against."""
    ia, ib_, ic = np.linalg.inv(b.cov).ravel()[[0, 1, 3]]
    binv = np.array([[ia, ib_], [ib_, ic]])
    d = b.mean - a.mean
    trace = float(np.trace(binv @ a.cov))
    quad = float(d @ binv @ d)
    logdet = math.log(b.det / a.det)
    return 0.5 * (trace + quad - 2.0 + logdet)
