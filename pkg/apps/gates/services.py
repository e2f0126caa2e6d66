"""
Stretched Hard-Concrete gates.

A gate is sampled from uniform noise u by the chain

    s     = sigmoid(logit(u) + alpha)
    s_bar = s * (r - l) + l
    z     = min(1, max(0, s_bar))

with implicit temperature 1. The chain is built from engine ops so that
alpha receives pathwise gradients through z.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from apps.tensors import engine as E
from apps.tensors.engine import Tensor
from apps.tensors.errors import NonFiniteError

from .errors import GateDomainError

DEFAULT_L = -1.5
DEFAULT_R = 1.5
U_EPS = 1e-6


@dataclass(frozen=True)
class GateParams:
    alpha: Tensor
    l: float = DEFAULT_L
    r: float = DEFAULT_R

    def __post_init__(self):
        if not (self.l < 0 and self.r > 1):
            raise GateDomainError(f"stretch interval must satisfy l < 0 < 1 < r, got l={self.l} r={self.r}")
        if not isinstance(self.alpha, Tensor):
            try:
                object.__setattr__(self, "alpha", Tensor(self.alpha))
            except NonFiniteError:
                raise GateDomainError("alpha contains non-finite values") from None
        if self.alpha.ndim != 1:
            raise GateDomainError(f"alpha must be a vector, got shape {self.alpha.shape}")

    def __len__(self):
        return self.alpha.shape[0]

    @property
    def log_ratio(self):
        """log(-l / r), the shift between alpha and the nonzero probability logit."""
        return math.log(-self.l / self.r)


@dataclass(frozen=True)
class GateSample:
    u: np.ndarray
    s: Tensor
    s_bar: Tensor
    z: Tensor


def draw_uniform(rng, size, eps=U_EPS):
    """Noise in (eps, 1 - eps) so logit(u) stays finite."""
    return rng.uniform(eps, 1.0 - eps, size=size)


def sample_gate(params, u):
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (len(params),):
        raise GateDomainError(f"noise has shape {u.shape}, expected ({len(params)},)")
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise GateDomainError("noise values must lie strictly inside (0, 1)")

    s = E.sigmoid(E.add(params.alpha, Tensor(logit(u))))
    s_bar = E.stretch(s, params.r - params.l, params.l)
    z = E.clamp(s_bar, 0.0, 1.0)
    return GateSample(u=u, s=s, s_bar=s_bar, z=z)


def expected_l0(params):
    """Per-coordinate P(z != 0) = sigmoid(alpha - log(-l/r)), differentiable in alpha."""
    return E.sigmoid(E.stretch(params.alpha, 1.0, -params.log_ratio))


def expected_l0_exact(alpha, l=DEFAULT_L, r=DEFAULT_R):
    """float64 evaluation of the same closed form, for reporting."""
    return expit(np.asarray(alpha, dtype=np.float64) - math.log(-l / r))


def gate_values(alpha, u, l=DEFAULT_L, r=DEFAULT_R):
    """The sampling chain evaluated in float64 without recording a graph."""
    s = expit(logit(np.asarray(u, dtype=np.float64)) + np.asarray(alpha, dtype=np.float64))
    return np.clip(s * (r - l) + l, 0.0, 1.0).astype(np.float32)


def deterministic_gate(params):
    """Noise-free gate clip(sigmoid(alpha) * (r - l) + l, 0, 1) used for evaluation."""
    s = expit(params.alpha.data.astype(np.float64))
    return np.clip(s * (params.r - params.l) + params.l, 0.0, 1.0).astype(np.float32)


def finalize_gate(params, seed=None, *, rng=None, eps=U_EPS):
    """Sample u once and return z; deterministic for a given seed or stream.

    z is not necessarily binary: coordinates whose stretched sample falls
    inside (0, 1) keep their fractional value.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    u = draw_uniform(rng, len(params), eps)
    return gate_values(params.alpha.data, u, params.l, params.r)
