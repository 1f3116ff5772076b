"""Policy-head distributions: Bernoulli bit vectors, categorical, diagonal Gaussian.

All distributions are batched over leading dimensions. ``log_prob_grad``
returns the gradient of ``log_prob`` with respect to the parameters the
networks produce (logits, or mean and log-std), which is what the PPO
backward pass consumes.
"""
from __future__ import annotations

import itertools

import numpy as np

P_MIN = 1e-6
LOGIT_MAX = float(np.log((1 - P_MIN) / P_MIN))
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


class DomainError(ValueError):
    """Action outside the support of a distribution."""


class FamilyMismatch(TypeError):
    pass


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def _kl_terms(log_p, log_q):
    """Per-outcome terms of KL(p || q) written as p * (e^d - 1 - d), d = log q - log p.

    Each term is non-negative and there is no first-order cancellation, so the
    sum stays accurate when the two distributions nearly coincide.
    """
    d = log_q - log_p
    return np.exp(log_p) * (np.expm1(d) - d)


class BernoulliVector:
    """``m`` independent bits, parameterized by logits clamped to ``[p_min, 1-p_min]``."""

    def __init__(self, logits=None, probs=None):
        if (logits is None) == (probs is None):
            raise ValueError("give exactly one of logits / probs")
        if probs is not None:
            probs = np.clip(np.asarray(probs, dtype=np.float64), P_MIN, 1 - P_MIN)
            logits = np.log(probs) - np.log1p(-probs)
        raw = np.asarray(logits, dtype=np.float64)
        self.logits = np.clip(raw, -LOGIT_MAX, LOGIT_MAX)
        self._active = np.abs(raw) < LOGIT_MAX
        self.probs = 1.0 / (1.0 + np.exp(-self.logits))

    @property
    def width(self) -> int:
        return self.logits.shape[-1]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return (rng.random(self.probs.shape) < self.probs).astype(np.float64)

    def _check(self, bits):
        bits = np.asarray(bits, dtype=np.float64)
        if not np.all((bits == 0) | (bits == 1)):
            raise DomainError("bit vector entries must be 0 or 1")
        return bits

    def log_prob(self, bits):
        bits = self._check(bits)
        lp = bits * _log_sigmoid(self.logits) + (1 - bits) * _log_sigmoid(-self.logits)
        return lp.sum(axis=-1)

    def log_prob_grad(self, bits):
        bits = self._check(bits)
        return (bits - self.probs) * self._active

    def entropy(self):
        p = self.probs
        return -(p * np.log(p) + (1 - p) * np.log1p(-p)).sum(axis=-1)

    def kl(self, other: "BernoulliVector"):
        ones = _kl_terms(_log_sigmoid(self.logits), _log_sigmoid(other.logits))
        zeros = _kl_terms(_log_sigmoid(-self.logits), _log_sigmoid(-other.logits))
        return (ones + zeros).sum(axis=-1)

    def outcome_probs(self) -> tuple[np.ndarray, np.ndarray]:
        """Enumerate all ``2**m`` outcomes; returns (outcomes, probabilities)."""
        m = self.width
        outcomes = np.array(list(itertools.product([0.0, 1.0], repeat=m)))
        lp = self.log_prob(outcomes[(slice(None),) + (None,) * (self.probs.ndim - 1)])
        return outcomes, np.exp(lp)

    def tv(self, other: "BernoulliVector"):
        _, p = self.outcome_probs()
        _, q = other.outcome_probs()
        return 0.5 * np.abs(p - q).sum(axis=0)


class Categorical:
    def __init__(self, logits):
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape[-1] < 2:
            raise ValueError("categorical needs at least 2 choices")
        if not np.all(np.isfinite(logits)):
            raise ValueError("categorical logits must be finite")
        self.logits = logits
        self.log_probs = logits - np.logaddexp.reduce(logits, axis=-1, keepdims=True)
        self.probs = np.exp(self.log_probs)

    @property
    def n(self) -> int:
        return self.logits.shape[-1]

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(self.probs, axis=-1)
        u = rng.random(cdf.shape[:-1] + (1,))
        idx = (u > cdf).sum(axis=-1)
        return np.minimum(idx, self.n - 1)

    def _check(self, idx):
        idx = np.asarray(idx)
        if not np.all((idx >= 0) & (idx < self.n) & (idx == np.round(idx))):
            raise DomainError(f"index outside 0..{self.n - 1}")
        return idx.astype(np.int64)

    def log_prob(self, idx):
        idx = self._check(idx)
        return np.take_along_axis(self.log_probs, idx[..., None], axis=-1)[..., 0]

    def log_prob_grad(self, idx):
        idx = self._check(idx)
        return np.eye(self.n)[idx] - self.probs

    def entropy(self):
        return -(self.probs * self.log_probs).sum(axis=-1)

    def kl(self, other: "Categorical"):
        return _kl_terms(self.log_probs, other.log_probs).sum(axis=-1)

    def tv(self, other: "Categorical"):
        return 0.5 * np.abs(self.probs - other.probs).sum(axis=-1)


class DiagGaussian:
    """Diagonal Gaussian with a state-independent, clamped log-std."""

    def __init__(self, mean, log_std):
        self.mean = np.asarray(mean, dtype=np.float64)
        raw = np.broadcast_to(np.asarray(log_std, dtype=np.float64), self.mean.shape)
        self.log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        self._active = (raw > LOG_STD_MIN) & (raw < LOG_STD_MAX)
        self.std = np.exp(self.log_std)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def log_prob(self, x):
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite Gaussian action")
        z = (x - self.mean) / self.std
        return (-0.5 * z ** 2 - self.log_std - 0.5 * np.log(2 * np.pi)).sum(axis=-1)

    def log_prob_grad(self, x):
        """Returns (d/d mean, d/d log_std), both shaped like ``mean``."""
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.std
        return z / self.std, (z ** 2 - 1.0) * self._active

    def entropy(self):
        return (self.log_std + 0.5 * np.log(2 * np.pi * np.e)).sum(axis=-1)

    def kl(self, other: "DiagGaussian"):
        r = 2.0 * (self.log_std - other.log_std)
        shift = (self.mean - other.mean) ** 2 / (2 * other.std ** 2)
        return (0.5 * (np.expm1(r) - r) + shift).sum(axis=-1)


def sample(dist, rng):
    return dist.sample(rng)


def log_prob(dist, action):
    return dist.log_prob(action)


def entropy(dist):
    return dist.entropy()


def kl(dist_old, dist_new):
    if type(dist_old) is not type(dist_new):
        raise FamilyMismatch(f"{type(dist_old).__name__} vs {type(dist_new).__name__}")
    return dist_old.kl(dist_new)


def total_variation(p, q):
    if type(p) is not type(q):
        raise FamilyMismatch(f"{type(p).__name__} vs {type(q).__name__}")
    return p.tv(q)
