"""Label smoothing policies and the smoothed cross-entropy loss.

Three policies are supported:

``none``
    one-hot targets (plain negative log-likelihood)
``uniform:<eps>``
    the truth keeps ``1 - eps``; ``eps`` is spread evenly over the other labels
``graduated[:lo,hi,el,em,eh]``
    ``eps`` depends on the confidence a first-pass (uniformly smoothed)
    model assigns to each training token: ``eh`` above ``hi``, ``el`` below
    ``lo``, ``em`` in between (both boundaries belong to the middle region)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SmoothingPolicy:
    kind: str = "none"
    epsilon: float = 0.0
    lo: float = 0.3
    hi: float = 0.7
    eps_low: float = 0.0
    eps_mid: float = 0.1
    eps_high: float = 0.3

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "graduated"):
            raise ValueError(f"unknown smoothing kind {self.kind!r}")
        for name in ("epsilon", "eps_low", "eps_mid", "eps_high"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name}={v} must lie in [0, 1)")
        if self.kind == "graduated" and not self.lo < self.hi:
            raise ValueError(f"graduated thresholds need lo < hi, got {self.lo} >= {self.hi}")

    @classmethod
    def none(cls) -> "SmoothingPolicy":
        return cls("none")

    @classmethod
    def uniform(cls, epsilon: float) -> "SmoothingPolicy":
        return cls("uniform", epsilon=epsilon)

    @classmethod
    def graduated(cls, lo=0.3, hi=0.7, eps_low=0.0, eps_mid=0.1, eps_high=0.3) -> "SmoothingPolicy":
        return cls("graduated", lo=lo, hi=hi, eps_low=eps_low, eps_mid=eps_mid, eps_high=eps_high)

    @classmethod
    def parse(cls, text: str) -> "SmoothingPolicy":
        """Parse the ``--smoothing`` flag syntax."""
        name, _, args = text.strip().partition(":")
        try:
            if name == "none" and not args:
                return cls.none()
            if name == "uniform":
                return cls.uniform(float(args))
            if name == "graduated":
                if not args:
                    return cls.graduated()
                vals = [float(x) for x in args.split(",")]
                if len(vals) != 5:
                    raise ValueError("graduated takes exactly five values lo,hi,el,em,eh")
                return cls.graduated(*vals)
        except ValueError as exc:
            raise ValueError(f"bad smoothing policy {text!r}: {exc}") from None
        raise ValueError(f"bad smoothing policy {text!r}")

    def __str__(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "uniform":
            return f"uniform:{self.epsilon:g}"
        return f"graduated:{self.lo:g},{self.hi:g},{self.eps_low:g},{self.eps_mid:g},{self.eps_high:g}"

    @property
    def needs_confidence(self) -> bool:
        return self.kind == "graduated"


def assign_epsilon(policy: SmoothingPolicy, confidence: float | None = None) -> float:
    if policy.kind == "none":
        return 0.0
    if policy.kind == "uniform":
        return policy.epsilon
    if confidence is None:
        raise ValueError("graduated smoothing needs a first-pass confidence")
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence {confidence} outside [0, 1]")
    if confidence > policy.hi:
        return policy.eps_high
    if confidence < policy.lo:
        return policy.eps_low
    return policy.eps_mid


def assign_epsilons(policy: SmoothingPolicy, confidences) -> np.ndarray:
    """Vectorised :func:`assign_epsilon`."""
    conf = np.asarray(confidences, dtype=float)
    if policy.kind == "none":
        return np.zeros_like(conf)
    if policy.kind == "uniform":
        return np.full_like(conf, policy.epsilon)
    return np.where(conf > policy.hi, policy.eps_high,
                    np.where(conf < policy.lo, policy.eps_low, policy.eps_mid))


@dataclass(frozen=True)
class TargetDistribution:
    probs: np.ndarray
    truth_index: int


def target_distribution(epsilon: float, vocab_size: int, truth_index: int) -> TargetDistribution:
    if vocab_size < 2:
        raise ValueError("label smoothing needs a vocabulary of at least two labels")
    if not 0 <= truth_index < vocab_size:
        raise ValueError(f"truth index {truth_index} outside vocabulary of size {vocab_size}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon {epsilon} must lie in [0, 1)")
    probs = np.full(vocab_size, epsilon / (vocab_size - 1))
    probs[truth_index] = 1.0 - epsilon
    return TargetDistribution(probs, truth_index)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def smoothed_loss(logits, target: TargetDistribution) -> tuple[float, np.ndarray]:
    """Cross-entropy against a smoothed target and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    q = target.probs
    if logits.shape != q.shape:
        raise ValueError(f"logits of shape {logits.shape} for a target over {q.shape[0]} labels")
    logp = log_softmax(logits)
    loss = -float(q @ logp)
    grad = np.exp(logp) - q
    return loss, grad
