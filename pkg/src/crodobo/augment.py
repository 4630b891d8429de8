"""Weak and strong stochastic augmentation of feature vectors.

The strong policy follows the RandAugment interface: for every sample,
``num_ops`` operations are drawn uniformly (with replacement) from a pool
and applied in sequence at a shared magnitude in [0, 1].  Magnitude 0 is the
identity for every op.

Op semantics at magnitude ``m`` (``s`` = ``feature_scale``):

* ``gaussian-noise``: add N(0, (m * noise_sd * s)^2) per feature
* ``feature-dropout``: zero each feature with probability ``m * dropout_rate``
* ``global-scale``: multiply the sample by u ~ U[1 - m*scale_range, 1 + m*scale_range]
* ``additive-shift``: add u ~ U[-m*shift_range*s, m*shift_range*s] per feature
* ``feature-cutout``: zero a contiguous block of ``ceil(m * cutout_fraction * d)``
  features at a uniform start (wrapping around)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

OPS = ("gaussian-noise", "feature-dropout", "global-scale", "additive-shift",
       "feature-cutout")


class AugmentError(ValueError):
    pass


@dataclass
class AugmentPolicy:
    ops: list[str] = field(default_factory=lambda: list(OPS))
    num_ops: int = 2
    magnitude: float = 0.5
    feature_scale: float = 1.0
    noise_sd: float = 0.5
    dropout_rate: float = 1.0
    scale_range: float = 0.5
    shift_range: float = 0.5
    cutout_fraction: float = 0.5

    def __post_init__(self):
        self.ops = list(self.ops)
        unknown = [o for o in self.ops if o not in OPS]
        if unknown:
            raise AugmentError(f"unknown augmentation ops {unknown}; choose from {OPS}")
        if not self.ops:
            raise AugmentError("augmentation pool is empty")
        if self.num_ops < 0:
            raise AugmentError("num_ops must be >= 0")
        if not 0 <= self.magnitude <= 1:
            raise AugmentError("magnitude must lie in [0, 1]")
        if not 0 <= self.dropout_rate * self.magnitude <= 1:
            raise AugmentError("dropout probability must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class WeakPolicy:
    kind: str = "jitter"
    sigma: float = 0.01
    feature_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("jitter", "identity"):
            raise AugmentError(f"weak policy kind must be 'jitter' or 'identity', got {self.kind!r}")
        if self.sigma < 0:
            raise AugmentError("weak jitter sigma must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def weak_augment(x, rng: np.random.Generator, policy: WeakPolicy | None = None):
    policy = policy or WeakPolicy()
    x = np.asarray(x, dtype=np.float64)
    if policy.kind == "identity" or policy.sigma == 0:
        return x.copy()
    return x + rng.normal(0.0, policy.sigma * policy.feature_scale, size=x.shape)


def _apply_op(op, row, m, p: AugmentPolicy, rng):
    d = row.shape[0]
    if op == "gaussian-noise":
        return row + rng.normal(0.0, m * p.noise_sd * p.feature_scale, size=d)
    if op == "feature-dropout":
        keep = rng.random(d) >= m * p.dropout_rate
        return row * keep
    if op == "global-scale":
        return row * rng.uniform(1 - m * p.scale_range, 1 + m * p.scale_range)
    if op == "additive-shift":
        r = m * p.shift_range * p.feature_scale
        return row + rng.uniform(-r, r, size=d)
    if op == "feature-cutout":
        width = min(d, math.ceil(m * p.cutout_fraction * d))
        start = rng.integers(0, d)
        out = row.copy()
        out[(start + np.arange(width)) % d] = 0.0
        return out
    raise AugmentError(f"unknown op {op!r}")


def strong_augment(x, policy: AugmentPolicy, rng: np.random.Generator,
                   return_ops: bool = False):
    """Apply ``policy`` sample by sample.

    With ``return_ops`` the (B, num_ops) matrix of pool indices actually
    applied is returned too, so a run can be replayed op by op.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    chosen = rng.integers(0, len(policy.ops), size=(x.shape[0], policy.num_ops))
    if policy.magnitude > 0:
        for b in range(x.shape[0]):
            row = out[b]
            for k in chosen[b]:
                row = _apply_op(policy.ops[k], row, policy.magnitude, policy, rng)
            out[b] = row
    if return_ops:
        return out, chosen
    return out
