"""Local jump rate models for the zero range lattice gas.

A jump rate g: N0 -> R+ with g(0) = 0 and g(k) > 0 for k >= 1 defines the
microscopic model.  Builtin families:

    linear      g(k) = k
    constant    g(k) = 1 for k >= 1
    evans       g_b(k) = 1 + b/k for k >= 1
    landim      g_b(k) = k for k <= 1, (k/(k-1))^b for k >= 2
    tabulated   explicit values for k = 0..len-1 plus a tail rule

Every model supports an additive perturbation g_eps(k) = g(k) + eps*k.
Factorial products g!(k) = g(1)*...*g(k) are handled in log form
throughout; they overflow quickly for superlinear rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfDomainError

MODELS = ("linear", "constant", "evans", "landim", "tabulated")
TAIL_RULES = ("constant", "linear")


@dataclass(frozen=True)
class JumpRateSpec:
    """Immutable description of a jump rate function g_eps(k) = g(k) + eps*k."""

    model: str
    b: float = 0.0
    epsilon: float = 0.0
    table: tuple[float, ...] | None = None
    tail: str | None = None  # tabulated only: "constant" | "linear" | None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.b < 0:
            raise ValueError("parameter b must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.model == "tabulated":
            if self.table is None or len(self.table) < 2:
                raise ValueError("tabulated model needs a table with at least g(0), g(1)")
            if self.table[0] != 0.0:
                raise ValueError("table[0] must be 0 (g(0) = 0)")
            if any(v <= 0 for v in self.table[1:]):
                raise ValueError("table values for k >= 1 must be positive")
            if self.tail is not None and self.tail not in TAIL_RULES:
                raise ValueError(f"tail rule must be in {TAIL_RULES} or None")
        elif self.table is not None:
            raise ValueError("table only valid for the tabulated model")

    def label(self) -> str:
        parts = [self.model]
        if self.model in ("evans", "landim"):
            parts.append(f"b={self.b:g}")
        if self.epsilon:
            parts.append(f"eps={self.epsilon:g}")
        return " ".join(parts)


@dataclass(frozen=True)
class SuperlinearityCertificate:
    """Result of probing g(k) >= a0*k."""

    satisfied: bool
    a0: float | None = None
    holds_all_k: bool | None = None  # True when known from the model's asymptotics
    witness: int | None = None  # minimising k on failure
    tested_min: float = field(default=math.nan)


def _base_rate(spec: JumpRateSpec, k: np.ndarray) -> np.ndarray:
    k = np.atleast_1d(np.asarray(k))
    if np.any(k < 0):
        raise ValueError("occupancy k must be >= 0")
    kf = k.astype(float)
    if spec.model == "linear":
        return kf
    if spec.model == "constant":
        return (k >= 1).astype(float)
    if spec.model == "evans":
        out = np.zeros_like(kf)
        pos = k >= 1
        out[pos] = 1.0 + spec.b / kf[pos]
        return out
    if spec.model == "landim":
        out = kf.copy()
        hi = k >= 2
        out[hi] = (kf[hi] / (kf[hi] - 1.0)) ** spec.b
        return out
    # tabulated
    tab = np.asarray(spec.table, dtype=float)
    n = len(tab)
    out = np.empty_like(kf)
    inside = k < n
    out[inside] = tab[k[inside]]
    if np.any(~inside):
        if spec.tail is None:
            raise OutOfDomainError(
                f"occupancy {int(k[~inside].min())} beyond table of length {n} and no tail rule"
            )
        last = tab[-1]
        if spec.tail == "constant":
            out[~inside] = last
        else:  # linear extension with the table's final increment
            slope = last - tab[-2]
            ext = last + slope * (kf[~inside] - (n - 1))
            if np.any(ext <= 0):
                raise OutOfDomainError("linear tail extension reaches a nonpositive rate")
            out[~inside] = ext
    return out


def evaluate(spec: JumpRateSpec, k) -> float | np.ndarray:
    """g_eps(k) = g(k) + eps*k, exact closed form for builtin models."""
    arr = np.atleast_1d(np.asarray(k))
    out = _base_rate(spec, arr) + spec.epsilon * arr.astype(float)
    return float(out[0]) if np.ndim(k) == 0 else out


def log_factorial_product(spec: JumpRateSpec, k: int) -> float:
    """log g!(k); g!(0) = 1 so the value at k = 0 is 0."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if k == 0:
        return 0.0
    if spec.epsilon == 0.0:
        if spec.model == "linear":
            return math.lgamma(k + 1)
        if spec.model == "constant":
            return 0.0
        if spec.model == "evans":
            # product of (j+b)/j = rising factorial (1+b)_k / k!
            return math.lgamma(spec.b + k + 1) - math.lgamma(spec.b + 1) - math.lgamma(k + 1)
        if spec.model == "landim":
            # telescoping product gives k^b
            return spec.b * math.log(k)
    return float(log_factorial_table(spec, k)[k])


def log_factorial_table(spec: JumpRateSpec, k_max: int) -> np.ndarray:
    """Array of log g!(k) for k = 0..k_max (generic cumulative sum)."""
    if k_max == 0:
        return np.zeros(1)
    rates = evaluate(spec, np.arange(1, k_max + 1))
    out = np.empty(k_max + 1)
    out[0] = 0.0
    np.cumsum(np.log(rates), out=out[1:])
    return out


def rate_tail_limit(spec: JumpRateSpec) -> float:
    """liminf of g(k) as k -> infinity (term-ratio bound for the Z series)."""
    if spec.epsilon > 0:
        return math.inf
    if spec.model == "linear":
        return math.inf
    if spec.model in ("constant", "evans", "landim"):
        return 1.0
    if spec.tail == "linear" and spec.table[-1] > spec.table[-2]:
        return math.inf
    return float(spec.table[-1])  # constant tail (or non-increasing linear tail)


def critical_fugacity(spec: JumpRateSpec) -> float:
    """Radius of convergence of Z: liminf of g!(k)^(1/k).

    Closed forms for the builtin families; tabulated specs fall back on the
    numerical tail-window estimate.
    """
    if spec.epsilon > 0 or spec.model == "linear":
        return math.inf
    if spec.model in ("constant", "evans", "landim"):
        return 1.0
    return critical_fugacity_estimate(spec)


def critical_fugacity_estimate(spec: JumpRateSpec, k_lo: int = 256, k_hi: int = 4096) -> float:
    """min over k in [k_lo, k_hi] of g!(k)^(1/k).

    A finite window cannot compute a liminf; this is an estimate, and the
    closed forms above override it for builtin models.
    """
    if k_hi <= k_lo:
        raise ValueError("need k_hi > k_lo")
    logs = log_factorial_table(spec, k_hi)
    ks = np.arange(k_lo, k_hi + 1)
    return float(np.exp(np.min(logs[ks] / ks)))


def superlinearity_certificate(spec: JumpRateSpec, k_max: int) -> SuperlinearityCertificate:
    """Probe the bound g(k) >= a0*k over 1..k_max.

    For builtin models the infimum over all k is known analytically, so the
    certificate can assert (or deny) the bound for every k; for tabulated
    specs the tail rule decides the limit of g(k)/k.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    probe_max = k_max
    if spec.model == "tabulated":
        # the all-k infimum needs the probe to reach past the table into the tail
        probe_max = max(k_max, len(spec.table) + 1)
    ks = np.arange(1, probe_max + 1)
    ratios = evaluate(spec, ks) / ks
    tested = ratios[: k_max]
    tested_min = float(tested.min())
    witness = int(1 + np.argmin(tested))

    if spec.model == "linear":
        limit = 1.0 + spec.epsilon
    elif spec.model in ("constant", "evans", "landim"):
        limit = spec.epsilon  # g(k)/k -> 0 for the unperturbed rate
    else:
        if spec.tail == "linear":
            limit = (spec.table[-1] - spec.table[-2]) + spec.epsilon
        else:
            limit = spec.epsilon  # constant tail: g(k)/k -> 0
    a0 = min(float(ratios.min()), limit)
    if a0 > 0:
        return SuperlinearityCertificate(
            satisfied=True, a0=a0, holds_all_k=True, tested_min=tested_min
        )
    return SuperlinearityCertificate(
        satisfied=False, witness=witness, tested_min=tested_min
    )
