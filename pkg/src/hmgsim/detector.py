"""Sequential attack detection on metered load readings.

Each meter's measurement is compared against its forecast; the relative
residual is quantized to a binary sample (0 = common error, 1 = rare
error, above the upper bound = immediate attack). The binary stream
drives Wald's sequential probability ratio test: a cumulative log-
likelihood random walk between two thresholds. Crossing the lower
threshold clears the meter (no attack), crossing the upper one raises an
attack decision; either way the sample set resets.

States are kept per meter in a registry; distinct meters never interact.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

__all__ = [
    "Decision",
    "DetectorParams",
    "SprtState",
    "DetectorRegistry",
    "thresholds",
    "residual",
    "binarize",
    "sprt_step",
    "expected_samples",
    "process_measurement",
    "calibrate",
]


class Decision(enum.Enum):
    CONTINUE = "No decision"
    NO_ATTACK = "No attack"
    ATTACK = "Attack"
    DIRECT_ATTACK = "Direct attack"

    @property
    def terminal(self) -> bool:
        return self is not Decision.CONTINUE


class DirectAttackSample:
    """Sentinel produced by binarize when the residual exceeds the upper bound."""

    __slots__ = ()

    def __repr__(self):  # pragma: no cover
        return "DIRECT_ATTACK_SAMPLE"


DIRECT_ATTACK_SAMPLE = DirectAttackSample()


def thresholds(alpha: float, beta: float) -> tuple[float, float]:
    """Wald decision thresholds (ln_l, ln_u) from the target error rates."""
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise ValueError("alpha and beta must lie in (0, 1)")
    ln_u = math.log((1.0 - beta) / alpha)
    ln_l = math.log(beta / (1.0 - alpha))
    return ln_l, ln_u


@dataclass(frozen=True)
class DetectorParams:
    le: float      # relative-error bound below which samples are common
    ue: float      # relative-error bound above which a single sample is an attack
    p0: float      # Pr[S=1 | no attack]
    p1: float      # Pr[S=1 | attack]
    alpha: float = 0.001  # false positive target
    beta: float = 0.002   # false negative target

    def __post_init__(self):
        if not (0.0 < self.le < self.ue):
            raise ValueError("need 0 < le < ue")
        if not (0.0 < self.p0 < self.p1 < 1.0):
            raise ValueError("need 0 < p0 < p1 < 1")
        if not (0.0 < self.alpha < 1.0 and 0.0 < self.beta < 1.0):
            raise ValueError("alpha, beta must lie in (0, 1)")
        if self.alpha + self.beta >= 1.0:
            raise ValueError("alpha + beta must be < 1")
        if self.ln_l >= 0.0 or self.ln_u <= 0.0:
            raise ValueError("degenerate thresholds: need ln_l < 0 < ln_u")

    @property
    def ln_l(self) -> float:
        return thresholds(self.alpha, self.beta)[0]

    @property
    def ln_u(self) -> float:
        return thresholds(self.alpha, self.beta)[1]

    @property
    def step_one(self) -> float:
        """Log-likelihood increment of a 1-sample."""
        return math.log(self.p1 / self.p0)

    @property
    def step_zero(self) -> float:
        """Log-likelihood increment of a 0-sample."""
        return math.log((1.0 - self.p1) / (1.0 - self.p0))

    def to_json(self) -> str:
        return json.dumps({"le": self.le, "ue": self.ue, "p0": self.p0,
                           "p1": self.p1, "alpha": self.alpha, "beta": self.beta},
                          indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DetectorParams":
        return cls(**json.loads(text))


# Parameters reported for the reference deployment of the detector.
REFERENCE_PARAMS = dict(le=0.08, ue=24.59, p0=0.0094, p1=0.99, alpha=0.001, beta=0.002)


@dataclass
class SprtState:
    meter_id: str
    cumulative_log_ratio: float = 0.0
    n: int = 0
    m: int = 0

    def reset(self) -> None:
        self.cumulative_log_ratio = 0.0
        self.n = 0
        self.m = 0


def residual(measured: float, forecast: float) -> float:
    """Absolute forecast error e = |measured - forecast| in kW."""
    if forecast <= 0:
        raise ValueError("forecast must be > 0 (relative residual undefined)")
    return abs(measured - forecast)


def binarize(e: float, forecast: float, params: DetectorParams):
    """Quantize a residual: 0, 1, or the direct-attack sentinel.

    Ratios up to ``le`` are common (0); ratios in (le, ue] are rare but
    legitimate (1); anything above ``ue`` never occurs on clean data and
    is flagged as an attack from this single sample.
    """
    if forecast <= 0:
        raise ValueError("forecast must be > 0")
    r = e / forecast
    if r <= params.le:
        return 0
    if r <= params.ue:
        return 1
    return DIRECT_ATTACK_SAMPLE


def sprt_step(state: SprtState, sample: int, params: DetectorParams) -> Decision:
    """Fold one binary sample into the meter's random walk.

    Mutates ``state``; terminal decisions clear it for the next sample set.
    """
    if sample not in (0, 1):
        raise ValueError(f"sample must be 0 or 1, got {sample!r}")
    state.n += 1
    state.m += sample
    state.cumulative_log_ratio += params.step_one if sample else params.step_zero
    if state.cumulative_log_ratio <= params.ln_l:
        state.reset()
        return Decision.NO_ATTACK
    if state.cumulative_log_ratio >= params.ln_u:
        state.reset()
        return Decision.ATTACK
    return Decision.CONTINUE


def expected_samples(params: DetectorParams, hypothesis: str) -> float:
    """Wald's expected sample count to reach a decision under H0 or H1.

    This is the classical no-overshoot approximation; with coarse binary
    increments the true mean is larger (every decision here needs at
    least two samples).
    """
    ln_l, ln_u = params.ln_l, params.ln_u
    d1, d0 = params.step_one, params.step_zero
    if hypothesis == "H0":
        num = (1.0 - params.alpha) * ln_l + params.alpha * ln_u
        den = params.p0 * d1 + (1.0 - params.p0) * d0
    elif hypothesis == "H1":
        num = params.beta * ln_l + (1.0 - params.beta) * ln_u
        den = params.p1 * d1 + (1.0 - params.p1) * d0
    else:
        raise ValueError("hypothesis must be 'H0' or 'H1'")
    if den == 0.0:
        raise ValueError("p0 == p1 leaves the walk without drift")
    return num / den


class DetectorRegistry:
    """Keyed store of per-meter walk states, resumable across runs."""

    def __init__(self):
        self._states: dict[str, SprtState] = {}

    def state(self, meter_id: str) -> SprtState:
        st = self._states.get(meter_id)
        if st is None:
            st = SprtState(meter_id=meter_id)
            self._states[meter_id] = st
        return st

    def save(self, path: str | Path) -> None:
        payload = {m: [s.cumulative_log_ratio, s.n, s.m]
                   for m, s in self._states.items()}
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "DetectorRegistry":
        reg = cls()
        for meter, (pr, n, m) in json.loads(Path(path).read_text()).items():
            reg._states[meter] = SprtState(meter, pr, n, m)
        return reg


def process_measurement(
    meter_id: str,
    measured: float,
    forecast: float,
    registry: DetectorRegistry,
    params: DetectorParams,
) -> Decision:
    """Full decision step for one meter reading: residual, quantize, test.

    A residual ratio above ``ue`` short-circuits to a direct attack and
    clears the meter's sample set; otherwise the sample feeds the walk.
    Unknown meters start from a fresh state.
    """
    state = registry.state(meter_id)
    sample = binarize(residual(measured, forecast), forecast, params)
    if sample is DIRECT_ATTACK_SAMPLE:
        state.reset()
        return Decision.DIRECT_ATTACK
    return sprt_step(state, sample, params)


def calibrate(
    residual_ratios: Iterable[float],
    *,
    common_quantile: float = 0.99,
    p1: float = 0.99,
    alpha: float = 0.001,
    beta: float = 0.002,
    le: float | None = None,
    ue: float | None = None,
) -> DetectorParams:
    """Fit (le, ue, p0) from a clean residual-ratio history.

    ``le`` is the smallest ratio covering ``common_quantile`` of the
    samples, ``ue`` the largest ratio ever observed, and ``p0`` the
    fraction of history falling in (le, ue]. Explicit ``le``/``ue``
    override the fitted values.
    """
    ratios = sorted(float(r) for r in residual_ratios)
    if len(ratios) < 10:
        raise ValueError("need at least 10 residual ratios to calibrate")
    if le is None:
        k = min(len(ratios) - 1, max(0, math.ceil(common_quantile * len(ratios)) - 1))
        le = ratios[k]
    if ue is None:
        ue = ratios[-1]
    if ue <= le:
        ue = le * 1.5 + 1e-9  # degenerate history: widen the rare band
    ones = sum(1 for r in ratios if le < r <= ue)
    p0 = max(ones / len(ratios), 1.0 / (2 * len(ratios)))  # never exactly zero
    return DetectorParams(le=le, ue=ue, p0=p0, p1=p1, alpha=alpha, beta=beta)
