"""Action-selection policies over occupation states.

The central policy follows the plug-in Frank-Wolfe scheme: estimate the
gradient of the loss at the current proportion vector, widen each
coordinate downward by its confidence radius, and pull the action with the
smallest widened value.  The update p_{t+1} = p_t + (e_a - p_t)/(t+1) is
implicit in the occupation bookkeeping, so a policy only ever picks the
next action.

Baselines (uniform, fixed allocation, oracle gradient, scalar bandit on
raw means) and two wrappers (variance pre-sampling with occupancy floors,
block restarts of the estimator state) share the same select/observe
interface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .feedback import (
    DeviationSpec,
    FeedbackState,
    deviation,
    gradient_estimate,
    route_and_update,
)
from .losses import LossModel, gradient_from_params, loss_gradient, sensitivity
from .simplex import OccupationState, check_simplex

TIE_LOWEST = "lowest_index"
TIE_SEEDED = "seeded_random"

UCB_FW = "ucb_fw"
ORACLE_FW = "oracle_fw"
LCB_BANDIT = "lcb_bandit"
UNIFORM = "uniform"
FIXED_ALLOCATION = "fixed_allocation"
PRESAMPLED_UCB_FW = "presampled_ucb_fw"
DOUBLING_UCB_FW = "doubling_ucb_fw"

POLICY_KINDS = (
    UCB_FW,
    ORACLE_FW,
    LCB_BANDIT,
    UNIFORM,
    FIXED_ALLOCATION,
    PRESAMPLED_UCB_FW,
    DOUBLING_UCB_FW,
)

_POLICY_STREAM_TAG = 1 << 31


@dataclass(frozen=True)
class PresampleConfig:
    """Phase-1 setup for the pre-sampled policy.

    Either `brackets` gives known per-arm standard-deviation ranges, or the
    policy estimates them by running the variance stopping rule per arm on
    squared centered draws scaled into [0, 1] by `variance_cap`.
    """

    brackets: tuple[tuple[float, float], ...] | None = None
    delta: float = 0.1
    variance_cap: float = 8.0
    horizon: int = 10_000
    max_rounds_per_arm: int | None = None

    def __post_init__(self):
        if self.brackets is not None:
            for i, (lo, hi) in enumerate(self.brackets):
                if not 0.0 <= lo <= hi:
                    raise ValueError(f"bracket {i} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.variance_cap <= 0.0:
            raise ValueError(f"variance cap must be positive, got {self.variance_cap}")
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")


@dataclass(frozen=True)
class PolicySpec:
    """Policy kind plus its knobs; the harness builds policy instances from it."""

    kind: str = UCB_FW
    deviation: DeviationSpec = DeviationSpec.standard()
    tie_break: str = TIE_LOWEST
    weights: tuple[float, ...] | None = None
    presample: PresampleConfig | None = None
    doubling_beta: float = 0.5

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.tie_break not in (TIE_LOWEST, TIE_SEEDED):
            raise ValueError(f"unknown tie break {self.tie_break!r}")
        if self.kind == FIXED_ALLOCATION:
            if self.weights is None:
                raise ValueError("fixed allocation needs weights")
            check_simplex(self.weights)
        if self.kind == PRESAMPLED_UCB_FW and self.presample is None:
            raise ValueError("presampled policy needs a presample config")
        if not 0.0 < self.doubling_beta <= 0.5:
            raise ValueError(f"doubling beta must be in (0, 1/2], got {self.doubling_beta}")


def argmin_tie_break(values: Sequence[float], tie_break: str = TIE_LOWEST, rng=None) -> int:
    best = min(values)
    if tie_break == TIE_LOWEST:
        for i, v in enumerate(values):
            if v == best:
                return i
    ties = [i for i, v in enumerate(values) if v == best]
    if len(ties) == 1:
        return ties[0]
    if rng is None:
        raise ValueError("seeded_random tie break needs an rng")
    return int(ties[int(rng.integers(len(ties)))])


def _cold_start(fb: FeedbackState, occ: OccupationState) -> int | None:
    """Forced exploration: round robin for the first K rounds, then any
    still-unobserved coefficient (its radius is infinite) by lowest index."""
    k = len(fb.obs_counts)
    if occ.t < k:
        return occ.t
    for i, n in enumerate(fb.obs_counts):
        if n == 0:
            return i
    return None


def ucb_fw_select(
    fb: FeedbackState,
    occ: OccupationState,
    model: LossModel,
    tie_break: str = TIE_LOWEST,
    rng=None,
) -> int:
    """Pull the action minimizing (gradient estimate - deviation radius)."""
    forced = _cold_start(fb, occ)
    if forced is not None:
        return forced
    ghat, radii = gradient_estimate(fb, model, occ.proportions())
    scores = [g - r for g, r in zip(ghat, radii)]
    return argmin_tie_break(scores, tie_break, rng)


def lcb_bandit_select(
    fb: FeedbackState,
    occ: OccupationState,
    tie_break: str = TIE_LOWEST,
    rng=None,
) -> int:
    """Scalar-bandit selection on raw running means (no loss model)."""
    forced = _cold_start(fb, occ)
    if forced is not None:
        return forced
    spec = fb.deviation_spec
    t = fb.rounds()
    delta = spec.delta_at(t)
    scores = [
        m - deviation(spec, t, n, delta)
        for m, n in zip(fb.means, fb.obs_counts)
    ]
    return argmin_tie_break(scores, tie_break, rng)


def oracle_fw_select(model: LossModel, p: Sequence[float]) -> int:
    """Exact Frank-Wolfe direction: the smallest true gradient coordinate."""
    return argmin_tie_break(loss_gradient(model, p))


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step optimality diagnostics against the true gradient at p."""

    chosen: int
    oracle_action: int
    epsilon: float
    fw_gap: float


def epsilon_diagnostic(model: LossModel, p: Sequence[float], chosen: int) -> StepDiagnostics:
    """Selection suboptimality eps = grad[chosen] - grad[oracle] >= 0 and the
    Frank-Wolfe gap grad.(p - e_oracle) at the pre-action point p."""
    g = loss_gradient(model, p)
    star = argmin_tie_break(g)
    gap = sum(gi * pi for gi, pi in zip(g, p)) - g[star]
    return StepDiagnostics(
        chosen=chosen, oracle_action=star, epsilon=g[chosen] - g[star], fw_gap=gap
    )


class UcbFwPolicy:
    """Stateful wrapper around ucb_fw_select with an inlined fast path."""

    def __init__(self, model: LossModel, fb: FeedbackState, tie_break: str = TIE_LOWEST, rng=None):
        self.model = model
        self.fb = fb
        self.tie_break = tie_break
        self.rng = rng
        self._fast = tie_break == TIE_LOWEST

    def select(self, occ: OccupationState) -> int:
        fb = self.fb
        if not self._fast:
            return ucb_fw_select(fb, occ, self.model, self.tie_break, self.rng)
        counts = fb.obs_counts
        k = len(counts)
        t = occ.t
        if t < k:
            return t
        for i in range(k):
            if counts[i] == 0:
                return i
        spec = fb.deviation_spec
        n_rounds = fb.rounds()
        delta = spec.delta_at(n_rounds)
        base = spec.scale * math.log(n_rounds / delta)
        p = occ.proportions()
        ghat = gradient_from_params(self.model, fb.estimates(), p)
        sens = sensitivity(self.model, p)
        sqrt = math.sqrt
        half = spec.exponent == 0.5
        best = 0
        best_u = math.inf
        for i in range(k):
            x = base / counts[i]
            r = sqrt(x) if half else x**spec.exponent
            if sens is not None:
                r = sens[i] * r
            u = ghat[i] - r
            if u < best_u:
                best_u = u
                best = i
        return best

    def observe(self, action: int, obs: float) -> None:
        route_and_update(self.fb, action, obs)

    def reset_estimator(self) -> None:
        self.fb.reset()


class LcbBanditPolicy:
    def __init__(self, fb: FeedbackState, tie_break: str = TIE_LOWEST, rng=None):
        self.fb = fb
        self.tie_break = tie_break
        self.rng = rng

    def select(self, occ: OccupationState) -> int:
        return lcb_bandit_select(self.fb, occ, self.tie_break, self.rng)

    def observe(self, action: int, obs: float) -> None:
        route_and_update(self.fb, action, obs)


class OracleFwPolicy:
    """Noise-free Frank-Wolfe on the true gradient, round robin to start."""

    def __init__(self, model: LossModel):
        self.model = model

    def select(self, occ: OccupationState) -> int:
        if occ.t < occ.num_actions:
            return occ.t
        return oracle_fw_select(self.model, occ.proportions())

    def observe(self, action: int, obs: float) -> None:
        pass


class UniformPolicy:
    """Independent uniform action each round from the policy's own stream."""

    CHUNK = 4096

    def __init__(self, num_actions: int, trial_seed: int):
        self.num_actions = num_actions
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((int(trial_seed), _POLICY_STREAM_TAG)))
        )
        self._buf: list[int] = []
        self._pos = 0

    def select(self, occ: OccupationState) -> int:
        if self._pos >= len(self._buf):
            self._buf = self._gen.integers(0, self.num_actions, size=self.CHUNK).tolist()
            self._pos = 0
        a = self._buf[self._pos]
        self._pos += 1
        return a

    def observe(self, action: int, obs: float) -> None:
        pass


class FixedAllocationPolicy:
    """Deterministic tracking of target weights by largest deficit."""

    def __init__(self, weights: Sequence[float]):
        self.weights = tuple(check_simplex(tuple(float(w) for w in weights)))

    def select(self, occ: OccupationState) -> int:
        t_next = occ.t + 1
        counts = occ.counts
        best = 0
        best_d = -math.inf
        for i, w in enumerate(self.weights):
            d = w * t_next - counts[i]
            if d > best_d:
                best_d = d
                best = i
        return best

    def observe(self, action: int, obs: float) -> None:
        pass


@dataclass(frozen=True)
class StoppingResult:
    tau: int
    mean: float
    triggered: bool


def variance_stopping_tau(values: Iterable[float], horizon: int, delta: float) -> StoppingResult:
    """First time the running mean of a [0, 1] stream clears the anytime
    threshold sqrt(2*log(2*horizon/delta)/s); the triggered mean brackets the
    true mean within a factor [1/2, 3/2] with probability >= 1 - delta."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    log_term = 2.0 * math.log(2.0 * horizon / delta)
    total = 0.0
    s = 0
    for z in values:
        if not 0.0 <= z <= 1.0:
            raise ValueError(f"stream value out of [0, 1]: {z!r}")
        s += 1
        total += z
        mean = total / s
        if mean >= math.sqrt(log_term / s):
            return StoppingResult(tau=s, mean=mean, triggered=True)
        if s >= horizon:
            return StoppingResult(tau=s, mean=mean, triggered=False)
    raise ValueError(f"stream ended after {s} values, before the horizon {horizon}")


def doubling_boundaries(beta: float, t_max: int) -> list[int]:
    """Block end times ceil(exp(r^j)) with r = 1/(1-beta), up to t_max."""
    if not 0.0 < beta <= 0.5:
        raise ValueError(f"beta must be in (0, 1/2], got {beta}")
    r = 1.0 / (1.0 - beta)
    out: list[int] = []
    j = 1
    while True:
        b = math.ceil(math.exp(r**j))
        if b > t_max:
            return out
        if not out or b > out[-1]:
            out.append(b)
        j += 1


class DoublingUcbFwPolicy:
    """Restart the estimator state at exponentially spaced block ends.

    Occupation counts are never reset; only the feedback state forgets, so
    each block re-explores with fresh confidence radii.
    """

    def __init__(self, inner: UcbFwPolicy, beta: float, t_max: int):
        self.inner = inner
        self.beta = beta
        self.boundaries = doubling_boundaries(beta, t_max)
        self._next_idx = 0
        self.block = 0

    def select(self, occ: OccupationState) -> int:
        if self._next_idx < len(self.boundaries) and occ.t >= self.boundaries[self._next_idx]:
            self.inner.reset_estimator()
            self._next_idx += 1
            self.block += 1
        return self.inner.select(occ)

    def observe(self, action: int, obs: float) -> None:
        self.inner.observe(action, obs)


class PresampledUcbFwPolicy:
    """Variance pre-sampling followed by floor-constrained plug-in selection.

    Phase 1 estimates per-arm deviation brackets (either given, or found by
    the stopping rule on squared centered draws scaled into [0, 1]), then
    keeps pulling the most deficient arm until every occupancy clears its
    floor p_floor_i = sigma_lo_i / sum_j sigma_hi_j.  Phase 2 enforces the
    floors and otherwise defers to the plug-in selection.  `phase1_end_t`
    records when the floors first all held.
    """

    def __init__(self, inner: UcbFwPolicy, config: PresampleConfig, centers: Sequence[float]):
        self.inner = inner
        self.config = config
        self.centers = tuple(float(c) for c in centers)
        k = len(self.inner.fb.obs_counts)
        self.num_actions = k
        self.floors: list[float] | None = None
        self.brackets_hat: list[tuple[float, float]] = []
        self.phase1_end_t: int | None = None
        self.stopping_triggered: list[bool] = []
        if config.brackets is not None:
            if len(config.brackets) != k:
                raise ValueError(
                    f"need one bracket per arm: {len(config.brackets)} vs {k}"
                )
            self.brackets_hat = [tuple(b) for b in config.brackets]
            self.stopping_triggered = [True] * k
            self._set_floors()
            self._phase = "track"
            self.phase1_end_t = 0
        else:
            self._phase = "estimate"
            self._arm = 0
            self._z_count = 0
            self._z_total = 0.0
            self._log_term = 2.0 * math.log(2.0 * config.horizon / config.delta)
            self._budget = config.max_rounds_per_arm or config.horizon

    def _set_floors(self) -> None:
        hi_sum = sum(hi for _, hi in self.brackets_hat)
        if hi_sum <= 0.0:
            self.floors = [0.0] * self.num_actions
        else:
            self.floors = [lo / hi_sum for lo, _ in self.brackets_hat]

    def _deficit_arm(self, occ: OccupationState) -> int | None:
        t_next = occ.t + 1
        counts = occ.counts
        best = None
        best_d = 0.0
        for i, f in enumerate(self.floors):
            d = f * t_next - counts[i]
            if d > best_d:
                best_d = d
                best = i
        return best

    def select(self, occ: OccupationState) -> int:
        if self._phase == "estimate":
            return self._arm
        if self._phase == "catchup":
            arm = self._deficit_arm(occ)
            if arm is None:
                self.phase1_end_t = occ.t
                self._phase = "track"
            else:
                return arm
        arm = self._deficit_arm(occ)
        if arm is not None:
            return arm
        return self.inner.select(occ)

    def observe(self, action: int, obs: float) -> None:
        self.inner.observe(action, obs)
        if self._phase != "estimate":
            return
        d = obs - self.centers[action]
        z = min(1.0, d * d / self.config.variance_cap)
        self._z_count += 1
        self._z_total += z
        mean = self._z_total / self._z_count
        triggered = mean >= math.sqrt(self._log_term / self._z_count)
        if triggered or self._z_count >= self._budget:
            cap = self.config.variance_cap
            self.brackets_hat.append(
                (math.sqrt(mean * cap / 2.0), math.sqrt(3.0 * mean * cap / 2.0))
            )
            self.stopping_triggered.append(triggered)
            self._arm += 1
            self._z_count = 0
            self._z_total = 0.0
            if self._arm >= self.num_actions:
                self._set_floors()
                self._phase = "catchup"
