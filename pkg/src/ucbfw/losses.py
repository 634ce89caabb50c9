"""Convex loss families defined on the probability simplex.

Each family exposes the loss value, the exact gradient, the gradient as a
function of estimated parameters (same formula, plugged-in estimates), and
a closed-form or exactly-solved minimizer with the quantities the rate
bounds need (minimum coordinate, per-vertex gaps, curvature constants).

Families whose gradient blows up at the boundary (inverse-proportion and
log-utility losses) carry infinite curvature constants unless an interior
floor box is supplied; `interior_smoothness` computes the restricted
constant over such a box.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .simplex import SIMPLEX_SUM_TOL

LINEAR = "linear"
QUADRATIC = "quadratic"
EXP_DESIGN = "exp_design"
COBB_DOUGLAS = "cobb_douglas"
MARKOWITZ = "markowitz"
SEPARABLE = "separable"

KINDS = (LINEAR, QUADRATIC, EXP_DESIGN, COBB_DOUGLAS, MARKOWITZ, SEPARABLE)


@dataclass(frozen=True)
class PiecewiseLinear:
    """Monotone piecewise-linear function given by breakpoints (xs, ys).

    Evaluation clamps to the end values outside the table range.
    """

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or len(self.xs) < 2:
            raise ValueError("piecewise-linear table needs matching xs/ys with >= 2 points")
        if any(b <= a for a, b in zip(self.xs, self.xs[1:])):
            raise ValueError("piecewise-linear xs must be strictly increasing")
        diffs = [b - a for a, b in zip(self.ys, self.ys[1:])]
        if not (all(d >= 0 for d in diffs) or all(d <= 0 for d in diffs)):
            raise ValueError("piecewise-linear ys must be monotone")

    def __call__(self, x: float) -> float:
        return float(np.interp(x, self.xs, self.ys))

    def lipschitz(self) -> float:
        return max(
            abs(y1 - y0) / (x1 - x0)
            for x0, x1, y0, y1 in zip(self.xs, self.xs[1:], self.ys, self.ys[1:])
        )


@dataclass(frozen=True)
class LossModel:
    """A loss family instance plus the constants the bound formulas use.

    `params` is the coordinate of the family that bandit feedback estimates
    (mean returns, centers, per-action variances, utility weights).  The
    curvature constant `smoothness_C` and the sup norms are over the whole
    simplex when finite there, otherwise over the interior floor box when
    one was given, otherwise infinite.
    """

    kind: str
    params: tuple[float, ...]
    covariance: tuple[tuple[float, ...], ...] | None = None
    risk_weight: float = 0.0
    tables: tuple[PiecewiseLinear, ...] | None = None
    centers: tuple[float, ...] | None = None
    interior_floor: tuple[float, ...] | None = None
    strong_convexity: float = 0.0
    smoothness_C: float = 0.0
    sup_loss: float = 0.0
    sup_grad: float = 0.0

    @property
    def num_actions(self) -> int:
        return len(self.params)


def _as_floats(values: Sequence[float], name: str) -> tuple[float, ...]:
    out = tuple(float(v) for v in values)
    if len(out) < 2:
        raise ValueError(f"{name} needs at least 2 coordinates")
    if any(not math.isfinite(v) for v in out):
        raise ValueError(f"{name} has a non-finite entry: {out}")
    return out


def _check_floor(floor: Sequence[float], k: int) -> tuple[float, ...]:
    f = tuple(float(v) for v in floor)
    if len(f) != k:
        raise ValueError(f"interior floor needs {k} coordinates, got {len(f)}")
    for i, v in enumerate(f):
        if not 0.0 < v < 1.0:
            raise ValueError(f"interior floor coordinate {i} must be in (0, 1), got {v}")
    if sum(f) > 1.0 + SIMPLEX_SUM_TOL:
        raise ValueError(f"interior floor sums to {sum(f)} > 1, box is empty")
    return f


def linear_loss(mu: Sequence[float]) -> LossModel:
    """L(p) = mu . p with gradient mu; minimized at a cheapest vertex."""
    m = _as_floats(mu, "mu")
    bound = max(abs(v) for v in m)
    return LossModel(kind=LINEAR, params=m, sup_loss=bound, sup_grad=bound)


def quadratic_loss(theta: Sequence[float]) -> LossModel:
    """L(p) = 0.5 * ||p - theta||^2 with theta on the simplex; gradient p - theta."""
    th = _as_floats(theta, "theta")
    for i, v in enumerate(th):
        if v < 0.0:
            raise ValueError(f"theta coordinate {i} is negative: {v}")
    if abs(sum(th) - 1.0) > SIMPLEX_SUM_TOL:
        raise ValueError(f"theta must lie on the simplex, sums to {sum(th)}")
    # max of the convex loss over the simplex is attained at a vertex
    sup_loss = 0.5 * max(
        sum(((1.0 if i == j else 0.0) - th[i]) ** 2 for i in range(len(th)))
        for j in range(len(th))
    )
    sup_grad = max(max(v, 1.0 - v) for v in th)
    return LossModel(
        kind=QUADRATIC,
        params=th,
        strong_convexity=1.0,
        smoothness_C=1.0,
        sup_loss=sup_loss,
        sup_grad=sup_grad,
    )


def exp_design_loss(
    sigma2: Sequence[float],
    centers: Sequence[float] | None = None,
    interior_floor: Sequence[float] | None = None,
) -> LossModel:
    """L(p) = sum_i sigma2_i / p_i, the A-optimal style allocation loss.

    `centers` are the known observation means used when feedback estimates
    sigma2_i from squared centered draws.  Curvature and sup norms are
    finite only over an interior floor box.
    """
    s2 = _as_floats(sigma2, "sigma2")
    for i, v in enumerate(s2):
        if v <= 0.0:
            raise ValueError(f"sigma2 coordinate {i} must be positive, got {v}")
    k = len(s2)
    if centers is None:
        cen = tuple(0.0 for _ in s2)
    else:
        cen = tuple(float(v) for v in centers)
        if len(cen) != k:
            raise ValueError(f"centers needs {k} coordinates, got {len(cen)}")
    floor = _check_floor(interior_floor, k) if interior_floor is not None else None
    if floor is not None:
        smooth = max(2.0 * v / f**3 for v, f in zip(s2, floor))
        sup_loss = sum(v / f for v, f in zip(s2, floor))
        sup_grad = max(v / f**2 for v, f in zip(s2, floor))
    else:
        smooth = sup_loss = sup_grad = math.inf
    return LossModel(
        kind=EXP_DESIGN,
        params=s2,
        centers=cen,
        interior_floor=floor,
        strong_convexity=2.0 * min(s2),
        smoothness_C=smooth,
        sup_loss=sup_loss,
        sup_grad=sup_grad,
    )


def cobb_douglas_loss(
    beta: Sequence[float], interior_floor: Sequence[float] | None = None
) -> LossModel:
    """L(p) = -sum_i beta_i * log(p_i) with beta in (0, 1)^K."""
    b = _as_floats(beta, "beta")
    for i, v in enumerate(b):
        if not 0.0 < v < 1.0:
            raise ValueError(f"beta coordinate {i} must be in (0, 1), got {v}")
    floor = _check_floor(interior_floor, len(b)) if interior_floor is not None else None
    if floor is not None:
        smooth = max(v / f**2 for v, f in zip(b, floor))
        sup_loss = -sum(v * math.log(f) for v, f in zip(b, floor))
        sup_grad = max(v / f for v, f in zip(b, floor))
    else:
        smooth = sup_loss = sup_grad = math.inf
    return LossModel(
        kind=COBB_DOUGLAS,
        params=b,
        interior_floor=floor,
        strong_convexity=min(b),
        smoothness_C=smooth,
        sup_loss=sup_loss,
        sup_grad=sup_grad,
    )


def markowitz_loss(
    covariance: Sequence[Sequence[float]], risk_weight: float, mu: Sequence[float]
) -> LossModel:
    """L(p) = p' Sigma p - lambda * mu . p (variance-penalized mean return)."""
    m = _as_floats(mu, "mu")
    k = len(m)
    sig = np.asarray(covariance, dtype=float)
    if sig.shape != (k, k):
        raise ValueError(f"covariance must be {k}x{k}, got {sig.shape}")
    if not np.allclose(sig, sig.T, atol=1e-10):
        raise ValueError("covariance must be symmetric")
    eigs = np.linalg.eigvalsh(sig)
    if eigs[0] < -1e-10:
        raise ValueError(f"covariance must be positive semidefinite, min eigenvalue {eigs[0]}")
    lam = float(risk_weight)
    if lam < 0.0:
        raise ValueError(f"risk weight must be nonnegative, got {lam}")
    # both the loss and each gradient coordinate are convex in p, so sup
    # norms over the simplex are attained at vertices
    vertex_losses = [sig[j, j] - lam * m[j] for j in range(k)]
    grad_at_vertex = [max(abs(2.0 * sig[i, j] - lam * m[i]) for j in range(k)) for i in range(k)]
    info_loss = _simplex_qp(sig, lam, np.asarray(m))
    sup_loss = max(max(abs(v) for v in vertex_losses), abs(info_loss[1]))
    return LossModel(
        kind=MARKOWITZ,
        params=m,
        covariance=tuple(tuple(float(x) for x in row) for row in sig),
        risk_weight=lam,
        strong_convexity=2.0 * max(float(eigs[0]), 0.0),
        smoothness_C=2.0 * float(eigs[-1]),
        sup_loss=sup_loss,
        sup_grad=max(grad_at_vertex),
    )


def separable_loss(mu: Sequence[float], tables: Sequence) -> LossModel:
    """L(p) = sum_i f_i(mu_i) * p_i with tabulated monotone f_i.

    Each table is a PiecewiseLinear or a raw (xs, ys) pair.
    """
    m = _as_floats(mu, "mu")
    tabs = tuple(
        t if isinstance(t, PiecewiseLinear) else PiecewiseLinear(tuple(t[0]), tuple(t[1]))
        for t in tables
    )
    if len(tabs) != len(m):
        raise ValueError(f"need one table per coordinate: {len(tabs)} vs {len(m)}")
    bound = max(abs(t(v)) for t, v in zip(tabs, m))
    return LossModel(kind=SEPARABLE, params=m, tables=tabs, sup_loss=bound, sup_grad=bound)


def _require_interior(p: Sequence[float], kind: str) -> None:
    for i, v in enumerate(p):
        if v <= 0.0:
            raise ValueError(f"{kind} loss needs p strictly positive, coordinate {i} is {v}")


def loss_value(model: LossModel, p: Sequence[float]) -> float:
    kind = model.kind
    if kind == LINEAR:
        return sum(m * x for m, x in zip(model.params, p))
    if kind == QUADRATIC:
        return 0.5 * sum((x - th) ** 2 for x, th in zip(p, model.params))
    if kind == EXP_DESIGN:
        _require_interior(p, kind)
        return sum(s / x for s, x in zip(model.params, p))
    if kind == COBB_DOUGLAS:
        _require_interior(p, kind)
        return -sum(b * math.log(x) for b, x in zip(model.params, p))
    if kind == MARKOWITZ:
        sig = model.covariance
        quad = sum(x * sum(row[j] * p[j] for j in range(len(p))) for x, row in zip(p, sig))
        return quad - model.risk_weight * sum(m * x for m, x in zip(model.params, p))
    if kind == SEPARABLE:
        return sum(t(m) * x for t, m, x in zip(model.tables, model.params, p))
    raise ValueError(f"unknown loss kind {kind!r}")


def gradient_from_params(
    model: LossModel, params: Sequence[float], p: Sequence[float]
) -> list[float]:
    """Gradient formula of the family evaluated with plugged-in `params`."""
    kind = model.kind
    if kind == LINEAR:
        return [float(v) for v in params]
    if kind == QUADRATIC:
        return [x - th for x, th in zip(p, params)]
    if kind == EXP_DESIGN:
        _require_interior(p, kind)
        return [-s / (x * x) for s, x in zip(params, p)]
    if kind == COBB_DOUGLAS:
        _require_interior(p, kind)
        return [-b / x for b, x in zip(params, p)]
    if kind == MARKOWITZ:
        sig = model.covariance
        lam = model.risk_weight
        k = len(p)
        return [2.0 * sum(sig[i][j] * p[j] for j in range(k)) - lam * params[i] for i in range(k)]
    if kind == SEPARABLE:
        return [t(m) for t, m in zip(model.tables, params)]
    raise ValueError(f"unknown loss kind {kind!r}")


def loss_gradient(model: LossModel, p: Sequence[float]) -> list[float]:
    return gradient_from_params(model, model.params, p)


def sensitivity(model: LossModel, p: Sequence[float]) -> list[float] | None:
    """Per-coordinate factor turning a parameter deviation into a gradient deviation.

    Returns None when every factor is 1 (mean-parameter families).
    """
    kind = model.kind
    if kind in (LINEAR, QUADRATIC):
        return None
    if kind == MARKOWITZ:
        lam = model.risk_weight
        if lam == 1.0:
            return None
        return [lam] * len(p)
    if kind == EXP_DESIGN:
        return [1.0 / (x * x) for x in p]
    if kind == COBB_DOUGLAS:
        return [1.0 / x for x in p]
    if kind == SEPARABLE:
        return [t.lipschitz() for t in model.tables]
    raise ValueError(f"unknown loss kind {kind!r}")


@dataclass(frozen=True)
class MinimizerInfo:
    """Minimizer of a loss over the simplex and bound-relevant derived values.

    `eta` is the smallest coordinate of the reported minimizer.  `gaps` are
    the per-coordinate gradient gaps at a vertex minimizer (None when the
    minimizer is not a vertex); `gap_min` is the smallest positive gap and
    `rho` the gap-based degradation factor 1 + C*K/gap_min.
    """

    p_star: tuple[float, ...]
    loss_star: float
    eta: float
    unique: bool
    gaps: tuple[float, ...] | None = None
    gap_min: float | None = None
    rho: float | None = None


def _vertex_info(model: LossModel, costs: Sequence[float]) -> MinimizerInfo:
    k = len(costs)
    low = min(costs)
    winners = [i for i, c in enumerate(costs) if c <= low + 1e-12]
    star = winners[0]
    p = tuple(1.0 if i == star else 0.0 for i in range(k))
    gaps = tuple(c - low for c in costs)
    positive = [g for i, g in enumerate(gaps) if i != star and g > 1e-12]
    gap_min = min(positive) if len(positive) == k - 1 else None
    rho = None
    if gap_min is not None:
        rho = 1.0 + model.smoothness_C * k / gap_min
    return MinimizerInfo(
        p_star=p,
        loss_star=low,
        eta=0.0,
        unique=len(winners) == 1,
        gaps=gaps,
        gap_min=gap_min,
        rho=rho,
    )


def _simplex_qp(sig: np.ndarray, lam: float, mu: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimize p'Sig p - lam*mu.p over the simplex by active-set enumeration.

    Every support set is solved as an equality-constrained QP and kept when
    it is feasible and satisfies the KKT sign conditions; the best candidate
    wins.  Exact for the small K this library targets.
    """
    k = len(mu)
    best_loss = math.inf
    best_p: np.ndarray | None = None
    for mask in range(1, 1 << k):
        support = [i for i in range(k) if mask >> i & 1]
        m = len(support)
        a = np.zeros((m + 1, m + 1))
        a[:m, :m] = 2.0 * sig[np.ix_(support, support)]
        a[:m, m] = 1.0
        a[m, :m] = 1.0
        b = np.zeros(m + 1)
        b[:m] = lam * mu[support]
        b[m] = 1.0
        try:
            x = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            x, *_ = np.linalg.lstsq(a, b, rcond=None)
            if not np.allclose(a @ x, b, atol=1e-9):
                continue
        p_sub = x[:m]
        if np.any(p_sub < -1e-10):
            continue
        p = np.zeros(k)
        p[support] = np.clip(p_sub, 0.0, None)
        p /= p.sum()
        grad = 2.0 * sig @ p - lam * mu
        nu = -float(np.mean(grad[support]))
        if any(grad[j] + nu < -1e-8 for j in range(k) if j not in support):
            continue
        loss = float(p @ sig @ p - lam * mu @ p)
        if loss < best_loss - 1e-14:
            best_loss = loss
            best_p = p
    if best_p is None:
        raise RuntimeError("active-set enumeration found no KKT point")
    return best_p, best_loss


def minimizer(model: LossModel) -> MinimizerInfo:
    kind = model.kind
    if kind == LINEAR:
        return _vertex_info(model, model.params)
    if kind == SEPARABLE:
        costs = [t(m) for t, m in zip(model.tables, model.params)]
        return _vertex_info(model, costs)
    if kind == QUADRATIC:
        th = model.params
        # the gradient vanishes at p* = theta, so even when theta is a
        # vertex the per-coordinate gaps are all zero and gap-based
        # quantities stay undefined
        is_vertex = any(abs(v - 1.0) <= 1e-12 for v in th)
        gaps = tuple(0.0 for _ in th) if is_vertex else None
        return MinimizerInfo(
            p_star=th, loss_star=0.0, eta=min(th), unique=True, gaps=gaps
        )
    if kind == EXP_DESIGN:
        sig = [math.sqrt(v) for v in model.params]
        total = sum(sig)
        p = tuple(s / total for s in sig)
        return MinimizerInfo(p_star=p, loss_star=total * total, eta=min(p), unique=True)
    if kind == COBB_DOUGLAS:
        b = model.params
        total = sum(b)
        p = tuple(v / total for v in b)
        loss = -sum(v * math.log(x) for v, x in zip(b, p))
        return MinimizerInfo(p_star=p, loss_star=loss, eta=min(p), unique=True)
    if kind == MARKOWITZ:
        sig = np.asarray(model.covariance)
        mu = np.asarray(model.params)
        p, loss = _simplex_qp(sig, model.risk_weight, mu)
        eigs = np.linalg.eigvalsh(sig)
        unique = bool(eigs[0] > 1e-12)
        info = MinimizerInfo(
            p_star=tuple(float(v) for v in p),
            loss_star=loss,
            eta=float(p.min()),
            unique=unique,
        )
        vertex = [i for i, v in enumerate(p) if abs(v - 1.0) <= 1e-10]
        if vertex:
            grad = 2.0 * sig @ p - model.risk_weight * mu
            star = vertex[0]
            gaps = tuple(float(g - grad[star]) for g in grad)
            positive = [g for i, g in enumerate(gaps) if i != star and g > 1e-12]
            gap_min = min(positive) if len(positive) == len(gaps) - 1 else None
            rho = None if gap_min is None else 1.0 + model.smoothness_C * len(gaps) / gap_min
            info = MinimizerInfo(
                p_star=info.p_star, loss_star=loss, eta=info.eta, unique=unique,
                gaps=gaps, gap_min=gap_min, rho=rho,
            )
        return info
    raise ValueError(f"unknown loss kind {kind!r}")


def interior_smoothness(model: LossModel, lower_bounds: Sequence[float]) -> float:
    """Curvature constant restricted to the box {p : p_i >= lower_bounds_i}."""
    floor = _check_floor(lower_bounds, model.num_actions)
    if model.kind == EXP_DESIGN:
        return max(2.0 * s / f**3 for s, f in zip(model.params, floor))
    if model.kind == COBB_DOUGLAS:
        return max(b / f**2 for b, f in zip(model.params, floor))
    return model.smoothness_C


def hard_quadratic_family(
    num_actions: int, nu: float, horizon: int, signs: Sequence[int]
) -> LossModel:
    """Paired-perturbation quadratic instance used for worst-case studies.

    Centers sit at 1/K with paired offsets +-sqrt(nu*K/horizon): coordinate
    2i gets +signs[i]*offset and coordinate 2i+1 the opposite, so the center
    stays on the simplex.  The regime conditions on nu and the horizon are
    advisory and only warn.
    """
    if num_actions < 2 or num_actions % 2 != 0:
        raise ValueError(f"paired construction needs even K >= 2, got {num_actions}")
    sgn = [int(s) for s in signs]
    if len(sgn) != num_actions // 2 or any(s not in (-1, 1) for s in sgn):
        raise ValueError("signs must be +-1 with one entry per coordinate pair")
    if not 0.0 < nu < 1.0 / 29.0:
        warnings.warn(f"nu={nu} outside the analyzed range (0, 1/29)", stacklevel=2)
    if horizon <= 4.0 * nu**2 * num_actions**4:
        warnings.warn(
            f"horizon {horizon} <= 4*nu^2*K^4 = {4.0 * nu**2 * num_actions**4}, "
            "outside the analyzed regime",
            stacklevel=2,
        )
    offset = math.sqrt(nu * num_actions / horizon)
    base = 1.0 / num_actions
    if offset > base:
        raise ValueError(
            f"offset {offset} exceeds 1/K = {base}; center would leave the simplex"
        )
    theta = []
    for i, s in enumerate(sgn):
        theta.append(base + s * offset)
        theta.append(base - s * offset)
    return quadratic_loss(theta)
