"""
劣臨界最大化と爆発解析のモジュール

制約 ∫K v^{p+1} = 1 のもとで ∫|Pv|^{2n/(n-2)} を射影勾配法で最大化し、
Euler–Lagrange 残差、指数の連続変化、爆発点まわりの再スケールを扱う。
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import optimize

from .config import SolverConfig
from .errors import (
    DegenerateFieldError,
    DivergedError,
    ExponentOutOfRangeError,
    FitFailureError,
    InvalidParametersError,
    PoissonBallError,
)
from .functional import ScalarField, constant_field_value, exponent_range, interior_exponent
from .geometry import BoundaryField, SphereGrid, rotation_to, stereographic_lift
from .kernel import PoissonOperator

RESIDUAL_EPS = 1e-14
# 初期値が既に停留点とみなせる残差
STALL_RESIDUAL = 1e-6
CHART_RADIUS = 4.0
FIT_RADIUS = 2.0
CONCENTRATION_SCALE = 1e2
SCALE_BOUNDS = (1e-3, 1e3)


@dataclass
class Solution:
    """最大化の結果"""

    v: BoundaryField
    value: float
    el_residual: float
    multiplier: float
    iterations: int
    converged: bool
    p: float
    trace: List[float] = field(default_factory=list)
    residual_trace: List[float] = field(default_factory=list)
    seed: Optional[int] = None

    @property
    def concentration(self) -> float:
        """集中の指標 max v / median v"""
        values = self.v.values
        median = float(np.median(values))
        return float(np.max(values)) / median if median > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "el_residual": self.el_residual,
            "multiplier": self.multiplier,
            "iterations": self.iterations,
            "converged": self.converged,
            "p": self.p,
            "concentration": self.concentration,
            "seed": self.seed,
        }


def symmetrize(values: np.ndarray, grid: SphereGrid) -> np.ndarray:
    """対蹠平均 (v + v∘(-id))/2"""
    return 0.5 * (values + values[grid.antipode])


def _constraint_weights(op: PoissonOperator, K: ScalarField) -> np.ndarray:
    K.validate(op.source)
    return K.values(op.source.nodes)


def _normalize(values: np.ndarray, op: PoissonOperator, weights: np.ndarray, p: float) -> np.ndarray:
    mass = op.source.integrate(weights * np.abs(values) ** (p + 1))
    if not np.isfinite(mass) or mass < RESIDUAL_EPS:
        raise DegenerateFieldError("正規化できない場になりました (制約積分がほぼゼロ)")
    return values * mass ** (-1.0 / (p + 1))


def _objective(op: PoissonOperator, values: np.ndarray, q: float):
    extension = op.apply(values)
    return op.target.integrate(np.abs(extension) ** q), extension


def _euler_lagrange_rhs(op: PoissonOperator, extension: np.ndarray, q: float) -> np.ndarray:
    """P*(|Pv|^{q-2} Pv)"""
    return op.adjoint(np.abs(extension) ** (q - 2) * extension)


def _multiplier(op: PoissonOperator, values: np.ndarray, rhs: np.ndarray, weights: np.ndarray, p: float) -> float:
    top = op.source.integrate(rhs * values)
    bottom = op.source.integrate(weights * np.abs(values) ** (p + 1))
    return top / bottom


def _relative_residual(rhs: np.ndarray, values: np.ndarray, weights: np.ndarray, p: float, multiplier: float) -> float:
    lhs = multiplier * weights * np.abs(values) ** p
    return float(np.max(np.abs(lhs - rhs) / (np.abs(lhs) + RESIDUAL_EPS)))


def el_residual(
    op: PoissonOperator,
    v: Union[BoundaryField, np.ndarray],
    K: ScalarField,
    p: float,
    multiplier: Optional[float] = None,
) -> float:
    """max |λK v^p - P*((Pv)^{q-1})| / (λK v^p + ε)

    multiplier を省略すると ⟨RHS, v⟩/⟨K v^p, v⟩ を用いる。
    """
    values = v.values if isinstance(v, BoundaryField) else np.asarray(v, dtype=float)
    q = interior_exponent(op.n)
    weights = K.values(op.source.nodes)
    rhs = _euler_lagrange_rhs(op, op.apply(values), q)
    if multiplier is None:
        multiplier = _multiplier(op, values, rhs, weights, p)
    return _relative_residual(rhs, values, weights, p, multiplier)


def _check_exponent(n: int, p: float):
    low, high = exponent_range(n)
    if not low <= p < high:
        raise ExponentOutOfRangeError(f"p は [{low:g}, {high:g}) の範囲が必要です: p={p}")


def _ascend(
    op: PoissonOperator,
    weights: np.ndarray,
    cfg: SolverConfig,
    start: np.ndarray,
) -> Solution:
    """1 つの初期値からの射影勾配上昇"""
    grid = op.source
    p = cfg.p
    q = interior_exponent(op.n)

    def project(values: np.ndarray) -> np.ndarray:
        if cfg.project_positive:
            values = np.maximum(values, 0.0)
        if cfg.symmetrize:
            values = symmetrize(values, grid)
        return _normalize(values, op, weights, p)

    values = project(start)
    value, extension = _objective(op, values, q)
    trace = [value]
    residuals: List[float] = []
    step = cfg.step_size
    accepted_any = False
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iter + 1):
        rhs = _euler_lagrange_rhs(op, extension, q)
        multiplier = _multiplier(op, values, rhs, weights, p)
        residual = _relative_residual(rhs, values, weights, p, multiplier)
        residuals.append(residual)
        if residual <= cfg.residual_tol:
            converged = True
            break

        # 制約面の接方向へ射影した勾配
        direction = q * (rhs - multiplier * weights * np.abs(values) ** p)

        accepted = False
        while step >= cfg.min_step:
            candidate = project(values + step * direction)
            candidate_value, candidate_extension = _objective(op, candidate, q)
            if candidate_value >= value:
                accepted = True
                break
            step *= cfg.backtrack

        if not accepted:
            if not accepted_any and residual > STALL_RESIDUAL:
                raise DivergedError(f"上昇方向が見つかりません (p={p}, 反復 {iterations})")
            logging.debug(f"ステップ幅が下限に達しました: 反復 {iterations}, 残差 {residual:.3e}")
            converged = True
            break

        accepted_any = True
        change = (candidate_value - value) / value
        values, value, extension = candidate, candidate_value, candidate_extension
        trace.append(value)
        step = min(step / cfg.backtrack, cfg.max_step)
        if change < cfg.tol:
            converged = True
            break
    else:
        logging.warning(f"最大反復回数 {cfg.max_iter} に達しました (p={p})")

    rhs = _euler_lagrange_rhs(op, extension, q)
    multiplier = _multiplier(op, values, rhs, weights, p)
    residual = _relative_residual(rhs, values, weights, p, multiplier)
    if len(residuals) < len(trace):
        residuals.append(residual)
    return Solution(
        v=BoundaryField(grid, values),
        value=value,
        el_residual=residual,
        multiplier=multiplier,
        iterations=iterations,
        converged=converged,
        p=p,
        trace=trace,
        residual_trace=residuals,
    )


def random_symmetric_start(grid: SphereGrid, rng: np.random.Generator, perturbation: float) -> np.ndarray:
    """定数 × (1 + ε·Y)、Y は偶な二次式 (max|Y| = 1)"""
    n = grid.n
    A = rng.standard_normal((n, n))
    A = 0.5 * (A + A.T)
    nodes = grid.nodes
    Y = np.einsum("ij,jk,ik->i", nodes, A, nodes) - np.trace(A) / n
    scale = np.max(np.abs(Y))
    if scale > 0:
        Y = Y / scale
    return 1.0 + perturbation * Y


def maximize_subcritical(
    op: PoissonOperator,
    K: ScalarField,
    cfg: SolverConfig,
    v0: Optional[Union[BoundaryField, np.ndarray]] = None,
    seed: int = 0,
) -> Solution:
    """劣臨界問題の最大化

    v0 を与えた場合はそこから 1 回だけ上昇する。省略時は定数と
    cfg.starts - 1 個のランダムな対称摂動から始め、値が最大のものを返す
    (同値なら初期値の番号が小さいものを優先)。
    """
    cfg.validate(op.n)
    weights = _constraint_weights(op, K)

    if v0 is not None:
        start = v0.values if isinstance(v0, BoundaryField) else np.asarray(v0, dtype=float)
        return _ascend(op, weights, cfg, start)

    rng = np.random.default_rng(seed)
    starts = [np.ones(op.source.size)]
    for _ in range(cfg.starts - 1):
        starts.append(random_symmetric_start(op.source, rng, cfg.perturbation))

    best: Optional[Solution] = None
    failures = []
    for index, start in enumerate(starts):
        try:
            result = _ascend(op, weights, cfg, start)
        except (DivergedError, DegenerateFieldError) as e:
            logging.debug(f"初期値 {index} は失敗しました: {e}")
            failures.append(e)
            continue
        result.seed = index
        logging.debug(f"初期値 {index}: 値={result.value:.12g}, 残差={result.el_residual:.3e}")
        if best is None or result.value > best.value:
            best = result

    if best is None:
        raise failures[0]
    logging.info(
        f"最大化完了: p={cfg.p}, 値={best.value:.12g}, 残差={best.el_residual:.3e}, "
        f"反復={best.iterations}"
    )
    return best


@dataclass
class ContinuationStep:
    """連続変化の 1 段 (失敗時は solution が None)"""

    p: float
    solution: Optional[Solution] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.solution is not None

    def to_dict(self) -> dict:
        row = {"p": self.p, "error": self.error}
        if self.solution is not None:
            row.update(self.solution.to_dict())
        return row


def continuation(
    op: PoissonOperator,
    K: ScalarField,
    p_schedule: Sequence[float],
    cfg: SolverConfig,
    seed: int = 0,
) -> List[ContinuationStep]:
    """p を臨界値へ向けて順に下げ、前段の解を初期値にする"""
    schedule = [float(p) for p in p_schedule]
    if not schedule:
        raise InvalidParametersError("指数の列が空です")
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise InvalidParametersError(f"指数の列は狭義単調減少が必要です: {schedule}")
    for p in schedule:
        _check_exponent(op.n, p)

    steps: List[ContinuationStep] = []
    previous: Optional[Solution] = None
    for p in schedule:
        step_cfg = cfg.with_exponent(p)
        try:
            if previous is None:
                solution = maximize_subcritical(op, K, step_cfg, seed=seed)
            else:
                solution = maximize_subcritical(op, K, step_cfg, v0=previous.v)
        except PoissonBallError as e:
            logging.warning(f"p={p} で失敗しました: {e}")
            steps.append(ContinuationStep(p=p, error=str(e)))
            continue
        logging.info(f"p={p}: 値={solution.value:.10g}, 集中度={solution.concentration:.4g}")
        steps.append(ContinuationStep(p=p, solution=solution))
        previous = solution
    return steps


@dataclass
class ChartProfile:
    """爆発点まわりで再スケールした分布 φ(x') = u(c x')/u(0)"""

    points: np.ndarray
    values: np.ndarray
    scale_factor: float
    peak: float
    center_is_peak: bool = True

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)


def chart_points(n: int, radius: float = CHART_RADIUS) -> np.ndarray:
    """|x'| ≤ radius の格子 (原点を含む)"""
    axis = np.linspace(-radius, radius, 33 if n == 3 else 161)
    if n == 2:
        return axis[:, None]
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([X.ravel(), Y.ravel()])
    return points[np.linalg.norm(points, axis=1) <= radius + 1e-12]


def chart_function(v: BoundaryField, center: Optional[np.ndarray] = None) -> Callable[[np.ndarray], np.ndarray]:
    """球面上の場を center 中心の立体射影座標へ写す

    u(x') = (2/(1+|x'|²))^{(n-2)/2} v(Q F(x'))、Q は e_n を center へ送る回転。
    """
    n = v.grid.n
    pole = np.eye(n)[-1] if center is None else np.asarray(center, dtype=float)
    Q = rotation_to(pole / np.linalg.norm(pole))

    def u(xprime: np.ndarray) -> np.ndarray:
        xprime = np.atleast_2d(xprime)
        factor = (2.0 / (1.0 + np.sum(xprime * xprime, axis=1))) ** ((n - 2) / 2)
        return factor * v.evaluate(stereographic_lift(xprime) @ Q.T)

    return u


def blowup_rescale(
    u: Union[Callable[[np.ndarray], np.ndarray], BoundaryField],
    p: float,
    n: int = 3,
    center: Optional[np.ndarray] = None,
    radius: float = CHART_RADIUS,
) -> ChartProfile:
    """φ(x') = u(u(0)^{p-(n+2)/(n-2)} x') / u(0)"""
    if isinstance(u, BoundaryField):
        u = chart_function(u, center)
    if n < 3:
        raise InvalidParametersError(f"再スケールには n ≥ 3 が必要です: n={n}")

    origin = np.zeros((1, n - 1))
    peak = float(np.asarray(u(origin)).ravel()[0])
    if peak <= 0:
        raise InvalidParametersError(f"中心での値が正ではありません: u(0)={peak}")

    scale = peak ** (p - (n + 2) / (n - 2))
    points = chart_points(n, radius)
    samples = np.asarray(u(scale * points), dtype=float).ravel()
    center_is_peak = bool(peak >= 0.99 * np.max(samples))
    if not center_is_peak:
        logging.warning(f"中心が最大点ではありません: u(0)={peak:.6g}, max={np.max(samples):.6g}")
    return ChartProfile(
        points=points,
        values=samples / peak,
        scale_factor=scale,
        peak=peak,
        center_is_peak=center_is_peak,
    )


@dataclass
class BubbleFit:
    """a(1+|x'|²/s²)^{-(n-2)/2} への最小二乗当てはめ"""

    scale: float
    amplitude: float
    sup_distance: float
    concentrated: bool

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "amplitude": self.amplitude,
            "sup_distance": self.sup_distance,
            "concentrated": self.concentrated,
        }


def bubble_distance(profile: ChartProfile, n: int = 3, fit_radius: float = FIT_RADIUS) -> BubbleFit:
    """|x'| ≤ fit_radius 上でバブル形への距離を測る"""
    power = (n - 2) / 2.0 if n > 2 else 0.5
    mask = profile.radii <= fit_radius + 1e-12
    r = profile.radii[mask]
    data = profile.values[mask]

    def model(radius, amplitude, scale):
        return amplitude * (1.0 + (radius / scale) ** 2) ** (-power)

    try:
        params, _ = optimize.curve_fit(
            model,
            r,
            data,
            p0=(1.0, 1.0),
            bounds=([1e-3, SCALE_BOUNDS[0]], [1e3, SCALE_BOUNDS[1]]),
            method="trf",
            ftol=1e-15,
            xtol=1e-15,
            gtol=1e-15,
            max_nfev=10000,
        )
    except (RuntimeError, ValueError) as e:
        raise FitFailureError(f"バブル形への当てはめに失敗しました: {e}")
    amplitude, scale = (float(x) for x in params)
    if not (np.isfinite(amplitude) and np.isfinite(scale)):
        raise FitFailureError("当てはめの結果が有限ではありません")

    sup = float(np.max(np.abs(model(r, amplitude, scale) - data)))
    return BubbleFit(
        scale=scale,
        amplitude=amplitude,
        sup_distance=sup,
        concentrated=scale < CONCENTRATION_SCALE,
    )


def closed_form_check(solution: Solution, n: int) -> float:
    """K ≡ 1 の閉形式値との相対差"""
    expected = constant_field_value(n, solution.p)
    return abs(solution.value - expected) / expected
