"""
変分汎関数モジュール

Rayleigh 商 I[v]、最良定数 S(n)、可解性の閾値、n=2 の Carleman 不等式の
不足量、および劣臨界制約下のエネルギーを扱う。
"""

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional, Union

import numpy as np

from .errors import (
    DimensionMismatchError,
    ExponentOutOfRangeError,
    GridMismatchError,
    InvalidParametersError,
    UnsupportedDimensionError,
    ZeroFieldError,
)
from .geometry import BoundaryField, SphereGrid, unit_ball_volume
from .kernel import PoissonOperator

FieldLike = Union[BoundaryField, np.ndarray]


def interior_exponent(n: int) -> float:
    """内部ノルムの指数 2n/(n-2)"""
    _require_critical_dimension(n)
    return 2.0 * n / (n - 2)


def boundary_exponent(n: int) -> float:
    """境界ノルムの指数 2(n-1)/(n-2)"""
    _require_critical_dimension(n)
    return 2.0 * (n - 1) / (n - 2)


def exponent_range(n: int):
    """劣臨界指数 p の許容範囲 [n/(n-2), (n+2)/(n-2))"""
    _require_critical_dimension(n)
    return n / (n - 2), (n + 2) / (n - 2)


def _require_critical_dimension(n: int):
    if n < 3:
        raise UnsupportedDimensionError(f"臨界指数は n ≥ 3 でのみ定義されます: n={n}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """∂B₁ 上の正値関数 K (値と外部勾配を返す)"""

    value_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    label: str
    minimum: Optional[float] = None
    argmin: Optional[np.ndarray] = None
    antipodal: bool = False

    def values(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.asarray(self.value_fn(points), dtype=float) * np.ones(len(points))

    def gradients(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.asarray(self.gradient_fn(points), dtype=float) * np.ones_like(points)

    def validate(self, grid: SphereGrid):
        """格子ノード上での正値性と対蹠対称性を確認する"""
        values = self.values(grid.nodes)
        if np.any(values <= 0):
            raise InvalidParametersError(f"K は正値である必要があります: {self.label}")
        if self.antipodal:
            gap = np.max(np.abs(values - values[grid.antipode]))
            if gap > 1e-12:
                raise InvalidParametersError(
                    f"K が対蹠対称ではありません: {self.label}, 差={gap:.3e}"
                )

    def min_on(self, grid: Optional[SphereGrid] = None) -> float:
        """解析的最小値があればそれを、なければ格子上の最小値を返す"""
        if self.minimum is not None:
            return float(self.minimum)
        if grid is None:
            raise InvalidParametersError(f"K の最小値が未登録で格子も与えられていません: {self.label}")
        return float(np.min(self.values(grid.nodes)))

    @classmethod
    def constant(cls, value: float, n: int = 3) -> "ScalarField":
        if value <= 0:
            raise InvalidParametersError(f"定数 K は正値が必要です: {value}")
        return cls(
            value_fn=lambda pts: np.full(len(pts), float(value)),
            gradient_fn=lambda pts: np.zeros_like(pts),
            label=f"constant({value:g})",
            minimum=float(value),
            argmin=np.eye(n)[-1],
            antipodal=True,
        )

    @classmethod
    def zn_plus_2(cls, n: int = 3) -> "ScalarField":
        """K = ξ_n + 2 (対蹠対称でない)"""
        e_n = np.eye(n)[-1]
        return cls(
            value_fn=lambda pts: pts[:, -1] + 2.0,
            gradient_fn=lambda pts: np.broadcast_to(e_n, pts.shape).copy(),
            label="zn_plus_2",
            minimum=1.0,
            argmin=-e_n,
        )

    @classmethod
    def zn2_plus_1(cls, n: int = 3) -> "ScalarField":
        """K = ξ_n² + 1"""

        def gradient(pts: np.ndarray) -> np.ndarray:
            grad = np.zeros_like(pts)
            grad[:, -1] = 2.0 * pts[:, -1]
            return grad

        return cls(
            value_fn=lambda pts: pts[:, -1] ** 2 + 1.0,
            gradient_fn=gradient,
            label="zn2_plus_1",
            minimum=1.0,
            argmin=np.eye(n)[0],
            antipodal=True,
        )


@dataclass
class EnergyReport:
    """エネルギー評価の結果"""

    numerator: float
    denominator: float
    exponent: float
    quotient: Optional[float] = None
    value: Optional[float] = None

    def to_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)


def sharp_constant(n: int) -> float:
    """S(n) = n^{-(n-2)/(2(n-1))} ω_n^{-(n-2)/(2n(n-1))}"""
    _require_critical_dimension(n)
    omega = unit_ball_volume(n)
    return n ** (-(n - 2) / (2 * (n - 1))) * omega ** (-(n - 2) / (2 * n * (n - 1)))


def constant_field_value(n: int, p: float) -> float:
    """K ≡ 1 で定数場を制約に合わせたときの値 ω_n (nω_n)^{-2n/((n-2)(p+1))}"""
    omega = unit_ball_volume(n)
    return omega * (n * omega) ** (-interior_exponent(n) / (p + 1))


def constant_solution(n: int) -> float:
    """K ≡ 1 の臨界方程式の定数解 n^{(n-2)/2}

    ∫_{B₁} P(η,ξ) dξ = 1/n より c^{n/(n-2)} = c^{(n+2)/(n-2)}/n。
    """
    return n ** ((n - 2) / 2)


def _field_values(op: PoissonOperator, v: FieldLike) -> np.ndarray:
    if isinstance(v, BoundaryField):
        if not v.grid.same_as(op.source):
            raise GridMismatchError("場の格子が演算子の境界格子と一致しません")
        return v.values
    values = np.asarray(v, dtype=float)
    if values.shape != (op.source.size,):
        raise GridMismatchError(f"場の長さ {values.shape} が格子 {op.source.size} と一致しません")
    return values


def rayleigh(op: PoissonOperator, v: FieldLike, K: ScalarField) -> EnergyReport:
    """Rayleigh 商 I[v] を求積で評価する"""
    n = op.source.n
    q = interior_exponent(n)
    b = boundary_exponent(n)
    values = _field_values(op, v)
    if not np.any(values):
        raise ZeroFieldError("恒等的にゼロの場では商が定義されません")

    extension = op.apply(values)
    numerator = op.target.integrate(np.abs(extension) ** q)
    denominator = op.source.integrate(K.values(op.source.nodes) * np.abs(values) ** b)
    quotient = numerator / denominator ** (n / (n - 1))
    return EnergyReport(
        numerator=numerator,
        denominator=denominator,
        exponent=b - 1.0,
        quotient=quotient,
        value=quotient,
    )


def trace_ratio(op: PoissonOperator, v: FieldLike) -> float:
    """‖Pv‖_{L^{2n/(n-2)}(B₁)} / ‖v‖_{L^{2(n-1)/(n-2)}(∂B₁)}"""
    n = op.source.n
    values = _field_values(op, v)
    extension = op.apply(values)
    q = interior_exponent(n)
    b = boundary_exponent(n)
    top = op.target.integrate(np.abs(extension) ** q) ** (1.0 / q)
    bottom = op.source.integrate(np.abs(values) ** b) ** (1.0 / b)
    if bottom == 0:
        raise ZeroFieldError("恒等的にゼロの場では比が定義されません")
    return top / bottom


def random_monomial_field(grid: SphereGrid, rng: np.random.Generator, scale: float = 0.4) -> BoundaryField:
    """1 + Σ b_i ξ_i + Σ A_ij ξ_i ξ_j の正部分 (係数は N(0, scale²))"""
    n = grid.n
    b = rng.normal(scale=scale, size=n)
    A = rng.normal(scale=scale, size=(n, n))
    A = 0.5 * (A + A.T)

    def field_fn(points: np.ndarray) -> np.ndarray:
        return np.maximum(1.0 + points @ b + np.einsum("ij,jk,ik->i", points, A, points), 0.0)

    return BoundaryField.from_function(grid, field_fn)


def threshold(n: int, K: ScalarField, grid: Optional[SphereGrid] = None) -> float:
    """S(n)^{2n/(n-2)} / ((min K)^{n/(n-1)} 2^{1/(n-1)})"""
    min_k = K.min_on(grid)
    return sharp_constant(n) ** interior_exponent(n) / (min_k ** (n / (n - 1)) * 2 ** (1 / (n - 1)))


def carleman_deficit(op: PoissonOperator, v: FieldLike) -> float:
    """(1/4π)(∫e^v)² - ∫e^{2Pv} を返す (n=2)"""
    if op.source.n != 2:
        raise DimensionMismatchError(f"Carleman 不等式は n=2 のみです: n={op.source.n}")
    values = _field_values(op, v)
    rhs = op.source.integrate(np.exp(values)) ** 2 / (4 * np.pi)
    lhs = op.target.integrate(np.exp(2.0 * op.apply(values)))
    return rhs - lhs


def subcritical_report(op: PoissonOperator, v: FieldLike, K: ScalarField, p: float) -> EnergyReport:
    """制約 ∫K|v|^{p+1} = 1 に正規化してから ∫|Pv|^{2n/(n-2)} を報告する"""
    n = op.source.n
    low, high = exponent_range(n)
    if not low <= p < high:
        raise ExponentOutOfRangeError(f"p は [{low:g}, {high:g}) の範囲が必要です: p={p}")
    values = _field_values(op, v)
    weights = K.values(op.source.nodes)
    constraint = op.source.integrate(weights * np.abs(values) ** (p + 1))
    if constraint == 0:
        raise ZeroFieldError("恒等的にゼロの場は正規化できません")

    scaled = values * constraint ** (-1.0 / (p + 1))
    denominator = op.source.integrate(weights * np.abs(scaled) ** (p + 1))
    numerator = op.target.integrate(np.abs(op.apply(scaled)) ** interior_exponent(n))
    critical = np.isclose(p + 1, boundary_exponent(n), rtol=0, atol=1e-14)
    quotient = numerator / denominator ** (n / (n - 1)) if critical else None
    logging.debug(f"劣臨界エネルギー: p={p}, 値={numerator:.10g}")
    return EnergyReport(
        numerator=numerator,
        denominator=denominator,
        exponent=float(p),
        quotient=quotient,
        value=numerator,
    )
