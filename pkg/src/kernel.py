"""
Poisson 核と調和拡張演算子
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import (
    BoundaryTouchError,
    DimensionMismatchError,
    GridMismatchError,
    InvalidParametersError,
    MemoryBudgetExceededError,
)
from .geometry import BallGrid, BoundaryField, InteriorField, SphereGrid, unit_ball_volume

MATRIX_FREE = "matrix-free"
CACHED = "cached"
OPERATOR_MODES = (MATRIX_FREE, CACHED)
DEFAULT_MEMORY_BUDGET_MB = 512
TOUCH_EPS = 1e-14


def ball_kernel_matrix(boundary: np.ndarray, interior: np.ndarray, n: int) -> np.ndarray:
    """P(η_j, ξ_i) を (内部点, 境界点) の行列で返す"""
    interior = np.atleast_2d(interior)
    norms2 = np.sum(interior * interior, axis=1)
    dist2 = norms2[:, None] + 1.0 - 2.0 * interior @ boundary.T
    dist2 = np.maximum(dist2, TOUCH_EPS ** 2)
    return (1.0 - norms2)[:, None] / (n * unit_ball_volume(n) * dist2 ** (n / 2))


def halfspace_kernel_matrix(boundary: np.ndarray, interior: np.ndarray, n: int) -> np.ndarray:
    """半空間の Poisson 核 (2/(nω_n)) x_n/(|x'-y'|²+x_n²)^{n/2}"""
    interior = np.atleast_2d(interior)
    boundary = np.atleast_2d(boundary)
    diff = interior[:, None, :-1] - boundary[None, :, :]
    height = interior[:, -1][:, None]
    dist2 = np.sum(diff * diff, axis=2) + height ** 2
    return 2.0 / (n * unit_ball_volume(n)) * height / dist2 ** (n / 2)


def poisson_kernel(domain: str, boundary_pt: Sequence[float], interior_pt: Sequence[float], n: int) -> float:
    """単一点での Poisson 核の値

    domain="ball" のとき boundary_pt は単位ベクトル η、interior_pt は |ξ|<1。
    domain="halfspace" のとき boundary_pt は y' ∈ ℝ^{n-1}、interior_pt は x_n>0。
    """
    eta = np.asarray(boundary_pt, dtype=float)
    xi = np.asarray(interior_pt, dtype=float)
    if domain == "ball":
        if np.linalg.norm(xi - eta) < TOUCH_EPS or np.dot(xi, xi) >= 1.0:
            raise BoundaryTouchError(f"内部点が境界に接しています: ξ={xi}")
        return float(ball_kernel_matrix(eta[None, :], xi[None, :], n)[0, 0])
    if domain == "halfspace":
        if xi[-1] <= 0:
            raise BoundaryTouchError(f"半空間の内部点は x_n > 0 が必要です: x={xi}")
        return float(halfspace_kernel_matrix(eta[None, :], xi[None, :], n)[0, 0])
    raise InvalidParametersError(f"未知の領域です: {domain}")


@dataclass(eq=False)
class PoissonOperator:
    """離散調和拡張 v ↦ Pv とその随伴

    行 i は内部ノード ξ_i、列 j は境界ノード η_j。成分は P(η_j, ξ_i)·s_j で、
    row_normalized のときは各行の和を 1 にそろえる。
    """

    source: SphereGrid
    target: BallGrid
    mode: str = MATRIX_FREE
    row_normalized: bool = True
    threads: int = 1
    block_size: int = 1024
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.source.n

    def _blocks(self) -> List[Tuple[int, int]]:
        size = self.target.size
        return [(start, min(start + self.block_size, size)) for start in range(0, size, self.block_size)]

    def kernel_rows(self, points: np.ndarray) -> np.ndarray:
        """任意の内部点に対する (正規化済み) 核の行"""
        rows = ball_kernel_matrix(self.source.nodes, points, self.n) * self.source.weights[None, :]
        if self.row_normalized:
            rows /= rows.sum(axis=1, keepdims=True)
        return rows

    def _block(self, span: Tuple[int, int]) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix[span[0]:span[1]]
        return self.kernel_rows(self.target.nodes[span[0]:span[1]])

    def _map_blocks(self, func):
        spans = self._blocks()
        if self.threads > 1 and len(spans) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(func, spans))
        return [func(span) for span in spans]

    def apply(self, values: np.ndarray) -> np.ndarray:
        """境界標本値から内部標本値へ"""
        if self._matrix is not None:
            return self._matrix @ values
        return np.concatenate(self._map_blocks(lambda span: self._block(span) @ values))

    def adjoint(self, values: np.ndarray) -> np.ndarray:
        """⟨Pv, U⟩_ball = ⟨v, P*U⟩_boundary となる随伴"""
        weighted = self.target.weights * values
        if self._matrix is not None:
            total = self._matrix.T @ weighted
        else:
            partials = self._map_blocks(
                lambda span: self._block(span).T @ weighted[span[0]:span[1]]
            )
            # ブロック順に固定した和
            total = np.zeros(self.source.size)
            for part in partials:
                total += part
        return total / self.source.weights

    def evaluate_at(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if np.any(np.sum(points * points, axis=1) >= 1.0):
            raise BoundaryTouchError("評価点は開球内にある必要があります")
        return self.kernel_rows(points) @ values


def build_operator(
    sphere: SphereGrid,
    ball: BallGrid,
    mode: str = MATRIX_FREE,
    row_normalized: bool = True,
    memory_budget_mb: float = DEFAULT_MEMORY_BUDGET_MB,
    threads: int = 1,
) -> PoissonOperator:
    """Poisson 演算子を構築する"""
    if sphere.n != ball.n:
        raise DimensionMismatchError(f"格子の次元が一致しません: {sphere.n} と {ball.n}")
    if mode not in OPERATOR_MODES:
        raise InvalidParametersError(f"演算子モードは {OPERATOR_MODES} のいずれかです: {mode}")

    op = PoissonOperator(
        source=sphere,
        target=ball,
        mode=mode,
        row_normalized=row_normalized,
        threads=max(1, int(threads)),
    )
    if mode == CACHED:
        required_mb = sphere.size * ball.size * 8 / 2 ** 20
        if required_mb > memory_budget_mb:
            raise MemoryBudgetExceededError(
                f"キャッシュ行列 {required_mb:.1f} MB が予算 {memory_budget_mb} MB を超えます"
            )
        op._matrix = np.vstack(op._map_blocks(op._block))
        logging.debug(f"核行列をキャッシュ: {ball.size}×{sphere.size} ({required_mb:.1f} MB)")
    return op


def extend(op: PoissonOperator, v: BoundaryField) -> InteriorField:
    """離散 Poisson 拡張 Pv"""
    if not v.grid.same_as(op.source):
        raise GridMismatchError("場の格子が演算子の境界格子と一致しません")
    return InteriorField(op.target, op.apply(v.values))


def adjoint_apply(op: PoissonOperator, U: InteriorField) -> BoundaryField:
    if not U.grid.same_as(op.target) or U.values.shape != (op.target.size,):
        raise GridMismatchError("内部場の格子が演算子の内部格子と一致しません")
    return BoundaryField(op.source, op.adjoint(U.values))


def chart_to_ball(points: np.ndarray) -> np.ndarray:
    """半空間から球体へのメビウス写像 F(x) = 2(x+e_n)/|x+e_n|² - e_n (対合)"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    shifted = points.copy()
    shifted[:, -1] += 1.0
    image = 2.0 * shifted / np.sum(shifted * shifted, axis=1, keepdims=True)
    image[:, -1] -= 1.0
    return image


def chart_weight(points: np.ndarray, n: int) -> np.ndarray:
    """共形重み (√2/|x+e_n|)^{n-2}"""
    points = np.atleast_2d(points)
    shifted = points.copy()
    shifted[:, -1] += 1.0
    return (np.sqrt(2.0) / np.linalg.norm(shifted, axis=1)) ** (n - 2)


def default_covariance_panel(n: int) -> np.ndarray:
    """球体の内側 (|F(x)| ≲ 0.6) に写る半空間の試験点"""
    if n == 2:
        return np.array([[0.0, 1.0], [0.5, 1.0], [0.4, 0.7], [0.0, 1.5], [-0.3, 0.6]])
    return np.array(
        [
            [0.0, 0.0, 1.0],
            [0.5, 0.0, 1.0],
            [0.0, 0.4, 0.7],
            [0.0, 0.0, 1.5],
            [0.3, 0.3, 0.6],
        ]
    )


def covariance_discrepancy(lam: float, op: PoissonOperator, panel: Optional[np.ndarray] = None) -> float:
    """共形共変性 Pu(x) = (√2/|x+e_n|)^{n-2} (Pv)(F(x)) の両辺の最大差

    v は極 ±e_n の張り合わせ試行関数。半空間側は W_{1,λ} の閉形式と
    |y'| ≥ 1 上の補正項の求積、球体側は格子上の拡張で評価する。
    """
    from .bubble import HalfspaceBubbleForms, beta_from_lambda, glued_trial_field

    if not 0 < lam <= 1:
        raise InvalidParametersError(f"λ は (0, 1] の範囲が必要です: {lam}")
    n = op.n
    if panel is None:
        panel = default_covariance_panel(n)
    pole = np.eye(n)[-1]

    trial = glued_trial_field(beta_from_lambda(lam), pole, op.source)
    forms = HalfspaceBubbleForms(lam=lam, n=n)
    halfspace_side = forms.extension(panel)
    ball_side = chart_weight(panel, n) * op.evaluate_at(trial.values, chart_to_ball(panel))
    gap = float(np.max(np.abs(halfspace_side - ball_side)))
    logging.debug(f"共変性の不一致: λ={lam}, 最大差={gap:.3e}")
    return gap
