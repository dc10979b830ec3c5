"""
球面・球体の求積格子と立体射影・メビウス変換
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import interpolate, special
from scipy.spatial import cKDTree
from scipy.stats import special_ortho_group

from .errors import (
    GridMismatchError,
    InvalidGradingError,
    InvalidOrderError,
    InvalidResolutionError,
    PoleSingularityError,
    UnsupportedDimensionError,
)

GRID_DIMENSIONS = (2, 3)
POLE_EPS = 1e-14


def unit_ball_volume(n: int) -> float:
    """n 次元単位球の体積 ω_n"""
    if n < 1:
        raise UnsupportedDimensionError(f"次元は 1 以上が必要です: n={n}")
    return float(np.pi ** (n / 2) / special.gamma(n / 2 + 1))


def sphere_area(n: int) -> float:
    """単位球面 ∂B₁ の面積 nω_n"""
    return n * unit_ball_volume(n)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """∂B₁ 上の対蹠対称な求積格子

    ノード順序は (極角インデックス, 方位角インデックス) の行優先。
    polar / azimuth は積型格子のときのみ保持する。
    """

    n: int
    nodes: np.ndarray
    weights: np.ndarray
    antipode: np.ndarray
    design_order: int
    resolution: int
    polar: Optional[np.ndarray] = None
    azimuth: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)

    def sample(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        return np.asarray(func(self.nodes), dtype=float)

    def same_as(self, other: "SphereGrid") -> bool:
        return self is other or (
            self.n == other.n
            and self.size == other.size
            and np.array_equal(self.nodes, other.nodes)
        )


@dataclass(frozen=True, eq=False)
class BallGrid:
    """B₁ 内部の殻構造求積格子 (ノードは殻ごとに球面格子を縮小したもの)"""

    n: int
    nodes: np.ndarray
    weights: np.ndarray
    radii: np.ndarray
    radial_weights: np.ndarray
    sphere: SphereGrid
    grading: float

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def antipode(self) -> np.ndarray:
        m = self.sphere.size
        shells = np.arange(self.radii.size)[:, None] * m
        return (shells + self.sphere.antipode[None, :]).ravel()

    @property
    def norms(self) -> np.ndarray:
        return np.repeat(self.radii, self.sphere.size)

    def integrate(self, values: np.ndarray) -> float:
        return float(self.weights @ values)

    def same_as(self, other: "BallGrid") -> bool:
        return self is other or (
            self.n == other.n
            and self.size == other.size
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )


def _check_grid_dimension(n: int):
    if n not in GRID_DIMENSIONS:
        raise UnsupportedDimensionError(
            f"格子は n ∈ {GRID_DIMENSIONS} のみ対応しています: n={n}"
        )


def make_sphere_grid(n: int, resolution: int) -> SphereGrid:
    """球面格子を生成する

    n=2 は等間隔角度則、n=3 は極角余弦の Gauss–Legendre 則と
    偶数個の等間隔方位角則のテンソル積。後半の方位角ノードは前半の
    符号反転で作るので対蹠点は厳密に -ξ になる。
    """
    _check_grid_dimension(n)
    if resolution < 4 or resolution % 2:
        raise InvalidResolutionError(
            f"解像度は 4 以上の偶数が必要です: resolution={resolution}"
        )

    if n == 2:
        half = resolution // 2
        theta = 2 * np.pi * (np.arange(resolution) + 0.5) / resolution
        first = np.column_stack([np.cos(theta[:half]), np.sin(theta[:half])])
        nodes = np.vstack([first, -first])
        weights = np.full(resolution, 2 * np.pi / resolution)
        antipode = (np.arange(resolution) + half) % resolution
        grid = SphereGrid(
            n=2,
            nodes=nodes,
            weights=weights,
            antipode=antipode,
            design_order=resolution - 1,
            resolution=resolution,
            azimuth=theta,
        )
    else:
        x, w = np.polynomial.legendre.leggauss(resolution)
        # 極角ノードを厳密に ±対称化
        x = 0.5 * (x - x[::-1])
        w = 0.5 * (w + w[::-1])
        count = 2 * resolution
        phi = 2 * np.pi * (np.arange(count) + 0.5) / count
        ring = np.column_stack([np.cos(phi[:resolution]), np.sin(phi[:resolution])])
        ring = np.vstack([ring, -ring])
        sin_theta = np.sqrt(1.0 - x ** 2)

        nodes = np.empty((resolution, count, 3))
        nodes[:, :, 0] = sin_theta[:, None] * ring[None, :, 0]
        nodes[:, :, 1] = sin_theta[:, None] * ring[None, :, 1]
        nodes[:, :, 2] = x[:, None]
        weights = np.outer(w, np.full(count, 2 * np.pi / count))

        k = np.arange(resolution)[:, None]
        m = np.arange(count)[None, :]
        antipode = ((resolution - 1 - k) * count + (m + resolution) % count).ravel()
        grid = SphereGrid(
            n=3,
            nodes=nodes.reshape(-1, 3),
            weights=weights.ravel(),
            antipode=antipode,
            design_order=2 * resolution - 1,
            resolution=resolution,
            polar=x,
            azimuth=phi,
        )

    logging.debug(f"球面格子を生成: n={n}, ノード数={grid.size}")
    return grid


def make_ball_grid(sphere: SphereGrid, radial_order: int, grading: float = 2.0) -> BallGrid:
    """球体格子を生成する

    [0,1] 上の Gauss–Jacobi 則 (重み t^{n/g-1}) のノードを r = t^{1/g} で
    写す。重みには r^{n-1} とグレーディングのヤコビアンが含まれる。
    """
    if radial_order < 4:
        raise InvalidOrderError(f"動径次数は 4 以上が必要です: {radial_order}")
    if not np.isfinite(grading) or grading < 1:
        raise InvalidGradingError(f"グレーディング指数は 1 以上が必要です: {grading}")

    n = sphere.n
    beta = n / grading - 1.0
    x, w = special.roots_jacobi(radial_order, 0.0, beta)
    t = 0.5 * (1.0 + x)
    t_weights = w / 2.0 ** (beta + 1.0)
    radii = t ** (1.0 / grading)
    radial_weights = t_weights / grading

    nodes = (radii[:, None, None] * sphere.nodes[None, :, :]).reshape(-1, n)
    weights = np.outer(radial_weights, sphere.weights).ravel()
    logging.debug(
        f"球体格子を生成: 殻数={radial_order}, ノード数={nodes.shape[0]}, grading={grading}"
    )
    return BallGrid(
        n=n,
        nodes=nodes,
        weights=weights,
        radii=radii,
        radial_weights=radial_weights,
        sphere=sphere,
        grading=float(grading),
    )


def composite_gauss_legendre(breaks: np.ndarray, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """区間の分割点ごとに Gauss–Legendre 則を並べた複合則"""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    x, w = np.polynomial.legendre.leggauss(order)
    left, right = breaks[:-1, None], breaks[1:, None]
    half = 0.5 * (right - left)
    nodes = (left + half * (x[None, :] + 1.0)).ravel()
    weights = (half * w[None, :]).ravel()
    return nodes, weights


def geometric_breaks(start: float, stop: float, scale: float, ratio: float = 2.0) -> np.ndarray:
    """0, scale, scale·ratio, ... と stop までの分割点"""
    points = [start]
    x = scale
    while x < stop:
        if x > start:
            points.append(x)
        x *= ratio
    points.append(stop)
    return np.array(points)


def dump_grid_csv(nodes: np.ndarray, weights: np.ndarray, path: Path):
    """格子を x1..xn,weight 形式の CSV に書き出す"""
    n = nodes.shape[1]
    header = ",".join([f"x{i + 1}" for i in range(n)] + ["weight"])
    np.savetxt(
        path,
        np.column_stack([nodes, weights]),
        delimiter=",",
        header=header,
        comments="",
        fmt="%.17g",
    )


def load_grid_csv(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]


def load_sphere_grid_csv(path: Path) -> SphereGrid:
    """CSV から球面格子を読み込み、対蹠置換を再構成する"""
    nodes, weights = load_grid_csv(path)
    n = nodes.shape[1]
    _check_grid_dimension(n)
    if np.max(np.abs(np.linalg.norm(nodes, axis=1) - 1.0)) > 1e-12:
        raise GridMismatchError(f"単位ベクトルでないノードがあります: {path}")
    distance, antipode = cKDTree(nodes).query(-nodes)
    if np.max(distance) > 1e-12 or np.any(antipode == np.arange(len(nodes))):
        raise GridMismatchError(f"対蹠点が格子内にありません: {path}")
    return SphereGrid(
        n=n,
        nodes=nodes,
        weights=weights,
        antipode=antipode,
        design_order=0,
        resolution=0,
    )


def stereographic_lift(xprime: np.ndarray) -> np.ndarray:
    """F(x') = (2x'/(|x'|²+1), (1-|x'|²)/(|x'|²+1))"""
    x = np.asarray(xprime, dtype=float)
    s = np.sum(x * x, axis=-1, keepdims=True)
    return np.concatenate([2 * x / (s + 1), (1 - s) / (s + 1)], axis=-1)


def stereographic_inverse(xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    denom = 1.0 + xi[..., -1]
    if np.any(denom < POLE_EPS):
        raise PoleSingularityError("-e_n は立体射影の無限遠点の像です")
    return xi[..., :-1] / denom[..., None]


def rotation_to(pole: np.ndarray) -> np.ndarray:
    """Q e_n = pole を満たす回転行列 (det = +1)"""
    pole = np.asarray(pole, dtype=float)
    n = pole.size
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    diff = e_n - pole
    norm = np.linalg.norm(diff)
    if norm < 1e-15:
        return np.eye(n)
    u = diff / norm
    householder = np.eye(n) - 2.0 * np.outer(u, u)
    flip = np.eye(n)
    flip[0, 0] = -1.0
    return householder @ flip


@dataclass(frozen=True, eq=False)
class MobiusMap:
    """∂B₁ の共形変換

    T(η) = R·Q·F(λ·F⁻¹(Qᵀη) + b)。Q は e_n を pole に写すチャート回転。
    inverted=True のときは T⁻¹ を表す。
    """

    n: int
    pole: np.ndarray
    translation: np.ndarray
    scale: float
    rotation: np.ndarray
    inverted: bool = False
    chart: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "chart", rotation_to(self.pole))

    @classmethod
    def identity(cls, n: int) -> "MobiusMap":
        return cls.dilation(n, 1.0)

    @classmethod
    def dilation(cls, n: int, scale: float, pole: Optional[np.ndarray] = None) -> "MobiusMap":
        if pole is None:
            pole = np.eye(n)[-1]
        return cls(
            n=n,
            pole=np.asarray(pole, dtype=float),
            translation=np.zeros(n - 1),
            scale=float(scale),
            rotation=np.eye(n),
        )

    @classmethod
    def random(cls, n: int, rng: np.random.Generator, spread: float = 0.3) -> "MobiusMap":
        """検証用のランダムな共形変換"""
        pole = rng.normal(size=n)
        return cls(
            n=n,
            pole=pole / np.linalg.norm(pole),
            translation=spread * rng.normal(size=n - 1),
            scale=float(np.exp(rng.uniform(-spread, spread))),
            rotation=special_ortho_group.rvs(n, random_state=rng),
        )

    def inverse(self) -> "MobiusMap":
        return replace(self, inverted=not self.inverted)

    def _chart_step(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """チャート内のアフィン変換部分と長さ倍率"""
        at_pole = 1.0 + z[:, -1] < POLE_EPS
        denom = np.where(at_pole, 1.0, 1.0 + z[:, -1])
        x = z[:, :-1] / denom[:, None]
        if self.inverted:
            y = (x - self.translation) / self.scale
            factor = 1.0 / self.scale
        else:
            y = self.scale * x + self.translation
            factor = self.scale
        stretch = factor * (1.0 + np.sum(x * x, axis=1)) / (1.0 + np.sum(y * y, axis=1))
        image = stereographic_lift(y)
        image[at_pole] = 0.0
        image[at_pole, -1] = -1.0
        stretch[at_pole] = 1.0 / factor
        return image, stretch

    def apply_with_stretch(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        q = self.chart
        if self.inverted:
            z = points @ self.rotation @ q
            image, stretch = self._chart_step(z)
            return image @ q.T, stretch
        image, stretch = self._chart_step(points @ q)
        return image @ q.T @ self.rotation.T, stretch

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.apply_with_stretch(points)[0]

    def length_factor(self, points: np.ndarray) -> np.ndarray:
        return self.apply_with_stretch(points)[1]

    def jacobian(self, points: np.ndarray) -> np.ndarray:
        """面積要素のヤコビアン J = ℓ^{n-1}"""
        return self.length_factor(points) ** (self.n - 1)


@dataclass(frozen=True, eq=False)
class BoundaryField:
    """球面格子上の標本値 (解析的な生成元があれば保持する)"""

    grid: SphereGrid
    values: np.ndarray
    source: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @classmethod
    def from_function(cls, grid: SphereGrid, func: Callable[[np.ndarray], np.ndarray]) -> "BoundaryField":
        return cls(grid, grid.sample(func), func)

    @classmethod
    def constant(cls, grid: SphereGrid, value: float = 1.0) -> "BoundaryField":
        return cls.from_function(grid, lambda pts: np.full(len(pts), float(value)))

    def with_values(self, values: np.ndarray) -> "BoundaryField":
        return BoundaryField(self.grid, np.asarray(values, dtype=float))

    def scaled(self, factor: float) -> "BoundaryField":
        if self.source is None:
            return self.with_values(factor * self.values)
        source = self.source
        return BoundaryField(self.grid, factor * self.values, lambda pts: factor * source(pts))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.source is not None:
            return np.asarray(self.source(points), dtype=float)
        return _interpolate_on_grid(self.grid, self.values, points)


@dataclass(frozen=True, eq=False)
class InteriorField:
    """球体格子上の標本値 (Pv など)"""

    grid: BallGrid
    values: np.ndarray


def _interpolate_on_grid(grid: SphereGrid, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """積型格子上での周期スプライン補間"""
    if grid.azimuth is None:
        raise GridMismatchError("積型でない格子では格子外の評価ができません")
    if grid.n == 2:
        theta = grid.azimuth
        spline = interpolate.CubicSpline(
            np.append(theta, theta[0] + 2 * np.pi),
            np.append(values, values[0]),
            bc_type="periodic",
        )
        angles = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2 * np.pi)
        angles = np.where(angles < theta[0], angles + 2 * np.pi, angles)
        return spline(angles)

    table = values.reshape(grid.polar.size, grid.azimuth.size)
    phi = grid.azimuth
    step = phi[1] - phi[0]
    padded_phi = np.concatenate([[phi[0] - step], phi, [phi[-1] + step]])
    padded = np.column_stack([table[:, -1], table, table[:, 0]])
    interpolator = interpolate.RegularGridInterpolator(
        (grid.polar, padded_phi), padded, method="cubic", bounds_error=False, fill_value=None
    )
    polar = np.clip(points[:, 2], -1.0, 1.0)
    angles = np.mod(np.arctan2(points[:, 1], points[:, 0]), 2 * np.pi)
    return interpolator(np.column_stack([polar, angles]))


def conformal_pullback(v: BoundaryField, mobius: MobiusMap) -> BoundaryField:
    """共形引き戻し η ↦ J(η)^{(n-2)/(2(n-1))} v(T(η))

    指数 2(n-1)/(n-2) の境界ノルムを保つ重み。
    """
    if mobius.n != v.grid.n:
        raise GridMismatchError(
            f"変換の次元 {mobius.n} と格子の次元 {v.grid.n} が一致しません"
        )
    power = (v.grid.n - 2) / 2.0

    def pulled(points: np.ndarray) -> np.ndarray:
        image, stretch = mobius.apply_with_stretch(points)
        return stretch ** power * v.evaluate(image)

    return BoundaryField.from_function(v.grid, pulled)
