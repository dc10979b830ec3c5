"""
バブル・試行関数モジュール

球冠バブル v_{i,β}、対蹠点で張り合わせた試行関数 v_β、半空間での閉形式、
試行エネルギー E(λ) の評価と展開係数のフィット、平坦な K の族、
極限方程式の残差を提供する。
"""

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from .errors import (
    FitFailureError,
    InvalidParametersError,
    NonpositiveDeficitError,
    ResolutionInsufficientError,
    TruncationInsufficientError,
    UnsupportedDimensionError,
)
from .functional import EnergyReport, ScalarField, boundary_exponent, interior_exponent
from .geometry import (
    BoundaryField,
    SphereGrid,
    composite_gauss_legendre,
    geometric_breaks,
    rotation_to,
    stereographic_lift,
    unit_ball_volume,
)


def lambda_from_beta(beta: float) -> float:
    """λ = √((β-1)/(β+1))"""
    if not beta > 1:
        raise InvalidParametersError(f"β > 1 が必要です: β={beta}")
    if np.isinf(beta):
        return 1.0
    return float(np.sqrt((beta - 1.0) / (beta + 1.0)))


def beta_from_lambda(lam: float) -> float:
    """β = (1+λ²)/(1-λ²)。λ = 1 は β = ∞ (半球上で定数)"""
    if not 0 < lam <= 1:
        raise InvalidParametersError(f"λ は (0, 1] の範囲が必要です: λ={lam}")
    if lam == 1:
        return float("inf")
    return (1.0 + lam ** 2) / (1.0 - lam ** 2)


@dataclass(frozen=True, eq=False)
class CapBubble:
    """ξ_i を中心とする半球上の球冠バブル"""

    beta: float
    center: np.ndarray

    def __post_init__(self):
        if not self.beta > 1:
            raise InvalidParametersError(f"β > 1 が必要です: β={self.beta}")
        center = np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", center / np.linalg.norm(center))

    @classmethod
    def from_lambda(cls, lam: float, center: np.ndarray) -> "CapBubble":
        return cls(beta_from_lambda(lam), center)

    @property
    def n(self) -> int:
        return self.center.size

    @property
    def lam(self) -> float:
        return lambda_from_beta(self.beta)

    @property
    def peak(self) -> float:
        return self.lam ** (-(self.n - 2) / 2.0)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        cos_r = points @ self.center
        if np.isinf(self.beta):
            base = np.ones_like(cos_r)
        else:
            base = np.sqrt(self.beta ** 2 - 1.0) / (self.beta - cos_r)
        return np.where(cos_r >= 0.0, base ** ((self.n - 2) / 2.0), 0.0)


def cap_bubble_eval(bubble: CapBubble, xi: np.ndarray):
    values = bubble.evaluate(xi)
    return float(values[0]) if np.ndim(xi) == 1 else values


@dataclass(frozen=True, eq=False)
class GluedTrial:
    """v_β = v_{1,β} + v_{2,β} (中心 ξ₁ と -ξ₁)"""

    beta: float
    center: np.ndarray

    @property
    def caps(self) -> Tuple[CapBubble, CapBubble]:
        center = np.asarray(self.center, dtype=float)
        return CapBubble(self.beta, center), CapBubble(self.beta, -center)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        first, second = self.caps
        return first.evaluate(points) + second.evaluate(points)


def glued_trial_field(beta: float, center: np.ndarray, sphere: SphereGrid) -> BoundaryField:
    return BoundaryField.from_function(sphere, GluedTrial(beta, center).evaluate)


@dataclass(frozen=True)
class HalfspaceBubbleForms:
    """立体射影チャートでの試行関数の閉形式

    u_λ = w_{1,λ} + w_{2,λ}。W_{1,λ} は w_{1,λ} の厳密な調和拡張で、
    w_{2,λ} の拡張は |y'| ≥ 1 上の求積で補う。
    """

    lam: float
    n: int = 3
    tau_order: int = 12

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise InvalidParametersError(f"λ は (0, 1] の範囲が必要です: λ={self.lam}")

    @property
    def power(self) -> float:
        return (self.n - 2) / 2.0

    def _radial(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lam = self.lam
        inner = (lam / (lam ** 2 + s)) ** self.power
        outer = (lam / (1.0 + lam ** 2 * s)) ** self.power
        return inner, outer

    def w1(self, yprime: np.ndarray) -> np.ndarray:
        s = np.sum(np.atleast_2d(yprime) ** 2, axis=1)
        return 2.0 ** self.power * self._radial(s)[0]

    def u1(self, yprime: np.ndarray) -> np.ndarray:
        s = np.sum(np.atleast_2d(yprime) ** 2, axis=1)
        return np.where(s <= 1.0, 2.0 ** self.power * self._radial(s)[0], 0.0)

    def w2(self, yprime: np.ndarray) -> np.ndarray:
        s = np.sum(np.atleast_2d(yprime) ** 2, axis=1)
        return self._w2_of_square(s)

    def _w2_of_square(self, s: np.ndarray) -> np.ndarray:
        inner, outer = self._radial(s)
        return np.where(s >= 1.0, 2.0 ** self.power * (outer - inner), 0.0)

    def u(self, yprime: np.ndarray) -> np.ndarray:
        return self.w1(yprime) + self.w2(yprime)

    def W1(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        denom = (y[:, -1] + self.lam) ** 2 + np.sum(y[:, :-1] ** 2, axis=1)
        return 2.0 ** self.power * (self.lam / denom) ** self.power

    def _tau_breaks(self) -> np.ndarray:
        near_zero = geometric_breaks(0.0, 0.5, self.lam / 8.0)
        near_one = 1.0 - 0.5 ** np.arange(1, 11)
        return np.concatenate([near_zero, near_one, [1.0]])

    def exterior_correction(self, y: np.ndarray) -> np.ndarray:
        """P w_{2,λ}(y) = ∫_{|y'|≥1} P(y', y) w_{2,λ}(y') dy'"""
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if self.n == 2 or self.lam == 1:
            # n=2 では指数 0 で w_2 ≡ 0、λ=1 でも w_2 ≡ 0
            return np.zeros(len(y))
        if self.n != 3:
            raise UnsupportedDimensionError(f"補正項の求積は n=3 のみです: n={self.n}")

        # t = 1/τ として τ ∈ (0, 1] 上で積分し、方位角は楕円積分で閉じる
        tau, tau_weights = composite_gauss_legendre(self._tau_breaks(), self.tau_order)
        t = 1.0 / tau
        profile = self._w2_of_square(t ** 2)
        a = np.linalg.norm(y[:, :-1], axis=1)[:, None]
        h = y[:, -1][:, None]
        big = a ** 2 + t[None, :] ** 2 + h ** 2
        cross = 2.0 * a * t[None, :]
        angular = 4.0 * special.ellipe(2.0 * cross / (big + cross)) / ((big - cross) * np.sqrt(big + cross))
        integrand = profile[None, :] * t[None, :] ** 3 * angular
        return h[:, 0] / (2.0 * np.pi) * (integrand @ tau_weights)

    def extension(self, y: np.ndarray) -> np.ndarray:
        """Pu_λ = W_{1,λ} + P w_{2,λ}"""
        return self.W1(y) + self.exterior_correction(y)


def halfspace_forms_eval(lam: float, which: str, point: np.ndarray, n: int = 3):
    forms = HalfspaceBubbleForms(lam=lam, n=n)
    evaluators = {"u1": forms.u1, "w1": forms.w1, "w2": forms.w2, "W1": forms.W1}
    if which not in evaluators:
        raise InvalidParametersError(f"未知の閉形式です: {which}")
    values = evaluators[which](point)
    return float(values[0]) if np.ndim(point) == 1 else values


@dataclass(frozen=True)
class TrialQuadrature:
    """試行エネルギー用の求積パラメータ"""

    radial_order: int = 12
    angular_order: int = 24
    tau_order: int = 12

    def refined(self) -> "TrialQuadrature":
        return TrialQuadrature(self.radial_order + 4, self.angular_order + 8, self.tau_order + 4)

    @property
    def label(self) -> str:
        return f"{self.radial_order}x{self.angular_order}x{self.tau_order}"


def _radial_rule(lam: float, order: int) -> Tuple[np.ndarray, np.ndarray]:
    return composite_gauss_legendre(geometric_breaks(0.0, 1.0, lam / 16.0), order)


def _half_energy(lam: float, quad: TrialQuadrature) -> float:
    """上半球体を半空間の単位半球 B⁺₁ に引き戻して ∫|Pv_β|⁶ を計算する"""
    forms = HalfspaceBubbleForms(lam=lam, n=3, tau_order=quad.tau_order)
    rho, rho_weights = _radial_rule(lam, quad.radial_order)
    c, c_weights = np.polynomial.legendre.leggauss(quad.angular_order)
    c, c_weights = 0.5 * (c + 1.0), 0.5 * c_weights

    # 軸対称なので x' を第1軸方向に置く
    radius = rho[:, None]
    points = np.stack(
        [
            radius * np.sqrt(1.0 - c[None, :] ** 2),
            np.zeros((rho.size, c.size)),
            radius * c[None, :],
        ],
        axis=-1,
    ).reshape(-1, 3)
    values = forms.extension(points).reshape(rho.size, c.size) ** interior_exponent(3)
    return float(2.0 * np.pi * (rho_weights * rho ** 2) @ values @ c_weights)


def trial_energy(lam: float, n: int = 3, quad: Optional[TrialQuadrature] = None) -> float:
    """E(λ) = ∫_{B₁} |Pv_β|^{2n/(n-2)} dξ

    下半分は ξ_n ↦ -ξ_n の鏡映対称性から上半分と等しい。
    粗い求積と細かい求積の相対差が 1% を超えたら例外。
    """
    if n != 3:
        raise UnsupportedDimensionError(f"試行エネルギーは n=3 のみ対応しています: n={n}")
    if not 0.02 <= lam <= 0.5:
        raise InvalidParametersError(f"λ は [0.02, 0.5] の範囲が必要です: λ={lam}")
    quad = quad or TrialQuadrature()
    coarse = 2.0 * _half_energy(lam, quad)
    fine = 2.0 * _half_energy(lam, quad.refined())
    if abs(coarse - fine) > 0.01 * abs(fine):
        raise ResolutionInsufficientError(
            f"二段階の求積が一致しません: λ={lam}, {coarse:.8g} と {fine:.8g}"
        )
    logging.debug(f"試行エネルギー: λ={lam}, E={fine:.12g}, 差={abs(coarse - fine):.2e}")
    return fine


@dataclass
class ExpansionFit:
    """E(λ)/2 - ω_n ≈ A λ^k + B λ^n のフィット結果 (B は剰余項の係数)"""

    coefficient: float
    exponent: float
    remainder: float
    lambdas: np.ndarray
    energies: np.ndarray
    deficits: np.ndarray = field(repr=False)


def fit_expansion(
    lambdas: Sequence[float],
    energies: Optional[Sequence[float]] = None,
    n: int = 3,
) -> ExpansionFit:
    """E(λ)/2 - ω_n に A λ^k + B λ^n を相対誤差の最小二乗で当てはめる

    λ^n の剰余項を入れないと、λ ~ 0.1 の標本では両対数の傾きが 2 より
    かなり小さく出る。初期値は k = n-1 での線形最小二乗。
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size < 4 or np.any(lambdas > 0.2) or np.any(lambdas <= 0):
        raise InvalidParametersError(f"λ ≤ 0.2 の標本が 4 つ以上必要です: {lambdas.tolist()}")
    if energies is None:
        energies = [trial_energy(lam, n) for lam in lambdas]
    energies = np.asarray(energies, dtype=float)

    deficits = energies / 2.0 - unit_ball_volume(n)
    if np.any(deficits <= 0):
        raise NonpositiveDeficitError(
            f"E(λ) ≤ 2ω_n の標本があります (求積の破綻): {deficits.tolist()}"
        )

    def model(lam, coefficient, exponent, remainder):
        return coefficient * lam ** exponent + remainder * lam ** n

    design = np.stack([lambdas ** (n - 1), lambdas ** n], axis=1) / deficits[:, None]
    (A0, B0), *_ = np.linalg.lstsq(design, np.ones_like(deficits), rcond=None)
    try:
        params, _ = optimize.curve_fit(
            model,
            lambdas,
            deficits,
            p0=(A0, n - 1.0, B0),
            sigma=deficits,
            bounds=([-np.inf, 0.5, -np.inf], [np.inf, n - 0.25, np.inf]),
            method="trf",
            ftol=1e-15,
            xtol=1e-15,
            gtol=1e-15,
            max_nfev=10000,
        )
    except (RuntimeError, ValueError) as e:
        raise FitFailureError(f"展開の当てはめに失敗しました: {e}")
    coefficient, exponent, remainder = (float(x) for x in params)
    if not np.all(np.isfinite(params)):
        raise FitFailureError("展開の当てはめの結果が有限ではありません")

    fit = ExpansionFit(
        coefficient=coefficient,
        exponent=exponent,
        remainder=remainder,
        lambdas=lambdas,
        energies=energies,
        deficits=deficits,
    )
    logging.info(f"展開フィット: A={coefficient:.6g}, 指数={exponent:.4f}, B={remainder:.6g}")
    return fit


def trial_boundary_integral(
    lam: float,
    K: ScalarField,
    center: Optional[np.ndarray] = None,
    quad: Optional[TrialQuadrature] = None,
) -> float:
    """∫_{∂B₁} K v_β^{2(n-1)/(n-2)} ds (n=3)

    臨界指数では共形因子が相殺し、各球冠は |x'| ≤ 1 上の u_{1,λ}⁴ の積分になる。
    """
    quad = quad or TrialQuadrature()
    n = 3
    center = np.eye(n)[-1] if center is None else np.asarray(center, dtype=float)
    chart = rotation_to(center / np.linalg.norm(center))
    forms = HalfspaceBubbleForms(lam=lam, n=n)

    t, t_weights = _radial_rule(lam, quad.radial_order)
    count = 2 * quad.angular_order
    phi = 2.0 * np.pi * np.arange(count) / count
    xprime = np.stack(
        [t[:, None] * np.cos(phi)[None, :], t[:, None] * np.sin(phi)[None, :]], axis=-1
    ).reshape(-1, 2)
    upper = stereographic_lift(xprime)
    lower = upper * np.array([1.0, 1.0, -1.0])
    k_sum = K.values(upper @ chart.T) + K.values(lower @ chart.T)
    density = k_sum * forms.u1(xprime) ** boundary_exponent(n)
    table = density.reshape(t.size, count)
    return float((t_weights * t) @ table.sum(axis=1) * (2.0 * np.pi / count))


def trial_rayleigh(
    lam: float,
    K: ScalarField,
    center: Optional[np.ndarray] = None,
    quad: Optional[TrialQuadrature] = None,
) -> EnergyReport:
    """張り合わせ試行関数の Rayleigh 商 I[v_β]"""
    n = 3
    numerator = trial_energy(lam, n, quad)
    denominator = trial_boundary_integral(lam, K, center, quad)
    quotient = numerator / denominator ** (n / (n - 1))
    return EnergyReport(
        numerator=numerator,
        denominator=denominator,
        exponent=boundary_exponent(n) - 1.0,
        quotient=quotient,
        value=quotient,
    )


def make_flat_K(K0: float, delta: float, q: float, center: np.ndarray) -> ScalarField:
    """K(ξ) = K₀ + δ·min(|ξ-ξ₁|, |ξ+ξ₁|)^q (対蹠対称、±ξ₁ で最小)"""
    center = np.asarray(center, dtype=float)
    n = center.size
    if not K0 > 0 or delta < 0 or not q > n - 1:
        raise InvalidParametersError(
            f"K₀ > 0, δ ≥ 0, q > n-1 が必要です: K₀={K0}, δ={delta}, q={q}"
        )
    center = center / np.linalg.norm(center)

    def nearest(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        toward = points - center
        away = points + center
        d_toward = np.linalg.norm(toward, axis=1)
        d_away = np.linalg.norm(away, axis=1)
        use_toward = d_toward <= d_away
        offset = np.where(use_toward[:, None], toward, away)
        return np.where(use_toward, d_toward, d_away), offset

    def value(points: np.ndarray) -> np.ndarray:
        distance, _ = nearest(points)
        return K0 + delta * distance ** q

    def gradient(points: np.ndarray) -> np.ndarray:
        distance, offset = nearest(points)
        safe = np.where(distance > 0, distance, 1.0)
        scale = np.where(distance > 0, delta * q * safe ** (q - 2.0), 0.0)
        return scale[:, None] * offset

    return ScalarField(
        value_fn=value,
        gradient_fn=gradient,
        label=f"flat(K0={K0:g}, delta={delta:g}, q={q:g})",
        minimum=float(K0),
        argmin=center,
        antipodal=True,
    )


@dataclass(frozen=True)
class LimitProfile:
    """半空間の境界プロファイル φ = Σ a_k (λ_k/(λ_k²+|x'|²))^{(n-2)/2}

    各成分の調和拡張は (λ_k/((y_n+λ_k)²+|y'|²))^{(n-2)/2} で閉じる。
    """

    components: Tuple[Tuple[float, float], ...]
    n: int = 3

    @classmethod
    def bubble(cls, lam: float = 1.0, n: int = 3) -> "LimitProfile":
        return cls(((1.0, lam),), n)

    @classmethod
    def two_scale(cls, lam: float = 1.0, n: int = 3) -> "LimitProfile":
        """解でない比較用プロファイル φ_λ + 0.3 φ_{λ/5}"""
        return cls(((1.0, lam), (0.3, lam / 5.0)), n)

    @property
    def power(self) -> float:
        return (self.n - 2) / 2.0

    @property
    def smallest_scale(self) -> float:
        return min(scale for _, scale in self.components)

    @property
    def envelope(self) -> float:
        """Pφ(y) ≤ envelope·|y|^{-(n-2)}"""
        return sum(amp * scale ** self.power for amp, scale in self.components)

    def boundary(self, xprime: np.ndarray) -> np.ndarray:
        s = np.sum(np.atleast_2d(xprime) ** 2, axis=1)
        return sum(amp * (scale / (scale ** 2 + s)) ** self.power for amp, scale in self.components)

    def extension(self, y: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(y)
        lateral = np.sum(y[:, :-1] ** 2, axis=1)
        return sum(
            amp * (scale / ((y[:, -1] + scale) ** 2 + lateral)) ** self.power
            for amp, scale in self.components
        )


@dataclass
class LimitEquationReport:
    residual: float
    calibration: float
    rhs: np.ndarray
    tail_ratio: float


def limit_equation_rhs(
    profile: LimitProfile,
    points: np.ndarray,
    radius: float = 50.0,
    radial_order: int = 16,
    angular_order: int = 16,
) -> Tuple[np.ndarray, np.ndarray]:
    """∫_{ℝⁿ₊∩{|y-x'|<R}} P(x',y) Pφ(y)^{(n+2)/(n-2)} dy と切り捨て部分の上界

    x' を中心とする極座標では核とヤコビアンの積が (2/(nω_n)) cos α に
    なるので被積分関数は有界。
    """
    n = profile.n
    if n != 3:
        raise UnsupportedDimensionError(f"極限方程式の求積は n=3 のみです: n={n}")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    power = (n + 2) / (n - 2)
    constant = 2.0 / (n * unit_ball_volume(n))

    rho, rho_weights = composite_gauss_legendre(
        geometric_breaks(0.0, radius, profile.smallest_scale / 4.0), radial_order
    )
    c, c_weights = np.polynomial.legendre.leggauss(angular_order)
    c, c_weights = 0.5 * (c + 1.0), 0.5 * c_weights
    count = 2 * angular_order
    phi = 2.0 * np.pi * np.arange(count) / count
    sin_a = np.sqrt(1.0 - c ** 2)
    directions = np.stack(
        [
            (sin_a[:, None] * np.cos(phi)[None, :]).ravel(),
            (sin_a[:, None] * np.sin(phi)[None, :]).ravel(),
            np.repeat(c, count),
        ],
        axis=1,
    )
    direction_weights = np.repeat(c_weights * c, count) * (2.0 * np.pi / count)

    rhs = np.empty(len(points))
    for index, xprime in enumerate(points):
        origin = np.append(xprime, 0.0)
        samples = origin[None, None, :] + rho[:, None, None] * directions[None, :, :]
        values = profile.extension(samples.reshape(-1, n)).reshape(rho.size, -1) ** power
        rhs[index] = constant * rho_weights @ values @ direction_weights

    distance = np.maximum(radius - np.linalg.norm(points, axis=1), 1.0)
    tail = (
        2.0 * unit_ball_volume(n - 1) / (n * unit_ball_volume(n))
        * profile.envelope ** power
        * distance ** (-(n + 1))
        / (n + 1)
    )
    return rhs, tail


def limit_equation_report(
    test_points: Iterable[Sequence[float]],
    lam: float = 1.0,
    n: int = 3,
    profile: str = "bubble",
    radius: float = 50.0,
) -> LimitEquationReport:
    """極限方程式 K̂ φ^{n/(n-2)} = ∫ P(x',y) Pφ^{(n+2)/(n-2)} dy の相対残差

    K̂ は x' = 0 で較正する。
    """
    points = np.atleast_2d(np.asarray(list(test_points), dtype=float))
    if points.shape[1] != n - 1:
        raise InvalidParametersError(f"試験点は ℝ^{n - 1} の点が必要です")
    if np.any(np.linalg.norm(points, axis=1) > 2.0):
        raise InvalidParametersError("試験点は |x'| ≤ 2 の範囲が必要です")
    builders = {"bubble": LimitProfile.bubble, "two-scale": LimitProfile.two_scale}
    if profile not in builders:
        raise InvalidParametersError(f"未知のプロファイルです: {profile}")
    shape = builders[profile](lam, n)

    panel = np.vstack([np.zeros((1, n - 1)), points])
    rhs, tail = limit_equation_rhs(shape, panel, radius)
    tail_ratio = float(np.max(tail / rhs))
    if tail_ratio > 0.005:
        raise TruncationInsufficientError(
            f"打ち切り半径 R={radius} の残り部分が値の {tail_ratio:.2%} に達します"
        )

    lhs_power = shape.boundary(panel) ** (n / (n - 2))
    calibration = rhs[0] / lhs_power[0]
    mismatch = np.abs(calibration * lhs_power - rhs) / (calibration * lhs_power)
    logging.debug(f"極限方程式: K̂={calibration:.8g}, 残差={np.max(mismatch):.3e}")
    return LimitEquationReport(
        residual=float(np.max(mismatch)),
        calibration=float(calibration),
        rhs=rhs[1:],
        tail_ratio=tail_ratio,
    )


def limit_equation_residual(
    lam: float,
    test_points: Iterable[Sequence[float]],
    n: int = 3,
    profile: str = "bubble",
) -> float:
    return limit_equation_report(test_points, lam=lam, n=n, profile=profile).residual
