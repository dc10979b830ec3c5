"""
Kazdan–Warner 障害モジュール
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .errors import InvalidParametersError, UnsupportedDimensionError
from .functional import ScalarField, boundary_exponent
from .geometry import GRID_DIMENSIONS, BoundaryField, SphereGrid

DEFAULT_KW_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class KillingField:
    """球面上の共形 Killing 場

    kind="rotation" は X(ξ) = Aξ (A は交代行列)、
    kind="essential" は X(ξ) = a - (a·ξ)ξ。
    """

    kind: str
    generator: np.ndarray
    label: str

    def __post_init__(self):
        if self.kind not in ("rotation", "essential"):
            raise InvalidParametersError(f"未知の Killing 場の種類です: {self.kind}")

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        if self.kind == "rotation":
            return points @ self.generator.T
        a = self.generator
        return a[None, :] - (points @ a)[:, None] * points

    def combine(self, other: "KillingField", weight: float = 1.0) -> "CombinedField":
        return CombinedField([(1.0, self), (weight, other)])


@dataclass(frozen=True, eq=False)
class CombinedField:
    """Killing 場の線形結合"""

    terms: List[Any]
    label: str = "combination"

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        return sum(coeff * X.evaluate(points) for coeff, X in self.terms)


def killing_basis(n: int) -> List[KillingField]:
    """回転 n(n-1)/2 本と本質的な場 n 本"""
    if n not in GRID_DIMENSIONS:
        raise UnsupportedDimensionError(f"Killing 基底は n ∈ {GRID_DIMENSIONS} のみです: n={n}")
    basis = []
    for i in range(n):
        for j in range(i + 1, n):
            skew = np.zeros((n, n))
            skew[i, j], skew[j, i] = -1.0, 1.0
            basis.append(KillingField("rotation", skew, f"rotation_e{i + 1}e{j + 1}"))
    for k in range(n):
        basis.append(KillingField("essential", np.eye(n)[k], f"essential_e{k + 1}"))
    return basis


def _boundary_values(v: Union[BoundaryField, np.ndarray]) -> np.ndarray:
    return v.values if isinstance(v, BoundaryField) else np.asarray(v, dtype=float)


def kw_pairing(
    K: ScalarField,
    v: Union[BoundaryField, np.ndarray],
    X: Union[KillingField, CombinedField],
    sphere: SphereGrid,
) -> float:
    """∫_{∂B₁} (∇K·X) v^{2(n-1)/(n-2)} ds

    X は接ベクトルなので外部勾配との内積が接方向微分に一致する。
    """
    nodes = sphere.nodes
    directional = np.sum(K.gradients(nodes) * X.evaluate(nodes), axis=1)
    density = np.abs(_boundary_values(v)) ** boundary_exponent(sphere.n)
    return sphere.integrate(directional * density)


@dataclass
class KWReport:
    """全基底に対するペアリングの報告"""

    pairings: List[Dict[str, Any]]
    max_abs: float
    flag: bool
    tolerance: float = field(default=DEFAULT_KW_TOLERANCE)

    def to_dict(self) -> Dict[str, Any]:
        return {"pairings": self.pairings, "max_abs": self.max_abs, "flag": self.flag}

    def value(self, label: str) -> float:
        for item in self.pairings:
            if item["label"] == label:
                return item["value"]
        raise KeyError(label)


def kw_report(
    K: ScalarField,
    v: Union[BoundaryField, np.ndarray],
    sphere: SphereGrid,
    tol_kw: Optional[float] = None,
) -> KWReport:
    """障害フラグ: max|pairing| > tol_kw·‖∇K‖∞·∫v^{2(n-1)/(n-2)}"""
    tol_kw = DEFAULT_KW_TOLERANCE if tol_kw is None else tol_kw
    values = _boundary_values(v)
    pairings = [
        {"label": X.label, "value": kw_pairing(K, values, X, sphere)}
        for X in killing_basis(sphere.n)
    ]
    max_abs = max(abs(item["value"]) for item in pairings)

    gradient_scale = float(np.max(np.linalg.norm(K.gradients(sphere.nodes), axis=1)))
    mass = sphere.integrate(np.abs(values) ** boundary_exponent(sphere.n))
    scale = gradient_scale * mass
    flag = bool(scale > 0 and max_abs > tol_kw * scale)
    logging.debug(f"KW ペアリング: 最大={max_abs:.6g}, 閾値={tol_kw * scale:.3g}, フラグ={flag}")
    return KWReport(pairings=pairings, max_abs=max_abs, flag=flag, tolerance=tol_kw)
