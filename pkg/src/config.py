"""
設定管理モジュール
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import ConfigError, ExponentOutOfRangeError
from .functional import exponent_range

K_KINDS = ("constant", "flat", "zn_plus_2", "zn2_plus_1")
V_KINDS = ("constant", "random", "bubble")


@dataclass
class SolverConfig:
    """劣臨界最大化の設定"""

    p: float = 3.7
    step_size: float = 1.0
    backtrack: float = 0.5
    max_step: float = 1e6
    min_step: float = 1e-12
    max_iter: int = 2000
    tol: float = 1e-15
    residual_tol: float = 1e-8
    project_positive: bool = True
    symmetrize: bool = True
    starts: int = 5
    perturbation: float = 0.2

    def validate(self, n: int) -> "SolverConfig":
        """指数範囲と許容誤差を確認する"""
        low, high = exponent_range(n)
        if not low <= self.p < high:
            raise ExponentOutOfRangeError(f"p は [{low:g}, {high:g}) の範囲が必要です: p={self.p}")
        if not 0 < self.backtrack < 1:
            raise ConfigError(f"backtrack は (0, 1) の範囲が必要です: {self.backtrack}")
        for name in ("step_size", "max_step", "min_step", "tol", "residual_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} は正の値が必要です: {getattr(self, name)}")
        if self.max_iter < 1 or self.starts < 1:
            raise ConfigError("max_iter と starts は 1 以上が必要です")
        return self

    def with_exponent(self, p: float) -> "SolverConfig":
        return replace(self, p=float(p))


@dataclass
class RunConfig:
    """実験の実行設定 (JSON のキーはフィールド名と一致)"""

    n: int = 3
    resolution: int = 16
    radial_order: int = 16
    grading: float = 2.0
    mode: str = "matrix-free"
    row_normalized: bool = True
    memory_budget_mb: float = 512.0
    K: Dict[str, Any] = field(default_factory=lambda: {"kind": "constant", "value": 1.0})
    v: str = "constant"
    solver: SolverConfig = field(default_factory=SolverConfig)
    p_schedule: List[float] = field(default_factory=lambda: [3.8, 3.75, 3.7, 3.65])
    lambdas: List[float] = field(default_factory=lambda: [0.05, 0.075, 0.1, 0.15])
    samples: int = 200
    out: str = "results"
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.solver, dict):
            self.solver = self._load_solver_config(self.solver)
        if self.threads is None:
            self.threads = self._load_thread_config()

    @classmethod
    def load(cls, path: Optional[Path] = None) -> "RunConfig":
        """JSON 設定ファイルを読み込む (未指定なら既定値)"""
        if path is None:
            return cls().validate()
        path = Path(path).expanduser()
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"設定ファイルが見つかりません: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"設定ファイルの JSON が不正です: {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"設定ファイルのトップレベルはオブジェクトが必要です: {path}")

        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"未知の設定キーがあります: {unknown}")
        logging.debug(f"設定ファイルを読み込みました: {path}")
        return cls(**data).validate()

    @staticmethod
    def _load_solver_config(data: Dict[str, Any]) -> SolverConfig:
        known = {f.name for f in fields(SolverConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"未知のソルバー設定キーがあります: {unknown}")
        return SolverConfig(**data)

    @staticmethod
    def _load_thread_config() -> int:
        """スレッド数を環境変数から読み込む (既定は利用可能コア数)"""
        raw = os.environ.get("POISSON_BALL_THREADS")
        if raw:
            try:
                return max(1, int(raw))
            except ValueError:
                logging.warning(f"POISSON_BALL_THREADS が整数ではありません: {raw}")
        return os.cpu_count() or 1

    def apply_overrides(self, **overrides: Any) -> "RunConfig":
        """CLI フラグで上書きする (None は無視)"""
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "p":
                self.solver = self.solver.with_exponent(value)
            elif key == "lambdas":
                self.lambdas = list(value)
            elif key in {f.name for f in fields(self)}:
                setattr(self, key, value)
            else:
                raise ConfigError(f"未知の上書き項目です: {key}")
        return self.validate()

    def validate(self) -> "RunConfig":
        if self.n not in (2, 3):
            raise ConfigError(f"n は 2 または 3 が必要です: {self.n}")
        if self.resolution < 4 or self.resolution % 2:
            raise ConfigError(f"resolution は 4 以上の偶数が必要です: {self.resolution}")
        if self.radial_order < 4:
            raise ConfigError(f"radial_order は 4 以上が必要です: {self.radial_order}")
        if self.grading < 1:
            raise ConfigError(f"grading は 1 以上が必要です: {self.grading}")
        if self.mode not in ("matrix-free", "cached"):
            raise ConfigError(f"mode は matrix-free か cached です: {self.mode}")
        if self.K.get("kind") not in K_KINDS:
            raise ConfigError(f"K.kind は {K_KINDS} のいずれかです: {self.K.get('kind')}")
        if self.v not in V_KINDS:
            raise ConfigError(f"v は {V_KINDS} のいずれかです: {self.v}")
        if self.samples < 1:
            raise ConfigError(f"samples は 1 以上が必要です: {self.samples}")
        if self.n >= 3:
            try:
                self.solver.validate(self.n)
            except ExponentOutOfRangeError as e:
                raise ConfigError(str(e))
        return self

    @property
    def out_dir(self) -> Path:
        return Path(self.out).expanduser()

    @property
    def has_flat_K(self) -> bool:
        return self.K.get("kind") == "flat"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
