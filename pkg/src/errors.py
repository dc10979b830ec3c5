"""
例外定義モジュール
"""


class PoissonBallError(Exception):
    """ライブラリ共通の基底例外"""


class UnsupportedDimensionError(PoissonBallError, ValueError):
    """対応していない次元"""


class InvalidResolutionError(PoissonBallError, ValueError):
    """球面格子の解像度が不正"""


class InvalidOrderError(PoissonBallError, ValueError):
    """動径求積の次数が不正"""


class InvalidGradingError(PoissonBallError, ValueError):
    """動径グレーディング指数が不正"""


class PoleSingularityError(PoissonBallError, ValueError):
    """立体射影の極での特異性"""


class GridMismatchError(PoissonBallError, ValueError):
    """場と格子が一致しない"""


class DimensionMismatchError(PoissonBallError, ValueError):
    """格子や演算子の次元が一致しない"""


class BoundaryTouchError(PoissonBallError, ValueError):
    """内部点が境界に接している"""


class MemoryBudgetExceededError(PoissonBallError):
    """キャッシュ行列がメモリ予算を超える"""


class ZeroFieldError(PoissonBallError, ValueError):
    """恒等的にゼロの場"""


class ExponentOutOfRangeError(PoissonBallError, ValueError):
    """指数 p が許容範囲外"""


class InvalidParametersError(PoissonBallError, ValueError):
    """関数族のパラメータが不正"""


class ResolutionInsufficientError(PoissonBallError):
    """二段階の求積が一致しない"""


class NonpositiveDeficitError(PoissonBallError):
    """エネルギー超過分が正でない"""


class TruncationInsufficientError(PoissonBallError):
    """半空間の打ち切り誤差が大きすぎる"""


class DivergedError(PoissonBallError):
    """上昇ステップが受理されないまま縮小しきった"""


class DegenerateFieldError(PoissonBallError):
    """反復中に場が潰れた"""


class FitFailureError(PoissonBallError):
    """バブル形状のフィットに失敗"""


class ConfigError(PoissonBallError):
    """設定の読み込み・検証エラー"""


class AssertionFailedError(PoissonBallError):
    """実験の数学的チェックが失敗した"""
