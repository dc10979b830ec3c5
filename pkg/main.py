#!/usr/bin/env python
"""
Poisson Ball Toolkit - 実験の実行とエラー処理
"""

import logging
import sys
import traceback

from src.config import RunConfig
from src.errors import AssertionFailedError, ConfigError, PoissonBallError
from src.experiments import ExperimentRunner

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ASSERTION = 2
EXIT_INTERRUPTED = 130


def setup_logging(verbose: bool = False):
    """ログ設定を初期化する"""
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format='[%(levelname)s] %(message)s', force=True)


def run_experiment(command: str, config: RunConfig, verbose: bool = False) -> int:
    """実験を実行して終了コードを返す"""
    try:
        ExperimentRunner(config).run(command)
        return EXIT_OK
    except KeyboardInterrupt:
        logging.info("処理が中断されました")
        return EXIT_INTERRUPTED
    except AssertionFailedError as e:
        logging.error(f"数学的な検査が失敗しました: {e}")
        return EXIT_ASSERTION
    except ConfigError as e:
        logging.error(f"設定エラー: {e}")
        return EXIT_ERROR
    except PoissonBallError as e:
        logging.error(f"{type(e).__name__}: {e}")
        if verbose:
            traceback.print_exc()
        return EXIT_ERROR
    except Exception as e:
        logging.error(f"予期しないエラーが発生しました: {e}")
        if verbose:
            traceback.print_exc()
        return EXIT_ERROR


if __name__ == '__main__':
    import cli

    sys.exit(cli.main())
