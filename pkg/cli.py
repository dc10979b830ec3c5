#!/usr/bin/env python
"""
Poisson Ball Toolkit CLI
コマンドラインインターフェースモジュール
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

# srcディレクトリをPythonパスに追加
current_dir = Path(__file__).parent
sys.path.insert(0, str(current_dir))

import main as runner  # noqa: E402
from src.config import K_KINDS, V_KINDS, RunConfig  # noqa: E402
from src.errors import ConfigError  # noqa: E402
from src.experiments import COMMANDS  # noqa: E402


def _lambda_list(text: str) -> List[float]:
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"λ はカンマ区切りの数値で指定してください: {text}")


def _common_options() -> argparse.ArgumentParser:
    """全サブコマンドに共通のフラグ"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON 設定ファイル")
    common.add_argument("--n", type=int, help="次元 (2 または 3)")
    common.add_argument("--resolution", type=int, help="球面格子の解像度")
    common.add_argument("--p", type=float, help="劣臨界指数 p")
    common.add_argument("--lambda", dest="lambdas", type=_lambda_list, help="λ の列 (例: 0.05,0.1)")
    common.add_argument("--seed", type=int, help="乱数シード")
    common.add_argument("--out", help="出力ディレクトリ")
    common.add_argument("--threads", type=int, help="スレッド数 (既定: POISSON_BALL_THREADS またはコア数)")
    common.add_argument("--mode", choices=["matrix-free", "cached"], help="演算子モード")
    common.add_argument("--K", dest="K", choices=K_KINDS, help="曲率関数 K の種類")
    common.add_argument("--v", dest="v", choices=V_KINDS, help="境界場 v の種類")
    common.add_argument("-v", "--verbose", action="store_true", help="詳細ログを表示")
    return common


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """コマンドライン引数をパース"""
    parser = argparse.ArgumentParser(
        prog="poisson-ball",
        description="単位球体上の Poisson 核積分方程式の数値実験",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
使用例:
  poisson-ball verify-inequality --n 3 --resolution 16
  poisson-ball kazdan-warner --K zn_plus_2 --v constant
  poisson-ball trial-energy --n 3 --lambda 0.05,0.075,0.1,0.15
  poisson-ball solve --p 3.7 --out results/solve -v

終了コード:
  0    すべての検査に成功
  1    使い方・設定・計算のエラー
  2    数学的な検査の失敗 (report.json は書き出し済み)
  130  中断

環境変数（オプション）:
  POISSON_BALL_THREADS           # 既定のスレッド数
        """
    )
    parser.add_argument(
        "--version",
        action="version",
        version="%(prog)s 1.0.0"
    )

    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    common = _common_options()
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=f"{command} 実験を実行")
    return parser.parse_args(argv)


def build_config(args: argparse.Namespace) -> RunConfig:
    """設定ファイルを読み込み、フラグで上書きする"""
    config = RunConfig.load(args.config)
    K = None
    if args.K is not None:
        K = {"kind": args.K, "value": 1.0} if args.K == "constant" else {"kind": args.K}
    return config.apply_overrides(
        n=args.n,
        resolution=args.resolution,
        p=args.p,
        lambdas=args.lambdas,
        seed=args.seed,
        out=args.out,
        threads=args.threads,
        mode=args.mode,
        K=K,
        v=args.v,
    )


def main(argv: Optional[List[str]] = None) -> int:
    """メインエントリーポイント"""
    try:
        args = parse_arguments(argv)
    except SystemExit as e:
        # argparse の使い方エラーは 1 に揃える
        return runner.EXIT_OK if not e.code else runner.EXIT_ERROR

    runner.setup_logging(args.verbose)
    try:
        config = build_config(args)
    except ConfigError as e:
        logging.error(f"設定エラー: {e}")
        return runner.EXIT_ERROR
    except KeyboardInterrupt:
        print("\n処理を中断しました")
        return runner.EXIT_INTERRUPTED

    return runner.run_experiment(args.command, config, args.verbose)


if __name__ == "__main__":
    sys.exit(main())
