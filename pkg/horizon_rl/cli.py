"""
命令行入口: horizon-rl {run, verify, report, dump-dataset}

退出码: 0 成功，2 配置/格式错误，3 预算或枚举上限，4 存在未通过的检验。
"""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional, Sequence

from horizon_rl.errors import (
    BudgetExceededError,
    CapExceededError,
    ConfigError,
    DimensionMismatchError,
    InvariantViolationError,
    ParseError,
)
from horizon_rl.harness import (
    ALGORITHMS,
    ExperimentConfig,
    dump_dataset,
    report,
    run_experiment,
    run_verify_suite,
)
from horizon_rl.settings import SETTINGS, load_settings
from horizon_rl.verify import reports_frame

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_VERIFY_FAILED = 4


def int_list(text: str) -> List[int]:
    """"8,64,512" 或 "0-99"（闭区间）"""
    values: List[int] = []
    try:
        for token in text.split(","):
            token = token.strip()
            if "-" in token[1:]:
                first, last = token.split("-", 1)
                values.extend(range(int(first), int(last) + 1))
            else:
                values.append(int(token))
    except ValueError:
        raise argparse.ArgumentTypeError(f"无法解析整数列表: {text}")
    if not values:
        raise argparse.ArgumentTypeError("列表不能为空")
    return values


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="实验配置 JSON 文件")
    parser.add_argument(
        "--mdp", help="MDP 文件路径或命名生成器，如 twostate-exit、random-dense(2,2,7)"
    )
    parser.add_argument("--algo", choices=ALGORITHMS, help="学习算法")
    parser.add_argument("--epsilon", type=float)
    parser.add_argument("--delta", type=float)
    parser.add_argument("--scale", type=float, help="采样数相对理论/预设值的倍数")
    parser.add_argument("--preset", choices=("desk", "theory"))
    parser.add_argument("--seed", type=int_list, help="种子列表，如 0,1,2 或 0-99")
    parser.add_argument("--horizons", type=int_list, help="H 列表，如 8,64,512")
    parser.add_argument("--budget-episodes", type=float)
    parser.add_argument("--budget-queries", type=float)
    parser.add_argument("--n-generative", type=int, help="生成模型每个 (s, a) 的抽样数")
    parser.add_argument(
        "--reuse-phase-samples",
        action="store_true",
        default=None,
        help="用采样阶段的数据估计分位数，两个阶段共用回合",
    )
    parser.add_argument(
        "--no-runtime", action="store_true", help="runtime 列写 0，使输出逐字节可复现"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="horizon-rl", description="与时间跨度无关的回合式强化学习实验工具"
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="输出 INFO 级日志")
    parser.add_argument("--quiet", "-q", action="store_true", help="关闭日志")
    parser.add_argument("--settings", help="覆盖全局 SETTINGS 的 JSON 文件")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="在每个 (H, seed) 上运行学习流程")
    _add_experiment_flags(run)
    run.add_argument("--out", help="结果 CSV，缺省输出到标准输出")

    verify = subparsers.add_parser("verify", help="运行验证语料")
    verify.add_argument("--corpus", default="lemmas-deterministic", help="语料名或语料目录")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--out", help="检验结果 CSV，缺省输出到标准输出")

    summary = subparsers.add_parser("report", help="按 H 汇总结果表")
    summary.add_argument("table", help="run 输出的结果 CSV")
    summary.add_argument("--out", help="汇总 CSV")

    dump = subparsers.add_parser("dump-dataset", help="生成并保存一个采样数据集 (.npz)")
    _add_experiment_flags(dump)
    dump.add_argument("--out", required=True, help="数据集文件")
    return parser


def configure_logging(args: argparse.Namespace) -> None:
    if args.settings and not load_settings(args.settings):
        raise ConfigError(f"无法加载配置文件: {args.settings}")
    if args.quiet:
        SETTINGS["log.enabled"] = False
    elif args.verbose:
        SETTINGS["log.enabled"] = True
        SETTINGS["log.level"] = logging.INFO


def experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    return config.override(
        mdp=args.mdp,
        algorithm=args.algo,
        epsilon=args.epsilon,
        delta=args.delta,
        scale=args.scale,
        preset=args.preset,
        seeds=args.seed,
        horizons=args.horizons,
        budget_episodes=args.budget_episodes,
        budget_queries=args.budget_queries,
        n_generative=args.n_generative,
        reuse_phase_samples=args.reuse_phase_samples,
        record_runtime=False if args.no_runtime else None,
        out=getattr(args, "out", None) if args.command == "run" else None,
    )


def _run(args: argparse.Namespace) -> int:
    config = experiment_config(args)
    frame = run_experiment(config)
    if not config.out:
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")
    return EXIT_OK


def _verify(args: argparse.Namespace) -> int:
    """检验未通过或插件出错时返回 4；只有预算/枚举上限错误时返回 3"""
    level = logging.INFO if args.verbose else None
    result = run_verify_suite(args.corpus, args.seed, args.out, level=level)
    if not args.out:
        frame = reports_frame(result.reports)
        frame.to_csv(sys.stdout, index=False, float_format="%.17g")
    for error in result.errors:
        print(f"错误: {error}", file=sys.stderr)
    failed = result.failed
    if failed:
        print(f"{len(failed)}/{len(result.reports)} 项检验未通过", file=sys.stderr)
    if failed or any(not error.over_limit for error in result.errors):
        return EXIT_VERIFY_FAILED
    if result.errors:
        return EXIT_BUDGET
    return EXIT_OK


def _report(args: argparse.Namespace) -> int:
    text, _ = report(args.table, args.out)
    print(text)
    return EXIT_OK


def _dump(args: argparse.Namespace) -> int:
    config = experiment_config(args)
    dataset = dump_dataset(config, args.out)
    print(f"已写入 {dataset.n_lists} 个列表: {args.out}")
    return EXIT_OK


COMMANDS = {
    "run": _run,
    "verify": _verify,
    "report": _report,
    "dump-dataset": _dump,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args)
        return COMMANDS[args.command](args)
    except (
        ConfigError,
        ParseError,
        InvariantViolationError,
        DimensionMismatchError,
    ) as e:
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BudgetExceededError, CapExceededError) as e:
        print(f"错误: {e}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
