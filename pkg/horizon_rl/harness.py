"""
实验入口

按配置在每个 (H, seed) 上运行学习流程，用 exact_oracle 精确评估返回的策略，
输出结果表；运行验证语料；汇总结果表。
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from horizon_rl.collector import SampleCollector
from horizon_rl.errors import ConfigError, ParseError
from horizon_rl.exact_oracle import finite_horizon_value, optimal_nonstationary
from horizon_rl.instances import resolve_mdp
from horizon_rl.log import LoggerMixin
from horizon_rl.mdp_core import FiniteMdp, Policy, TrajectoryDataset
from horizon_rl.mdp_io import save_dataset
from horizon_rl.planner import (
    PRESETS,
    make_parameters,
    run_generative_pipeline,
    run_pessimistic_pipeline,
)
from horizon_rl.settings import SETTINGS
from horizon_rl.sim_env import EpisodicEnv, RngStream
from horizon_rl.verify import CheckError, CheckReport, ChecksRunner, write_reports

ALGORITHMS = ("pessimistic", "generative", "oracle-only")

RESULT_COLUMNS = [
    "H",
    "seed",
    "algorithm",
    "episodes_or_batches",
    "suboptimality",
    "runtime",
    "optimal_value",
    "policy_value",
    "episodes",
    "queries",
    "epsilon_hat",
    "pessimistic_value",
    "contains_true_model",
    "lower_bound_ok",
    "within_certificate",
    # 采样数及其理论值
    "preset",
    "scale",
    "epsilon_est",
    "n_est",
    "n_collect",
    "n_generative",
    "log10_theory_epsilon_est",
    "log10_theory_n_est",
    "log10_theory_n_collect",
    "log10_theory_n_generative",
    "reuse_phase_samples",
    "full_batches",
    "optimistic_value",
    "planned_value",
]

SUMMARY_COLUMNS = [
    "algorithm",
    "H",
    "runs",
    "median_suboptimality",
    "q25_suboptimality",
    "q75_suboptimality",
    "iqr_suboptimality",
    "median_episodes_or_batches",
    "total_episodes_or_batches",
]

VALUE_TOL = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    """一次实验的全部参数

    mdp 为文件路径或命名生成器（如 "random-dense(2,2,7)"），H 由 horizons 覆盖。
    record_runtime 为 False 时 runtime 列写 0，输出文件逐字节可复现。
    """

    mdp: str = "twostate-exit"
    algorithm: str = "pessimistic"
    epsilon: float = 0.5
    delta: float = 0.25
    scale: float = 1.0
    horizons: Tuple[int, ...] = (8,)
    seeds: Tuple[int, ...] = (0,)
    out: Optional[str] = None
    budget_episodes: Optional[float] = None
    budget_queries: Optional[float] = None
    preset: str = "desk"
    reuse_phase_samples: bool = False
    epsilon_est: Optional[float] = None
    n_est: Optional[int] = None
    n_collect: Optional[int] = None
    n_generative: Optional[int] = None
    record_runtime: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"未知算法 {self.algorithm}，可选 {ALGORITHMS}")
        if self.preset not in PRESETS:
            raise ConfigError(f"未知预设 {self.preset}，可选 {PRESETS}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError(f"epsilon 必须在 (0,1] 内: {self.epsilon}")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError(f"delta 必须在 (0,1] 内: {self.delta}")
        if not self.scale > 0:
            raise ConfigError(f"scale 必须为正: {self.scale}")
        if not self.horizons:
            raise ConfigError("horizons 不能为空")
        if any(h < 1 for h in self.horizons):
            raise ConfigError(f"horizon 必须为正整数: {self.horizons}")
        if not self.seeds:
            raise ConfigError("seeds 不能为空")
        if any(s < 0 for s in self.seeds):
            raise ConfigError(f"seed 必须非负: {self.seeds}")
        for name in ("budget_episodes", "budget_queries"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigError(f"{name} 不能为负: {value}")

    @property
    def episode_budget(self) -> float:
        if self.budget_episodes is None:
            return SETTINGS["budget.episodes"]
        return self.budget_episodes

    @property
    def query_budget(self) -> float:
        if self.budget_queries is None:
            return SETTINGS["budget.queries"]
        return self.budget_queries

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"未知配置项: {unknown}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"配置项类型错误: {e}")

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        if not os.path.exists(path):
            raise ConfigError(f"配置文件不存在: {path}")
        if not path.endswith(".json"):
            raise ConfigError(f"配置文件格式错误，请提供JSON文件: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"JSON解析错误 {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"配置文件格式错误，内容应为JSON对象: {path}")
        return cls.from_dict(data)

    def override(self, **changes: Any) -> "ExperimentConfig":
        """用非 None 的值覆盖对应字段，命令行参数走这里"""
        changes = {key: value for key, value in changes.items() if value is not None}
        if not changes:
            return self
        return self.from_dict({**dataclasses.asdict(self), **changes})

    def as_dict(self) -> Dict[str, Any]:
        data = dataclasses.asdict(self)
        data["horizons"] = list(self.horizons)
        data["seeds"] = list(self.seeds)
        return data


def cell_stream(seed: int, horizon: int) -> RngStream:
    """(H, seed) 单元的随机流，与 horizons 列表的顺序和内容无关"""
    return RngStream(seed).substream(horizon)


class ExperimentRunner(LoggerMixin):
    """逐个 (H, seed) 运行学习流程并精确评估"""

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        self._init_logger()

    def mdp_at(self, horizon: int) -> FiniteMdp:
        return resolve_mdp(self.config.mdp, horizon)

    def _learn(self, mdp: FiniteMdp, rng: RngStream) -> Tuple[Policy, Dict[str, Any]]:
        """返回策略与结果行中由学习流程决定的列"""
        config = self.config
        if config.algorithm == "oracle-only":
            policy, _ = optimal_nonstationary(mdp)
            return policy, {"episodes_or_batches": 0, "episodes": 0, "queries": 0}

        if config.algorithm == "pessimistic":
            env = EpisodicEnv(mdp, config.episode_budget)
            policy, diagnostics = run_pessimistic_pipeline(
                env,
                config.epsilon,
                config.delta,
                config.scale,
                rng,
                preset=config.preset,
                reuse_phase_samples=config.reuse_phase_samples,
                epsilon_est=config.epsilon_est,
                n_est=config.n_est,
                n_collect=config.n_collect,
            )
            info = diagnostics.as_row()
            episodes = env.episodes
            info.update(episodes_or_batches=episodes, episodes=episodes, queries=0)
            return policy, info

        policy, diagnostics = run_generative_pipeline(
            mdp,
            config.epsilon,
            config.delta,
            config.scale,
            rng,
            preset=config.preset,
            budget=config.query_budget,
            n_generative=config.n_generative,
        )
        info = diagnostics.as_row()
        info.update(
            episodes_or_batches=diagnostics.batches,
            episodes=0,
            queries=diagnostics.queries,
        )
        return policy, info

    def run_cell(self, horizon: int, seed: int) -> Dict[str, Any]:
        mdp = self.mdp_at(horizon)
        start = time.perf_counter()
        policy, info = self._learn(mdp, cell_stream(seed, horizon))
        runtime = time.perf_counter() - start if self.config.record_runtime else 0.0

        optimal_policy, _ = optimal_nonstationary(mdp)
        optimal_value = finite_horizon_value(mdp, optimal_policy)
        value = finite_horizon_value(mdp, policy)
        row: Dict[str, Any] = {column: None for column in RESULT_COLUMNS}
        row.update(info)
        row.update(
            H=horizon,
            seed=seed,
            algorithm=self.config.algorithm,
            suboptimality=optimal_value - value,
            runtime=runtime,
            optimal_value=optimal_value,
            policy_value=value,
        )
        if row["epsilon_hat"] is not None:
            gap = optimal_value - value
            row["within_certificate"] = bool(gap <= row["epsilon_hat"] + VALUE_TOL)
        if row["contains_true_model"]:
            lower = row["pessimistic_value"]
            row["lower_bound_ok"] = bool(lower <= value + VALUE_TOL)
        self._log(
            logging.INFO, f"H={horizon} seed={seed}: 次优差 {row['suboptimality']:.6g}"
        )
        return row

    def run(self) -> pd.DataFrame:
        config = self.config
        self._log(
            logging.INFO,
            f"开始实验: {config.algorithm} on {config.mdp}，"
            f"H={list(config.horizons)}，{len(config.seeds)} 个种子",
        )
        rows = [self.run_cell(h, s) for h in config.horizons for s in config.seeds]
        frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
        frame = frame.sort_values(["H", "seed"], kind="mergesort")
        return frame.reset_index(drop=True)


def write_table(frame: pd.DataFrame, path: str) -> None:
    frame.to_csv(path, index=False, float_format="%.17g")


def run_experiment(config: ExperimentConfig) -> pd.DataFrame:
    """运行实验，给出 out 时写出CSV"""
    frame = ExperimentRunner(config).run()
    if config.out:
        write_table(frame, config.out)
    return frame


def dump_dataset(
    config: ExperimentConfig,
    path: str,
    horizon: Optional[int] = None,
    seed: Optional[int] = None,
) -> TrajectoryDataset:
    """按配置的采样参数生成一个数据集并保存

    与悲观流程在同一 (H, seed) 单元上采到的数据集相同。
    """
    horizon = config.horizons[0] if horizon is None else horizon
    seed = config.seeds[0] if seed is None else seed
    mdp = resolve_mdp(config.mdp, horizon)
    parameters = make_parameters(
        mdp.n_states,
        mdp.n_actions,
        horizon,
        config.epsilon,
        config.delta,
        config.scale,
        config.preset,
        epsilon_est=config.epsilon_est,
        n_est=config.n_est,
        n_collect=config.n_collect,
    )
    if not math.isfinite(parameters.n_collect):
        log10_n = parameters.theory.log10_n_collect
        raise ConfigError(f"N_collect 溢出: 10^{log10_n:.4g}")
    collector = SampleCollector(EpisodicEnv(mdp, config.episode_budget))
    rng = cell_stream(seed, horizon).substream(1)
    dataset = collector.collect_samples(int(parameters.n_collect), rng, config.scale)
    save_dataset(dataset, path)
    return dataset


def corpus_dir(corpus: str, corpus_path: Optional[str] = None) -> str:
    """语料名或语料目录路径"""
    if os.path.isdir(corpus):
        return corpus
    root = SETTINGS["verify.corpus_path"] if corpus_path is None else corpus_path
    path = os.path.join(root, corpus)
    if not os.path.isdir(path):
        available = sorted(os.listdir(root)) if os.path.isdir(root) else []
        raise ConfigError(f"未知语料 {corpus}，可用语料 {available}")
    return path


def failed_reports(reports: Sequence[CheckReport]) -> List[CheckReport]:
    return [r for r in reports if r.failed]


@dataclass(frozen=True)
class VerifySuiteResult:
    """检验报告，以及加载、初始化或执行失败的插件"""

    reports: List[CheckReport]
    errors: List[CheckError]

    @property
    def failed(self) -> List[CheckReport]:
        return failed_reports(self.reports)

    @property
    def ok(self) -> bool:
        return not self.failed and not self.errors


def run_verify_suite(
    corpus: str,
    seed: int = 0,
    out: Optional[str] = None,
    corpus_path: Optional[str] = None,
    level: Optional[int] = None,
) -> VerifySuiteResult:
    """运行语料中配置了的全部检验，给出 out 时写出CSV"""
    runner = ChecksRunner(corpus_dir(corpus, corpus_path))
    if level is not None:
        runner.configure_logging(True, level)
    runner.find_checks()
    reports = runner.run_checks(RngStream(seed))
    if out:
        write_reports(reports, out)
    return VerifySuiteResult(reports, runner.errors)


def read_table(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise ConfigError(f"结果表不存在: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise ParseError(f"结果表无法解析 {path}: {e}")

    required = ("H", "suboptimality", "episodes_or_batches")
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ParseError(f"结果表缺少列 {missing}: {path}")
    for column in required:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna()
        if bad.any():
            # 表头是第1行
            line = int(bad.to_numpy().nonzero()[0][0]) + 2
            raise ParseError(f"列 {column} 含非数值", line)
        frame[column] = values
    if "algorithm" not in frame.columns:
        frame["algorithm"] = ""
    return frame


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """按 (algorithm, H) 汇总次优差的中位数与四分位距"""
    grouped = frame.groupby(["algorithm", "H"], sort=True)
    subopt = grouped["suboptimality"]
    summary = pd.DataFrame(
        {
            "runs": grouped.size(),
            "median_suboptimality": subopt.median(),
            "q25_suboptimality": subopt.quantile(0.25),
            "q75_suboptimality": subopt.quantile(0.75),
            "median_episodes_or_batches": grouped["episodes_or_batches"].median(),
            "total_episodes_or_batches": grouped["episodes_or_batches"].sum(),
        }
    )
    summary["iqr_suboptimality"] = (
        summary["q75_suboptimality"] - summary["q25_suboptimality"]
    )
    return summary.reset_index()[SUMMARY_COLUMNS]


def horizon_trend(summary: pd.DataFrame) -> Dict[str, float]:
    """每个算法的中位次优差随 H 增大时的最大增量，单个 H 时为 0"""
    trend = {}
    for algorithm, group in summary.groupby("algorithm", sort=True):
        medians = group.sort_values("H")["median_suboptimality"].to_numpy()
        increases = medians[1:] - medians[:-1]
        trend[str(algorithm)] = float(max(increases.max(initial=0.0), 0.0))
    return trend


def report(path: str, out: Optional[str] = None) -> Tuple[str, pd.DataFrame]:
    """读结果表，返回文本汇总与汇总表，给出 out 时写出汇总CSV"""
    summary = summarize(read_table(path))
    lines = [summary.to_string(index=False)]
    for algorithm, increase in horizon_trend(summary).items():
        name = algorithm or "-"
        lines.append(f"{name}: 中位次优差随 H 的最大增量 {increase:.6g}")
    if out:
        write_table(summary, out)
    return "\n".join(lines), summary
