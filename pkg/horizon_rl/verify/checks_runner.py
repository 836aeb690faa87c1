"""
检验插件的基类与运行器

插件是 verify 目录下以 check.py 结尾的模块，模块中继承 CheckBase 的类会被自动发现，
并从语料目录中读取 <模块名>_setting.json 作为配置。没有配置文件的模块不运行；
有配置文件但加载、初始化或执行失败的插件记入 ChecksRunner.errors。
"""
from __future__ import annotations

import importlib.util
import inspect
import json
import logging
import math
import os
import zlib
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from horizon_rl.errors import BudgetExceededError, CapExceededError, ConfigError
from horizon_rl.log import LoggerMixin
from horizon_rl.settings import SETTINGS
from horizon_rl.sim_env import RngStream

REPORT_COLUMNS = [
    "lemma_id",
    "instance_id",
    "hypothesis_ok",
    "lhs",
    "rhs",
    "slack",
    "pass",
]

REL_TOL = 1e-9
ABS_TOL = 1e-15


@dataclass(frozen=True)
class CheckReport:
    """一次不等式检验：约定为 lhs <= rhs，slack = rhs - lhs

    passed 只表示数值上不等式是否成立；假设不满足时 hypothesis_ok 为 False，
    这种情况下不等式不成立不算失败。
    """

    lemma_id: str
    instance_id: str
    hypothesis_ok: bool
    lhs: float
    rhs: float
    slack: float
    passed: bool

    @property
    def failed(self) -> bool:
        return self.hypothesis_ok and not self.passed

    def as_row(self) -> Dict[str, Any]:
        return {
            "lemma_id": self.lemma_id,
            "instance_id": self.instance_id,
            "hypothesis_ok": self.hypothesis_ok,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "pass": self.passed,
        }


@dataclass(frozen=True)
class CheckError:
    """插件在某个阶段失败：import、config、init 或 run"""

    check: str
    stage: str
    error: Exception

    @property
    def over_limit(self) -> bool:
        """失败原因是枚举上限或采样预算"""
        return isinstance(self.error, (CapExceededError, BudgetExceededError))

    def __str__(self) -> str:
        return f"{self.check} ({self.stage}): {self.error}"


def leq(
    lhs: float, rhs: float, rel_tol: float = REL_TOL, abs_tol: float = ABS_TOL
) -> bool:
    """带相对容差的 lhs <= rhs，rhs 为 inf 时恒成立"""
    if math.isnan(lhs) or math.isnan(rhs):
        return False
    if math.isinf(rhs) and rhs > 0:
        return True
    return lhs <= rhs + max(rel_tol * max(abs(lhs), abs(rhs)), abs_tol)


def make_report(
    lemma_id: str,
    instance_id: str,
    hypothesis_ok: bool,
    lhs: float,
    rhs: float,
    holds: Optional[bool] = None,
    slack: Optional[float] = None,
    rel_tol: float = REL_TOL,
) -> CheckReport:
    """holds 缺省按 lhs <= rhs（带容差）判断"""
    lhs, rhs = float(lhs), float(rhs)
    if holds is None:
        holds = leq(lhs, rhs, rel_tol)
    if slack is None:
        slack = rhs - lhs
    return CheckReport(
        lemma_id, instance_id, bool(hypothesis_ok), lhs, rhs, float(slack), bool(holds)
    )


def times_power(coefficient: float, base: float, exponent: float, x: float) -> float:
    """coefficient·base^exponent·x，在对数空间计算，溢出时返回 inf"""
    if x == 0.0:
        return 0.0
    log_value = math.log(coefficient) + exponent * math.log(base) + math.log(abs(x))
    if log_value > 700.0:
        return math.copysign(math.inf, x)
    return math.copysign(math.exp(log_value), x)


def divide_power(x: float, coefficient: float, base: float, exponent: float) -> float:
    """x / (coefficient·base^exponent)"""
    if x == 0.0:
        return 0.0
    log_value = math.log(abs(x)) - math.log(coefficient) - exponent * math.log(base)
    if log_value < -700.0:
        return 0.0
    return math.copysign(math.exp(log_value), x)


def binomial_limit(delta: float, trials: int) -> float:
    """蒙特卡洛失败频率的上限 delta + 3·sqrt(delta(1-delta)/trials)"""
    return delta + 3.0 * math.sqrt(delta * (1.0 - delta) / trials)


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class CheckBase(LoggerMixin):
    """检验插件基类，子类实现 run(rng) 返回 CheckReport 列表"""

    lemma_ids: Tuple[str, ...] = ()

    def __init__(self) -> None:
        self.config: Dict[str, Any] = {}
        self._init_logger()

    def load_config(self, config_path: str) -> bool:
        """加载指定路径的JSON配置文件并赋值给config

        Args:
            config_path: JSON文件路径

        Returns:
            bool: 加载成功返回True，失败返回False
        """
        if not os.path.exists(config_path):
            self._log(logging.WARNING, f"配置文件不存在: {config_path}")
            return False

        if not config_path.endswith(".json"):
            self._log(logging.WARNING, f"配置文件格式错误，请提供JSON文件: {config_path}")
            return False

        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config_data = json.load(f)
        except json.JSONDecodeError as e:
            self._log(logging.ERROR, f"JSON解析错误 {config_path}: {e}")
            return False

        if not isinstance(config_data, dict):
            self._log(logging.ERROR, f"配置文件格式错误，内容应为JSON对象: {config_path}")
            return False

        self.config = config_data
        self._log(logging.INFO, f"成功加载配置文件: {config_path}")
        return True

    def param(self, key: str, default: Any) -> Any:
        return self.config.get(key, default)

    def trials(self) -> int:
        return int(self.config.get("trials", SETTINGS["verify.trials"]))

    def pre_run(self) -> None:
        pass

    def run(self, rng: RngStream) -> List[CheckReport]:
        return []


class ChecksRunner(LoggerMixin):
    """扫描插件目录，按语料配置实例化并执行检验"""

    def __init__(self, conf_path: Optional[str] = None) -> None:
        self.conf_path = conf_path
        self._checks: List[CheckBase] = []
        self._errors: List[CheckError] = []
        self._init_logger()

    def set_conf_path(self, conf_path: str) -> None:
        self.conf_path = conf_path

    @property
    def checks(self) -> List[CheckBase]:
        return list(self._checks)

    @property
    def errors(self) -> List[CheckError]:
        return list(self._errors)

    def _fail(self, check: str, stage: str, error: Exception, message: str) -> None:
        self._log(logging.ERROR, message)
        self._errors.append(CheckError(check, stage, error))

    def find_checks(self, checks_path: Optional[str] = None) -> List[CheckBase]:
        """扫描指定目录，查找 check.py 文件并实例化继承 CheckBase 的类"""
        if checks_path is None:
            checks_path = os.path.dirname(os.path.abspath(__file__))
        if not os.path.exists(checks_path):
            self._log(logging.ERROR, f"目录不存在: {checks_path}")
            return self.checks

        self._log(logging.INFO, f"扫描目录: {checks_path}")
        for filename in sorted(os.listdir(checks_path)):
            if not filename.endswith("check.py"):
                continue
            module_name = filename[:-3]
            setting = os.path.join(self.conf_path or "", module_name + "_setting.json")
            if not os.path.exists(setting):
                self._log(logging.DEBUG, f"语料中没有 {module_name} 的配置，跳过")
                continue

            file_path = os.path.join(checks_path, filename)
            spec = importlib.util.spec_from_file_location(module_name, file_path)
            if spec is None or spec.loader is None:
                error = ImportError(f"无法创建模块规范: {file_path}")
                self._fail(module_name, "import", error, str(error))
                continue
            module = importlib.util.module_from_spec(spec)
            try:
                spec.loader.exec_module(module)
            except Exception as e:
                self._fail(module_name, "import", e, f"导入模块失败 {file_path}: {e}")
                continue

            for name, obj in inspect.getmembers(module, inspect.isclass):
                if obj.__module__ != module_name or not issubclass(obj, CheckBase):
                    continue
                if obj is CheckBase:
                    continue
                self._log(logging.INFO, f"找到检验类: {name}")
                try:
                    check = obj()
                    check.log_enabled = self.log_enabled
                    check.log_level = self.log_level
                    if not check.load_config(setting):
                        error = ConfigError(f"配置文件无法加载: {setting}")
                        self._fail(name, "config", error, f"{name}: {error}")
                        continue
                    check.pre_run()
                    self._checks.append(check)
                except Exception as e:
                    self._fail(name, "init", e, f"初始化 {name} 失败: {e}")
        return self.checks

    def run_checks(self, rng: RngStream) -> List[CheckReport]:
        """依次执行全部检验，每个检验使用按类名派生的独立随机子流"""
        reports: List[CheckReport] = []
        for check in self._checks:
            name = check.__class__.__name__
            try:
                found = check.run(rng.substream(stream_key(name)))
            except Exception as e:
                self._fail(name, "run", e, f"执行 {name}.run() 失败: {e}")
                continue
            failed = sum(report.failed for report in found)
            level = logging.WARNING if failed else logging.INFO
            self._log(level, f"{name}: {len(found)} 项检验，失败 {failed} 项")
            reports.extend(found)
        return reports


def reports_frame(reports: List[CheckReport]) -> pd.DataFrame:
    rows = [report.as_row() for report in reports]
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_reports(reports: List[CheckReport], path: str) -> pd.DataFrame:
    frame = reports_frame(reports)
    frame.to_csv(path, index=False, float_format="%.17g")
    return frame
