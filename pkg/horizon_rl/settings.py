"""
全局配置表

沿用点分键的扁平字典，所有模块从这里读取默认值，
可以通过 load_settings 用 JSON 文件覆盖。
"""
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict

SETTINGS: Dict[str, Any] = {
    "log.enabled": True,
    "log.level": logging.WARNING,

    "oracle.policy_cap": 10**6,
    "oracle.trajectory_cap": 10**6,
    "oracle.max_reach_steps": 10**4,

    "budget.episodes": 10**6,
    "budget.queries": 10**7,

    "sim.schedule_samples": 10**5,

    "verify.trials": 10**5,
    "verify.corpus_path": str(Path(__file__).parent / "config" / "corpora"),
    "verify.stationary_quantile_policy_cap": 10**5,
}


def load_settings(setting_path: str) -> bool:
    """加载JSON配置并覆盖SETTINGS中的同名键

    Args:
        setting_path: JSON文件路径

    Returns:
        bool: 加载成功返回True，失败返回False
    """
    logger = logging.getLogger("SETTINGS")

    if not os.path.exists(setting_path):
        logger.warning(f"配置文件不存在: {setting_path}")
        return False

    if not setting_path.endswith(".json"):
        logger.warning(f"配置文件格式错误，请提供JSON文件: {setting_path}")
        return False

    try:
        with open(setting_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        logger.error(f"JSON解析错误 {setting_path}: {e}")
        return False

    if not isinstance(data, dict):
        logger.error(f"配置文件格式错误，内容应为JSON对象: {setting_path}")
        return False

    unknown = [key for key in data if key not in SETTINGS]
    if unknown:
        logger.warning(f"忽略未知配置项: {unknown}")

    for key, value in data.items():
        if key in SETTINGS:
            SETTINGS[key] = value
    return True
