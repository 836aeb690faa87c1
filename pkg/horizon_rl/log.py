import logging
from typing import Optional

from horizon_rl.settings import SETTINGS

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class LoggerMixin(object):
    """按类名取logger，带开关的日志函数"""

    def _init_logger(self, level: Optional[int] = None) -> None:
        if level is None:
            level = SETTINGS["log.level"]

        self.logger = logging.getLogger(f"{self.__class__.__name__}")
        self.logger.setLevel(level)

        # 如果没有handler，添加一个控制台handler
        if not self.logger.handlers:
            handler = logging.StreamHandler()
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            self.logger.addHandler(handler)

        self.log_enabled = bool(SETTINGS["log.enabled"])
        self.log_level = level

    def _log(self, level: int, message: str) -> None:
        """带开关的日志函数"""
        if not getattr(self, "log_enabled", False):
            return
        if level >= self.log_level:
            self.logger.log(level, message)

    def configure_logging(
        self, enabled: bool = True, level: int = logging.INFO
    ) -> None:
        """配置日志开关和级别

        Args:
            enabled: 是否启用日志
            level: 日志级别 (logging.DEBUG, logging.INFO, logging.WARNING, logging.ERROR)
        """
        if not hasattr(self, "logger"):
            self._init_logger(level)
        self.log_enabled = enabled
        self.log_level = level
        if enabled:
            self.logger.setLevel(level)
            for handler in self.logger.handlers:
                handler.setLevel(level)
