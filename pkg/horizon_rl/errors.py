"""异常类型"""
from typing import Optional


class HorizonRLError(Exception):
    pass


class ParseError(HorizonRLError):
    """文件格式错误，携带出错行号（从1开始）"""

    def __init__(self, message: str, line_no: Optional[int] = None) -> None:
        self.line_no = line_no
        if line_no is not None:
            message = f"第{line_no}行: {message}"
        super().__init__(message)


class InvariantViolationError(HorizonRLError):
    pass


class CapExceededError(HorizonRLError):
    """枚举规模超过上限"""

    def __init__(self, required: int, cap: int, what: str = "枚举") -> None:
        self.required = required
        self.cap = cap
        super().__init__(f"{what}需要 {required} 项，超过上限 {cap}")


class BudgetExceededError(HorizonRLError):
    """采样预算不足，required 为所需的精确数量（可能为 inf）"""

    def __init__(self, required: float, budget: float, unit: str = "episodes") -> None:
        self.required = required
        self.budget = budget
        self.unit = unit
        super().__init__(f"需要 {required} {unit}，超过预算 {budget}")


class ConfigError(HorizonRLError):
    pass


class EpisodeError(HorizonRLError):
    pass


class PolicyError(HorizonRLError):
    pass


class DimensionMismatchError(HorizonRLError):
    pass
