"""
异常层次结构
"""
from typing import Any, Optional


class LevyPollingError(Exception):
    """所有领域异常的基类"""


class ModelValidationError(LevyPollingError, ValueError):
    """模型或输入规格不合法"""


class DomainError(ModelValidationError):
    """参数超出定义域（例如 u 含负分量）"""


class ConfigError(LevyPollingError, ValueError):
    """配置文档不符合 schema"""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class NumericError(LevyPollingError, ArithmeticError):
    """数值计算失败"""


class TruncationError(NumericError):
    """无穷乘积在最大项数内未收敛"""


class PreconditionError(LevyPollingError, RuntimeError):
    """调用前提不满足（如模型不稳定）"""


class UnstableModelError(PreconditionError):
    """模型不是 Stable, 附带稳定性报告供调用方输出"""

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message)
