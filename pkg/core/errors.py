"""
错误类型定义
所有领域错误都带有机器可读的错误码和命令行退出码
"""

from typing import Optional


class EbipError(Exception):
    """所有领域错误的基类"""

    code = "error"
    exit_code = 1

    def __init__(self, message: str, tick: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.tick = tick

    def with_tick(self, tick: int) -> "EbipError":
        """附加出错的时间步"""
        self.tick = tick
        return self

    def __str__(self) -> str:
        if self.tick is not None:
            return f"{self.message} (tick {self.tick})"
        return self.message


class ConfigurationError(EbipError):
    """配置错误（退出码 2）"""

    code = "config_error"
    exit_code = 2


class DataError(EbipError):
    """数据错误（退出码 3）"""

    code = "data_error"
    exit_code = 3


class NumericalError(EbipError):
    """数值失败（退出码 4）"""

    code = "numerical_error"
    exit_code = 4


class InvalidDurationError(DataError):
    code = "invalid_duration"


class LayoutMismatchError(DataError):
    code = "layout_mismatch"


class InsufficientDataError(DataError):
    code = "insufficient_data"


class EnsembleSizeError(ConfigurationError):
    code = "ensemble_size"


class CovarianceUndefinedError(NumericalError):
    code = "covariance_undefined"


class SingularFitError(NumericalError):
    code = "singular_fit"


class NonPsdPriorError(NumericalError):
    code = "non_psd_prior"


class SingularUpdateError(NumericalError):
    """新息协方差无法分解"""

    code = "singular_update"

    def __init__(self, message: str, condition_number: float = float("inf"), tick: Optional[int] = None):
        super().__init__(f"{message} (cond={condition_number:.3e})", tick)
        self.condition_number = condition_number


class WeightCollapseError(NumericalError):
    """粒子权重全部为零"""

    code = "weight_collapse"

    def __init__(self, message: str, max_log_likelihood: float = float("-inf"), tick: Optional[int] = None):
        super().__init__(f"{message} (max log-likelihood={max_log_likelihood:.6g})", tick)
        self.max_log_likelihood = max_log_likelihood
