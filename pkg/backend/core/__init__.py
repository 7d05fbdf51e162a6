from .config import settings
from .exceptions import (
    ConfigError,
    ErrorCode,
    IoError,
    LabException,
    NonSymmetric,
    TriangleViolation,
    ViolationReport,
    map_error_code_to_exit_status,
)
from .result import ServiceResult

__all__ = [
    "ConfigError",
    "ErrorCode",
    "IoError",
    "LabException",
    "NonSymmetric",
    "ServiceResult",
    "TriangleViolation",
    "ViolationReport",
    "map_error_code_to_exit_status",
    "settings",
]
