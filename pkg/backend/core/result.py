from typing import Any, Generic, TypeVar

from pydantic import BaseModel

from backend.core.exceptions import LabException

T = TypeVar("T")


class ServiceResult(BaseModel, Generic[T]):
    """
    Outcome of one experiment run: either its data or the error it stopped on.
    The runner records failures here and carries on with the next experiment.
    """

    success: bool
    data: T | None = None
    error_code: str = ""
    message: str = ""
    details: dict[str, Any] = {}

    @classmethod
    def ok(cls, data: T) -> "ServiceResult[T]":
        return cls(success=True, data=data)

    @classmethod
    def fail(cls, message: str, error_code: str = "INTERNAL_ERROR", details: dict | None = None) -> "ServiceResult[T]":
        return cls(success=False, message=message, error_code=error_code, details=details or {})

    @classmethod
    def from_exception(cls, exc: LabException) -> "ServiceResult[T]":
        return cls.fail(exc.message, exc.error_code.value, exc.details)

    @property
    def value(self) -> T:
        if not self.success:
            raise ValueError(f"Cannot access data of failed result: {self.message}")
        return self.data

    def error_record(self) -> dict[str, Any] | None:
        """Report form of the failure, None on success."""
        if self.success:
            return None
        return {"error_code": self.error_code, "message": self.message, "details": self.details}
