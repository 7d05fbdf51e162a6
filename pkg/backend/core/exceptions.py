from enum import Enum


class ErrorCode(str, Enum):
    INTERNAL_ERROR = "INTERNAL_ERROR"
    CONFIG_ERROR = "CONFIG_ERROR"
    IO_ERROR = "IO_ERROR"
    # Input data
    TRIANGLE_VIOLATION = "TRIANGLE_VIOLATION"
    NON_SYMMETRIC = "NON_SYMMETRIC"
    ZERO_MASS_SON = "ZERO_MASS_SON"
    DEGENERATE_WEIGHT = "DEGENERATE_WEIGHT"
    PROFILE_VIOLATION = "PROFILE_VIOLATION"
    # Capacity
    ENUMERATION_TOO_LARGE = "ENUMERATION_TOO_LARGE"
    ENUMERATION_INFEASIBLE = "ENUMERATION_INFEASIBLE"
    TOO_LARGE = "TOO_LARGE"
    TREE_TOO_SHALLOW = "TREE_TOO_SHALLOW"
    NO_CONVERGENCE = "NO_CONVERGENCE"
    # Invariant failures (a bug somewhere upstream)
    NO_PARENT_IN_RANGE = "NO_PARENT_IN_RANGE"
    COVER_GAP = "COVER_GAP"
    PROXIMITY_VIOLATION = "PROXIMITY_VIOLATION"
    NOT_IN_WS = "NOT_IN_WS"
    INJECTIVITY_FAILURE = "INJECTIVITY_FAILURE"
    A_EXCEEDS_P = "A_EXCEEDS_P"
    VIOLATION_REPORT = "VIOLATION_REPORT"
    DOMAIN_EXIT = "DOMAIN_EXIT"
    COEFFICIENT_OVERFLOW = "COEFFICIENT_OVERFLOW"


class LabException(Exception):
    """Base class for all lab errors"""

    def __init__(
        self,
        message: str,
        error_code: ErrorCode = ErrorCode.INTERNAL_ERROR,
        details: dict | None = None,
    ):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
        self.details = details or {}

    @property
    def exit_code(self) -> int:
        return map_error_code_to_exit_status(self.error_code)

    def to_dict(self) -> dict:
        return {
            "error_code": self.error_code.value,
            "message": self.message,
            "details": self.details,
        }

    def __reduce__(self):
        # subclasses take their own constructor arguments; rebuild from state when crossing workers
        return (_rebuild, (type(self), self.__dict__.copy()))


def _rebuild(cls: type, state: dict) -> "LabException":
    exc = cls.__new__(cls)
    Exception.__init__(exc, state["message"])
    exc.__dict__.update(state)
    return exc


# --- Input data ---


class ConfigError(LabException):
    def __init__(self, message: str, field_path: str = ""):
        super().__init__(
            message=f"{field_path}: {message}" if field_path else message,
            error_code=ErrorCode.CONFIG_ERROR,
            details={"field_path": field_path},
        )
        self.field_path = field_path


class IoError(LabException):
    def __init__(self, message: str, path: str = ""):
        super().__init__(message=message, error_code=ErrorCode.IO_ERROR, details={"path": path})


class TriangleViolation(LabException):
    def __init__(self, i: int, j: int, k: int, excess: float):
        super().__init__(
            message=f"Triangle inequality fails: d({i},{k}) > d({i},{j}) + d({j},{k}) by {excess:.3e}",
            error_code=ErrorCode.TRIANGLE_VIOLATION,
            details={"triple": [i, j, k], "excess": excess},
        )
        self.triple = (i, j, k)


class NonSymmetric(LabException):
    def __init__(self, i: int, j: int):
        super().__init__(
            message=f"Distance matrix is not a metric at pair ({i},{j})",
            error_code=ErrorCode.NON_SYMMETRIC,
            details={"pair": [i, j]},
        )


class ZeroMassSon(LabException):
    def __init__(self, node: int):
        super().__init__(
            message=f"Cube {node} has a son of zero measure",
            error_code=ErrorCode.ZERO_MASS_SON,
            details={"node": node},
        )


class DegenerateWeight(LabException):
    def __init__(self, node: int):
        super().__init__(
            message=f"Weight has zero mass on cube {node}",
            error_code=ErrorCode.DEGENERATE_WEIGHT,
            details={"node": node},
        )


class ProfileViolation(LabException):
    def __init__(self, constant: str, value: float, cap: float):
        super().__init__(
            message=f"Kernel {constant} constant {value:.4g} exceeds cap {cap:.4g}",
            error_code=ErrorCode.PROFILE_VIOLATION,
            details={"constant": constant, "value": value, "cap": cap},
        )


# --- Capacity ---


class EnumerationTooLarge(LabException):
    def __init__(self, count: int, cap: int):
        super().__init__(
            message=f"Enumeration exceeds {cap} elementary events (reached {count})",
            error_code=ErrorCode.ENUMERATION_TOO_LARGE,
            details={"count": count, "cap": cap},
        )


class EnumerationInfeasible(LabException):
    def __init__(self, message: str):
        super().__init__(message=message, error_code=ErrorCode.ENUMERATION_INFEASIBLE)


class TooLarge(LabException):
    def __init__(self, size: int, cap: int):
        super().__init__(
            message=f"Space has {size} points, census cap is {cap}",
            error_code=ErrorCode.TOO_LARGE,
            details={"size": size, "cap": cap},
        )


class TreeTooShallow(LabException):
    def __init__(self, depth: int, required: int):
        super().__init__(
            message=f"Tree depth {depth} below required {required}",
            error_code=ErrorCode.TREE_TOO_SHALLOW,
            details={"depth": depth, "required": required},
        )


class NoConvergence(LabException):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            message=f"Power iteration did not converge in {iterations} steps (residual {residual:.3e})",
            error_code=ErrorCode.NO_CONVERGENCE,
            details={"iterations": iterations, "residual": residual},
        )


# --- Invariant failures ---


class NoParentInRange(LabException):
    def __init__(self, child: int, generation: int):
        super().__init__(
            message=f"Grid point {child} has no parent within 3*delta^{generation}",
            error_code=ErrorCode.NO_PARENT_IN_RANGE,
            details={"child": child, "generation": generation},
        )


class CoverGap(LabException):
    def __init__(self, point: int, generation: int):
        super().__init__(
            message=f"Point {point} is not covered consistently at generation {generation}",
            error_code=ErrorCode.COVER_GAP,
            details={"point": point, "generation": generation},
        )


class ProximityViolation(LabException):
    def __init__(self, point: int, cube: int, generation: int, distance: float):
        super().__init__(
            message=f"Point {point} lies {distance:.4g} from label {cube} at generation {generation}",
            error_code=ErrorCode.PROXIMITY_VIOLATION,
            details={"point": point, "cube": cube, "generation": generation, "distance": distance},
        )


class NotInWS(LabException):
    def __init__(self, reason: str):
        super().__init__(message=f"Coloring is not in W_S: {reason}", error_code=ErrorCode.NOT_IN_WS)


class InjectivityFailure(LabException):
    def __init__(self, s: tuple, pair: tuple):
        super().__init__(
            message=f"Recoloring is not injective on W_S for S={list(s)}",
            error_code=ErrorCode.INJECTIVITY_FAILURE,
            details={"S": list(s), "pair": [sorted(p) for p in pair]},
        )


class AExceedsP(LabException):
    def __init__(self, cube: tuple, a: float, p: float):
        super().__init__(
            message=f"Target probability a={a:.6g} exceeds p_Q={p:.6g} for cube {cube}",
            error_code=ErrorCode.A_EXCEEDS_P,
            details={"cube": list(cube), "a": a, "p": p},
        )


class ViolationReport(LabException):
    def __init__(self, check: str, worst_slack: float, details: dict | None = None):
        super().__init__(
            message=f"{check} violated (worst slack {worst_slack:.3e})",
            error_code=ErrorCode.VIOLATION_REPORT,
            details={"check": check, "worst_slack": worst_slack, **(details or {})},
        )


class DomainExit(LabException):
    def __init__(self, node: int, product: float, q: float):
        super().__init__(
            message=f"Cube {node}: <w><sigma> = {product:.6g} leaves (1, {q:.6g}]",
            error_code=ErrorCode.DOMAIN_EXIT,
            details={"node": node, "product": product, "Q": q},
        )


class CoefficientOverflow(LabException):
    def __init__(self, family: str, normalized: float):
        super().__init__(
            message=f"{family} coefficient exceeds admissible bound ({normalized:.6g} > 1)",
            error_code=ErrorCode.COEFFICIENT_OVERFLOW,
            details={"family": family, "normalized": normalized},
        )


def map_error_code_to_exit_status(error_code: ErrorCode) -> int:
    if error_code in (ErrorCode.CONFIG_ERROR, ErrorCode.TRIANGLE_VIOLATION, ErrorCode.NON_SYMMETRIC):
        return 2
    elif error_code == ErrorCode.IO_ERROR:
        return 3
    return 1
