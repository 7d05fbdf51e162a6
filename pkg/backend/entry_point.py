import logging
import sys

from pydantic import ValidationError

from backend.core.exceptions import ErrorCode, LabException, map_error_code_to_exit_status
from backend.main import build_parser, configure_logging
from backend.validation.validation import format_validation_error

logger = logging.getLogger("backend.entry_point")


def main(argv: list[str] | None = None) -> int:
    """Console entry: parse, dispatch, and map lab errors onto exit statuses"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        return args.handler(args)
    except ValidationError as e:
        # Parameters given on the command line failed model validation
        message, field = format_validation_error(e)
        print(f"error: invalid {field}: {message}", file=sys.stderr)
        return map_error_code_to_exit_status(ErrorCode.CONFIG_ERROR)
    except LabException as e:
        print(f"error: [{e.error_code.value}] {e.message}", file=sys.stderr)
        if e.details:
            logger.debug(f"details: {e.details}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
