import sys
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables from .env file before the logger reads them
load_dotenv()

from pydantic import ValidationError  # noqa: E402

from cli.cli import build_parser  # noqa: E402
from logger_config import logger  # noqa: E402
from mmfit.exceptions import ConvergenceError, InputError, MMFitError  # noqa: E402


def main(argv: Optional[List[str]] = None) -> int:
    """
    Runs one subcommand and maps failures to exit codes.

    Returns:
        int: 0 on success, 2 for bad input, 3 for numerical failures and
            4 when a fit stopped before converging.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as e:
        logger.warning(str(e))
        return e.exit_code
    except MMFitError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValidationError as e:
        messages = "; ".join(err["msg"] for err in e.errors())
        logger.error(messages)
        print(f"error: {messages}", file=sys.stderr)
        return InputError.exit_code
    except FileNotFoundError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
