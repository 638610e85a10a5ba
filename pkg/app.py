import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

# Load environment variables before logging picks its level
load_dotenv(override=True)

# Configure logging
logging.basicConfig(
    level=os.getenv("DEPCOV_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger('depcov_cli')

from adapter.adapter import CommandAdapter  # noqa: E402
from engine.errors import DependenceError, DomainError, InputValidationError, SeriesConvergenceError  # noqa: E402
from ui import app_ui, config_from_args  # noqa: E402

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3


class CommandController:
    def __init__(self, adapter: Optional[CommandAdapter] = None):
        self.adapter = adapter or CommandAdapter()

    @staticmethod
    def exit_code_for(error: BaseException) -> int:
        if isinstance(error, (InputValidationError, DomainError, OSError)):
            return EXIT_INVALID
        if isinstance(error, (SeriesConvergenceError, ArithmeticError, np.linalg.LinAlgError)):
            return EXIT_NUMERIC
        if isinstance(error, ValueError):
            return EXIT_INVALID
        return EXIT_NUMERIC

    @staticmethod
    def report_error(error: BaseException, code: int, as_json: bool) -> None:
        kind = "io-error" if isinstance(error, OSError) else getattr(error, "kind", type(error).__name__)
        if as_json:
            record = {"error": kind, "message": str(error), "exit_code": code}
            for attr in ("row", "column"):
                if getattr(error, attr, None) is not None:
                    record[attr] = getattr(error, attr)
            sys.stderr.write(json.dumps(record) + "\n")
        else:
            sys.stderr.write(f"error ({kind}): {error}\n")

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = app_ui.parse_args(argv)
        json_errors = getattr(args, "json_errors", False)
        try:
            config = config_from_args(args)
            self.adapter.run(config)
            logger.info("%s finished", config.command)
            return EXIT_OK
        except (DependenceError, ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as e:
            code = self.exit_code_for(e)
            logger.error("%s failed with exit code %d: %s", args.command, code, str(e))
            self.report_error(e, code, json_errors)
            return code


def main(argv: Optional[List[str]] = None) -> int:
    return CommandController().run(argv)


if __name__ == "__main__":
    sys.exit(main())
