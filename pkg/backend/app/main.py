from typing import List, Optional
import argparse
import logging
import sys

from app.core.config import settings
from app.core.errors import PVG4DError
from app.cli import cli_router
from app.cli.common import add_common_arguments

logger = logging.getLogger(__name__)

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvg4d",
        description=f"{settings.PROJECT_NAME}: differentiable 4D Gaussian splatting with pseudo-frame distillation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    cli_router.attach(parser, add_common_arguments)
    return parser

def handle_error(exc: PVG4DError) -> int:
    """Top-level error handler: reason on stderr, exit code from the error type"""
    print(f"error: {exc.detail}", file=sys.stderr)
    return exc.exit_code

def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    logger.debug(f"{settings.PROJECT_NAME} {settings.VERSION} ({settings.ENVIRONMENT}), {settings.PVG4D_THREADS} thread(s)")
    try:
        return args.handler(args) or 0
    except PVG4DError as exc:
        return handle_error(exc)

if __name__ == "__main__":
    sys.exit(main())
