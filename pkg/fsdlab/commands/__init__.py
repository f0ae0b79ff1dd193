"""CLI subcommand handlers. Each module exposes `register(subparsers, parents)`."""

import functools
import logging

from fsdlab.errors import FsdLabError, ProtocolViolation, RemoteModelError, RemoteTimeout

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1  # a sweep row errored or a verify check failed
EXIT_INPUT = 2  # configuration or input error
EXIT_REMOTE = 3  # remote backend or protocol error


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ProtocolViolation, RemoteTimeout, RemoteModelError, ConnectionError)):
        return EXIT_REMOTE
    if isinstance(exc, (FsdLabError, ValueError, OSError)):
        return EXIT_INPUT
    raise exc


def handles_errors(handler):
    """Map domain exceptions raised by a handler to exit codes, logging them once."""

    @functools.wraps(handler)
    def wrapper(args) -> int:
        try:
            return handler(args)
        except Exception as e:
            code = exit_code_for(e)
            logger.error(f"{args.command} failed: {e}")
            return code

    return wrapper
