# fsdlab/commands/serve.py
import asyncio
import logging
from pathlib import Path

from fsdlab.commands import EXIT_OK, handles_errors
from fsdlab.errors import ConfigError
from fsdlab.services.logit_server import LogitServer
from fsdlab.services.table_model import UniformModel, load_table_model

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("serve-echo", parents=parents, help="Serve a test-double logit server")
    parser.add_argument("--vocab-size", type=int, default=8, help="Vocab of the uniform echo backend")
    parser.add_argument("--table", type=Path, default=None, help="Serve this table model instead of uniform rows")
    parser.add_argument("--tcp", default=None, metavar="HOST:PORT", help="Listen on TCP instead of stdio")
    parser.set_defaults(handler=handle_serve)


def _parse_address(text: str):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


@handles_errors
def handle_serve(args) -> int:
    if args.table is not None:
        backend = load_table_model(args.table)
    else:
        if args.vocab_size < 1:
            raise ConfigError("--vocab-size must be positive")
        backend = UniformModel(args.vocab_size)
    server = LogitServer(backend)

    if args.tcp:
        host, port = _parse_address(args.tcp)
        try:
            asyncio.run(server.serve_tcp(host, port))
        except KeyboardInterrupt:
            logger.info("Server stopped")
    else:
        server.serve_stdio()
    return EXIT_OK
