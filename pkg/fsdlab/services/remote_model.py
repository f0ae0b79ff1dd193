"""
Client side of the logit-server protocol.

Frames are single-line JSON objects. The client opens a transport (child
process over stdin/stdout, or TCP), performs the hello handshake and then
issues `dists` requests, validating every returned row before it becomes a
ProbDist.
"""

import asyncio
import json
import logging
import math
from abc import ABC, abstractmethod
from typing import Annotated, List, Optional, Sequence, Union

from pydantic import Field, TypeAdapter, ValidationError

from fsdlab.config import settings
from fsdlab.errors import AllZero, ProtocolViolation, RemoteModelError, RemoteTimeout, VocabMismatch
from fsdlab.models.schemas import (
    DistsRequest,
    DistsResponse,
    ErrorResponse,
    HelloRequest,
    HelloResponse,
    RemoteModelConfig,
)
from fsdlab.services.prob_core import ProbDist, TokenId, normalize
from fsdlab.services.table_model import ModelBackend, check_tokens

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-6
STREAM_LIMIT = 2**24

ServerFrame = Annotated[Union[HelloResponse, DistsResponse, ErrorResponse], Field(discriminator="type")]
_server_frames = TypeAdapter(ServerFrame)


class Transport(ABC):
    @abstractmethod
    async def open(self) -> None: ...

    @abstractmethod
    async def send_line(self, line: str) -> None: ...

    @abstractmethod
    async def read_line(self) -> str: ...

    @abstractmethod
    async def close(self) -> None: ...


class _StreamTransport(Transport):
    reader: Optional[asyncio.StreamReader] = None
    writer: Optional[asyncio.StreamWriter] = None

    async def send_line(self, line: str) -> None:
        self.writer.write(line.encode("utf-8") + b"\n")
        await self.writer.drain()

    async def read_line(self) -> str:
        raw = await self.reader.readline()
        if not raw:
            raise RemoteModelError("logit server closed the connection")
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolViolation("frame is not valid UTF-8") from e


class StdioTransport(_StreamTransport):
    """Spawns the server and talks over its stdin/stdout; its stderr is inherited."""

    def __init__(self, command: Sequence[str]):
        self.command = list(command)
        self.process: Optional[asyncio.subprocess.Process] = None

    async def open(self) -> None:
        self.process = await asyncio.create_subprocess_exec(
            *self.command,
            stdin=asyncio.subprocess.PIPE,
            stdout=asyncio.subprocess.PIPE,
            limit=STREAM_LIMIT,
        )
        self.reader = self.process.stdout
        self.writer = self.process.stdin
        logger.info(f"Started logit server process {self.process.pid}: {' '.join(self.command)}")

    async def close(self) -> None:
        if self.process is None:
            return
        if self.writer is not None and not self.writer.is_closing():
            self.writer.close()
        try:
            await asyncio.wait_for(self.process.wait(), timeout=5)
        except asyncio.TimeoutError:
            self.process.kill()
            await self.process.wait()
        self.process = None


class TcpTransport(_StreamTransport):
    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port

    async def open(self) -> None:
        self.reader, self.writer = await asyncio.open_connection(self.host, self.port, limit=STREAM_LIMIT)
        logger.info(f"Connected to logit server at {self.host}:{self.port}")

    async def close(self) -> None:
        if self.writer is not None:
            self.writer.close()
            try:
                await self.writer.wait_closed()
            except (ConnectionError, OSError):
                pass
            self.writer = None


def make_transport(cfg: RemoteModelConfig) -> Transport:
    if cfg.transport == "tcp":
        return TcpTransport(cfg.host, cfg.port)
    return StdioTransport(cfg.command)


def parse_frame(line: str):
    try:
        payload = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolViolation(f"malformed frame: {e}") from e
    try:
        return _server_frames.validate_python(payload)
    except ValidationError as e:
        raise ProtocolViolation(f"unexpected frame: {e.errors()[0]['msg']}") from e


def validate_rows(rows: List[List[float]], expected_rows: int, vocab_size: int) -> List[ProbDist]:
    """Check shape, finiteness, sign and row sums, then renormalize each row."""
    if len(rows) != expected_rows:
        raise ProtocolViolation(f"expected {expected_rows} rows, got {len(rows)}")
    dists = []
    for i, row in enumerate(rows):
        if len(row) != vocab_size:
            raise ProtocolViolation(f"row {i} has {len(row)} entries, expected {vocab_size}")
        if any(not math.isfinite(v) or v < 0 for v in row):
            raise ProtocolViolation(f"row {i} contains a negative or non-finite probability")
        total = math.fsum(row)
        if abs(total - 1.0) > ROW_SUM_TOL:
            raise ProtocolViolation(f"row {i} sums to {total}, expected 1 within {ROW_SUM_TOL}")
        try:
            dists.append(normalize(row))
        except AllZero as e:
            raise ProtocolViolation(f"row {i} has no mass") from e
    return dists


class LogitClient:
    """Single-owner async session with one logit server."""

    def __init__(self, transport: Transport, vocab_size: int, timeout_ms: Optional[int] = None):
        self.transport = transport
        self.vocab_size = vocab_size
        self.timeout = (timeout_ms or settings.REMOTE_TIMEOUT_MS) / 1000.0
        self.server_name = ""
        self._next_id = 0
        self._connected = False

    async def _read_frame(self):
        try:
            raw = await asyncio.wait_for(self.transport.read_line(), timeout=self.timeout)
        except asyncio.TimeoutError as e:
            raise RemoteTimeout(f"no response within {self.timeout * 1000:.0f} ms") from e
        return parse_frame(raw)

    async def _roundtrip(self, line: str):
        await self.transport.send_line(line)
        return await self._read_frame()

    async def connect(self) -> None:
        await self.transport.open()
        frame = await self._roundtrip(HelloRequest().model_dump_json())
        if isinstance(frame, ErrorResponse):
            raise RemoteModelError(f"handshake refused: {frame.message}")
        if not isinstance(frame, HelloResponse):
            raise ProtocolViolation(f"expected hello frame, got {frame.type}")
        if frame.vocab_size != self.vocab_size:
            raise VocabMismatch(f"server declares vocab {frame.vocab_size}, configured {self.vocab_size}")
        self.server_name = frame.name
        self._connected = True
        logger.info(f"Handshake complete with {frame.name or 'logit server'} (vocab {frame.vocab_size})")

    async def next_dists(self, tokens: Sequence[TokenId], start: int) -> List[ProbDist]:
        if not self._connected:
            raise RemoteModelError("client is not connected")
        if start < 0 or start > len(tokens):
            raise ValueError(f"start {start} outside [0, {len(tokens)}]")
        if start == len(tokens):
            return []
        request_id = self._next_id
        self._next_id += 1
        request = DistsRequest(id=request_id, tokens=list(tokens), start=start)
        frame = await self._roundtrip(request.model_dump_json())
        # late answers to requests that already timed out
        while isinstance(frame, (DistsResponse, ErrorResponse)) and frame.id is not None and frame.id < request_id:
            logger.warning(f"Dropping stale response {frame.id} while waiting for {request_id}")
            frame = await self._read_frame()
        if isinstance(frame, ErrorResponse):
            raise RemoteModelError(f"server error for request {request_id}: {frame.message}")
        if not isinstance(frame, DistsResponse):
            raise ProtocolViolation(f"expected dists frame, got {frame.type}")
        if frame.id != request_id:
            raise ProtocolViolation(f"response id {frame.id} does not match request id {request_id}")
        return validate_rows(frame.probs, len(tokens) - start, self.vocab_size)

    async def close(self) -> None:
        self._connected = False
        await self.transport.close()

    async def __aenter__(self):
        await self.connect()
        return self

    async def __aexit__(self, exc_type, exc, tb):
        await self.close()


class RemoteModel(ModelBackend):
    """Blocking ModelBackend over a LogitClient, driven by a private event loop."""

    def __init__(self, cfg: RemoteModelConfig, name: Optional[str] = None):
        self.cfg = cfg
        self.vocab_size = cfg.vocab_size
        self.max_context_length = cfg.max_context_length
        self._runner = asyncio.Runner()
        self._client = LogitClient(make_transport(cfg), cfg.vocab_size, cfg.timeout_ms)
        try:
            self._runner.run(self._client.connect())
        except BaseException:
            self._runner.close()
            raise
        self.name = name or self._client.server_name or "remote"

    def next_dists(self, context: Sequence[TokenId], start: int) -> List[ProbDist]:
        check_tokens(context, self.vocab_size)
        return self._runner.run(self._client.next_dists(list(context), start))

    def next_dist(self, context: Sequence[TokenId]) -> ProbDist:
        if not context:
            raise ValueError("remote backends need a non-empty context")
        return self.next_dists(context, len(context) - 1)[0]

    def close(self) -> None:
        if self._runner is None:
            return
        try:
            self._runner.run(self._client.close())
        finally:
            self._runner.close()
            self._runner = None
