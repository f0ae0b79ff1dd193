"""Serves any ModelBackend over the line-delimited logit protocol (stdio or TCP)."""

import asyncio
import json
import logging
import sys
from typing import Annotated, Optional, TextIO, Union

from pydantic import Field, TypeAdapter, ValidationError

from fsdlab.errors import FsdLabError
from fsdlab.models.schemas import DistsRequest, DistsResponse, ErrorResponse, HelloRequest, HelloResponse
from fsdlab.services.table_model import ModelBackend

logger = logging.getLogger(__name__)

ClientFrame = Annotated[Union[HelloRequest, DistsRequest], Field(discriminator="type")]
_client_frames = TypeAdapter(ClientFrame)


class LogitServer:
    def __init__(self, backend: ModelBackend):
        self.backend = backend
        self.requests = 0

    def handle_line(self, line: str) -> str:
        """Answer one request frame; never raises, errors become error frames."""
        self.requests += 1
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            return ErrorResponse(message=f"malformed frame: {e}").model_dump_json()
        request_id = payload.get("id") if isinstance(payload, dict) else None
        if not isinstance(request_id, int):
            request_id = None
        try:
            frame = _client_frames.validate_python(payload)
        except ValidationError as e:
            return ErrorResponse(id=request_id, message=f"invalid request: {e.errors()[0]['msg']}").model_dump_json()

        if isinstance(frame, HelloRequest):
            return HelloResponse(vocab_size=self.backend.vocab_size, name=self.backend.name).model_dump_json()

        if frame.start > len(frame.tokens):
            return ErrorResponse(id=frame.id, message="start beyond the end of tokens").model_dump_json()
        try:
            rows = self.backend.next_dists(frame.tokens, frame.start)
        except (FsdLabError, ValueError) as e:
            logger.warning(f"Request {frame.id} failed: {e}")
            return ErrorResponse(id=frame.id, message=str(e)).model_dump_json()
        return DistsResponse(id=frame.id, probs=[d.to_list() for d in rows]).model_dump_json()

    def serve_stdio(self, stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None) -> int:
        """Blocking loop until EOF. Returns the number of requests answered."""
        if stdin is None:
            # undecodable bytes become U+FFFD and fail JSON parsing with an error frame
            sys.stdin.reconfigure(errors="replace")
            stdin = sys.stdin
        stdout = stdout or sys.stdout
        logger.info(f"Serving {self.backend.name} (vocab {self.backend.vocab_size}) on stdio")
        for line in stdin:
            if not line.strip():
                continue
            stdout.write(self.handle_line(line) + "\n")
            stdout.flush()
        logger.info(f"stdin closed after {self.requests} requests")
        return self.requests

    async def _handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        logger.info(f"Client connected: {peer}")
        try:
            while True:
                raw = await reader.readline()
                if not raw:
                    break
                try:
                    line = raw.decode("utf-8")
                except UnicodeDecodeError:
                    logger.warning(f"Non-UTF-8 frame from {peer}")
                    reply = ErrorResponse(message="frame is not valid UTF-8").model_dump_json()
                else:
                    if not line.strip():
                        continue
                    reply = self.handle_line(line)
                writer.write(reply.encode("utf-8") + b"\n")
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError) as e:
            logger.warning(f"Connection {peer} dropped: {e}")
        finally:
            writer.close()
            logger.info(f"Client disconnected: {peer}")

    async def start_tcp(self, host: str = "127.0.0.1", port: int = 0) -> asyncio.Server:
        """Bind and start accepting; port 0 picks a free port (see server.sockets)."""
        server = await asyncio.start_server(self._handle_connection, host, port, limit=2**24)
        bound = server.sockets[0].getsockname()
        logger.info(f"Serving {self.backend.name} (vocab {self.backend.vocab_size}) on {bound[0]}:{bound[1]}")
        return server

    async def serve_tcp(self, host: str, port: int) -> None:
        server = await self.start_tcp(host, port)
        async with server:
            await server.serve_forever()
