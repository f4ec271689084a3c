"""Length-prefixed JSON framing for the control hub.

Wire format: a 4-byte big-endian unsigned length, then exactly that many
bytes of UTF-8 JSON encoding one message object. Payloads are capped at
1 MiB. The identical JSON text rides WebSocket text frames unchanged; the
length prefix exists only on raw TCP.

Messages are plain dicts with a required "type" field; requests carry a
client-chosen "id" echoed on the reply, and bodies live under "body".
JSON is serialized canonically (sorted keys, no whitespace, raw UTF-8) so
any two compliant encoders produce byte-identical frames.
"""

from __future__ import annotations

import json

__all__ = [
    "HEADER_SIZE",
    "MAX_PAYLOAD",
    "PROTOCOL_VERSION",
    "MESSAGE_TYPES",
    "ProtocolError",
    "canonical_json",
    "encode_frame",
    "decode_frame",
    "FrameDecoder",
]

HEADER_SIZE = 4
MAX_PAYLOAD = 1 << 20
PROTOCOL_VERSION = 1

MESSAGE_TYPES = frozenset({
    "HELLO", "ACK", "ERROR", "INTENT_TEXT", "COMMAND", "SET_VAR",
    "GET_STATE", "STATE", "TELEMETRY", "ESTOP", "ALERT",
})


class ProtocolError(ValueError):
    """Framing or payload violation; offset counts bytes from stream start."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


def canonical_json(msg: dict) -> str:
    return json.dumps(msg, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False)


def encode_frame(msg: dict) -> bytes:
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError('message must be an object with a string "type"')
    payload = canonical_json(msg).encode("utf-8")
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError(
            f"payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD} byte cap")
    return len(payload).to_bytes(HEADER_SIZE, "big") + payload


class FrameDecoder:
    """Incremental decoder: feed arbitrary chunks, get completed messages.

    Errors carry the byte offset (from the start of the stream) of the
    offending header or payload and poison the decoder; a connection that
    hit one has lost framing and must be torn down.
    """

    def __init__(self):
        self._buf = bytearray()
        self._offset = 0  # stream position of _buf[0]
        self._dead = False

    def _fail(self, message: str, offset: int):
        self._dead = True
        raise ProtocolError(f"{message} (byte offset {offset})", offset=offset)

    def feed(self, data: bytes) -> list[dict]:
        if self._dead:
            raise ProtocolError("decoder halted by a previous framing error")
        self._buf += data
        out: list[dict] = []
        while True:
            if len(self._buf) < HEADER_SIZE:
                return out
            length = int.from_bytes(self._buf[:HEADER_SIZE], "big")
            if length > MAX_PAYLOAD:
                self._fail(f"declared payload of {length} bytes exceeds the "
                           f"{MAX_PAYLOAD} byte cap", self._offset)
            if len(self._buf) < HEADER_SIZE + length:
                return out
            payload = bytes(self._buf[HEADER_SIZE:HEADER_SIZE + length])
            payload_offset = self._offset + HEADER_SIZE
            del self._buf[:HEADER_SIZE + length]
            self._offset += HEADER_SIZE + length
            try:
                obj = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                self._fail(f"malformed JSON payload: {exc}", payload_offset)
            if not isinstance(obj, dict):
                self._fail("payload is not a JSON object", payload_offset)
            if not isinstance(obj.get("type"), str):
                self._fail('payload missing string "type"', payload_offset)
            out.append(obj)

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def decode_frame(data: bytes) -> dict:
    """Decode exactly one complete frame; partial or trailing bytes fail."""
    dec = FrameDecoder()
    msgs = dec.feed(data)
    if not msgs:
        raise ProtocolError(
            f"incomplete frame: {len(data)} bytes held, more expected")
    if len(msgs) > 1 or dec.pending_bytes:
        raise ProtocolError("trailing bytes after the first frame")
    return msgs[0]
