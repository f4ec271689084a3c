"""Control hub: one authoritative machine, many duplex clients.

Clients speak the length-prefixed JSON protocol over raw TCP or the same
JSON as text frames over a WebSocket gateway at path /ws. All machine
mutations happen on the tick task: client handlers only enqueue requests,
the tick loop drains them at tick boundaries, runs the world one step,
evaluates transitions, and fans out telemetry. Control replies are never
dropped; telemetry to a slow consumer is dropped beyond a 64-frame backlog.

The language front end can also run as a separate process (NluService,
`deskbot nlu-serve`) speaking the same protocol: it answers INTENT_TEXT
with the bound command but owns no machine, mirroring an edge/remote
split where heavy inference lives off the robot.
"""

from __future__ import annotations

import asyncio
import dataclasses
import itertools
import json
import logging
from dataclasses import dataclass

import numpy as np
import websockets

from . import __version__, fsm, kinematics, nlu, perception, protocol, runtime
from .protocol import FrameDecoder, ProtocolError, canonical_json, encode_frame

__all__ = ["HubConfig", "Hub", "NluService", "default_model"]

log = logging.getLogger("deskbot.hub")

TELEMETRY_BACKLOG_FRAMES = 64


@dataclass(frozen=True)
class HubConfig:
    arm: str = "arm_table1"
    scene: str = "office"
    host: str = "127.0.0.1"
    tcp_port: int = 7462
    ws_port: int = 7463
    telemetry_hz: float = 20.0
    tick_hz: float = 50.0
    seed: int = 0
    threshold: float = nlu.DEFAULT_THRESHOLD


default_model = nlu.default_model


class ClientSession:
    """Per-connection state plus the outbound queue drained by a writer task.

    Control frames queue unconditionally; telemetry is counted and dropped
    once the backlog hits TELEMETRY_BACKLOG_FRAMES.
    """

    _ids = itertools.count(1)

    def __init__(self, transport: str):
        self.name = f"{transport}-{next(self._ids)}"
        self.transport = transport
        self.hello_done = False
        self.outbox: asyncio.Queue = asyncio.Queue()
        self.telemetry_backlog = 0
        self.dropped_frames = 0
        self.closed = False

    def send_control(self, msg: dict) -> None:
        if not self.closed:
            self.outbox.put_nowait(("control", canonical_json(msg)))

    def offer_telemetry(self, payload: str) -> None:
        if self.closed:
            return
        if self.telemetry_backlog >= TELEMETRY_BACKLOG_FRAMES:
            self.dropped_frames += 1
            return
        self.telemetry_backlog += 1
        self.outbox.put_nowait(("telemetry", payload))


class Hub:
    """Owns the runtime and machine; serves TCP and WebSocket clients."""

    def __init__(self, config: HubConfig | None = None,
                 model: nlu.MLPModel | None = None):
        self.config = config or HubConfig()
        chain = kinematics.load_chain(self.config.arm)
        scene = perception.load_scene(self.config.scene)
        self.runtime = runtime.DeskRuntime(chain, scene, seed=self.config.seed)
        self.machine = self.runtime.machine
        self.model = model if model is not None else default_model()
        self.requests: asyncio.Queue = asyncio.Queue()
        self.sessions: set[ClientSession] = set()
        self._last_alert: str | None = None
        self._servers: list = []
        self._tasks: list[asyncio.Task] = []
        self.tcp_port = self.config.tcp_port
        self.ws_port = self.config.ws_port

    # ------------------------------------------------------------------
    # request handling (runs on the tick task only)
    # ------------------------------------------------------------------

    def handle(self, session: ClientSession, msg: dict) -> list[dict]:
        mtype = msg.get("type")
        mid = msg.get("id")
        body = msg.get("body") or {}
        if not isinstance(body, dict):
            body = {}
        tick = self.machine.tick_count

        def ack(**fields):
            return [{"type": "ACK", "id": mid, "body": {"tick": tick, **fields}}]

        def error(code, detail):
            return [{"type": "ERROR", "id": mid,
                     "body": {"error": code, "detail": detail, "tick": tick}}]

        if mtype == "HELLO":
            version = body.get("protocol_version")
            if version != protocol.PROTOCOL_VERSION:
                return error("version-unsupported",
                             f"server speaks protocol_version "
                             f"{protocol.PROTOCOL_VERSION}, client sent {version!r}")
            session.hello_done = True
            return ack(protocol_version=protocol.PROTOCOL_VERSION,
                       server=f"deskbot/{__version__}")
        if not session.hello_done:
            return error("not-ready", "HELLO must precede any other message")

        if mtype == "INTENT_TEXT":
            return self._handle_intent_text(body, ack, error)
        if mtype == "COMMAND":
            return self._handle_command(body, ack, error)
        if mtype == "SET_VAR":
            return self._handle_set_var(body, ack, error)
        if mtype == "GET_STATE":
            return [{"type": "STATE", "id": mid, "body": self.runtime.telemetry()}]
        if mtype == "ESTOP":
            g = self.machine.globals
            g.fault_reason = "estop"
            g.alert = "estop"
            return ack(engaged=True)
        return error("unsupported", f"message type {mtype!r} is not handled")

    def _handle_intent_text(self, body, ack, error):
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            return error("bad-request", 'INTENT_TEXT needs a non-empty "text"')
        try:
            result, command = nlu.interpret(
                nlu.Utterance(text=text), self.model,
                threshold=self.config.threshold)
        except nlu.UnbindableError as exc:
            return ack(intent=exc.intent, command=None, detail=str(exc))
        if result.intent == nlu.UNKNOWN:
            return ack(intent=nlu.UNKNOWN, confidence=result.confidence,
                       command=None)
        try:
            fsm.dispatch(self.machine, command)
        except fsm.FaultedError as exc:
            return error("faulted", str(exc))
        return ack(intent=result.intent, confidence=result.confidence,
                   slots=result.slots, dispatched=True,
                   command={"function": command.function, "args": command.args})

    def _handle_command(self, body, ack, error):
        try:
            command = nlu.Command(function=body.get("function", ""),
                                  args=body.get("args") or {})
        except ValueError as exc:
            return error("bad-command", str(exc))
        try:
            fsm.dispatch(self.machine, command)
        except fsm.FaultedError as exc:
            return error("faulted", str(exc))
        return ack(dispatched=True, function=command.function)

    _VEC_VARS = ("end_position", "destination_position")

    def _handle_set_var(self, body, ack, error):
        name = body.get("name")
        g = self.machine.globals
        valid = {f.name for f in dataclasses.fields(fsm.GlobalStore)}
        if name not in valid:
            return error("unknown-var", f"no global named {name!r}")
        value = body.get("value")
        if name in self._VEC_VARS and value is not None:
            try:
                value = np.asarray([float(v) for v in value], dtype=float)
            except (TypeError, ValueError):
                return error("bad-request", f"{name} takes a 3-number list")
            if value.shape != (3,):
                return error("bad-request", f"{name} takes a 3-number list")
        if name == "ambiguous":
            value = bool(value)
        if (name == "fault_reason" and value is None
                and self.machine.current_state == "Fault"):
            # operator recovery: clear the reason and home through Reset
            g.fault_reason = None
            self.machine.log.append(fsm.TransitionRecord(
                tick=self.machine.tick_count, from_state="Fault",
                to_state="Reset", guard="operator-reset"))
            self.machine.current_state = "Reset"
            self.machine.newly_entered = True
            return ack(name=name, recovered=True)
        setattr(g, name, value)
        return ack(name=name)

    # ------------------------------------------------------------------
    # tick loop and broadcast (the single writer)
    # ------------------------------------------------------------------

    async def _tick_loop(self):
        loop = asyncio.get_running_loop()
        tick_dt = 1.0 / self.config.tick_hz
        telemetry_dt = 1.0 / self.config.telemetry_hz
        next_tick = loop.time()
        next_telemetry = loop.time()
        while True:
            while True:
                try:
                    session, msg = self.requests.get_nowait()
                except asyncio.QueueEmpty:
                    break
                try:
                    replies = self.handle(session, msg)
                except Exception:
                    log.exception("handler failed for %s", session.name)
                    replies = [{"type": "ERROR", "id": msg.get("id"),
                                "body": {"error": "internal",
                                         "detail": "request handler failed",
                                         "tick": self.machine.tick_count}}]
                for reply in replies:
                    session.send_control(reply)

            world = self.runtime.step(self.machine)
            fsm.tick(self.machine, world)
            self._broadcast_alert()

            now = loop.time()
            if now >= next_telemetry:
                self._broadcast_telemetry()
                next_telemetry = max(next_telemetry + telemetry_dt,
                                     now - telemetry_dt)
            next_tick += tick_dt
            delay = next_tick - loop.time()
            if delay < -1.0:        # fell far behind (debugger, load spike)
                next_tick = loop.time()
            await asyncio.sleep(max(0.0, delay))

    def _broadcast_alert(self):
        alert = self.machine.globals.alert
        if alert != self._last_alert and alert is not None:
            payload = canonical_json({
                "type": "ALERT",
                "body": {"reason": alert, "tick": self.machine.tick_count}})
            for session in self.sessions:
                if session.hello_done:
                    session.outbox.put_nowait(("control", payload))
        self._last_alert = alert

    def _broadcast_telemetry(self):
        payload = canonical_json({"type": "TELEMETRY",
                                  "body": self.runtime.telemetry()})
        for session in self.sessions:
            if session.hello_done:
                session.offer_telemetry(payload)

    # ------------------------------------------------------------------
    # transports
    # ------------------------------------------------------------------

    async def _tcp_writer(self, session: ClientSession, writer):
        while True:
            kind, text = await session.outbox.get()
            if kind == "telemetry":
                session.telemetry_backlog -= 1
            payload = text.encode("utf-8")
            writer.write(len(payload).to_bytes(4, "big") + payload)
            await writer.drain()

    async def _handle_tcp(self, reader, writer):
        session = ClientSession("tcp")
        self.sessions.add(session)
        writer_task = asyncio.create_task(self._tcp_writer(session, writer))
        decoder = FrameDecoder()
        log.info("%s connected", session.name)
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                try:
                    messages = decoder.feed(data)
                except ProtocolError as exc:
                    # last words, bypassing the queue: framing is gone
                    writer.write(encode_frame({
                        "type": "ERROR", "id": None,
                        "body": {"error": "protocol", "detail": str(exc)}}))
                    await writer.drain()
                    break
                for msg in messages:
                    await self.requests.put((session, msg))
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            session.closed = True
            self.sessions.discard(session)
            writer_task.cancel()
            writer.close()
            log.info("%s disconnected", session.name)

    async def _ws_writer(self, session: ClientSession, ws):
        while True:
            kind, text = await session.outbox.get()
            if kind == "telemetry":
                session.telemetry_backlog -= 1
            await ws.send(text)

    async def _handle_ws(self, ws):
        if ws.request.path != "/ws":
            await ws.close(code=1008, reason="unknown path")
            return
        session = ClientSession("ws")
        self.sessions.add(session)
        writer_task = asyncio.create_task(self._ws_writer(session, ws))
        log.info("%s connected", session.name)
        try:
            async for raw in ws:
                if isinstance(raw, bytes):
                    raw = raw.decode("utf-8", errors="replace")
                try:
                    msg = _parse_ws_text(raw)
                except ProtocolError as exc:
                    await ws.send(canonical_json({
                        "type": "ERROR", "id": None,
                        "body": {"error": "protocol", "detail": str(exc)}}))
                    break
                await self.requests.put((session, msg))
        except websockets.ConnectionClosed:
            pass
        finally:
            session.closed = True
            self.sessions.discard(session)
            writer_task.cancel()
            log.info("%s disconnected", session.name)

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    async def start(self):
        cfg = self.config
        tcp = await asyncio.start_server(self._handle_tcp, cfg.host, cfg.tcp_port)
        self.tcp_port = tcp.sockets[0].getsockname()[1]
        ws = await websockets.serve(self._handle_ws, cfg.host, cfg.ws_port)
        self.ws_port = next(iter(ws.sockets)).getsockname()[1]
        self._servers = [tcp, ws]
        self._tasks = [asyncio.create_task(self._tick_loop())]
        log.info("hub up: tcp=%d ws=%d", self.tcp_port, self.ws_port)
        return self

    async def stop(self):
        for task in self._tasks:
            task.cancel()
        for server in self._servers:
            server.close()
        tcp = self._servers[0] if self._servers else None
        if tcp is not None:
            await tcp.wait_closed()
        self._servers = []
        self._tasks = []

    async def run_forever(self):
        await self.start()
        try:
            await asyncio.Event().wait()
        finally:
            await self.stop()


def _parse_ws_text(raw: str) -> dict:
    try:
        obj = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON text frame: {exc}")
    if not isinstance(obj, dict) or not isinstance(obj.get("type"), str):
        raise ProtocolError('text frame is not an object with a string "type"')
    return obj


class NluService:
    """Standalone language front end speaking the hub protocol over TCP.

    Answers INTENT_TEXT with the recognized intent and bound command but
    owns no machine; a hub (or operator) forwards the command itself.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 7464,
                 model: nlu.MLPModel | None = None,
                 threshold: float = nlu.DEFAULT_THRESHOLD):
        self.host = host
        self.port = port
        self.model = model if model is not None else default_model()
        self.threshold = threshold
        self._server = None

    def handle(self, session: ClientSession, msg: dict) -> list[dict]:
        mtype = msg.get("type")
        mid = msg.get("id")
        body = msg.get("body") or {}
        if not isinstance(body, dict):
            body = {}
        if mtype == "HELLO":
            if body.get("protocol_version") != protocol.PROTOCOL_VERSION:
                return [{"type": "ERROR", "id": mid,
                         "body": {"error": "version-unsupported", "detail": ""}}]
            session.hello_done = True
            return [{"type": "ACK", "id": mid,
                     "body": {"protocol_version": protocol.PROTOCOL_VERSION,
                              "server": f"deskbot-nlu/{__version__}"}}]
        if not session.hello_done:
            return [{"type": "ERROR", "id": mid,
                     "body": {"error": "not-ready",
                              "detail": "HELLO must precede any other message"}}]
        if mtype != "INTENT_TEXT":
            return [{"type": "ERROR", "id": mid,
                     "body": {"error": "unsupported",
                              "detail": "this endpoint only binds intent text"}}]
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            return [{"type": "ERROR", "id": mid,
                     "body": {"error": "bad-request",
                              "detail": 'INTENT_TEXT needs a non-empty "text"'}}]
        try:
            result, command = nlu.interpret(nlu.Utterance(text=text),
                                            self.model, threshold=self.threshold)
        except nlu.UnbindableError as exc:
            return [{"type": "ACK", "id": mid,
                     "body": {"intent": exc.intent, "command": None,
                              "detail": str(exc)}}]
        cmd = (None if result.intent == nlu.UNKNOWN
               else {"function": command.function, "args": command.args})
        return [{"type": "ACK", "id": mid,
                 "body": {"intent": result.intent, "command": cmd}}]

    async def _handle_client(self, reader, writer):
        session = ClientSession("tcp")
        decoder = FrameDecoder()
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                try:
                    messages = decoder.feed(data)
                except ProtocolError as exc:
                    writer.write(encode_frame({
                        "type": "ERROR", "id": None,
                        "body": {"error": "protocol", "detail": str(exc)}}))
                    await writer.drain()
                    break
                for msg in messages:
                    for reply in self.handle(session, msg):
                        writer.write(encode_frame(reply))
                    await writer.drain()
        except ConnectionError:
            pass
        finally:
            writer.close()

    async def start(self):
        self._server = await asyncio.start_server(
            self._handle_client, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        return self

    async def stop(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def run_forever(self):
        await self.start()
        try:
            await asyncio.Event().wait()
        finally:
            await self.stop()
