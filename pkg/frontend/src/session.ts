/**
 * Connection and state management for the operator console.
 *
 * One session owns one WebSocket to the hub's /ws gateway, performs the
 * HELLO version handshake, tracks outstanding request ids, folds telemetry
 * into the latest-pose view plus a bounded transition timeline, and
 * cross-checks every hub pose against local FK. All mutation happens on the
 * single rendering context via the socket callbacks; the UI only ever talks
 * to the robot through protocol messages sent here.
 */

import {
  canonicalJson,
  parseMessage,
  PROTOCOL_VERSION,
  type Json,
  type Message,
  type Telemetry,
  type TransitionRecord,
} from "./protocol.js";
import { ARM_TABLE1, fkDrift, type DhLink, type FkDrift } from "./fk.js";
import { RingBuffer } from "./ring.js";

/** The slice of the WebSocket API the session drives; injectable in tests. */
export interface WsLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type ConnectionStatus =
  | "connecting"
  | "connected"
  | "reconnecting"
  | "incompatible"
  | "closed";

export interface PendingRequest {
  id: string;
  type: string;
  text?: string;
}

/** One command-history row, updated in place when the hub replies. */
export interface CommandOutcome {
  id: string;
  text: string;
  status: "pending" | "done" | "error";
  intent?: string;
  confidence?: number;
  slots?: { [key: string]: Json };
  command?: Json;
  detail?: string;
  unknown: boolean;
}

export interface SessionOptions {
  wsFactory?: (url: string) => WsLike;
  setTimeoutFn?: (fn: () => void, ms: number) => unknown;
  clearTimeoutFn?: (handle: unknown) => void;
  chain?: DhLink[];
  /** Fired after every state mutation; the UI re-renders from it. */
  onChange?: () => void;
}

export const TIMELINE_CAPACITY = 500;
const NOTICE_CAPACITY = 50;
const HISTORY_CAPACITY = 100;
const BACKOFF_MS = [250, 500, 1000, 2000, 5000];

function defaultWsFactory(url: string): WsLike {
  const ctor = (globalThis as { WebSocket?: new (url: string) => WsLike })
    .WebSocket;
  if (!ctor) {
    throw new Error("no WebSocket implementation; pass options.wsFactory");
  }
  return new ctor(url);
}

export class ConsoleSession {
  status: ConnectionStatus = "closed";
  /** Blocking banner text; set on version mismatch, cleared on connect(). */
  banner: string | null = null;
  latest: Telemetry | null = null;
  readonly timeline = new RingBuffer<TransitionRecord>(TIMELINE_CAPACITY);
  readonly notices = new RingBuffer<string>(NOTICE_CAPACITY);
  readonly history: CommandOutcome[] = [];
  /** Drift of the newest telemetry frame, and whether any frame ever drifted. */
  drift: FkDrift | null = null;
  driftEverBad = false;
  /** True from the moment an e-stop is sent until the fault-clear handshake. */
  estopLocked = false;

  private readonly pending = new Map<string, PendingRequest>();
  private readonly wsFactory: (url: string) => WsLike;
  private readonly setTimeoutFn: (fn: () => void, ms: number) => unknown;
  private readonly clearTimeoutFn: (handle: unknown) => void;
  private readonly chain: DhLink[];
  private readonly onChange: () => void;
  private ws: WsLike | null = null;
  private reconnectHandle: unknown = null;
  private backoffIndex = 0;
  private commandSeq = 1;
  private varSeq = 1;
  private estopSeq = 1;
  private estopInFlight = false;
  private faultAckRequested = false;

  constructor(
    readonly url: string,
    options: SessionOptions = {},
  ) {
    this.wsFactory = options.wsFactory ?? defaultWsFactory;
    this.setTimeoutFn =
      options.setTimeoutFn ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimeoutFn =
      options.clearTimeoutFn ?? ((h) => clearTimeout(h as number));
    this.chain = options.chain ?? ARM_TABLE1;
    this.onChange = options.onChange ?? (() => {});
  }

  pendingIds(): string[] {
    return [...this.pending.keys()];
  }

  /** Open the socket and start the HELLO handshake. Clears any banner. */
  connect(): void {
    this.banner = null;
    this.status = this.status === "closed" ? "connecting" : "reconnecting";
    this.openSocket();
    this.changed();
  }

  /** Operator close; no reconnect afterwards. */
  close(): void {
    this.status = "closed";
    this.cancelReconnect();
    if (this.ws) {
      this.ws.onclose = null;
      this.ws.close();
      this.ws = null;
    }
    this.changed();
  }

  /** True when command input should accept text. */
  canSubmit(): boolean {
    return (
      this.status === "connected" &&
      !this.estopLocked &&
      this.latest?.state !== "Fault"
    );
  }

  /** Why input is refused right now, or null when it is allowed. */
  inputDisabledReason(): string | null {
    if (this.status !== "connected") return `offline (${this.status})`;
    if (this.estopLocked) return "e-stop engaged; acknowledge fault clear";
    if (this.latest?.state === "Fault") {
      const reason = this.latest.globals.fault_reason;
      return `machine faulted: ${reason ?? "unknown reason"}`;
    }
    return null;
  }

  /**
   * Send the text through the language pipeline. Returns the request id,
   * or null when input is disabled (offline, faulted, or e-stop locked).
   */
  submitCommand(text: string): string | null {
    if (!this.canSubmit()) {
      this.notice(`command refused: ${this.inputDisabledReason()}`);
      this.changed();
      return null;
    }
    const id = `c-${this.commandSeq++}`;
    this.history.push({ id, text, status: "pending", unknown: false });
    if (this.history.length > HISTORY_CAPACITY) this.history.shift();
    this.sendRequest({ type: "INTENT_TEXT", id, body: { text } }, { text });
    this.changed();
    return id;
  }

  /** Re-send a history row's text under a fresh request id. */
  resend(historyId: string): string | null {
    const row = this.history.find((h) => h.id === historyId);
    if (!row) return null;
    return this.submitCommand(row.text);
  }

  /** Write one global variable on the hub. */
  setVar(name: string, value: Json): string | null {
    if (this.status !== "connected") {
      this.notice(`set ${name} refused: offline`);
      this.changed();
      return null;
    }
    const id = `v-${this.varSeq++}`;
    this.sendRequest({ type: "SET_VAR", id, body: { name, value } });
    this.changed();
    return id;
  }

  /**
   * Emergency stop. Exactly one frame per engagement: repeat calls while
   * the stop is in flight or the lock is up are debounced to nothing, and
   * offline calls are refused with a notice rather than queued.
   */
  estop(): boolean {
    if (this.status !== "connected") {
      this.notice("e-stop refused: not connected (nothing queued)");
      this.changed();
      return false;
    }
    if (this.estopInFlight || this.estopLocked) {
      return false;
    }
    const id = `e-${this.estopSeq++}`;
    this.estopInFlight = true;
    this.estopLocked = true;
    this.sendRequest({ type: "ESTOP", id });
    this.changed();
    return true;
  }

  /**
   * Operator acknowledges the fault: ask the hub to clear fault_reason
   * (recovery through Reset). The lock drops once telemetry leaves Fault.
   */
  acknowledgeFaultClear(): void {
    if (this.status !== "connected") {
      this.notice("fault clear refused: offline");
      this.changed();
      return;
    }
    this.faultAckRequested = true;
    const id = `v-${this.varSeq++}`;
    this.sendRequest({
      type: "SET_VAR",
      id,
      body: { name: "fault_reason", value: null },
    });
    this.changed();
  }

  // --- socket plumbing -----------------------------------------------

  private openSocket(): void {
    this.cancelReconnect();
    let ws: WsLike;
    try {
      ws = this.wsFactory(this.url);
    } catch (err) {
      this.notice(`connect failed: ${String(err)}`);
      this.scheduleReconnect();
      return;
    }
    this.ws = ws;
    ws.onopen = () => {
      this.sendRequest({
        type: "HELLO",
        id: "h1",
        body: { protocol_version: PROTOCOL_VERSION },
      });
      this.changed();
    };
    ws.onmessage = (ev) => {
      const raw = typeof ev.data === "string" ? ev.data : String(ev.data);
      let msg: Message;
      try {
        msg = parseMessage(raw);
      } catch (err) {
        this.notice(`bad frame from hub: ${String(err)}`);
        this.changed();
        return;
      }
      this.dispatch(msg);
      this.changed();
    };
    ws.onclose = () => this.handleClose();
    ws.onerror = () => {
      // onclose follows; nothing to do beyond noting it
      this.notice("socket error");
      this.changed();
    };
  }

  private handleClose(): void {
    this.ws = null;
    this.failPending("connection lost");
    if (this.status === "closed" || this.status === "incompatible") {
      this.changed();
      return;
    }
    this.status = "reconnecting";
    this.scheduleReconnect();
    this.changed();
  }

  private scheduleReconnect(): void {
    const delay = BACKOFF_MS[Math.min(this.backoffIndex, BACKOFF_MS.length - 1)];
    this.backoffIndex += 1;
    this.reconnectHandle = this.setTimeoutFn(() => {
      this.reconnectHandle = null;
      if (this.status === "closed" || this.status === "incompatible") return;
      this.openSocket();
      this.changed();
    }, delay);
  }

  private cancelReconnect(): void {
    if (this.reconnectHandle !== null) {
      this.clearTimeoutFn(this.reconnectHandle);
      this.reconnectHandle = null;
    }
  }

  private sendRequest(msg: Message, extra: { text?: string } = {}): void {
    if (!this.ws) {
      this.notice(`cannot send ${msg.type}: no socket`);
      return;
    }
    const id = msg.id;
    if (id !== undefined) {
      if (this.pending.has(id)) {
        throw new Error(`duplicate pending request id ${id}`);
      }
      this.pending.set(id, { id, type: msg.type, text: extra.text });
    }
    this.ws.send(canonicalJson(msg));
  }

  private failPending(reason: string): void {
    for (const req of this.pending.values()) {
      const row = this.history.find((h) => h.id === req.id);
      if (row && row.status === "pending") {
        row.status = "error";
        row.detail = reason;
      }
    }
    this.pending.clear();
    this.estopInFlight = false;
  }

  // --- inbound routing -----------------------------------------------

  private dispatch(msg: Message): void {
    const body = msg.body ?? {};
    switch (msg.type) {
      case "ACK":
        this.handleAck(msg.id, body);
        return;
      case "ERROR":
        this.handleError(msg.id, body);
        return;
      case "TELEMETRY":
      case "STATE":
        this.handleTelemetry(body as unknown as Telemetry);
        if (msg.type === "STATE" && msg.id !== undefined) {
          this.pending.delete(msg.id);
        }
        return;
      case "ALERT":
        this.notice(`alert: ${body.reason} (tick ${body.tick})`);
        return;
      default:
        this.notice(`unhandled message type ${msg.type}`);
    }
  }

  private handleAck(id: string | undefined, body: { [key: string]: Json }): void {
    const req = id === undefined ? undefined : this.pending.get(id);
    if (id !== undefined) this.pending.delete(id);
    if (!req) return;

    if (req.type === "HELLO") {
      if (body.protocol_version !== PROTOCOL_VERSION) {
        this.becomeIncompatible(
          `hub speaks protocol_version ${body.protocol_version}, ` +
            `console speaks ${PROTOCOL_VERSION}`,
        );
        return;
      }
      this.status = "connected";
      this.backoffIndex = 0;
      this.notice(`connected to ${body.server ?? "hub"}`);
      return;
    }
    if (req.type === "INTENT_TEXT") {
      const row = this.history.find((h) => h.id === id);
      if (row) {
        row.status = "done";
        row.intent = typeof body.intent === "string" ? body.intent : undefined;
        row.confidence =
          typeof body.confidence === "number" ? body.confidence : undefined;
        row.slots = (body.slots ?? undefined) as
          | { [key: string]: Json }
          | undefined;
        row.command = body.command ?? null;
        row.detail = typeof body.detail === "string" ? body.detail : undefined;
        row.unknown = body.intent === "Unknown";
      }
      return;
    }
    if (req.type === "ESTOP") {
      this.estopInFlight = false;
      this.notice(`e-stop acknowledged at tick ${body.tick}`);
      return;
    }
    if (req.type === "SET_VAR") {
      if (body.recovered === true) {
        this.notice("fault cleared by operator; homing through Reset");
      }
      return;
    }
  }

  private handleError(id: string | undefined, body: { [key: string]: Json }): void {
    const req = id === undefined ? undefined : this.pending.get(id);
    if (id !== undefined) this.pending.delete(id);
    const code = body.error;
    const detail = typeof body.detail === "string" ? body.detail : String(code);

    if (req?.type === "HELLO" && code === "version-unsupported") {
      this.becomeIncompatible(detail);
      return;
    }
    if (req?.type === "INTENT_TEXT") {
      const row = this.history.find((h) => h.id === id);
      if (row) {
        row.status = "error";
        row.detail = detail;
      }
      return;
    }
    if (req?.type === "ESTOP") {
      this.estopInFlight = false;
    }
    this.notice(`hub error (${code}): ${detail}`);
  }

  private becomeIncompatible(detail: string): void {
    this.status = "incompatible";
    this.banner = `incompatible protocol: ${detail}`;
    this.cancelReconnect();
    if (this.ws) {
      this.ws.onclose = null;
      this.ws.close();
      this.ws = null;
    }
  }

  private handleTelemetry(t: Telemetry): void {
    this.latest = t;
    this.drift = fkDrift(this.chain, t.joints, t.ee_position, t.ee_orientation);
    if (!this.drift.ok) this.driftEverBad = true;

    const lt = t.last_transition;
    if (lt) {
      const newest = this.timeline.last();
      const differs =
        !newest ||
        newest.tick !== lt.tick ||
        newest.from !== lt.from ||
        newest.to !== lt.to ||
        newest.guard !== lt.guard;
      if (differs) {
        // A lower tick means the hub restarted; start a fresh epoch so the
        // timeline stays ordered by tick.
        if (newest && lt.tick < newest.tick) {
          this.timeline.clear();
        }
        this.timeline.push({ ...lt });
      }
    }

    if (this.estopLocked && this.faultAckRequested && t.state !== "Fault") {
      this.estopLocked = false;
      this.faultAckRequested = false;
      this.notice("fault clear confirmed; controls unlocked");
    }
  }

  private notice(text: string): void {
    this.notices.push(text);
  }

  private changed(): void {
    this.onChange();
  }
}
