import { ARM_TABLE1, forwardKinematics, quatFromMatrix } from "../src/fk.js";
import type { Telemetry, TransitionRecord } from "../src/protocol.js";
import { ConsoleSession, type WsLike } from "../src/session.js";

/** Scriptable socket double; tests drive open/receive/drop by hand. */
export class FakeWs implements WsLike {
  sent: string[] = [];
  closed = false;
  onopen: (() => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
  }

  open(): void {
    this.onopen?.();
  }

  receive(msg: unknown): void {
    this.onmessage?.({ data: JSON.stringify(msg) });
  }

  drop(): void {
    this.onclose?.();
  }
}

/** Manual timer queue standing in for setTimeout in reconnect tests. */
export class ManualTimers {
  queue: Array<{ id: number; ms: number; fn: () => void }> = [];
  private seq = 1;

  set = (fn: () => void, ms: number): unknown => {
    const id = this.seq++;
    this.queue.push({ id, ms, fn });
    return id;
  };

  clear = (handle: unknown): void => {
    this.queue = this.queue.filter((q) => q.id !== handle);
  };

  /** Fire the oldest pending timer; returns its delay for assertions. */
  fire(): number | undefined {
    const next = this.queue.shift();
    next?.fn();
    return next?.ms;
  }
}

export interface Rig {
  session: ConsoleSession;
  sockets: FakeWs[];
  timers: ManualTimers;
}

export function makeRig(): Rig {
  const sockets: FakeWs[] = [];
  const timers = new ManualTimers();
  const session = new ConsoleSession("ws://hub.test/ws", {
    wsFactory: () => {
      const ws = new FakeWs();
      sockets.push(ws);
      return ws;
    },
    setTimeoutFn: timers.set,
    clearTimeoutFn: timers.clear,
  });
  return { session, sockets, timers };
}

/** Complete the HELLO handshake on the given socket. */
export function handshake(ws: FakeWs, version = 1): void {
  ws.open();
  const hello = JSON.parse(ws.sent[0]) as { id: string };
  ws.receive({
    type: "ACK",
    id: hello.id,
    body: { tick: 0, protocol_version: version, server: "deskbot/0.1.0" },
  });
}

let tickCounter = 1;

/** Telemetry whose pose agrees with client FK (state logic fixtures). */
export function telemetryFor(
  q: number[],
  opts: {
    tick?: number;
    state?: string;
    faultReason?: string | null;
    lastTransition?: TransitionRecord | null;
  } = {},
): Telemetry {
  const m = forwardKinematics(ARM_TABLE1, q);
  return {
    tick: opts.tick ?? tickCounter++,
    state: opts.state ?? "Idle",
    joints: q,
    ee_position: [m[0][3], m[1][3], m[2][3]],
    ee_orientation: quatFromMatrix(m),
    globals: { fault_reason: opts.faultReason ?? null },
    last_transition: opts.lastTransition ?? null,
  };
}
