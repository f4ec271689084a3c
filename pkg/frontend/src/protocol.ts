/**
 * Wire codec for the hub's JSON protocol, version 1.
 *
 * Every message is a single JSON object rendered canonically: keys sorted at
 * every nesting level, no whitespace, UTF-8 verbatim. The WebSocket gateway
 * at /ws carries exactly that text; the TCP transport prefixes the same bytes
 * with a 4-byte big-endian length. Both renderings live here so tests can pin
 * frames byte-for-byte against PROTOCOL.md.
 */

export const PROTOCOL_VERSION = 1;

// Hub-side payload cap; frames past this are a protocol error, not data.
export const MAX_PAYLOAD = 1 << 20;

export type Json =
  | null
  | boolean
  | number
  | string
  | Json[]
  | { [key: string]: Json };

export interface Message {
  type: string;
  id?: string;
  body?: { [key: string]: Json };
}

export interface TransitionRecord {
  tick: number;
  from: string;
  to: string;
  guard: string;
}

/** One telemetry broadcast: machine state plus the hub-computed arm pose. */
export interface Telemetry {
  tick: number;
  state: string;
  joints: number[];
  ee_position: number[];
  ee_orientation: number[]; // unit quaternion, (x, y, z, w)
  globals: { [key: string]: Json };
  last_transition: TransitionRecord | null;
}

// The hub sorts keys by Unicode code point. Default string comparison works
// on UTF-16 code units, which disagrees past the BMP, so compare explicitly.
function compareCodePoints(a: string, b: string): number {
  const ai = Array.from(a);
  const bi = Array.from(b);
  const n = Math.min(ai.length, bi.length);
  for (let i = 0; i < n; i++) {
    const d = ai[i].codePointAt(0)! - bi[i].codePointAt(0)!;
    if (d !== 0) return d;
  }
  return ai.length - bi.length;
}

/**
 * Render a value as canonical JSON: sorted keys, no whitespace, non-ASCII
 * unescaped. Matches the hub's serializer byte-for-byte for the message
 * shapes the console sends (strings, booleans, null, and integral numbers).
 * Object fields holding undefined are omitted, as JSON.stringify does.
 */
export function canonicalJson(value: unknown): string {
  if (value === undefined) {
    throw new Error("undefined has no JSON rendering");
  }
  if (typeof value === "number" && !Number.isFinite(value)) {
    throw new Error("non-finite numbers have no JSON rendering");
  }
  if (value === null || typeof value !== "object") {
    const out = JSON.stringify(value);
    if (out === undefined) {
      throw new Error(`cannot serialize a ${typeof value}`);
    }
    return out;
  }
  if (Array.isArray(value)) {
    return "[" + value.map((v) => canonicalJson(v ?? null)).join(",") + "]";
  }
  const obj = value as { [key: string]: unknown };
  const keys = Object.keys(obj)
    .filter((k) => obj[k] !== undefined)
    .sort(compareCodePoints);
  const parts = keys.map(
    (k) => JSON.stringify(k) + ":" + canonicalJson(obj[k]),
  );
  return "{" + parts.join(",") + "}";
}

/** TCP rendering of a message: 4-byte big-endian length, then the JSON. */
export function encodeFrame(msg: Message): Uint8Array {
  const payload = new TextEncoder().encode(canonicalJson(msg));
  if (payload.length > MAX_PAYLOAD) {
    throw new Error(`payload of ${payload.length} bytes exceeds cap`);
  }
  const out = new Uint8Array(4 + payload.length);
  new DataView(out.buffer).setUint32(0, payload.length, false);
  out.set(payload, 4);
  return out;
}

/** Parse one inbound WebSocket text frame. Throws on anything malformed. */
export function parseMessage(raw: string): Message {
  let value: unknown;
  try {
    value = JSON.parse(raw);
  } catch {
    throw new Error("frame is not valid JSON");
  }
  if (value === null || typeof value !== "object" || Array.isArray(value)) {
    throw new Error("frame must be a JSON object");
  }
  const msg = value as Message;
  if (typeof msg.type !== "string") {
    throw new Error('frame needs a string "type"');
  }
  return msg;
}

/** True when an ACK body reports the Unknown intent (below threshold). */
export function isUnknownIntent(body: { [key: string]: Json }): boolean {
  return body.intent === "Unknown";
}
