/**
 * Pure HTML renderers for the console. Every function maps session state to
 * a markup string; main.ts owns the DOM. Keeping these DOM-free makes the
 * view testable without a browser and guarantees the render path cannot
 * reach the robot except through the session's protocol calls.
 */

import { forwardFrames, type DhLink } from "./fk.js";
import type { TransitionRecord } from "./protocol.js";
import type { CommandOutcome, ConsoleSession } from "./session.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fmt(x: number): string {
  return x.toFixed(4);
}

// --- arm view ---------------------------------------------------------

const VIEW_PX = 220;
const SCALE = 320; // px per metre; the arm's reach is ~0.26 m

function polyline(points: number[][], pick: (p: number[]) => [number, number]): string {
  const cx = VIEW_PX / 2;
  const cy = VIEW_PX / 2;
  const coords = points
    .map((p) => {
      const [u, v] = pick(p);
      return `${(cx + u * SCALE).toFixed(1)},${(cy - v * SCALE).toFixed(1)}`;
    })
    .join(" ");
  const dots = points
    .map((p) => {
      const [u, v] = pick(p);
      return `<circle cx="${(cx + u * SCALE).toFixed(1)}" cy="${(cy - v * SCALE).toFixed(1)}" r="3"/>`;
    })
    .join("");
  return `<polyline points="${coords}" fill="none" stroke="currentColor" stroke-width="2"/>${dots}`;
}

/**
 * Orthographic side (x/z) and top (x/y) projections of the arm, drawn from
 * client-side FK of the reported joints. Base at the view centre.
 */
export function renderArmSvg(chain: DhLink[], joints: number[]): string {
  const frames = forwardFrames(chain, joints);
  const origins: number[][] = [[0, 0, 0]];
  for (const f of frames) {
    origins.push([f[0][3], f[1][3], f[2][3]]);
  }
  const side = polyline(origins, (p) => [p[0], p[2]]);
  const top = polyline(origins, (p) => [p[0], p[1]]);
  const panel = (label: string, body: string) =>
    `<figure class="arm-view"><svg viewBox="0 0 ${VIEW_PX} ${VIEW_PX}" width="${VIEW_PX}" height="${VIEW_PX}">${body}</svg><figcaption>${label}</figcaption></figure>`;
  return panel("side (x/z)", side) + panel("top (x/y)", top);
}

// --- panels -----------------------------------------------------------

export function renderStatusBar(session: ConsoleSession): string {
  const parts = [`<span class="status status-${session.status}">${session.status}</span>`];
  if (session.banner) {
    parts.push(`<div class="banner banner-block">${escapeHtml(session.banner)}</div>`);
  }
  if (session.drift) {
    const d = session.drift;
    const cls = d.ok ? "drift-ok" : "drift-bad";
    const label = d.ok ? "FK checksum ok" : "FK drift!";
    parts.push(
      `<span class="badge ${cls}" title="pos ${d.position.toExponential(2)} m, quat ${d.orientation.toExponential(2)}">${label}</span>`,
    );
  }
  if (session.driftEverBad) {
    parts.push(`<span class="badge drift-bad">drift seen this session</span>`);
  }
  return `<header class="statusbar">${parts.join("")}</header>`;
}

export function renderTimeline(records: TransitionRecord[]): string {
  const rows = records
    .map(
      (r) =>
        `<tr><td>${r.tick}</td><td>${escapeHtml(r.from)}</td><td>${escapeHtml(r.to)}</td><td>${escapeHtml(r.guard)}</td></tr>`,
    )
    .join("");
  return `<table class="timeline"><thead><tr><th>tick</th><th>from</th><th>to</th><th>guard</th></tr></thead><tbody>${rows}</tbody></table>`;
}

function renderOutcome(row: CommandOutcome): string {
  if (row.status === "pending") return `<span class="pending">…</span>`;
  if (row.status === "error") {
    return `<span class="error">${escapeHtml(row.detail ?? "error")}</span>`;
  }
  if (row.unknown) {
    const conf =
      row.confidence === undefined ? "" : ` (${row.confidence.toFixed(3)})`;
    return `<span class="badge unknown">Unknown${conf}</span>`;
  }
  const conf =
    row.confidence === undefined ? "" : ` ${row.confidence.toFixed(3)}`;
  const detail = row.detail ? ` <em>${escapeHtml(row.detail)}</em>` : "";
  return `<span class="intent">${escapeHtml(row.intent ?? "")}${conf}</span>${detail}`;
}

/** Command history with one re-send button per row. */
export function renderHistory(rows: CommandOutcome[]): string {
  const items = rows
    .map(
      (r) =>
        `<li data-id="${r.id}"><code>${escapeHtml(r.text)}</code> ${renderOutcome(r)} <button class="resend" data-resend="${r.id}">re-send</button></li>`,
    )
    .join("");
  return `<ol class="history">${items}</ol>`;
}

/** Intent/slot inspector for the most recent resolved command. */
export function renderInspector(rows: CommandOutcome[]): string {
  const row = [...rows].reverse().find((r) => r.status === "done");
  if (!row) return `<div class="inspector empty">no commands yet</div>`;
  const slots = Object.entries(row.slots ?? {})
    .map(
      ([k, v]) =>
        `<tr><td>${escapeHtml(k)}</td><td>${escapeHtml(JSON.stringify(v))}</td></tr>`,
    )
    .join("");
  const command = row.command
    ? `<pre>${escapeHtml(JSON.stringify(row.command, null, 1))}</pre>`
    : `<em>no command dispatched</em>`;
  return (
    `<div class="inspector"><h3>${escapeHtml(row.intent ?? "Unknown")}</h3>` +
    `<table class="slots"><tbody>${slots}</tbody></table>${command}</div>`
  );
}

export function renderGlobals(globals: { [key: string]: unknown }): string {
  const rows = Object.entries(globals)
    .map(
      ([k, v]) =>
        `<tr><td><label for="g-${k}">${escapeHtml(k)}</label></td>` +
        `<td><input id="g-${k}" data-var="${k}" value="${escapeHtml(JSON.stringify(v ?? null))}"/></td></tr>`,
    )
    .join("");
  return `<table class="globals"><tbody>${rows}</tbody></table>`;
}

export function renderCommandForm(session: ConsoleSession): string {
  const reason = session.inputDisabledReason();
  const disabled = reason === null ? "" : " disabled";
  const note = reason === null ? "" : `<p class="locked">${escapeHtml(reason)}</p>`;
  return (
    `<form id="command-form"><input id="command-text" placeholder="say something"${disabled}/>` +
    `<button type="submit"${disabled}>send</button></form>${note}`
  );
}

export function renderEstop(session: ConsoleSession): string {
  const lock = session.estopLocked
    ? `<div class="lock-overlay"><p>e-stop engaged</p>` +
      `<button id="ack-fault">acknowledge fault clear</button></div>`
    : "";
  return `<button id="estop" class="estop">E-STOP</button>${lock}`;
}

/** Whole-page render; main.ts drops this into #app on every change. */
export function renderPage(session: ConsoleSession, chain: DhLink[]): string {
  const t = session.latest;
  const pose = t
    ? `<p class="pose">tick ${t.tick} · ${escapeHtml(t.state)} · ee [${t.ee_position.map(fmt).join(", ")}]</p>`
    : `<p class="pose">no telemetry yet</p>`;
  const arm = t ? renderArmSvg(chain, t.joints) : renderArmSvg(chain, chain.map(() => 0));
  const globals = t ? renderGlobals(t.globals) : "";
  const notices = session.notices
    .toArray()
    .map((n) => `<li>${escapeHtml(n)}</li>`)
    .join("");
  return (
    renderStatusBar(session) +
    `<main><section class="arm">${arm}${pose}</section>` +
    `<section class="control">${renderCommandForm(session)}${renderEstop(session)}</section>` +
    `<section class="inspect">${renderInspector(session.history)}</section>` +
    `<section class="log">${renderTimeline(session.timeline.toArray())}</section>` +
    `<section class="vars">${globals}</section>` +
    `<section class="history">${renderHistory(session.history)}</section>` +
    `<aside class="notices"><ul>${notices}</ul></aside></main>`
  );
}
