/**
 * Browser entry point: builds one session against the hub's WebSocket
 * gateway and re-renders the page on every state change. All robot-facing
 * actions route through the session; the DOM layer only forwards events.
 */

import { ARM_TABLE1 } from "./fk.js";
import { ConsoleSession } from "./session.js";
import { renderPage } from "./ui.js";

function hubUrl(): string {
  const loc = (globalThis as { location?: Location }).location;
  const host = loc?.hostname || "127.0.0.1";
  return `ws://${host}:7463/ws`;
}

export function mount(root: HTMLElement, url: string = hubUrl()): ConsoleSession {
  const session = new ConsoleSession(url, {
    onChange: () => {
      root.innerHTML = renderPage(session, ARM_TABLE1);
    },
  });

  root.addEventListener("click", (ev) => {
    const el = ev.target as HTMLElement;
    if (el.id === "estop") session.estop();
    if (el.id === "ack-fault") session.acknowledgeFaultClear();
    const resend = el.getAttribute("data-resend");
    if (resend) session.resend(resend);
  });

  root.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const input = root.querySelector<HTMLInputElement>("#command-text");
    if (input && input.value.trim()) {
      session.submitCommand(input.value.trim());
      input.value = "";
    }
  });

  root.addEventListener("change", (ev) => {
    const el = ev.target as HTMLInputElement;
    const name = el.getAttribute("data-var");
    if (!name) return;
    try {
      session.setVar(name, JSON.parse(el.value));
    } catch {
      // leave the field as typed; invalid JSON is never sent
    }
  });

  session.connect();
  return session;
}

const doc = (globalThis as { document?: Document }).document;
if (doc) {
  const root = doc.getElementById("app");
  if (root) mount(root);
}
