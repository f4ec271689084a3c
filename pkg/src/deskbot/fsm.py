"""Tick-driven task state machine with wildcard-source safety transitions.

States carry no behavior here; a world stepper (see runtime.DeskRuntime)
performs per-state work each tick and reports outcomes through an immutable
WorldSnapshot. tick() then evaluates transitions: wildcard-source guards
(safety) run every tick in descending priority, state-specific guards only
once the current action reports completion, and at most one transition
fires per tick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from importlib import resources

import numpy as np

__all__ = [
    "STATES",
    "ARBITRARY",
    "Transition",
    "GlobalStore",
    "WorldSnapshot",
    "TransitionRecord",
    "MachineSpec",
    "Machine",
    "MachineValidationError",
    "FaultedError",
    "ScenarioTimeout",
    "register_guard",
    "validate",
    "dispatch",
    "tick",
    "run_scenario",
    "load_machine_spec",
    "write_trace",
    "read_trace",
]

STATES = ("Idle", "Search", "Move", "Grab", "Press", "Place", "Reset",
          "UserInput", "Fault", "Stuck", "Collision")
ARBITRARY = "*"

# states allowed to have no outgoing edges: Idle rests, Fault is terminal
_NO_EXIT_OK = ("Idle", "Fault")


class MachineValidationError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


class FaultedError(Exception):
    def __init__(self, reason):
        super().__init__(f"machine is in Fault: {reason}")
        self.reason = reason


class ScenarioTimeout(Exception):
    def __init__(self, max_ticks, trace):
        super().__init__(f"scenario did not settle within {max_ticks} ticks")
        self.trace = trace


@dataclass(frozen=True)
class Transition:
    from_state: str  # state name or "*"
    to_state: str
    guard: str
    priority: int


@dataclass
class GlobalStore:
    """Shared variables the command layer writes and guards/actions read."""
    target_name: str = ""
    end_position: np.ndarray | None = None
    destination_position: np.ndarray | None = None
    fault_reason: str | None = None
    command: str = "Noop"
    press_end: str = "Near"
    destination_name: str = ""
    ambiguous: bool = False
    alert: str | None = None

    def snapshot(self) -> dict:
        def vec(v):
            return None if v is None else [float(x) for x in v]
        return {
            "target_name": self.target_name,
            "end_position": vec(self.end_position),
            "destination_position": vec(self.destination_position),
            "fault_reason": self.fault_reason,
            "command": self.command,
            "press_end": self.press_end,
            "destination_name": self.destination_name,
            "ambiguous": self.ambiguous,
        }


@dataclass(frozen=True)
class WorldSnapshot:
    tick: int
    action_complete: bool = True
    flags: dict = field(default_factory=dict)

    def flag(self, name: str, default=False):
        return self.flags.get(name, default)


@dataclass(frozen=True)
class TransitionRecord:
    tick: int
    from_state: str
    to_state: str
    guard: str

    def to_json(self) -> str:
        return json.dumps({"tick": self.tick, "from": self.from_state,
                           "to": self.to_state, "guard": self.guard},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TransitionRecord":
        d = json.loads(line)
        return cls(tick=d["tick"], from_state=d["from"], to_state=d["to"],
                   guard=d["guard"])


@dataclass(frozen=True)
class MachineSpec:
    states: tuple[str, ...]
    transitions: tuple[Transition, ...]
    initial: str = "Idle"


# ---------------------------------------------------------------------------
# guard registry
# ---------------------------------------------------------------------------

GUARDS: dict = {}


def register_guard(name: str):
    def deco(fn):
        GUARDS[name] = fn
        return fn
    return deco


@register_guard("always")
def _g_always(g, w):
    return True


@register_guard("fault_raised")
def _g_fault(g, w):
    return g.fault_reason is not None or bool(w.flag("fault"))


@register_guard("collision_detected")
def _g_collision(g, w):
    return bool(w.flag("collision"))


@register_guard("stuck_detected")
def _g_stuck(g, w):
    return bool(w.flag("stuck"))


@register_guard("command_actionable")
def _g_actionable(g, w):
    return g.command in ("PressTarget", "FetchToTarget")


@register_guard("command_noop")
def _g_noop(g, w):
    return g.command == "Noop"


@register_guard("target_located")
def _g_located(g, w):
    return bool(w.flag("located")) and g.end_position is not None


@register_guard("search_failed_retryable")
def _g_search_retry(g, w):
    return bool(w.flag("search_failed"))


@register_guard("arrived_for_press")
def _g_arr_press(g, w):
    return bool(w.flag("arrived")) and g.command == "PressTarget"


@register_guard("arrived_for_grab")
def _g_arr_grab(g, w):
    return bool(w.flag("arrived")) and g.command == "FetchToTarget" and not w.flag("holding")


@register_guard("arrived_for_place")
def _g_arr_place(g, w):
    return bool(w.flag("arrived")) and g.command == "FetchToTarget" and bool(w.flag("holding"))


@register_guard("not_touching")
def _g_not_touching(g, w):
    return bool(w.flag("move_done")) and not w.flag("arrived")


@register_guard("grabbed")
def _g_grabbed(g, w):
    return bool(w.flag("grab_done"))


@register_guard("grab_missed")
def _g_grab_missed(g, w):
    return bool(w.flag("grab_failed"))


@register_guard("press_done")
def _g_press_done(g, w):
    return bool(w.flag("press_done"))


@register_guard("press_missed")
def _g_press_missed(g, w):
    return bool(w.flag("press_failed"))


@register_guard("place_done")
def _g_place_done(g, w):
    return bool(w.flag("place_done"))


@register_guard("place_missed")
def _g_place_missed(g, w):
    return bool(w.flag("place_failed"))


@register_guard("reset_done")
def _g_reset_done(g, w):
    return bool(w.flag("at_home"))


@register_guard("recovered")
def _g_recovered(g, w):
    return not (w.flag("stuck") or w.flag("collision"))


# ---------------------------------------------------------------------------
# machine
# ---------------------------------------------------------------------------

@dataclass
class Machine:
    spec: MachineSpec
    current_state: str = "Idle"
    tick_count: int = 0
    newly_entered: bool = True
    globals: GlobalStore = field(default_factory=GlobalStore)
    log: list = field(default_factory=list)

    def __post_init__(self):
        self.current_state = self.spec.initial
        self._arbitrary = sorted(
            (t for t in self.spec.transitions if t.from_state == ARBITRARY),
            key=lambda t: -t.priority)
        self._by_state: dict[str, list[Transition]] = {}
        for t in self.spec.transitions:
            if t.from_state != ARBITRARY:
                self._by_state.setdefault(t.from_state, []).append(t)
        for lst in self._by_state.values():
            lst.sort(key=lambda t: -t.priority)


def validate(spec: MachineSpec) -> Machine:
    """Build a Machine, reporting every violation at once on failure."""
    errors: list[str] = []
    known = set(spec.states)
    if spec.initial not in known:
        errors.append(f"initial state {spec.initial!r} not declared")
    for s in spec.states:
        if s not in STATES:
            errors.append(f"unknown state name {s!r}")
    per_source: dict[str, set[int]] = {}
    for t in spec.transitions:
        if t.from_state != ARBITRARY and t.from_state not in known:
            errors.append(f"transition from undeclared state {t.from_state!r}")
        if t.to_state not in known:
            errors.append(f"transition to undeclared state {t.to_state!r}")
        if t.guard not in GUARDS:
            errors.append(f"unknown guard {t.guard!r}")
        prios = per_source.setdefault(t.from_state, set())
        if t.priority in prios:
            errors.append(f"duplicate priority {t.priority} from {t.from_state!r}")
        prios.add(t.priority)

    # exit coverage: wildcard transitions cover every state
    has_arbitrary = any(t.from_state == ARBITRARY for t in spec.transitions)
    for s in spec.states:
        if s in _NO_EXIT_OK or has_arbitrary:
            continue
        if not any(t.from_state == s for t in spec.transitions):
            errors.append(f"state {s!r} has no outgoing transition")

    # reachability from the initial state; dispatch() is an implicit
    # Idle->UserInput edge, wildcard targets are reachable from anywhere
    if not errors:
        edges: dict[str, set[str]] = {s: set() for s in spec.states}
        if "UserInput" in known and "Idle" in known:
            edges["Idle"].add("UserInput")
        arb_targets = {t.to_state for t in spec.transitions if t.from_state == ARBITRARY}
        for t in spec.transitions:
            if t.from_state == ARBITRARY:
                continue
            edges[t.from_state].add(t.to_state)
        seen = {spec.initial}
        frontier = [spec.initial]
        while frontier:
            s = frontier.pop()
            for nxt in edges[s] | arb_targets:
                if nxt not in seen:
                    seen.add(nxt)
                    frontier.append(nxt)
        for s in spec.states:
            if s not in seen:
                errors.append(f"state {s!r} unreachable from {spec.initial!r}")

    if errors:
        raise MachineValidationError(errors)
    return Machine(spec=spec)


def dispatch(machine: Machine, cmd) -> None:
    """Load a command into the globals and enter UserInput immediately."""
    if machine.current_state == "Fault":
        raise FaultedError(machine.globals.fault_reason)
    g = machine.globals
    g.command = cmd.function
    g.target_name = cmd.args.get("target_class", "")
    g.press_end = cmd.args.get("press_end", "Near")
    g.destination_name = cmd.args.get("destination_class", "")
    g.ambiguous = bool(cmd.args.get("ambiguous", False))
    g.end_position = None
    g.destination_position = None
    g.alert = None
    record = TransitionRecord(tick=machine.tick_count,
                              from_state=machine.current_state,
                              to_state="UserInput", guard="dispatch")
    machine.log.append(record)
    machine.current_state = "UserInput"
    machine.newly_entered = True


def _fire(machine: Machine, t: Transition) -> TransitionRecord:
    record = TransitionRecord(tick=machine.tick_count,
                              from_state=machine.current_state,
                              to_state=t.to_state, guard=t.guard)
    machine.log.append(record)
    machine.current_state = t.to_state
    machine.newly_entered = True
    return record


def tick(machine: Machine, world: WorldSnapshot):
    """Advance one tick; returns the fired TransitionRecord or None.

    A guard that raises is itself a fault: the machine transitions to
    Fault carrying the exception as the reason.
    """
    machine.tick_count += 1
    g = machine.globals
    raised: list[str] = []

    def check(t: Transition) -> bool:
        try:
            return bool(GUARDS[t.guard](g, world))
        except Exception as exc:  # guard bug must not crash the executor
            raised.append(f"guard-error:{t.guard}: {exc}")
            return False

    def fault_out(guard_name: str):
        g.fault_reason = raised[0]
        return _fire(machine, Transition(ARBITRARY, "Fault", guard_name, 0))

    for t in machine._arbitrary:
        if t.to_state == machine.current_state:
            continue
        if check(t):
            return _fire(machine, t)
        if raised and machine.current_state != "Fault":
            return fault_out(t.guard)

    if not world.action_complete:
        return None
    for t in machine._by_state.get(machine.current_state, []):
        if check(t):
            return _fire(machine, t)
        if raised and machine.current_state != "Fault":
            return fault_out(t.guard)
    return None


def run_scenario(machine: Machine, stepper, cmd, max_ticks: int = 4000):
    """Dispatch cmd, then step+tick until Idle or Fault; returns the trace.

    stepper must expose step(machine) -> WorldSnapshot, advancing the
    world by one tick and reporting action completion/outcome flags.
    """
    start = len(machine.log)
    dispatch(machine, cmd)
    for _ in range(max_ticks):
        world = stepper.step(machine)
        tick(machine, world)
        if machine.current_state in ("Idle", "Fault"):
            return machine.log[start:]
    raise ScenarioTimeout(max_ticks, machine.log[start:])


# ---------------------------------------------------------------------------
# spec files and trace export
# ---------------------------------------------------------------------------

def load_machine_spec(name_or_path) -> MachineSpec:
    p = Path(name_or_path)
    if not p.exists():
        candidate = Path(str(resources.files("deskbot").joinpath(
            "data", p.name if p.suffix else f"{p.name}.json")))
        if not candidate.exists():
            raise FileNotFoundError(f"machine spec not found: {name_or_path}")
        p = candidate
    raw = json.loads(p.read_text(encoding="utf-8"))
    transitions = tuple(
        Transition(from_state=t["from"], to_state=t["to"],
                   guard=t["guard"], priority=t["priority"])
        for t in raw["transitions"])
    return MachineSpec(states=tuple(raw["states"]), transitions=transitions,
                       initial=raw.get("initial", "Idle"))


def write_trace(records, path) -> None:
    Path(path).write_text("\n".join(r.to_json() for r in records) + "\n",
                          encoding="utf-8")


def read_trace(path) -> list[TransitionRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [TransitionRecord.from_json(l) for l in lines if l.strip()]
