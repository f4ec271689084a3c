"""World stepper: simulates the arm and desk per tick and reports outcomes
to the state machine through WorldSnapshot flags.

Per-state behavior (entry work runs when the machine reports newly_entered):

  Search  servo to a survey posture, then run the camera pipeline for the
          current goal class; three failed attempts raise a no-target fault.
  Move    solve IK for a hover point 2 cm above the located point and servo
          there; budget exhaustion without touching sends us back to Search.
  Grab    descend, close on the object, lift; checked against the true box.
  Press   descend onto the commanded switch end, push 5 mm through the top
          face, retract; contact checked against the true box.
  Place   descend until the held object's bottom meets the destination top,
          release; checked against the true box.
  Reset   servo home.

The simulated "actual" joints equal the commanded ones plus an injectable
disturbance; sustained divergence > 0.1 rad trips the stuck detector.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import fsm, perception, transforms
from .fsm import Machine, WorldSnapshot
from .kinematics import (DHChain, IKOptions, UnreachableError, clamp_joints,
                         forward_kinematics, inverse_kinematics)
from .perception import CameraModel, DetectorProfile, Scene, WorldDetection
from .seeding import derive_seed
from .transforms import Pose

__all__ = ["RuntimeConfig", "DeskRuntime", "down_pose", "survey_joints"]

TICK_SECONDS = 0.02


@dataclass(frozen=True)
class RuntimeConfig:
    touch_tol: float = 0.005          # "touching" = EE within 5 mm
    approach_height: float = 0.02     # hover offset above located points
    press_depth: float = 0.005        # push through the face by 5 mm
    press_end_offset: float = 0.5     # press point shift, fraction of half extent
    grasp_depth: float = 0.015        # how far below the top face we close
    search_retries: int = 3
    grab_retries: int = 3
    press_retries: int = 3
    place_retries: int = 3
    move_retries: int = 3
    move_budget_ticks: int = 200
    servo_rate: float = 0.1           # max joint step per tick, rad
    stuck_threshold: float = 0.1      # rad of commanded-vs-actual divergence
    stuck_ticks: int = 5
    settle_tol: float = 0.01          # joint-space arrival tolerance, rad


def down_pose(point, yaw: float | None = None) -> Pose:
    """Target pose with the tool axis pointing straight down at the point.

    The shipped arm reaches exactly the orientation family yaw-about-z
    composed with a flip, so these poses are solvable wherever the
    position is; yaw defaults to facing away from the base.
    """
    point = np.asarray(point, dtype=float)
    if yaw is None:
        yaw = float(np.arctan2(point[1], point[0]))
    c, s = np.cos(yaw), np.sin(yaw)
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) @ np.diag([1.0, -1.0, -1.0])
    m = np.eye(4)
    m[:3, :3] = r
    m[:3, 3] = point
    return Pose.from_matrix(m)


def survey_joints(chain: DHChain, yaw: float = 0.0) -> np.ndarray:
    """A posture whose wrist camera looks down over the desk from ~0.11 m.

    Tool-down poses need joint 4 to cancel the forearm pitch, and its +20
    deg cap keeps the flange below ~0.17 m at this radius; 0.16 leaves a
    comfortable margin while the orthographic camera still covers the desk.
    """
    target = down_pose(np.array([0.12 * np.cos(yaw), 0.12 * np.sin(yaw), 0.16]), yaw=yaw)
    return inverse_kinematics(chain, target, q0=chain.home())


class DeskRuntime:
    """Owns the mutable desk world: joint state, object positions, events."""

    def __init__(self, chain: DHChain, scene: Scene, seed: int,
                 camera: CameraModel | None = None,
                 profile: DetectorProfile | None = None,
                 config: RuntimeConfig | None = None,
                 machine: Machine | None = None,
                 survey_cache: dict | None = None):
        self.chain = chain
        self.scene = scene
        self.seed = seed
        self.camera = camera or CameraModel()
        self.profile = profile or DetectorProfile()
        self.config = config or RuntimeConfig()
        self.machine = machine or fsm.validate(fsm.load_machine_spec("machine_desk"))

        self.q_commanded = chain.home().copy()
        self.disturbance = None          # callable (tick, q) -> joint offset
        self._collision_pending = False
        self._diverged_ticks = 0
        self.positions = {o.id: o.center_world.copy() for o in scene.objects}
        self.held_object_id: int | None = None
        self._grasp_offset = np.zeros(3)
        self.press_events: list[dict] = []
        self._locate_calls = 0
        self._ctx: dict = {}             # per-state scratch, reset on entry
        self._counters = {"search": 0, "move": 0, "grab": 0, "press": 0, "place": 0}
        # survey postures depend only on the chain, so batch runners may pass a
        # shared dict to reuse IK solutions across many runtime instances
        self._survey_cache = survey_cache if survey_cache is not None else {}

    # -- world accessors ------------------------------------------------------

    @property
    def q_actual(self) -> np.ndarray:
        if self.disturbance is None:
            return self.q_commanded.copy()
        q = self.q_commanded + self.disturbance(self.machine.tick_count, self.q_commanded)
        return clamp_joints(self.chain, q)[0]

    def ee_position(self) -> np.ndarray:
        return forward_kinematics(self.chain, self.q_actual)[:3, 3]

    def current_scene(self) -> Scene:
        objs = tuple(dataclasses.replace(o, center_world=self.positions[o.id])
                     for o in self.scene.objects)
        return dataclasses.replace(self.scene, objects=objs)

    def true_object(self, class_label: str, near=None):
        cands = [o for o in self.scene.objects if o.class_label == class_label]
        if not cands:
            return None
        if near is not None and len(cands) > 1:
            return min(cands, key=lambda o: float(
                np.linalg.norm(self.positions[o.id][:2] - np.asarray(near)[:2])))
        return cands[0]

    def inject_collision(self) -> None:
        self._collision_pending = True

    # -- per-tick step ----------------------------------------------------------

    def step(self, machine: Machine) -> WorldSnapshot:
        if machine.newly_entered:
            self._ctx = {}
            machine.newly_entered = False
            self._enter(machine)

        handler = getattr(self, f"_tick_{machine.current_state.lower()}", None)
        flags: dict = {}
        complete = True
        if handler is not None:
            complete = handler(machine, flags)

        if self.held_object_id is not None:
            self.positions[self.held_object_id] = self.ee_position() + self._grasp_offset

        # safety channels visible from every state
        div = float(np.max(np.abs(self.q_actual - self.q_commanded))) if self.disturbance else 0.0
        self._diverged_ticks = self._diverged_ticks + 1 if div > self.config.stuck_threshold else 0
        if self._diverged_ticks >= self.config.stuck_ticks:
            flags["stuck"] = True
        if self._collision_pending:
            flags["collision"] = True
        if machine.globals.fault_reason is not None:
            flags["fault"] = True
        flags["holding"] = self.held_object_id is not None

        return WorldSnapshot(tick=machine.tick_count, action_complete=complete,
                             flags=flags)

    # -- entry work ---------------------------------------------------------------

    def _enter(self, machine: Machine) -> None:
        state = machine.current_state
        g = machine.globals
        cfg = self.config
        if state == "UserInput":
            for k in self._counters:
                self._counters[k] = 0
            self.press_events = []
        elif state == "Search":
            attempt = self._counters["search"]
            yaw = (0.0, 0.25, -0.25)[attempt % 3]
            try:
                if yaw not in self._survey_cache:
                    self._survey_cache[yaw] = survey_joints(self.chain, yaw)
                self._ctx["servo_target"] = self._survey_cache[yaw]
            except UnreachableError:
                g.fault_reason = "no-survey-pose"
        elif state == "Move":
            goal = self._move_goal(g)
            if goal is None:
                g.fault_reason = "move-without-goal"
                return
            hover = goal + np.array([0.0, 0.0, cfg.approach_height])
            try:
                self._ctx["servo_target"] = inverse_kinematics(
                    self.chain, down_pose(hover), q0=self.q_commanded)
                self._ctx["deadline"] = machine.tick_count + cfg.move_budget_ticks
            except UnreachableError:
                self._counters["move"] += 1
                if self._counters["move"] >= cfg.move_retries:
                    g.fault_reason = "unreachable-target"
                    g.alert = "unreachable-target"
                else:
                    self._ctx["ik_failed"] = True
        elif state == "Grab":
            point = g.end_position
            self._ctx["plan"] = self._vertical_plan(point, point[2] - cfg.grasp_depth)
        elif state == "Press":
            point = self._press_point(g)
            self._ctx["plan"] = self._vertical_plan(point, point[2] - cfg.press_depth)
            self._ctx["press_point"] = point
        elif state == "Place":
            point = g.destination_position
            held = next(o for o in self.scene.objects if o.id == self.held_object_id)
            # lower until the held box's bottom face meets the destination top
            ee_z = point[2] - self._grasp_offset[2] + held.half_extents[2]
            self._ctx["plan"] = self._vertical_plan(point, ee_z)
        elif state == "Reset":
            self._ctx["servo_target"] = self.chain.home()
        elif state == "Stuck":
            self.disturbance = None          # recovery: torque through the jam
            self._diverged_ticks = 0
        elif state == "Collision":
            self._collision_pending = False  # acknowledged and cleared

    def _move_goal(self, g):
        if g.command == "FetchToTarget" and self.held_object_id is not None:
            return g.destination_position
        return g.end_position

    def _press_point(self, g) -> np.ndarray:
        point = g.end_position.copy()
        obj = self.true_object(g.target_name, near=point)
        half = float(obj.half_extents[0]) if obj is not None else 0.01
        away = point[:2] / (np.linalg.norm(point[:2]) or 1.0)
        sign = -1.0 if g.press_end == "Near" else 1.0
        point[:2] = point[:2] + sign * self.config.press_end_offset * half * away
        return point

    def _vertical_plan(self, xy_point, low_z) -> dict:
        """Waypoints: hover above the point, sink to low_z, rise back."""
        hover = np.array([xy_point[0], xy_point[1],
                          xy_point[2] + self.config.approach_height])
        low = np.array([xy_point[0], xy_point[1], low_z])
        return {"waypoints": [hover, low, hover], "index": 0, "acted": False,
                "targets": {}}

    # -- state tick handlers: return True when the action is complete --------------

    def _servo(self, target_q) -> bool:
        step = np.clip(target_q - self.q_commanded,
                       -self.config.servo_rate, self.config.servo_rate)
        self.q_commanded = clamp_joints(self.chain, self.q_commanded + step)[0]
        return bool(np.max(np.abs(self.q_commanded - target_q)) <= self.config.settle_tol)

    def _tick_search(self, machine, flags) -> bool:
        g = machine.globals
        target_q = self._ctx.get("servo_target")
        if target_q is None:
            return True
        if not self._servo(target_q):
            return False
        label = self._search_label(g)
        self._locate_calls += 1
        seed = derive_seed(self.seed, "locate", self._locate_calls)
        found = perception.locate(self.current_scene(), self.camera, self.chain,
                                  self.q_actual, label, seed, profile=self.profile)
        if isinstance(found, WorldDetection):
            if g.command == "FetchToTarget" and self.held_object_id is not None:
                g.destination_position = found.position_world
            else:
                g.end_position = found.position_world
            self._counters["search"] = 0
            flags["located"] = True
            return True
        self._counters["search"] += 1
        if self._counters["search"] >= self.config.search_retries:
            g.fault_reason = "no-target"
            g.alert = "no-target"
        else:
            flags["search_failed"] = True
        return True

    def _search_label(self, g):
        if g.command == "FetchToTarget" and self.held_object_id is not None:
            return g.destination_name or "hand"
        if g.command == "FetchToTarget" and g.ambiguous:
            # ambiguous object reference: accept look-alike boxes too
            return (g.target_name, "clutter")
        return g.target_name

    def _tick_move(self, machine, flags) -> bool:
        g = machine.globals
        if self._ctx.get("ik_failed"):
            flags["move_done"] = True
            return True
        target_q = self._ctx.get("servo_target")
        if target_q is None:
            return True
        settled = self._servo(target_q)
        goal = self._move_goal(g)
        hover = goal + np.array([0.0, 0.0, self.config.approach_height])
        if np.linalg.norm(self.ee_position() - hover) <= self.config.touch_tol:
            self._counters["move"] = 0
            flags["arrived"] = True
            flags["move_done"] = True
            return True
        if settled or machine.tick_count >= self._ctx.get("deadline", 0):
            # settled-but-off or out of budget: report and let Search retry
            self._counters["move"] += 1
            if self._counters["move"] >= self.config.move_retries:
                g.fault_reason = "unreachable-target"
                g.alert = "unreachable-target"
            flags["move_done"] = True
            return True
        return False

    def _run_plan(self) -> bool:
        plan = self._ctx.get("plan")
        if plan is None:
            return True
        wps, i = plan["waypoints"], plan["index"]
        if i >= len(wps):
            return True
        key = f"wp{i}"
        if key not in plan["targets"]:
            try:
                plan["targets"][key] = inverse_kinematics(
                    self.chain, down_pose(wps[i]), q0=self.q_commanded)
            except UnreachableError:
                plan["targets"][key] = self.q_commanded.copy()
        if self._servo(plan["targets"][key]):
            plan["index"] += 1
        return plan["index"] >= len(wps)

    def _tick_grab(self, machine, flags) -> bool:
        g = machine.globals
        plan = self._ctx["plan"]
        done = self._run_plan()
        if plan["index"] >= 2 and not plan["acted"]:
            plan["acted"] = True
            obj = self.true_object(g.target_name, near=g.end_position)
            ee = self.ee_position()
            ok = False
            if obj is not None:
                center = self.positions[obj.id]
                lateral = np.linalg.norm(ee[:2] - center[:2])
                top = center[2] + obj.half_extents[2]
                depth_ok = abs(ee[2] - (top - self.config.grasp_depth)) <= self.config.grasp_depth
                ok = lateral <= float(min(obj.half_extents[:2])) and depth_ok
            if ok:
                self.held_object_id = obj.id
                self._grasp_offset = self.positions[obj.id] - ee
                plan["grabbed"] = True
        if not done:
            return False
        if plan.get("grabbed"):
            self._counters["grab"] = 0
            flags["grab_done"] = True
        else:
            self._counters["grab"] += 1
            if self._counters["grab"] >= self.config.grab_retries:
                g.fault_reason = "grasp-failed"
                g.alert = "grasp-failed"
            else:
                flags["grab_failed"] = True
        return True

    def _tick_press(self, machine, flags) -> bool:
        g = machine.globals
        plan = self._ctx["plan"]
        done = self._run_plan()
        if plan["index"] >= 2 and not plan["acted"]:
            plan["acted"] = True
            obj = self.true_object(g.target_name, near=self._ctx["press_point"])
            ee = self.ee_position()
            if obj is not None:
                center = self.positions[obj.id]
                inside_xy = np.all(np.abs(ee[:2] - center[:2]) <= obj.half_extents[:2])
                top = center[2] + obj.half_extents[2]
                touched = abs(ee[2] - (top - self.config.press_depth)) <= self.config.touch_tol
                if inside_xy and touched:
                    plan["pressed"] = True
                    self.press_events.append({
                        "class": obj.class_label, "end": g.press_end,
                        "tick": machine.tick_count})
        if not done:
            return False
        if plan.get("pressed"):
            self._counters["press"] = 0
            flags["press_done"] = True
        else:
            self._counters["press"] += 1
            if self._counters["press"] >= self.config.press_retries:
                g.fault_reason = "press-missed"
                g.alert = "press-missed"
            else:
                flags["press_failed"] = True
        return True

    def _tick_place(self, machine, flags) -> bool:
        g = machine.globals
        plan = self._ctx["plan"]
        done = self._run_plan()
        if plan["index"] >= 2 and not plan["acted"]:
            plan["acted"] = True
            dest = self.true_object(g.destination_name or "hand",
                                    near=g.destination_position)
            held_id = self.held_object_id
            if dest is not None and held_id is not None:
                held = next(o for o in self.scene.objects if o.id == held_id)
                center = self.positions[held_id]
                dest_center = self.positions[dest.id]
                inside_xy = np.all(np.abs(center[:2] - dest_center[:2])
                                   <= dest.half_extents[:2])
                bottom = center[2] - held.half_extents[2]
                dest_top = dest_center[2] + dest.half_extents[2]
                if inside_xy and abs(bottom - dest_top) <= 0.02:
                    plan["placed"] = True
                    self.held_object_id = None  # release here, on the surface
        if not done:
            return False
        if plan.get("placed"):
            self._counters["place"] = 0
            flags["place_done"] = True
        else:
            self._counters["place"] += 1
            if self._counters["place"] >= self.config.place_retries:
                g.fault_reason = "place-failed"
                g.alert = "place-failed"
            else:
                flags["place_failed"] = True
        return True

    def _tick_reset(self, machine, flags) -> bool:
        if self._servo(self._ctx.get("servo_target", self.chain.home())):
            flags["at_home"] = True
            return True
        return False

    # -- conveniences ----------------------------------------------------------------

    def run_command(self, cmd, max_ticks: int = 4000):
        return fsm.run_scenario(self.machine, self, cmd, max_ticks=max_ticks)

    def telemetry(self) -> dict:
        q = self.q_actual
        m = forward_kinematics(self.chain, q)
        pose = Pose.from_matrix(m)
        last = self.machine.log[-1] if self.machine.log else None
        return {
            "tick": self.machine.tick_count,
            "state": self.machine.current_state,
            "joints": [float(v) for v in q],
            "ee_position": [float(v) for v in pose.position],
            "ee_orientation": [float(v) for v in pose.orientation],
            "globals": self.machine.globals.snapshot(),
            "last_transition": None if last is None else {
                "tick": last.tick, "from": last.from_state,
                "to": last.to_state, "guard": last.guard},
        }
