"""DH-parameter arm model: forward kinematics, Jacobian, damped-least-squares IK.

Each link stores the classic four DH quantities plus joint limits; the
per-joint transform follows the modified convention where a link's twist
and length refer to the previous axis pair:

    A_i = [[ct,    -st,    0,    a   ],
           [st*ca,  ct*ca, -sa, -sa*d],
           [st*sa,  ct*sa,  ca,  ca*d],
           [0,      0,      0,   1   ]]

with ct/st the cosine/sine of (theta_home + theta) and ca/sa of alpha.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import transforms
from .transforms import Pose

__all__ = [
    "DHLink",
    "DHChain",
    "IKOptions",
    "UnreachableError",
    "dh_link_transform",
    "forward_kinematics",
    "forward_frames",
    "jacobian",
    "inverse_kinematics",
    "clamp_joints",
    "load_chain",
    "chain_to_dict",
]


class UnreachableError(Exception):
    """IK could not reach the target; carries the best residual found."""

    def __init__(self, msg, best_q=None, pos_residual=None, rot_residual=None):
        super().__init__(msg)
        self.best_q = best_q
        self.pos_residual = pos_residual
        self.rot_residual = rot_residual


@dataclass(frozen=True)
class DHLink:
    alpha: float  # link twist, rad
    a: float      # link length, m
    d: float      # joint offset, m
    theta_home: float = 0.0
    theta_min: float = -math.pi
    theta_max: float = math.pi

    def __post_init__(self):
        vals = (self.alpha, self.a, self.d, self.theta_home, self.theta_min, self.theta_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("DH link parameters must be finite")
        if not (self.theta_min < self.theta_max):
            raise ValueError("theta_min must be strictly below theta_max")
        if not (-math.pi < self.alpha <= math.pi):
            raise ValueError("alpha must lie in (-pi, pi]")


@dataclass(frozen=True)
class DHChain:
    links: tuple[DHLink, ...]
    mount: np.ndarray = field(default_factory=lambda: transforms.translation([0.0, 0.0, 0.05]))

    def __post_init__(self):
        if len(self.links) < 1:
            raise ValueError("chain needs at least one link")
        object.__setattr__(self, "links", tuple(self.links))
        m = transforms.check_rigid(self.mount)
        m.setflags(write=False)
        object.__setattr__(self, "mount", m)

    def __len__(self):
        return len(self.links)

    def home(self) -> np.ndarray:
        return np.zeros(len(self.links))

    def reach(self) -> float:
        return sum(abs(l.a) for l in self.links) + sum(abs(l.d) for l in self.links)

    def limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([l.theta_min for l in self.links])
        hi = np.array([l.theta_max for l in self.links])
        return lo, hi


@dataclass(frozen=True)
class IKOptions:
    pos_tol: float = 1e-3
    rot_tol: float = 1e-2
    max_iters: int = 200       # per-start iteration budget
    damping: float = 0.05      # initial lambda; adapted multiplicatively
    step_clamp: float = 0.2
    max_starts: int = 16       # q0, limit midpoint, then Halton lattice points
    rot_weight: float | None = None  # None -> chain reach, balances m vs rad


def dh_link_transform(link: DHLink, theta: float) -> np.ndarray:
    """Per-joint 4x4 transform for joint angle theta (limits not enforced here)."""
    if not math.isfinite(theta):
        raise ValueError("theta must be finite")
    t = link.theta_home + theta
    ct, st = math.cos(t), math.sin(t)
    ca, sa = math.cos(link.alpha), math.sin(link.alpha)
    return np.array([
        [ct, -st, 0.0, link.a],
        [st * ca, ct * ca, -sa, -sa * link.d],
        [st * sa, ct * sa, ca, ca * link.d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def _check_q(chain: DHChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != len(chain.links):
        raise ValueError(f"expected {len(chain.links)} joint angles, got {q.shape[0]}")
    return q


def forward_kinematics(chain: DHChain, q) -> np.ndarray:
    """Base-to-end-effector transform A_1 A_2 ... A_n (mount not applied)."""
    q = _check_q(chain, q)
    t = np.eye(4)
    for link, qi in zip(chain.links, q):
        t = t @ dh_link_transform(link, qi)
    return t


def forward_frames(chain: DHChain, q) -> list[np.ndarray]:
    """Cumulative frames [A_1, A_1 A_2, ...]; last entry equals forward_kinematics."""
    q = _check_q(chain, q)
    frames = []
    t = np.eye(4)
    for link, qi in zip(chain.links, q):
        t = t @ dh_link_transform(link, qi)
        frames.append(t.copy())
    return frames


def _jacobian_from_frames(frames) -> np.ndarray:
    # Frame i's origin/z-axis do not depend on theta_i in this convention,
    # so joint i spins everything downstream about (o_i, z_i). The result
    # is built C-contiguous so downstream BLAS calls see one layout.
    fr = np.stack(frames)
    z = fr[:, :3, 2]
    o = fr[:, :3, 3]
    jac = np.empty((6, len(frames)))
    jac[:3] = np.cross(z, fr[-1, :3, 3] - o).T
    jac[3:] = z.T
    return jac


def jacobian(chain: DHChain, q) -> np.ndarray:
    """Geometric Jacobian (3 linear + 3 angular rows) of the end-effector."""
    q = _check_q(chain, q)
    return _jacobian_from_frames(forward_frames(chain, q))


def clamp_joints(chain: DHChain, q) -> tuple[np.ndarray, bool]:
    """Clamp each angle into its limit range; flag is True iff anything moved."""
    q = _check_q(chain, q)
    lo, hi = chain.limits()
    clamped = np.clip(q, lo, hi)
    return clamped, bool(np.any(clamped != q))


_HALTON_CACHE: dict = {}


def _halton_unit(d: int, n: int) -> np.ndarray:
    """First n non-degenerate unscrambled Halton points in [0,1)^d, cached."""
    key = (d, n)
    if key not in _HALTON_CACHE:
        from scipy.stats import qmc
        # skip the degenerate all-zero first point
        _HALTON_CACHE[key] = qmc.Halton(d=d, scramble=False).random(n + 1)[1:]
    return _HALTON_CACHE[key]


def _descend(chain, target, seed, lo, hi, opts, wrot, best):
    """One damped-least-squares descent; returns (q or None, best, iters used).

    Levenberg accept/reject: a step must shrink the weighted squared error
    or it is discarded and the damping grows. Twelve rejections in a row
    means the start is stuck on a limit or local minimum, so give up on it.
    """
    q = np.clip(np.asarray(seed, dtype=float), lo, hi)
    lam = opts.damping
    weight = np.array([1.0, 1.0, 1.0, wrot, wrot, wrot])
    # target rotation and eye(6) are loop constants; frames are reused for
    # both the end-effector pose and the Jacobian of the accepted iterate
    t_rot = target.matrix()[:3, :3]
    eye6 = np.eye(6)
    frames = forward_frames(chain, q)
    dp = target.position - frames[-1][:3, 3]
    drot = transforms.rotvec_between(t_rot, frames[-1][:3, :3])
    err = np.concatenate([dp, drot]) * weight
    cost = err @ err
    rejected = 0
    for it in range(opts.max_iters):
        pos_res = float(np.linalg.norm(dp))
        rot_res = float(np.linalg.norm(drot))
        if best is None or pos_res + rot_res < best[1] + best[2]:
            best = (q.copy(), pos_res, rot_res)
        if pos_res <= opts.pos_tol and rot_res <= opts.rot_tol:
            return q, best, it + 1
        j = _jacobian_from_frames(frames) * weight[:, None]
        dq = j.T @ np.linalg.solve(j @ j.T + lam ** 2 * eye6, err)
        peak = np.max(np.abs(dq))
        if peak > opts.step_clamp:
            dq *= opts.step_clamp / peak
        q_new = np.clip(q + dq, lo, hi)
        frames_new = forward_frames(chain, q_new)
        dp_new = target.position - frames_new[-1][:3, 3]
        drot_new = transforms.rotvec_between(t_rot, frames_new[-1][:3, :3])
        err_new = np.concatenate([dp_new, drot_new]) * weight
        cost_new = err_new @ err_new
        if cost_new < cost * (1.0 - 1e-10):
            q, frames, err, cost = q_new, frames_new, err_new, cost_new
            dp, drot = dp_new, drot_new
            lam = max(lam * 0.7, 1e-3)
            rejected = 0
        else:
            lam = min(lam * 3.0, 1e6)
            rejected += 1
            if rejected >= 12:
                return None, best, it + 1
    return None, best, opts.max_iters


def inverse_kinematics(chain: DHChain, target: Pose, q0=None, opts: IKOptions | None = None) -> np.ndarray:
    """Damped-least-squares IK; returns the first convergent descent.

    The descent from q0 is tried first; if it stalls (joint limits make
    that common from a cold start) a fixed ladder of fallback starts is
    tried: the limit midpoint, then Halton lattice points spread over the
    limit box. The ladder is deterministic, so results are reproducible.

    Raises UnreachableError when the target is outside the workspace bound
    or no start converges; the error carries the best residual seen.
    """
    opts = opts or IKOptions()
    q_start = chain.home() if q0 is None else _check_q(chain, q0).copy()

    if np.linalg.norm(target.position) > chain.reach() + 1e-12:
        raise UnreachableError("target beyond total reach", best_q=q_start)

    lo, hi = chain.limits()
    wrot = opts.rot_weight if opts.rot_weight is not None else (chain.reach() or 1.0)

    seeds = [q_start, (lo + hi) / 2.0]
    n_lattice = max(opts.max_starts - len(seeds), 0)
    if n_lattice:
        unit = _halton_unit(len(chain.links), n_lattice)
        seeds.extend(lo + unit * (hi - lo))

    best = None
    for seed in seeds[:opts.max_starts]:
        q, best, _ = _descend(chain, target, seed, lo, hi, opts, wrot, best)
        if q is not None:
            return q

    bq, bp, br = best
    raise UnreachableError(
        f"no convergence after {len(seeds)} starts x {opts.max_iters} iterations "
        f"(best residual {bp:.3e} m / {br:.3e} rad)",
        best_q=bq, pos_residual=bp, rot_residual=br,
    )


# ---------------------------------------------------------------------------
# chain config files
# ---------------------------------------------------------------------------

def _data_path(name: str) -> Path:
    return Path(str(resources.files("deskbot").joinpath("data", name)))


def _resolve(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    candidate = _data_path(p.name if p.suffix else f"{p.name}.json")
    if candidate.exists():
        return candidate
    raise FileNotFoundError(f"chain config not found: {name_or_path}")


def load_chain(name_or_path: str | Path, enable_wrist_roll: bool | None = None) -> DHChain:
    """Load a chain definition (degrees in the file, radians in memory).

    Schema: {"links": [{alpha_deg, a, d, theta_home_deg, theta_min_deg,
    theta_max_deg}], "mount": {"translation": [x,y,z], "rpy_deg": [r,p,y]},
    "wrist_roll": {"enabled": bool, ...link fields...}} where wrist_roll is
    an optional sixth link appended when enabled (here or via the override).
    """
    raw = json.loads(_resolve(name_or_path).read_text(encoding="utf-8"))

    def mk_link(spec: dict) -> DHLink:
        return DHLink(
            alpha=math.radians(spec["alpha_deg"]),
            a=float(spec["a"]),
            d=float(spec["d"]),
            theta_home=math.radians(spec.get("theta_home_deg", 0.0)),
            theta_min=math.radians(spec["theta_min_deg"]),
            theta_max=math.radians(spec["theta_max_deg"]),
        )

    links = [mk_link(s) for s in raw["links"]]
    roll = raw.get("wrist_roll")
    use_roll = roll.get("enabled", False) if roll else False
    if enable_wrist_roll is not None:
        use_roll = enable_wrist_roll
    if use_roll:
        if not roll:
            raise ValueError("config has no wrist_roll section to enable")
        links.append(mk_link(roll))

    mount = raw.get("mount")
    if mount:
        m = transforms.from_rpy(mount.get("translation", [0, 0, 0]),
                                np.radians(mount.get("rpy_deg", [0, 0, 0])))
    else:
        m = transforms.translation([0.0, 0.0, 0.05])
    return DHChain(links=tuple(links), mount=m)


def chain_to_dict(chain: DHChain) -> dict:
    def link_dict(l: DHLink) -> dict:
        return {
            "alpha_deg": math.degrees(l.alpha),
            "a": l.a,
            "d": l.d,
            "theta_home_deg": math.degrees(l.theta_home),
            "theta_min_deg": math.degrees(l.theta_min),
            "theta_max_deg": math.degrees(l.theta_max),
        }

    r = chain.mount[:3, :3]
    from scipy.spatial.transform import Rotation
    rpy = Rotation.from_matrix(r).as_euler("xyz", degrees=True)
    return {
        "links": [link_dict(l) for l in chain.links],
        "mount": {"translation": list(map(float, chain.mount[:3, 3])),
                  "rpy_deg": list(map(float, rpy))},
    }
