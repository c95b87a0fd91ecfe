"""Longitudinal vehicle models over an arc-length reference path.

The ego vehicle follows a fixed reference path; planning happens over its
longitudinal state (arc-length position s, speed v) with piecewise-constant
acceleration per timestep. Footprints are rigid rectangles attached to the
path pose at a per-rectangle arc-length offset, which also covers articulated
tractor-trailer bodies as two rectangles trailing the path tangent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PathRangeError


@dataclass(frozen=True)
class EgoKinematicState:
    """Longitudinal state on the reference path: position s (m), speed v (m/s)."""

    s: float
    v: float


@dataclass(frozen=True)
class FootprintSpec:
    """Rigid rectangular body: length x width, centered `offset` meters ahead
    of the vehicle's path reference point (negative for trailing bodies)."""

    length: float
    width: float
    offset: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"footprint dimensions must be positive, got {self.length}x{self.width}")


@dataclass(frozen=True)
class StopParams:
    """Emergency-stop profile: constant deceleration u_stop for at most t_stop steps."""

    u_stop: float
    t_stop: int
    dt: float

    def __post_init__(self):
        if self.u_stop <= 0 or self.dt <= 0 or self.t_stop < 0:
            raise ValueError("u_stop and dt must be positive, t_stop nonnegative")

    @classmethod
    def from_limits(cls, u_stop: float, v_max: float, dt: float) -> "StopParams":
        t_stop = _ceil_steps(v_max / (u_stop * dt))
        return cls(u_stop=u_stop, t_stop=t_stop, dt=dt)


def _ceil_steps(ratio: float) -> int:
    # Relative guard so ratios a hair above an integer (float noise) do not
    # round up an extra step, while genuinely fractional ratios still do.
    return int(math.ceil(ratio * (1.0 - 1e-12)))


class ReferencePath:
    """Polyline reference path with arc-length parameterization.

    Positions interpolate linearly between waypoints; headings interpolate
    along the shortest arc (stored unwrapped, so plain linear interpolation
    is shortest-arc).
    """

    def __init__(self, xy: np.ndarray, headings: np.ndarray | None = None):
        xy = np.asarray(xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2 or xy.shape[0] < 2:
            raise ValueError("path needs at least 2 (x, y) waypoints")
        seg = np.diff(xy, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0):
            raise ValueError("waypoints must be distinct (strictly increasing arc length)")
        if headings is None:
            seg_heading = np.arctan2(seg[:, 1], seg[:, 0])
            headings = np.concatenate([seg_heading, seg_heading[-1:]])
        else:
            headings = np.asarray(headings, dtype=float)
            if headings.shape != (xy.shape[0],):
                raise ValueError("one heading per waypoint required")
        self.xy = xy
        self.arclength = np.concatenate([[0.0], np.cumsum(seg_len)])
        self.headings_unwrapped = np.unwrap(headings)
        self.length = float(self.arclength[-1])

    @property
    def waypoints(self) -> np.ndarray:
        return self.xy

    def pose_at(self, s: float) -> tuple[float, float, float]:
        """Interpolated (x, y, heading) at arc length s. Raises outside [0, length]."""
        if s < -1e-9 or s > self.length + 1e-9:
            raise PathRangeError(f"s={s} outside path range [0, {self.length}]")
        x, y, h = self.poses_at(np.array([min(max(s, 0.0), self.length)]))
        return float(x[0]), float(y[0]), float(h[0])

    def poses_at(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized pose interpolation; s values are clamped to the path range."""
        s = np.clip(s, 0.0, self.length)
        x = np.interp(s, self.arclength, self.xy[:, 0])
        y = np.interp(s, self.arclength, self.xy[:, 1])
        h = np.interp(s, self.arclength, self.headings_unwrapped)
        return x, y, _wrap_angle(h)


def _wrap_angle(theta: np.ndarray) -> np.ndarray:
    return (theta + np.pi) % (2.0 * np.pi) - np.pi


def advance_on_path(
    state: EgoKinematicState, accel: float, dt: float, path: ReferencePath
) -> EgoKinematicState:
    """One timestep of the longitudinal double integrator along the path.

    Speed saturates at zero within the step (no reversing) and position
    saturates at the path end. Distance is the exact integral of the
    piecewise-linear speed profile.
    """
    ds, v1 = displacement(state.v, accel, dt)
    s1 = min(state.s + ds, path.length)
    return EgoKinematicState(s=s1, v=v1)


def displacement(v: float, accel: float, dt: float) -> tuple[float, float]:
    """Distance traveled and final speed for one step of constant accel,
    clamping speed at zero when decelerating to rest within the step."""
    v1 = v + accel * dt
    if v1 < 0.0:
        # Comes to rest after v / |accel| seconds; remains stopped.
        return v * v / (-2.0 * accel), 0.0
    return 0.5 * (v + v1) * dt, v1


# Braking that ends a step at or below this speed grabs to a full stop at the
# step boundary. Keeps "stop completed" deterministic: the belief model, the
# lattice and the simulator all share the rule, so a commanded stop reaches
# exactly v = 0 even under speed tracking noise.
BRAKE_HOLD = 0.25


def advance_saturated(
    state: EgoKinematicState, accel: float, dt: float, path: ReferencePath, v_max: float
) -> EgoKinematicState:
    """Closed-loop step dynamics: advance_on_path plus the speed cap at v_max
    and the brake-hold stop at low speed."""
    v1 = state.v + accel * dt
    if v1 > v_max:
        t_star = (v_max - state.v) / accel
        ds = 0.5 * (state.v + v_max) * t_star + v_max * (dt - t_star)
        return EgoKinematicState(s=min(state.s + ds, path.length), v=v_max)
    if accel < 0.0 and 0.0 < v1 <= BRAKE_HOLD:
        ds = 0.5 * (state.v + v1) * dt
        return EgoKinematicState(s=min(state.s + ds, path.length), v=0.0)
    return advance_on_path(state, accel, dt, path)


def emergency_stop_controls(v0: float, params: StopParams) -> list[float]:
    """Deceleration sequence bringing speed v0 to exactly zero.

    Returns ceil(v0 / (u_stop * dt)) copies of -u_stop; never longer than
    t_stop for v0 within the speed range t_stop was derived from.
    """
    if v0 < 0:
        raise ValueError("speed must be nonnegative")
    n = _ceil_steps(v0 / (params.u_stop * params.dt))
    if v0 > 0:
        n = max(n, 1)
    return [-params.u_stop] * n
