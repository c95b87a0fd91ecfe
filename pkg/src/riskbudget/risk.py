"""Collision-probability bounds between the ego vehicle and predicted agents.

Vehicle rectangles are covered by equal-radius disks; the probability that
two disks with Gaussian-distributed centers overlap is upper-bounded in
closed form by projecting the relative center position onto the line joining
the mean centers. Belief-level risk sums the pairwise disk bounds over all
agents, patterns (weighted) and disk pairs, and a stopped ego carries zero
risk (passive safety).

``disk_collision_bound`` is the scalar reference form; ``RiskEvaluator``
evaluates the same bound vectorized over many ego positions, which the
planner uses to annotate lattice nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .beliefs import WorldBelief, WorldModel, open_loop_update
from .errors import HorizonExhaustedError
from .vehicle import FootprintSpec, ReferencePath

_COINCIDENT = 1e-9
_VAR_FLOOR = 1e-18


@dataclass(frozen=True)
class Disk:
    """Covering disk: center offset in the body frame plus radius."""

    offset: tuple[float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")


@dataclass(frozen=True)
class DiskCover:
    """Disks jointly containing a rectangular footprint."""

    disks: tuple[Disk, ...]
    footprint: FootprintSpec

    def covers(self, resolution: float = 0.05) -> bool:
        """Grid check that every footprint point lies inside some disk."""
        fp = self.footprint
        xs = np.arange(-0.5 * fp.length, 0.5 * fp.length + resolution, resolution)
        ys = np.arange(-0.5 * fp.width, 0.5 * fp.width + resolution, resolution)
        gx, gy = np.meshgrid(np.clip(xs, -0.5 * fp.length, 0.5 * fp.length),
                             np.clip(ys, -0.5 * fp.width, 0.5 * fp.width))
        inside = np.zeros(gx.shape, dtype=bool)
        for disk in self.disks:
            dx, dy = disk.offset
            inside |= (gx - dx) ** 2 + (gy - dy) ** 2 <= disk.radius ** 2 + 1e-12
        return bool(inside.all())


def cover_footprint(fp: FootprintSpec, n_disks: int) -> DiskCover:
    """Cover a rectangle with n equal disks spaced along its long axis.

    Splitting the length into n segments and circumscribing each gives radius
    sqrt((L/2n)^2 + (W/2)^2), which contains the rectangle exactly.
    """
    if n_disks < 1:
        raise ValueError("need at least one disk")
    seg = fp.length / n_disks
    radius = float(np.hypot(0.5 * seg, 0.5 * fp.width))
    centers = -0.5 * fp.length + seg * (np.arange(n_disks) + 0.5)
    disks = tuple(Disk(offset=(float(c), 0.0), radius=radius) for c in centers)
    return DiskCover(disks=disks, footprint=fp)


@dataclass(frozen=True)
class CollisionModel:
    """Collision geometry: disk covers for the ego and each agent, bound to
    the ego reference path. With passive safety on, a stopped ego has zero
    collision probability by definition."""

    path: ReferencePath
    ego_covers: tuple[DiskCover, ...]
    agent_covers: tuple[tuple[DiskCover, ...], ...]
    passive_safety: bool = True


def build_collision_model(
    path: ReferencePath,
    ego_footprints: list[FootprintSpec],
    agent_footprints: list[list[FootprintSpec]],
    n_disks: int = 3,
    passive_safety: bool = True,
) -> CollisionModel:
    return CollisionModel(
        path=path,
        ego_covers=tuple(cover_footprint(fp, n_disks) for fp in ego_footprints),
        agent_covers=tuple(
            tuple(cover_footprint(fp, n_disks) for fp in fps) for fps in agent_footprints
        ),
        passive_safety=passive_safety,
    )


def disk_collision_bound(mu1, cov1, r1: float, mu2, cov2, r2: float) -> float:
    """Upper bound on the probability that two Gaussian-centered disks overlap.

    Projects the center-to-center displacement onto the unit vector e between
    the mean centers: overlap implies the projected distance falls below
    r1 + r2, an event with probability 0.5 * erfc(d / sqrt(2 sigma^2)) where
    d is the mean clearance and sigma^2 = e^T (cov1 + cov2) e. Coincident
    means (no defined direction) conservatively return 1.
    """
    mu1 = np.asarray(mu1, dtype=float)
    mu2 = np.asarray(mu2, dtype=float)
    diff = mu2 - mu1
    dist = float(np.hypot(diff[0], diff[1]))
    if dist < _COINCIDENT:
        return 1.0
    d = dist - r1 - r2
    e = diff / dist
    var_line = float(e @ (np.asarray(cov1) + np.asarray(cov2)) @ e)
    if var_line < _VAR_FLOOR:
        return 1.0 if d <= 0 else 0.0
    return float(np.clip(0.5 * erfc(d / np.sqrt(2.0 * var_line)), 0.0, 1.0))


class RiskEvaluator:
    """Vectorized belief-risk evaluation against one collision model.

    Queries are arrays over ego arc-length positions with per-query position
    variance, prediction step, mixture-weight row and stopped flag. Mixture
    weights are passed as row tables (one row per planning layer) so many
    queries can share a row.
    """

    def __init__(self, model: CollisionModel, agents: tuple[tuple, ...]):
        self.model = model
        self.path = model.path
        # Ego disks grouped per rectangle: (rect arc offset, [disk dx], radius).
        self.ego_rects = [
            (cover.footprint.offset, np.array([d.offset[0] for d in cover.disks]),
             cover.disks[0].radius)
            for cover in model.ego_covers
        ]
        self._ego_reach = max(
            (abs(off) + np.abs(dx).max() + r for off, dx, r in self.ego_rects),
            default=0.0,
        )
        # Agent disks flatten to a single along-heading coefficient per disk.
        self.agent_disks = []
        for covers in model.agent_covers:
            coeffs, radii = [], []
            for cover in covers:
                for disk in cover.disks:
                    coeffs.append(cover.footprint.offset + disk.offset[0])
                    radii.append(disk.radius)
            self.agent_disks.append((np.array(coeffs), np.array(radii)))
        # Per-pattern trajectory tables.
        self.patterns = []
        for patterns in agents:
            rows = []
            for p in patterns:
                cov3 = np.stack([p.covs[:, 0, 0], p.covs[:, 0, 1], p.covs[:, 1, 1]], axis=1)
                dirs = np.stack([np.cos(p.headings), np.sin(p.headings)], axis=1)
                max_var = float((p.covs[:, 0, 0] + p.covs[:, 1, 1]).max()) if len(p) else 0.0
                rows.append((p.means, cov3, dirs, len(p), max_var))
            self.patterns.append(rows)

    def evaluate(
        self,
        s: np.ndarray,
        var_s: np.ndarray,
        step: np.ndarray,
        row_idx: np.ndarray,
        weight_rows: list[np.ndarray],
        stopped: np.ndarray,
    ) -> np.ndarray:
        """Risk bound for each query; zero where the ego is stopped.

        Pairs whose mean separation puts the bound below ~1e-17 are culled
        before the expensive tail evaluation; the result is treated as exact
        zero (far below every tolerance in use).
        """
        s = np.asarray(s, dtype=float)
        var_s = np.broadcast_to(np.asarray(var_s, dtype=float), s.shape).astype(float)
        step = np.asarray(step)
        total = np.zeros(s.shape)
        anchor_x, anchor_y, _ = self.path.poses_at(np.clip(s, 0.0, self.path.length))
        ego_cache: dict[int, tuple] = {}

        def ego_centers(sel: np.ndarray) -> list[tuple]:
            out = []
            for rect_off, disk_dx, radius in self.ego_rects:
                base = np.clip(s[sel] + rect_off, 0.0, self.path.length)
                ex, ey, eh = self.path.poses_at(base)
                tx, ty = np.cos(eh), np.sin(eh)
                for dx in disk_dx:
                    out.append((ex + dx * tx, ey + dx * ty, tx, ty, radius))
            return out

        for a, rows in enumerate(self.patterns):
            coeffs, radii = self.agent_disks[a]
            agent_reach = float(np.abs(coeffs).max() + radii.max()) if len(coeffs) else 0.0
            weights = weight_rows[a]
            for p, (means, cov3, dirs, horizon, max_var) in enumerate(rows):
                if step.max() >= horizon:
                    raise HorizonExhaustedError(
                        f"agent {a} pattern {p} covers steps [0, {horizon - 1}], "
                        f"requested {int(step.max())}"
                    )
                mu = means[step]
                dx0 = mu[:, 0] - anchor_x
                dy0 = mu[:, 1] - anchor_y
                gate = (self._ego_reach + agent_reach + 1.0
                        + 8.5 * np.sqrt(var_s + max_var))
                near = np.flatnonzero(dx0 * dx0 + dy0 * dy0 <= gate * gate)
                if not len(near):
                    continue
                key = near.tobytes()
                cached = ego_cache.get(key)
                if cached is None:
                    cached = ego_centers(near)
                    ego_cache[key] = cached
                w = weights[row_idx[near], p]
                sub = step[near]
                cxx, cxy, cyy = cov3[sub, 0], cov3[sub, 1], cov3[sub, 2]
                dirx, diry = dirs[sub, 0], dirs[sub, 1]
                var_sub = var_s[near]
                mu_sub = mu[near]
                pattern_sum = np.zeros(len(near))
                for c, rg in zip(coeffs, radii):
                    gx = mu_sub[:, 0] + c * dirx
                    gy = mu_sub[:, 1] + c * diry
                    for cex, cey, tx, ty, re in cached:
                        pattern_sum += _bound_vec(
                            gx - cex, gy - cey, var_sub, tx, ty, cxx, cxy, cyy, re + rg
                        )
                total[near] += w * pattern_sum
        total = np.clip(total, 0.0, 1.0)
        if self.model.passive_safety:
            total[np.asarray(stopped)] = 0.0
        return total

    def single(self, belief: WorldBelief) -> float:
        """Risk bound of one belief; the scalar entry point behind g_b."""
        weight_rows = [w.reshape(1, -1) for w in belief.agent_weights()]
        out = self.evaluate(
            s=np.array([belief.ego.mean.s]),
            var_s=np.array([belief.ego.cov[0, 0]]),
            step=np.array([belief.step]),
            row_idx=np.zeros(1, dtype=int),
            weight_rows=weight_rows,
            stopped=np.array([belief.ego.stopped]),
        )
        return float(out[0])


_Z_CUTOFF = 8.5  # erfc(8.5 / sqrt(2)) ~ 2e-17: below every tolerance in use


def _bound_vec(dx, dy, var_s, tx, ty, cxx, cxy, cyy, radius_sum):
    dist2 = dx * dx + dy * dy
    d2 = dist2 - 2.0 * radius_sum * np.sqrt(dist2) + radius_sum * radius_sum
    # Variance along the center line, scaled by dist^2 to avoid the division.
    along = dx * tx + dy * ty
    var_line2 = (var_s * along * along + cxx * dx * dx
                 + 2.0 * cxy * dx * dy + cyy * dy * dy)
    inside = dist2 <= radius_sum * radius_sum
    near = np.flatnonzero(inside | (d2 * dist2 < _Z_CUTOFF ** 2 * var_line2))
    out = np.zeros(dx.shape)
    if not len(near):
        return out
    dist = np.sqrt(dist2[near])
    coincident = dist < _COINCIDENT
    safe_dist = np.where(coincident, 1.0, dist)
    d = dist - radius_sum
    var_line = var_line2[near] / (safe_dist * safe_dist)
    degenerate = var_line < _VAR_FLOOR
    safe_var = np.where(degenerate, 1.0, var_line)
    bound = np.minimum(0.5 * erfc(d / np.sqrt(2.0 * safe_var)), 1.0)
    bound = np.where(degenerate, (d <= 0).astype(float), bound)
    out[near] = np.where(coincident, 1.0, bound)
    return out


def collision_probability(belief: WorldBelief, model: CollisionModel) -> float:
    """Probability bound that the ego collides with any agent in this belief.

    Zero for a stopped ego (passive safety); otherwise the weighted Boole sum
    of pairwise disk bounds, clamped to [0, 1]. Raises HorizonExhaustedError
    if any pattern's prediction is shorter than the belief step.
    """
    if not belief.agents:
        return 0.0
    return RiskEvaluator(model, belief.agents).single(belief)


def stop_belief(belief: WorldBelief, tau: int, model: WorldModel) -> WorldBelief:
    """Belief after tau steps of maximum deceleration with no observations."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    out = belief
    for _ in range(tau):
        out = open_loop_update(out, -model.stop.u_stop, model)
    return out


def stop_collision_bound(belief: WorldBelief, cmodel: CollisionModel,
                         wmodel: WorldModel) -> float:
    """Bound on collision probability over a full emergency stop: the sum of
    per-step risk along the deceleration rollout, clamped to [0, 1]."""
    total = 0.0
    cur = belief
    for _ in range(wmodel.stop.t_stop):
        cur = open_loop_update(cur, -wmodel.stop.u_stop, wmodel)
        if cur.ego.stopped and cmodel.passive_safety:
            break
        total += collision_probability(cur, cmodel)
    return min(total, 1.0)
