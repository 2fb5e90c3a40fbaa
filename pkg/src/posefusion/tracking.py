"""Constant-velocity Kalman tracking of people on the floor plane.

Detections are associated with forward-predicted tracks by globally optimal
bipartite matching on Euclidean ground distance, with gating.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .assignment import hungarian_solve
from .errors import OrderingError, ParameterError
from .geometry import GroundPoint

log = logging.getLogger(__name__)

H_POS = np.hstack([np.eye(2), np.zeros((2, 2))])


@dataclass(frozen=True)
class Track:
    id: int
    state: np.ndarray
    cov: np.ndarray
    age: int = 1
    misses: int = 0
    history: tuple = ()

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.state[2:]


@dataclass(frozen=True)
class DetectionSet:
    time: float
    detections: tuple = ()

    def positions(self) -> np.ndarray:
        return np.array([d.xy for d in self.detections]).reshape(-1, 2)


@dataclass(frozen=True)
class Assignment:
    pairs: tuple = ()
    unmatched_detections: tuple = ()
    unmatched_tracks: tuple = ()


def transition(dt: float) -> np.ndarray:
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    return F


def process_noise(dt: float, q: float) -> np.ndarray:
    """White-acceleration process noise with spectral density ``q``."""
    block = q * np.array([[dt**3 / 3.0, dt**2 / 2.0], [dt**2 / 2.0, dt]])
    Q = np.zeros((4, 4))
    Q[np.ix_([0, 2], [0, 2])] = block
    Q[np.ix_([1, 3], [1, 3])] = block
    return Q


def predict(track: Track, dt: float, q: float = 0.5) -> Track:
    if not dt > 0:
        raise ParameterError(f"prediction step must be positive, got {dt}")
    F = transition(dt)
    cov = F @ track.cov @ F.T + process_noise(dt, q)
    return replace(track, state=F @ track.state, cov=0.5 * (cov + cov.T))


def kalman_update(state, cov, z, R):
    """Position-only Kalman correction in Joseph form."""
    S = H_POS @ cov @ H_POS.T + R
    K = np.linalg.solve(S, H_POS @ cov).T
    state = state + K @ (z - H_POS @ state)
    I_KH = np.eye(4) - K @ H_POS
    cov = I_KH @ cov @ I_KH.T + K @ R @ K.T
    return state, 0.5 * (cov + cov.T)


def associate(dets: DetectionSet, tracks, gate: float = 1.5) -> Assignment:
    """Gated minimum-distance matching of detections to (predicted) tracks."""
    if not gate > 0:
        raise ParameterError("gate must be positive")
    nd, nt = len(dets.detections), len(tracks)
    if nd == 0 or nt == 0:
        return Assignment((), tuple(range(nd)), tuple(range(nt)))
    D = dets.positions()
    P = np.array([t.position for t in tracks])
    cost = np.linalg.norm(D[:, None, :] - P[None, :, :], axis=-1)
    cost[cost > gate] = np.inf
    pairs = tuple(hungarian_solve(cost))
    md = {d for d, _ in pairs}
    mt = {t for _, t in pairs}
    return Assignment(
        pairs,
        tuple(i for i in range(nd) if i not in md),
        tuple(j for j in range(nt) if j not in mt),
    )


@dataclass
class Tracker:
    """Multi-target tracker; ``step`` is not thread-safe."""

    gate: float = 1.5
    max_misses: int = 15
    q: float = 0.5
    init_velocity_var: float = 4.0
    default_meas_var: float = 0.05**2
    tracks: list = field(default_factory=list)
    time: float | None = None
    _next_id: int = 0

    def _spawn(self, det: GroundPoint, t: float) -> Track:
        R = self._meas_cov(det)
        cov = np.zeros((4, 4))
        cov[:2, :2] = R
        cov[2:, 2:] = self.init_velocity_var * np.eye(2)
        track = Track(self._next_id, np.array([det.x, det.y, 0.0, 0.0]), cov, history=((t, det),))
        self._next_id += 1
        return track

    def _meas_cov(self, det: GroundPoint) -> np.ndarray:
        R = np.asarray(det.cov, dtype=float)
        if np.linalg.eigvalsh(R)[0] <= 0:
            # an exact detection would collapse the filter
            R = R + self.default_meas_var * np.eye(2)
        return R

    def step(self, dets: DetectionSet) -> list[Track]:
        if self.time is not None and dets.time < self.time:
            raise OrderingError(f"detection time {dets.time} precedes tracker time {self.time}")
        if self.time is not None and dets.time > self.time:
            dt = dets.time - self.time
            self.tracks = [predict(t, dt, self.q) for t in self.tracks]
        self.time = dets.time

        assignment = associate(dets, self.tracks, self.gate)
        updated = list(self.tracks)
        for d, k in assignment.pairs:
            det = dets.detections[d]
            tr = updated[k]
            state, cov = kalman_update(tr.state, tr.cov, det.xy, self._meas_cov(det))
            updated[k] = replace(
                tr, state=state, cov=cov, age=tr.age + 1, misses=0, history=tr.history + ((dets.time, det),)
            )
        for k in assignment.unmatched_tracks:
            tr = updated[k]
            updated[k] = replace(tr, age=tr.age + 1, misses=tr.misses + 1)
        survivors = [t for t in updated if t.misses <= self.max_misses]
        if len(survivors) < len(updated):
            log.debug("retired %d tracks at t=%.3f", len(updated) - len(survivors), dets.time)
        survivors.extend(self._spawn(dets.detections[d], dets.time) for d in assignment.unmatched_detections)
        self.tracks = survivors
        return list(self.tracks)
