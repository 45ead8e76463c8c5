"""Sampling strategies and a holonomic point-robot simulator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from akgp.environments import observe

NUM_CANDIDATES = 1000


def gaussian_entropy(variance):
    """Differential entropy ``0.5 ln(2 pi e nu)`` of a Gaussian."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise ValueError("entropy needs strictly positive variance")
    out = 0.5 * np.log(2.0 * np.pi * np.e * variance)
    return float(out) if out.ndim == 0 else out


def _bounds(extent):
    extent = tuple(float(e) for e in extent)
    lo, hi = np.array(extent[0::2]), np.array(extent[1::2])
    return lo, hi


def random_waypoint(extent, rng: np.random.Generator) -> np.ndarray:
    lo, hi = _bounds(extent)
    return lo + (hi - lo) * rng.random(lo.size)


def sample_candidates(extent, rng: np.random.Generator, num: int = NUM_CANDIDATES) -> np.ndarray:
    lo, hi = _bounds(extent)
    return lo + (hi - lo) * rng.random((num, lo.size))


def min_max(values: np.ndarray) -> np.ndarray:
    """Rescale to ``[0, 1]``; a constant vector maps to zeros."""
    values = np.asarray(values, dtype=float)
    span = values.max() - values.min()
    if span == 0.0:
        return np.zeros_like(values)
    return (values - values.min()) / span


@dataclass
class CandidateSet:
    locations: np.ndarray
    entropies: np.ndarray
    distances: np.ndarray
    scores: np.ndarray

    @property
    def best(self) -> int:
        # np.argmax returns the first maximum: lowest-index tie-break
        return int(np.argmax(self.scores))


def myopic_scores(entropies, distances) -> np.ndarray:
    """Normalized entropy minus normalized distance, per candidate."""
    return min_max(entropies) - min_max(distances)


def _variances(predict_fn, locations):
    pred = predict_fn(locations)
    return np.maximum(pred.variance, np.finfo(float).tiny)


def active_waypoint(predict_fn, extent, rng: np.random.Generator,
                    candidates: np.ndarray | None = None) -> np.ndarray:
    """Candidate with the highest predictive entropy.

    ``predict_fn`` maps workspace locations to a ``Prediction``; the harness
    wraps the GP so that normalization stays outside this module.
    """
    if candidates is None:
        candidates = sample_candidates(extent, rng)
    entropies = gaussian_entropy(_variances(predict_fn, candidates))
    return candidates[int(np.argmax(entropies))].copy()


def score_candidates(predict_fn, position, candidates) -> CandidateSet:
    entropies = np.atleast_1d(gaussian_entropy(_variances(predict_fn, candidates)))
    distances = np.linalg.norm(candidates - np.asarray(position, dtype=float), axis=1)
    return CandidateSet(candidates, entropies, distances, myopic_scores(entropies, distances))


def informative_waypoint(predict_fn, robot: "RobotState", extent, rng: np.random.Generator,
                         candidates: np.ndarray | None = None) -> np.ndarray:
    if candidates is None:
        candidates = sample_candidates(extent, rng)
    cs = score_candidates(predict_fn, robot.position, candidates)
    return cs.locations[cs.best].copy()


@dataclass
class RobotState:
    """Holonomic point robot; all lengths in workspace units."""

    position: np.ndarray
    step_len: float = 0.5
    sample_spacing: float = 0.25
    trajectory: list = field(default_factory=list)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.step_len <= 0 or self.sample_spacing <= 0:
            raise ValueError("step_len and sample_spacing must be positive")


def sample_offsets(path_length: float, spacing: float) -> np.ndarray:
    """Arc-length positions of samples: anchored at the endpoint, every ``spacing``."""
    count = max(1, int(np.floor(path_length / spacing)) + 1)
    offsets = path_length - spacing * np.arange(count)[::-1]
    return np.clip(offsets, 0.0, path_length)


def track_and_sample(robot: RobotState, waypoint, env, rng: np.random.Generator,
                     extent=None):
    """Drive straight to ``waypoint`` and sample along the way.

    Returns ``(X_t, y_t, robot)``; the robot ends at the (clamped) waypoint.
    """
    extent = env.extent if extent is None else extent
    lo, hi = _bounds(extent)
    goal = np.clip(np.asarray(waypoint, dtype=float), lo, hi)
    start = robot.position.copy()
    delta = goal - start
    length = float(np.linalg.norm(delta))
    direction = delta / length if length > 0 else np.zeros_like(delta)

    n_ticks = int(np.ceil(length / robot.step_len)) if length > 0 else 0
    ticks = np.minimum(np.arange(1, n_ticks + 1) * robot.step_len, length)
    robot.trajectory.extend(start + t * direction for t in ticks)

    X_t = start + sample_offsets(length, robot.sample_spacing)[:, None] * direction
    if length > 0:
        X_t[-1] = goal
    y_t = observe(env, X_t, rng)
    robot.position = goal.copy()
    return X_t, y_t, robot
