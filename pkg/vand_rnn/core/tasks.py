"""
Synthetic imitation tasks and closed-loop rollouts.

Two generators stand in for demonstrations that stress different things:

* ``sequential``: a point mass visits a fixed program of waypoints, dwelling
  at each. The path crosses itself, so the correct command at the crossing
  depends on how far the program has progressed (long-horizon memory).
* ``periodic``: a noisy van der Pol oscillator whose next-step increment is
  the action (a stable limit cycle must be reproduced in closed loop).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch
from scipy.spatial import cKDTree

from vand_rnn import settings
from vand_rnn.core.head import head_forward
from vand_rnn.core.rnn import stacked_forward
from vand_rnn.data import denormalize_y, normalize_x
from vand_rnn.models.network import StackedModel
from vand_rnn.models.trajectory import Trajectory
from vand_rnn.utils.errors import DivergenceError, GenerationError, ShapeMismatchError

logger = logging.getLogger(__name__)


class TaskKind(Enum):
    SEQUENTIAL = "sequential"
    PERIODIC = "periodic"

    @property
    def step_scale(self) -> float:
        """Factor turning a predicted action into a state increment."""
        return settings.SEQUENTIAL_SPEED if self is TaskKind.SEQUENTIAL else 1.0


@dataclass(frozen=True)
class TaskSpec:
    """
    Generator settings.

    Attributes:
        kind: sequential or periodic
        n_traj: Number of trajectories
        steps: Steps per trajectory (T >= 100)
        seed: Seed of the per-trajectory randomness
        obs_noise: Observation noise std (None: the task default)
        program_seed: Seed of the shared waypoint program (sequential only)
    """
    kind: TaskKind
    n_traj: int = 10
    steps: int = 600
    seed: int = 0
    obs_noise: Optional[float] = None
    program_seed: int = 0

    def __post_init__(self):
        if self.steps < settings.MIN_TASK_STEPS:
            raise ValueError(f"steps must be >= {settings.MIN_TASK_STEPS}, got {self.steps}")
        if self.n_traj < 1:
            raise ValueError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.obs_noise is not None and self.obs_noise < 0:
            raise ValueError(f"obs_noise must be >= 0, got {self.obs_noise}")

    @property
    def dims(self) -> Tuple[int, int]:
        return 2, 2


def generate(spec: TaskSpec) -> List[Trajectory]:
    if spec.kind is TaskKind.SEQUENTIAL:
        noise = settings.SEQUENTIAL_OBS_NOISE if spec.obs_noise is None else spec.obs_noise
        return gen_sequential(spec.n_traj, spec.steps, spec.seed, obs_noise=noise, program_seed=spec.program_seed)
    noise = settings.PERIODIC_OBS_NOISE if spec.obs_noise is None else spec.obs_noise
    return gen_periodic(spec.n_traj, spec.steps, spec.seed, obs_noise=noise)


# Sequential task -----------------------------------------------------------

def _orientation(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    return float((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))


def segments_cross(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> bool:
    """Proper intersection of segments p1-p2 and q1-q2."""
    d1 = _orientation(q1, q2, p1)
    d2 = _orientation(q1, q2, p2)
    d3 = _orientation(p1, p2, q1)
    d4 = _orientation(p1, p2, q2)
    return d1 * d2 < 0 and d3 * d4 < 0


def path_self_intersects(waypoints: np.ndarray) -> bool:
    """Whether two non-adjacent legs of the waypoint path cross."""
    legs = len(waypoints) - 1
    for i in range(legs):
        for j in range(i + 2, legs):
            if segments_cross(waypoints[i], waypoints[i + 1], waypoints[j], waypoints[j + 1]):
                return True
    return False


def draw_program(
    program_seed: int,
    n_waypoints: int = settings.SEQUENTIAL_WAYPOINTS,
    max_tries: int = settings.SEQUENTIAL_MAX_TRIES,
) -> np.ndarray:
    """
    Waypoints in [-1, 1]^2 whose path crosses itself at least once.

    Raises:
        GenerationError: If rejection sampling fails ``max_tries`` times
    """
    rng = np.random.default_rng(program_seed)
    for _ in range(max_tries):
        waypoints = rng.uniform(-1.0, 1.0, size=(n_waypoints, 2))
        if path_self_intersects(waypoints):
            return waypoints
    raise GenerationError(f"no self-intersecting waypoint program after {max_tries} tries")


def jitter_program(
    program: np.ndarray,
    rng: np.random.Generator,
    jitter: float = settings.SEQUENTIAL_JITTER,
    max_tries: int = settings.SEQUENTIAL_MAX_TRIES,
) -> np.ndarray:
    """
    One demonstration's copy of the program, waypoints moved by N(0, jitter^2).

    Redrawn until the jittered path still crosses itself.

    Raises:
        GenerationError: If no crossing copy is found in ``max_tries`` draws
    """
    for _ in range(max_tries):
        waypoints = program + rng.normal(0.0, jitter, size=program.shape)
        if path_self_intersects(waypoints):
            return waypoints
    raise GenerationError(f"jittered waypoints lost their crossing in {max_tries} draws")


def simulate_program(
    waypoints: np.ndarray,
    steps: int,
    speed: float = settings.SEQUENTIAL_SPEED,
    dwell: int = settings.SEQUENTIAL_DWELL,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Run the waypoint program for ``steps`` steps.

    Returns:
        Tuple of (clean positions (T, 2), commands (T, 2), phase index (T,)).
        Phase 2k is the dwell at waypoint k, 2k + 1 the leg k -> k + 1; after
        the last waypoint the mass holds its position.
    """
    positions = np.zeros((steps, 2))
    commands = np.zeros((steps, 2))
    phases = np.zeros(steps, dtype=np.int64)
    last = len(waypoints) - 1
    pos = waypoints[0].copy()
    k = 0
    dwell_left = dwell
    for t in range(steps):
        positions[t] = pos
        if dwell_left > 0 or k == last:
            phases[t] = 2 * k
            dwell_left = max(dwell_left - 1, 0)
            continue
        delta = waypoints[k + 1] - pos
        dist = float(np.hypot(delta[0], delta[1]))
        phases[t] = 2 * k + 1
        if dist < 1e-12:
            pos = waypoints[k + 1].copy()
            k += 1
            dwell_left = dwell
            continue
        commands[t] = delta / dist
        if dist <= speed:
            pos = waypoints[k + 1].copy()
            k += 1
            dwell_left = dwell
        else:
            pos = pos + speed * commands[t]
    return positions, commands, phases


def gen_sequential(
    n_traj: int,
    steps: int,
    seed: int,
    obs_noise: float = settings.SEQUENTIAL_OBS_NOISE,
    program_seed: int = 0,
    jitter: float = settings.SEQUENTIAL_JITTER,
    check_memory: bool = True,
) -> List[Trajectory]:
    """
    Demonstrations of one waypoint program.

    Every trajectory follows the program drawn from ``program_seed`` with its
    own crossing copy of the waypoints (``jitter_program``); observations are
    positions with N(0, obs_noise^2) noise and labels are unit commands toward
    the current target (zero while dwelling).

    Raises:
        ValueError: If steps < 100
        GenerationError: If no crossing program is found, or the generated
            data does not need memory (see ``memory_penalty``)
    """
    if steps < settings.MIN_TASK_STEPS:
        raise ValueError(f"steps must be >= {settings.MIN_TASK_STEPS}, got {steps}")
    program = draw_program(program_seed)
    trajectories = []
    phases = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_traj)):
        rng = np.random.default_rng(child)
        waypoints = jitter_program(program, rng, jitter)
        positions, commands, phase = simulate_program(waypoints, steps)
        observed = positions + rng.normal(0.0, obs_noise, size=positions.shape)
        trajectories.append(Trajectory(f"sequential-{seed}-{i}", observed, commands))
        phases.append(phase)

    if check_memory:
        if n_traj < 2:
            logger.warning("Memory check skipped: needs at least two trajectories")
        else:
            memoryless, oracle = memory_penalty(trajectories, phases)
            logger.info("Sequential oracle MSE: memoryless=%.5f phase-aware=%.5f", memoryless, oracle)
            if memoryless < settings.SEQUENTIAL_ORACLE_RATIO * oracle:
                raise GenerationError(
                    f"memoryless MSE {memoryless:.5f} is below "
                    f"{settings.SEQUENTIAL_ORACLE_RATIO}x the phase-aware MSE {oracle:.5f}"
                )
    return trajectories


def nearest_neighbor_mse(
    train: Sequence[Trajectory],
    test: Sequence[Trajectory],
    train_phases: Optional[Sequence[np.ndarray]] = None,
    test_phases: Optional[Sequence[np.ndarray]] = None,
) -> float:
    """
    MSE of a 1-nearest-neighbour predictor of y from x.

    Without phases the predictor is memoryless; with phases the neighbour
    search is restricted to training pairs of the same phase (an oracle that
    knows how far the program has progressed).
    """
    train_x = np.concatenate([t.x for t in train])
    train_y = np.concatenate([t.y for t in train])
    test_x = np.concatenate([t.x for t in test])
    test_y = np.concatenate([t.y for t in test])
    predicted = np.zeros_like(test_y)
    if train_phases is None or test_phases is None:
        _, idx = cKDTree(train_x).query(test_x)
        predicted = train_y[idx]
    else:
        train_p = np.concatenate(list(train_phases))
        test_p = np.concatenate(list(test_phases))
        for phase in np.unique(test_p):
            rows = np.flatnonzero(test_p == phase)
            pool = np.flatnonzero(train_p == phase)
            if pool.size == 0:
                pool = np.arange(len(train_p))
            _, idx = cKDTree(train_x[pool]).query(test_x[rows])
            predicted[rows] = train_y[pool[idx]]
    return float(np.mean((predicted - test_y) ** 2))


def memory_penalty(trajectories: Sequence[Trajectory], phases: Sequence[np.ndarray]) -> Tuple[float, float]:
    """Leave-one-trajectory-out (memoryless MSE, phase-aware MSE)."""
    memoryless, oracle = [], []
    for i in range(len(trajectories)):
        train = [t for j, t in enumerate(trajectories) if j != i]
        train_p = [p for j, p in enumerate(phases) if j != i]
        memoryless.append(nearest_neighbor_mse(train, [trajectories[i]]))
        oracle.append(nearest_neighbor_mse(train, [trajectories[i]], train_p, [phases[i]]))
    return float(np.mean(memoryless)), float(np.mean(oracle))


# Periodic task -------------------------------------------------------------

def van_der_pol(state: np.ndarray, mu: float = settings.PERIODIC_MU) -> np.ndarray:
    """Vector field of x'' = mu (1 - x^2) x' - x for states (..., 2)."""
    x, v = state[..., 0], state[..., 1]
    return np.stack([v, mu * (1.0 - x ** 2) * v - x], axis=-1)


def rk4_increment(state: np.ndarray, dt: float = settings.PERIODIC_DT, mu: float = settings.PERIODIC_MU) -> np.ndarray:
    """Classical Runge-Kutta step, returned as the increment s(t + dt) - s(t)."""
    k1 = van_der_pol(state, mu)
    k2 = van_der_pol(state + 0.5 * dt * k1, mu)
    k3 = van_der_pol(state + 0.5 * dt * k2, mu)
    k4 = van_der_pol(state + dt * k3, mu)
    return dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(initial: np.ndarray, steps: int, dt: float = settings.PERIODIC_DT,
              mu: float = settings.PERIODIC_MU) -> Tuple[np.ndarray, np.ndarray]:
    """
    Clean states and increments; s[t + 1] = s[t] + increment[t] exactly.

    ``initial`` may carry leading batch axes: (..., 2) -> (..., T, 2).
    """
    states = np.zeros(initial.shape[:-1] + (steps, 2))
    increments = np.zeros_like(states)
    state = np.asarray(initial, dtype=np.float64)
    for t in range(steps):
        states[..., t, :] = state
        delta = rk4_increment(state, dt, mu)
        increments[..., t, :] = delta
        state = state + delta
    return states, increments


def gen_periodic(
    n_traj: int,
    steps: int,
    seed: int,
    obs_noise: float = settings.PERIODIC_OBS_NOISE,
    mu: float = settings.PERIODIC_MU,
    dt: float = settings.PERIODIC_DT,
) -> List[Trajectory]:
    """
    Noisy van der Pol demonstrations.

    Initial states are drawn uniformly on an annulus around the limit cycle;
    observations are (x, x') plus N(0, obs_noise^2) noise, labels are the
    clean next-step increments.
    """
    if steps < settings.MIN_TASK_STEPS:
        raise ValueError(f"steps must be >= {settings.MIN_TASK_STEPS}, got {steps}")
    inner, outer = settings.PERIODIC_ANNULUS
    trajectories = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_traj)):
        rng = np.random.default_rng(child)
        radius = rng.uniform(inner, outer)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        initial = np.array([radius * np.cos(angle), radius * np.sin(angle)])
        states, increments = integrate(initial, steps, dt, mu)
        observed = states + rng.normal(0.0, obs_noise, size=states.shape) if obs_noise > 0 else states.copy()
        trajectories.append(Trajectory(f"periodic-{seed}-{i}", observed, increments))
    return trajectories


def limit_cycle_amplitude(steps: int = 10_000, transient: int = 2_000, mu: float = settings.PERIODIC_MU,
                          dt: float = settings.PERIODIC_DT) -> float:
    """max |x| of the clean oscillator after a transient."""
    states, _ = integrate(np.array([0.5, 0.0]), steps, dt, mu)
    return float(np.abs(states[transient:, 0]).max())


# Rollouts ------------------------------------------------------------------

class Policy(Protocol):
    """Anything that maps a stream of observations to actions."""

    def reset(self) -> None: ...

    def act(self, observation: np.ndarray) -> np.ndarray: ...


class ModelPolicy:
    """Inference-mode policy around a trained model: normalizes, steps, de-normalizes."""

    def __init__(self, model: StackedModel):
        self.model = model
        self._state = None

    def reset(self) -> None:
        self._state = None

    def act(self, observation: np.ndarray) -> np.ndarray:
        x = normalize_x(np.asarray(observation, dtype=np.float64), self.model.norm)
        xs = torch.as_tensor(x, dtype=settings.DTYPE).reshape(1, 1, -1)
        with torch.no_grad():
            outs, self._state = stacked_forward(xs, self.model, phase="infer", state=self._state)
            mu, _ = head_forward(outs[0], self.model.head)
        return denormalize_y(mu[0].numpy(), self.model.norm)


class VanDerPolOracle:
    """Exact increments of the clean oscillator, for checking the rollout loop."""

    def __init__(self, dt: float = settings.PERIODIC_DT, mu: float = settings.PERIODIC_MU):
        self.dt = dt
        self.mu = mu

    def reset(self) -> None:
        pass

    def act(self, observation: np.ndarray) -> np.ndarray:
        return rk4_increment(np.asarray(observation, dtype=np.float64), self.dt, self.mu)


@dataclass
class RolloutResult:
    """
    Closed-loop trajectory.

    Attributes:
        states: Predicted states, shape (n, |X|) with n <= horizon
        predictions: Actions that produced them, shape (n, |Y|)
        diverged: Whether the rollout was cut short by a non-finite or runaway state
        within_range: Whether every state stayed within the range bound
    """
    states: np.ndarray
    predictions: np.ndarray
    diverged: bool = False
    within_range: bool = True
    bounds: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.states)


def rollout(
    policy: Union[Policy, StackedModel],
    kind: TaskKind,
    horizon: int,
    start: Trajectory,
    prefix: int = 1,
    divergence_limit: float = settings.ROLLOUT_DIVERGENCE_LIMIT,
    range_factor: float = settings.ROLLOUT_RANGE_FACTOR,
) -> RolloutResult:
    """
    Run a policy in closed loop.

    The first ``prefix`` observations of ``start`` are fed as given (teacher
    forcing); afterwards the state advances by ``step_scale * action`` and is
    fed back without noise. ``horizon`` states are recorded after the prefix.

    Args:
        policy: A StackedModel or any object with reset()/act()
        kind: Task whose dynamics close the loop
        horizon: Number of closed-loop steps
        start: Trajectory supplying the prefix and the reference range
        prefix: Number of teacher-forced steps (>= 1)
        divergence_limit: Absolute state value that counts as a runaway
        range_factor: Multiple of the start trajectory's per-dimension
            max |x| used for ``within_range``
    """
    if isinstance(policy, StackedModel):
        if policy.input_size != start.x_dim or policy.output_size != start.y_dim:
            raise ShapeMismatchError(
                f"model dims ({policy.input_size}, {policy.output_size}) != "
                f"task dims ({start.x_dim}, {start.y_dim})"
            )
        policy = ModelPolicy(policy)
    if not 1 <= prefix <= len(start):
        raise ValueError(f"prefix must lie in 1..{len(start)}, got {prefix}")
    bounds = range_factor * np.abs(start.x).max(axis=0)
    empty = RolloutResult(np.zeros((0, start.x_dim)), np.zeros((0, start.y_dim)), bounds=bounds)
    if horizon <= 0:
        return empty

    policy.reset()
    scale = kind.step_scale
    states, predictions = [], []
    diverged = False
    try:
        for t in range(prefix - 1):
            policy.act(start.x[t])
        state = start.x[prefix - 1].astype(np.float64)
        for _ in range(horizon):
            action = np.asarray(policy.act(state), dtype=np.float64)
            if not np.isfinite(action).all():
                diverged = True
                break
            state = state + scale * action
            if not np.isfinite(state).all() or np.abs(state).max() > divergence_limit:
                diverged = True
                break
            states.append(state)
            predictions.append(action)
    except DivergenceError:
        logger.warning("Rollout diverged inside the model")
        diverged = True
    if diverged:
        logger.info("Rollout flagged divergent after %d of %d steps", len(states), horizon)
    if not states:
        empty.diverged = diverged
        return empty
    states_arr = np.array(states)
    return RolloutResult(
        states=states_arr,
        predictions=np.array(predictions),
        diverged=diverged,
        within_range=bool((np.abs(states_arr) <= bounds).all()) and not diverged,
        bounds=bounds,
    )


__all__ = [
    "TaskKind",
    "TaskSpec",
    "generate",
    "draw_program",
    "path_self_intersects",
    "simulate_program",
    "gen_sequential",
    "nearest_neighbor_mse",
    "memory_penalty",
    "van_der_pol",
    "rk4_increment",
    "integrate",
    "gen_periodic",
    "limit_cycle_amplitude",
    "Policy",
    "ModelPolicy",
    "VanDerPolOracle",
    "RolloutResult",
    "rollout",
]
