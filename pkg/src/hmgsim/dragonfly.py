"""Dragonfly swarm optimizer over mixed continuous/binary vectors.

Each individual carries a position and a step (velocity) vector. One
update applies the five swarming terms --- separation, alignment,
cohesion, attraction to the best-known position (food), distraction
from the worst current position (enemy) --- plus inertia:

    dX <- s*S + a*A + c*C + f*F + e*E + w*dX

Continuous dimensions move by dX and clamp to their bounds; binary
dimensions flip with probability |dX / sqrt(1 + dX^2)| (transfer
function thresholding). Neighborhoods use a per-dimension radius in
normalized coordinates that widens over the run, so the swarm splits
into exploring subswarms early and coalesces late. An individual with
no neighbors takes a small seeded random walk instead of the
neighborhood terms.

The step function is pure: same inputs and generator state give the
same next population.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["Population", "StepWeights", "dragonfly_step", "init_population", "schedule_weights"]

_STEP_CLAMP_FRACTION = 0.1  # max |dX| per move, as a fraction of the variable range
_BINARY_STEP_CLAMP = 6.0


@dataclass
class Population:
    positions: np.ndarray  # (P, D); binary dims hold 0.0 / 1.0
    steps: np.ndarray      # (P, D)
    lo: np.ndarray         # (D,)
    hi: np.ndarray         # (D,)
    binary_mask: np.ndarray  # (D,) bool

    def __post_init__(self):
        if self.positions.ndim != 2 or len(self.positions) == 0:
            raise ValueError("population must hold at least one individual")
        if self.positions.shape != self.steps.shape:
            raise ValueError("positions and steps must share a shape")

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dims(self) -> int:
        return self.positions.shape[1]


@dataclass(frozen=True)
class StepWeights:
    separation: float
    alignment: float
    cohesion: float
    food: float
    enemy: float
    inertia: float
    radius: float      # neighborhood half-width in normalized coordinates
    levy_scale: float = 0.02


def schedule_weights(iteration: int, max_iterations: int, *,
                     separation: float = 1.0, alignment: float = 1.0,
                     cohesion: float = 1.0, food: float = 1.0,
                     enemy: float = 1.0, inertia: float = 1.0,
                     rng: np.random.Generator) -> StepWeights:
    """Canonical decaying schedule scaled by per-term base coefficients.

    The swarming and enemy terms carry a small multiplier that decays to
    zero halfway through the run (exploration phase); food attraction
    keeps its full random weight throughout (exploitation). The
    neighborhood radius grows until the whole population interacts.
    """
    t = iteration / max(1, max_iterations)
    my_c = max(0.0, 0.1 - 0.2 * t)  # 0.1 at the start, zero from halfway on
    r = rng.random(4)
    return StepWeights(
        separation=separation * 2.0 * r[0] * my_c,
        alignment=alignment * 2.0 * r[1] * my_c,
        cohesion=cohesion * 2.0 * r[2] * my_c,
        food=food * 2.0 * r[3],
        enemy=enemy * my_c,
        inertia=inertia * (0.9 - 0.5 * t),
        radius=0.25 + 2.0 * t,
    )


def init_population(rng: np.random.Generator, size: int, lo: np.ndarray,
                    hi: np.ndarray, binary_mask: np.ndarray,
                    seeds: np.ndarray | None = None) -> Population:
    """Uniform random population; optional seed rows overwrite the first ones."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    binary_mask = np.asarray(binary_mask, dtype=bool)
    d = len(lo)
    pos = lo + rng.random((size, d)) * (hi - lo)
    pos[:, binary_mask] = (rng.random((size, int(binary_mask.sum()))) < 0.7).astype(float)
    if seeds is not None:
        k = min(len(seeds), size)
        pos[:k] = seeds[:k]
    return Population(
        positions=pos,
        steps=np.zeros((size, d)),
        lo=lo,
        hi=hi,
        binary_mask=binary_mask,
    )


def dragonfly_step(
    population: Population,
    fitness: np.ndarray,
    weights: StepWeights,
    rng: np.random.Generator,
    food_position: np.ndarray | None = None,
) -> Population:
    """One synchronous swarm update; lower fitness is better.

    ``food_position`` defaults to the best individual of this population;
    callers tracking a global best pass it explicitly so the swarm keeps
    chasing the best position ever seen.
    """
    pos, steps = population.positions, population.steps
    p, d = pos.shape
    fitness = np.asarray(fitness, dtype=float)
    if fitness.shape != (p,):
        raise ValueError(f"fitness must have shape ({p},)")
    span = np.maximum(population.hi - population.lo, 1e-12)
    if food_position is None:
        food_position = pos[int(np.argmin(fitness))]
    enemy_position = pos[int(np.argmax(fitness))]

    z = (pos - population.lo) / span  # normalized coordinates for neighborhoods
    new_steps = np.empty_like(steps)
    for i in range(p):
        within = np.all(np.abs(z - z[i]) <= weights.radius, axis=1)
        within[i] = False
        neigh = np.flatnonzero(within)
        if neigh.size:
            s_term = np.sum(pos[neigh] - pos[i], axis=0)
            a_term = steps[neigh].mean(axis=0)
            c_term = pos[neigh].mean(axis=0) - pos[i]
            noise = 0.0
        else:
            s_term = a_term = c_term = np.zeros(d)
            noise = weights.levy_scale * span * rng.standard_normal(d)
        f_term = food_position - pos[i]
        e_term = enemy_position + pos[i]
        new_steps[i] = (
            weights.separation * s_term
            + weights.alignment * a_term
            + weights.cohesion * c_term
            + weights.food * f_term
            + weights.enemy * e_term
            + weights.inertia * steps[i]
            + noise
        )

    clamp = _STEP_CLAMP_FRACTION * span
    cont = ~population.binary_mask
    new_steps[:, cont] = np.clip(new_steps[:, cont], -clamp[cont], clamp[cont])
    new_steps[:, population.binary_mask] = np.clip(
        new_steps[:, population.binary_mask], -_BINARY_STEP_CLAMP, _BINARY_STEP_CLAMP)

    new_pos = pos.copy()
    new_pos[:, cont] = np.clip(pos[:, cont] + new_steps[:, cont],
                               population.lo[cont], population.hi[cont])
    if population.binary_mask.any():
        bsteps = new_steps[:, population.binary_mask]
        transfer = np.abs(bsteps / np.sqrt(1.0 + bsteps ** 2))
        flips = rng.random(bsteps.shape) < transfer
        bits = pos[:, population.binary_mask]
        new_pos[:, population.binary_mask] = np.where(flips, 1.0 - bits, bits)

    return replace(population, positions=new_pos, steps=new_steps)
